//! Trust classification of OpenID Providers.
//!
//! Each authenticating party keeps its own policy. A provider is either
//! insecure (its ICTs are refused), authoritative for some claims (e.g. a
//! mail provider for addresses in its own domain), verifying for some claims
//! (e.g. a bank that checked a passport name), or both of the latter.
//! Providers not listed are insecure.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("reading policy: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing policy: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported default class {0:?}; only \"insecure\" is allowed")]
    UnsupportedDefault(TrustClass),
    #[error("issuer {0} is listed more than once")]
    DuplicateIssuer(String),
    #[error("insecure issuer {0} must not list claims")]
    InsecureWithClaims(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TrustClass {
    #[serde(rename = "insecure")]
    Insecure,
    #[serde(rename = "aop")]
    Authoritative,
    #[serde(rename = "vop")]
    Verifying,
}

/// What an authenticating party believes about one provider.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrustEntry {
    #[serde(rename = "class")]
    pub class: TrustClass,
    #[serde(default)]
    pub authoritative_claims: BTreeSet<String>,
    #[serde(default)]
    pub verified_claims: BTreeSet<String>,
    #[serde(default)]
    pub rank: i64,
}

fn claim_set<I, S>(claims: I) -> BTreeSet<String>
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    claims.into_iter().map(Into::into).collect()
}

impl TrustEntry {
    pub fn insecure() -> Self {
        TrustEntry {
            class: TrustClass::Insecure,
            authoritative_claims: BTreeSet::new(),
            verified_claims: BTreeSet::new(),
            rank: 0,
        }
    }

    pub fn authoritative<I, S>(claims: I, rank: i64) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        TrustEntry {
            class: TrustClass::Authoritative,
            authoritative_claims: claim_set(claims),
            verified_claims: BTreeSet::new(),
            rank,
        }
        .normalized()
    }

    pub fn verifying<I, S>(claims: I, rank: i64) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        TrustEntry {
            class: TrustClass::Verifying,
            authoritative_claims: BTreeSet::new(),
            verified_claims: claim_set(claims),
            rank,
        }
        .normalized()
    }

    /// Adds claims this provider is also authoritative for.
    pub fn with_authoritative<I, S>(mut self, claims: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.authoritative_claims.extend(claims.into_iter().map(Into::into));
        self.normalized()
    }

    pub fn is_trusted(&self) -> bool {
        self.class != TrustClass::Insecure
    }

    /// A trusted provider always speaks with authority for its own `sub`;
    /// an insecure one certifies nothing.
    fn normalized(mut self) -> Self {
        if self.is_trusted() {
            self.authoritative_claims.insert("sub".to_string());
        } else {
            self.authoritative_claims.clear();
            self.verified_claims.clear();
        }
        self
    }
}

#[derive(Serialize, Deserialize)]
struct PolicyFile {
    #[serde(default = "insecure")]
    default: TrustClass,
    #[serde(default)]
    issuers: Vec<IssuerRecord>,
}

fn insecure() -> TrustClass {
    TrustClass::Insecure
}

#[derive(Serialize, Deserialize)]
struct IssuerRecord {
    iss: String,
    #[serde(flatten)]
    entry: TrustEntry,
}

/// Per-issuer trust entries. Issuers match by exact string.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TrustPolicy {
    entries: HashMap<String, TrustEntry>,
}

impl TrustPolicy {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, issuer: impl Into<String>, entry: TrustEntry) -> Self {
        self.insert(issuer, entry);
        self
    }

    pub fn insert(&mut self, issuer: impl Into<String>, entry: TrustEntry) {
        self.entries.insert(issuer.into(), entry.normalized());
    }

    pub fn is_known(&self, issuer: &str) -> bool {
        self.entries.contains_key(issuer)
    }

    /// The entry for `issuer`, or the insecure default.
    pub fn classify(&self, issuer: &str) -> TrustEntry {
        self.entries
            .get(issuer)
            .cloned()
            .unwrap_or_else(TrustEntry::insecure)
    }

    pub fn from_json(text: &str) -> Result<Self, PolicyError> {
        let file: PolicyFile = serde_json::from_str(text)?;
        if file.default != TrustClass::Insecure {
            return Err(PolicyError::UnsupportedDefault(file.default));
        }
        let mut policy = TrustPolicy::new();
        for record in file.issuers {
            if policy.entries.contains_key(&record.iss) {
                return Err(PolicyError::DuplicateIssuer(record.iss));
            }
            let entry = &record.entry;
            if entry.class == TrustClass::Insecure
                && !(entry.authoritative_claims.is_empty() && entry.verified_claims.is_empty())
            {
                return Err(PolicyError::InsecureWithClaims(record.iss));
            }
            policy.insert(record.iss, record.entry);
        }
        Ok(policy)
    }

    pub fn to_json(&self) -> String {
        let mut issuers: Vec<IssuerRecord> = self
            .entries
            .iter()
            .map(|(iss, entry)| IssuerRecord {
                iss: iss.clone(),
                entry: entry.clone(),
            })
            .collect();
        issuers.sort_by(|a, b| a.iss.cmp(&b.iss));
        let file = PolicyFile {
            default: TrustClass::Insecure,
            issuers,
        };
        serde_json::to_string_pretty(&file).expect("policy serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PolicyError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), PolicyError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aop_entry_always_includes_sub() {
        let policy = TrustPolicy::new().with("https://mail.example", TrustEntry::authoritative(["email"], 5));
        let entry = policy.classify("https://mail.example");
        assert_eq!(entry.class, TrustClass::Authoritative);
        assert_eq!(entry.authoritative_claims, claim_set(["email", "sub"]));
    }

    #[test]
    fn unknown_issuer_is_insecure() {
        let entry = TrustPolicy::new().classify("https://nobody.example");
        assert_eq!(entry, TrustEntry::insecure());
        assert!(!entry.is_trusted());
    }

    #[test]
    fn bank_is_verifying_and_authoritative() {
        let bank = TrustEntry::verifying(["name"], 8).with_authoritative(["bank_account"]);
        let policy = TrustPolicy::new().with("https://bank.example", bank);
        let entry = policy.classify("https://bank.example");
        assert_eq!(entry.verified_claims, claim_set(["name"]));
        assert_eq!(entry.authoritative_claims, claim_set(["bank_account", "sub"]));
    }

    #[test]
    fn file_format_round_trip() {
        let text = r#"{
            "default": "insecure",
            "issuers": [
                {"iss": "https://mail.example", "class": "aop", "authoritative_claims": ["email"], "rank": 5},
                {"iss": "https://bank.example", "class": "vop", "verified_claims": ["name"],
                 "authoritative_claims": ["bank_account"], "rank": 8},
                {"iss": "https://social.example", "class": "insecure"}
            ]
        }"#;
        let policy = TrustPolicy::from_json(text).unwrap();
        assert_eq!(policy.classify("https://bank.example").rank, 8);
        assert!(!policy.classify("https://social.example").is_trusted());
        assert_eq!(TrustPolicy::from_json(&policy.to_json()).unwrap(), policy);
    }

    #[test]
    fn invalid_files_are_rejected() {
        let dup = r#"{"issuers": [{"iss": "a", "class": "aop"}, {"iss": "a", "class": "vop"}]}"#;
        assert!(matches!(TrustPolicy::from_json(dup), Err(PolicyError::DuplicateIssuer(_))));
        let bad_default = r#"{"default": "aop", "issuers": []}"#;
        assert!(matches!(TrustPolicy::from_json(bad_default), Err(PolicyError::UnsupportedDefault(_))));
        let insecure = r#"{"issuers": [{"iss": "a", "class": "insecure", "verified_claims": ["name"]}]}"#;
        assert!(matches!(TrustPolicy::from_json(insecure), Err(PolicyError::InsecureWithClaims(_))));
    }
}
