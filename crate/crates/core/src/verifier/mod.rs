//! Verification of ICTs by an authenticating party.
//!
//! [`Verifier::verify_ict`] accepts a token only if its issuer is trusted by
//! the local [`TrustPolicy`], the signature verifies under the issuer's key,
//! the validity window covers the evaluation time, the `typ` is `ict+jwt`,
//! the expected context is granted, and, for long-term keys, the key has not
//! been revoked. Accepted claims are annotated with how far the policy
//! vouches for them.

mod keys;
mod revocation;

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::Serialize;
use serde_json::Value;
use thiserror::Error;
use url::Url;

pub use keys::{JwksKeyStore, KeyLookup, KeyLookupError, StaticKeys, JWKS_CACHE_TTL, JWKS_PATH};
pub use revocation::{
    check_revocation, revocation_list_url, HttpRevocationChecker, RevocationChecker,
    RevocationStatus, RevocationUnreachable, StaticRevocationList, REVOKED_PATH,
};

use crate::clock::Clock;
use crate::jwk::Jwk;
use crate::keys::KeyKind;
use crate::policy::{TrustEntry, TrustPolicy};
use crate::token::{decode_unverified, verify_token_signature, TokenError};

/// How far the local policy vouches for a claim value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    /// The issuer is an authority for this claim.
    Authoritative,
    /// The issuer is trusted to have verified this claim.
    Verified,
    /// Present in the token, but the policy does not vouch for it.
    Uncertified,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AttestedClaim {
    pub value: Value,
    pub provenance: Provenance,
}

/// A successfully verified ICT.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Authentication {
    pub issuer: String,
    pub subject: String,
    pub claims: BTreeMap<String, AttestedClaim>,
    pub confirmation_key: Jwk,
    pub key_kind: KeyKind,
    pub revocation_server: Option<Url>,
    pub contexts: BTreeSet<String>,
    pub issued_at: i64,
    pub expires_at: i64,
    #[serde(skip)]
    pub trust: TrustEntry,
}

impl Authentication {
    pub fn provenance(&self, claim: &str) -> Option<Provenance> {
        self.claims.get(claim).map(|c| c.provenance)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RejectReason {
    #[error("issuer is not trusted")]
    UntrustedIssuer,
    #[error("no key {kid:?} known for the issuer")]
    UnknownKeyId { kid: Option<String> },
    #[error("issuer keys unavailable: {0}")]
    KeySourceUnreachable(String),
    #[error("signature invalid")]
    SignatureInvalid,
    #[error("token expired at {expires_at}")]
    TokenExpired { expires_at: i64 },
    #[error("token not valid before {not_before}")]
    TokenNotYetValid { not_before: i64 },
    #[error("wrong token type {0:?}")]
    WrongTokenType(Option<String>),
    #[error("context {expected:?} not granted by the token")]
    ContextMismatch { expected: String },
    #[error("confirmation key has been revoked")]
    KeyRevoked,
    #[error("{0}")]
    RevocationUnreachable(String),
    #[error("malformed token: {0}")]
    MalformedToken(String),
}

impl RejectReason {
    pub fn code(&self) -> &'static str {
        match self {
            RejectReason::UntrustedIssuer => "untrusted-issuer",
            RejectReason::UnknownKeyId { .. } => "unknown-key-id",
            RejectReason::KeySourceUnreachable(_) => "key-source-unreachable",
            RejectReason::SignatureInvalid => "signature-invalid",
            RejectReason::TokenExpired { .. } => "token-expired",
            RejectReason::TokenNotYetValid { .. } => "token-not-yet-valid",
            RejectReason::WrongTokenType(_) => "wrong-token-type",
            RejectReason::ContextMismatch { .. } => "context-mismatch",
            RejectReason::KeyRevoked => "key-revoked",
            RejectReason::RevocationUnreachable(_) => "revocation-unreachable",
            RejectReason::MalformedToken(_) => "malformed-token",
        }
    }
}

impl From<TokenError> for RejectReason {
    fn from(err: TokenError) -> Self {
        match err {
            TokenError::SignatureInvalid => RejectReason::SignatureInvalid,
            TokenError::Expired { expires_at } => RejectReason::TokenExpired { expires_at },
            TokenError::NotYetValid { not_before } => RejectReason::TokenNotYetValid { not_before },
            TokenError::WrongTokenType(typ) => RejectReason::WrongTokenType(typ),
            // A key that cannot even be parsed cannot have produced the signature.
            TokenError::Key(_) => RejectReason::SignatureInvalid,
            other => RejectReason::MalformedToken(other.to_string()),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("{reason}")]
pub struct Rejection {
    pub reason: RejectReason,
    /// The issuer named by the token, when it could be read at all.
    pub issuer: Option<String>,
}

impl Rejection {
    pub fn code(&self) -> &'static str {
        self.reason.code()
    }
}

/// Flat, serializable verdict for reports and CLI output.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AuthenticationResult {
    pub verdict: Verdict,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub issuer: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub subject: Option<String>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub claims: BTreeMap<String, AttestedClaim>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub confirmation_key: Option<Jwk>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub key_kind: Option<KeyKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rejection_reason: Option<&'static str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Accepted,
    Rejected,
}

impl From<&Result<Authentication, Rejection>> for AuthenticationResult {
    fn from(result: &Result<Authentication, Rejection>) -> Self {
        match result {
            Ok(auth) => AuthenticationResult {
                verdict: Verdict::Accepted,
                issuer: Some(auth.issuer.clone()),
                subject: Some(auth.subject.clone()),
                claims: auth.claims.clone(),
                confirmation_key: Some(auth.confirmation_key.clone()),
                key_kind: Some(auth.key_kind),
                rejection_reason: None,
                detail: None,
            },
            Err(rejection) => AuthenticationResult {
                verdict: Verdict::Rejected,
                issuer: rejection.issuer.clone(),
                subject: None,
                claims: BTreeMap::new(),
                confirmation_key: None,
                key_kind: None,
                rejection_reason: Some(rejection.code()),
                detail: Some(rejection.reason.to_string()),
            },
        }
    }
}

/// Asked about issuers the policy does not list, before they default to
/// insecure. Returning `None` keeps the default.
pub trait TrustPrompt: Send + Sync {
    fn decide(&self, issuer: &str) -> Option<TrustEntry>;
}

/// Outcome of choosing among several ICTs for the same client key.
#[derive(Clone, Debug, PartialEq)]
pub struct Selection {
    pub index: usize,
    pub authentication: Authentication,
    /// Per-token outcome, in input order.
    pub rejections: Vec<Option<Rejection>>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SelectionError {
    #[error("tokens certify different client keys")]
    KeyMismatch,
    #[error("no token was acceptable")]
    AllRejected(Vec<Rejection>),
}

pub struct Verifier {
    keys: Arc<dyn KeyLookup>,
    policy: TrustPolicy,
    revocation: Arc<dyn RevocationChecker>,
    prompt: Option<Arc<dyn TrustPrompt>>,
}

impl Verifier {
    pub fn new(keys: Arc<dyn KeyLookup>, policy: TrustPolicy) -> Self {
        Verifier {
            keys,
            policy,
            revocation: Arc::new(HttpRevocationChecker::new()),
            prompt: None,
        }
    }

    pub fn with_revocation(mut self, checker: Arc<dyn RevocationChecker>) -> Self {
        self.revocation = checker;
        self
    }

    pub fn with_prompt(mut self, prompt: Arc<dyn TrustPrompt>) -> Self {
        self.prompt = Some(prompt);
        self
    }

    pub fn policy(&self) -> &TrustPolicy {
        &self.policy
    }

    /// Policy entry for `issuer`; unlisted issuers are insecure.
    pub fn classify_op(&self, issuer: &str) -> TrustEntry {
        self.policy.classify(issuer)
    }

    fn trust_for(&self, issuer: &str) -> TrustEntry {
        if !self.policy.is_known(issuer) {
            if let Some(entry) = self.prompt.as_ref().and_then(|p| p.decide(issuer)) {
                return TrustPolicy::new().with(issuer, entry).classify(issuer);
            }
        }
        self.policy.classify(issuer)
    }

    /// Verifies `token` for use in `expected_context` at `clock.now()`.
    pub fn verify_ict(
        &self,
        token: &str,
        expected_context: &str,
        clock: &dyn Clock,
    ) -> Result<Authentication, Rejection> {
        let reject = |reason: RejectReason, issuer: Option<&str>| Rejection {
            reason,
            issuer: issuer.map(str::to_string),
        };

        let (header, untrusted) =
            decode_unverified(token).map_err(|e| reject(RejectReason::from(e), None))?;
        let issuer = untrusted.issuer.as_str();

        let trust = self.trust_for(issuer);
        if !trust.is_trusted() {
            return Err(reject(RejectReason::UntrustedIssuer, Some(issuer)));
        }

        let op_key = self
            .keys
            .lookup(issuer, header.kid.as_deref())
            .map_err(|e| {
                let reason = match e {
                    KeyLookupError::UnknownKeyId { kid, .. } => RejectReason::UnknownKeyId { kid },
                    KeyLookupError::Unreachable(msg) => RejectReason::KeySourceUnreachable(msg),
                };
                reject(reason, Some(issuer))
            })?;

        let claims = verify_token_signature(token, &op_key, clock)
            .map_err(|e| reject(e.into(), Some(issuer)))?;

        if !claims.contexts.contains(expected_context) {
            return Err(reject(
                RejectReason::ContextMismatch {
                    expected: expected_context.to_string(),
                },
                Some(issuer),
            ));
        }

        if let Some(server) = &claims.revocation_server {
            let thumbprint = claims
                .confirmation_key()
                .thumbprint()
                .map_err(|e| reject(RejectReason::MalformedToken(e.to_string()), Some(issuer)))?;
            match self.revocation.status(server, &thumbprint) {
                Ok(RevocationStatus::Good) => {}
                Ok(RevocationStatus::Revoked) => {
                    return Err(reject(RejectReason::KeyRevoked, Some(issuer)))
                }
                Err(RevocationUnreachable(msg)) => {
                    return Err(reject(RejectReason::RevocationUnreachable(msg), Some(issuer)))
                }
            }
        }

        let provenance = |name: &str| {
            if trust.authoritative_claims.contains(name) {
                Provenance::Authoritative
            } else if trust.verified_claims.contains(name) {
                Provenance::Verified
            } else {
                Provenance::Uncertified
            }
        };
        let mut attested: BTreeMap<String, AttestedClaim> = claims
            .identity_claims
            .iter()
            .map(|(name, value)| {
                let claim = AttestedClaim {
                    value: value.clone(),
                    provenance: provenance(name),
                };
                (name.clone(), claim)
            })
            .collect();
        attested.insert(
            "sub".to_string(),
            AttestedClaim {
                value: Value::String(claims.subject.clone()),
                provenance: provenance("sub"),
            },
        );

        Ok(Authentication {
            key_kind: claims.key_kind(),
            issuer: claims.issuer,
            subject: claims.subject,
            claims: attested,
            confirmation_key: claims.confirmation.jwk,
            revocation_server: claims.revocation_server,
            contexts: claims.contexts,
            issued_at: claims.issued_at,
            expires_at: claims.expires_at,
            trust,
        })
    }

    /// Picks the most trusted acceptable token among several ICTs that
    /// certify one client key.
    ///
    /// Highest policy rank wins; among equal ranks the token expiring first
    /// (the most recently issued short-lived certification) wins; remaining
    /// ties are broken on issuer and then on the serialized token, so the
    /// choice never depends on input order.
    pub fn select_from_multiple<S: AsRef<str>>(
        &self,
        tokens: &[S],
        expected_context: &str,
        clock: &dyn Clock,
    ) -> Result<Selection, SelectionError> {
        let mut thumbprints = BTreeSet::new();
        for token in tokens {
            if let Ok((_, claims)) = decode_unverified(token.as_ref()) {
                if let Ok(tp) = claims.confirmation_key().thumbprint() {
                    thumbprints.insert(tp);
                }
            }
        }
        if thumbprints.len() > 1 {
            return Err(SelectionError::KeyMismatch);
        }

        let outcomes: Vec<Result<Authentication, Rejection>> = tokens
            .iter()
            .map(|t| self.verify_ict(t.as_ref(), expected_context, clock))
            .collect();

        let better = |a: (usize, &Authentication), b: (usize, &Authentication)| -> Ordering {
            b.1.trust
                .rank
                .cmp(&a.1.trust.rank)
                .then(a.1.expires_at.cmp(&b.1.expires_at))
                .then(a.1.issuer.cmp(&b.1.issuer))
                .then(tokens[a.0].as_ref().cmp(tokens[b.0].as_ref()))
        };
        let best = outcomes
            .iter()
            .enumerate()
            .filter_map(|(i, o)| o.as_ref().ok().map(|auth| (i, auth)))
            .min_by(|a, b| better(*a, *b));

        match best {
            Some((index, auth)) => Ok(Selection {
                index,
                authentication: auth.clone(),
                rejections: outcomes.iter().map(|o| o.as_ref().err().cloned()).collect(),
            }),
            None => Err(SelectionError::AllRejected(
                outcomes.into_iter().filter_map(Result::err).collect(),
            )),
        }
    }
}

#[cfg(test)]
mod tests {
    use serde_json::json;

    use super::*;
    use crate::clock::FixedClock;
    use crate::keys::tests::shared_rsa;
    use crate::keys::{Algorithm, KeyPair};
    use crate::token::{sign_token, IctClaims};

    const T0: i64 = 1_700_000_000;
    const MAIL: &str = "https://mail.example";
    const BANK: &str = "https://bank.example";

    fn client() -> KeyPair {
        KeyPair::generate(Algorithm::Es256, KeyKind::Ephemeral, None).unwrap()
    }

    fn ict(issuer: &str, client: &KeyPair, contexts: &[&str], validity: i64, issued: i64) -> String {
        let info = json!({"name": "Alice", "email": "alice@mail.example", "bank_account": "DE00"})
            .as_object()
            .unwrap()
            .clone();
        let claims = IctClaims::builder(issuer, "alice-sub-1", client.public_jwk().clone())
            .contexts(contexts.iter().copied())
            .validity_seconds(validity)
            .user_info(info)
            .revocation_server(client.revocation_server().cloned())
            .build(&FixedClock(issued))
            .unwrap();
        sign_token(&claims, shared_rsa(), "op-1").unwrap().into_string()
    }

    fn keys() -> Arc<StaticKeys> {
        let jwk = shared_rsa().public_jwk().clone().with_kid("op-1");
        Arc::new(
            StaticKeys::new()
                .with(MAIL, jwk.clone())
                .with(BANK, jwk.clone())
                .with("https://social.example", jwk),
        )
    }

    fn policy() -> TrustPolicy {
        TrustPolicy::new()
            .with(MAIL, TrustEntry::authoritative(["email"], 5))
            .with(BANK, TrustEntry::verifying(["name"], 8).with_authoritative(["bank_account"]))
    }

    fn verifier() -> Verifier {
        Verifier::new(keys(), policy()).with_revocation(Arc::new(StaticRevocationList::new()))
    }

    #[test]
    fn aop_email_is_authoritative_name_uncertified() {
        let token = ict(MAIL, &client(), &["email"], 300, T0);
        let auth = verifier().verify_ict(&token, "email", &FixedClock(T0)).unwrap();
        assert_eq!(auth.provenance("email"), Some(Provenance::Authoritative));
        assert_eq!(auth.provenance("sub"), Some(Provenance::Authoritative));
        assert_eq!(auth.provenance("name"), Some(Provenance::Uncertified));
    }

    #[test]
    fn wrong_context_is_rejected() {
        let token = ict(MAIL, &client(), &["email"], 300, T0);
        let err = verifier().verify_ict(&token, "vc", &FixedClock(T0)).unwrap_err();
        assert_eq!(err.code(), "context-mismatch");
    }

    #[test]
    fn unlisted_issuer_is_untrusted() {
        let token = ict("https://social.example", &client(), &["email"], 300, T0);
        let err = verifier().verify_ict(&token, "email", &FixedClock(T0)).unwrap_err();
        assert_eq!(err.reason, RejectReason::UntrustedIssuer);
        assert_eq!(err.issuer.as_deref(), Some("https://social.example"));
    }

    #[test]
    fn bank_annotations() {
        let token = ict(BANK, &client(), &["email"], 300, T0);
        let auth = verifier().verify_ict(&token, "email", &FixedClock(T0)).unwrap();
        assert_eq!(auth.provenance("name"), Some(Provenance::Verified));
        assert_eq!(auth.provenance("bank_account"), Some(Provenance::Authoritative));
        assert_eq!(auth.provenance("email"), Some(Provenance::Uncertified));
    }

    #[test]
    fn expired_and_unknown_kid() {
        let token = ict(MAIL, &client(), &["email"], 300, T0);
        let err = verifier().verify_ict(&token, "email", &FixedClock(T0 + 301)).unwrap_err();
        assert_eq!(err.code(), "token-expired");

        let bare = Verifier::new(Arc::new(StaticKeys::new()), policy());
        let err = bare.verify_ict(&token, "email", &FixedClock(T0)).unwrap_err();
        assert_eq!(err.code(), "unknown-key-id");
    }

    #[test]
    fn revoked_long_term_key_is_rejected() {
        let server: Url = "https://keys.example".parse().unwrap();
        let long_term = KeyPair::generate(Algorithm::Es256, KeyKind::LongTerm, Some(server)).unwrap();
        let token = ict(MAIL, &long_term, &["email"], 300, T0);
        let list = Arc::new(StaticRevocationList::new());
        let v = Verifier::new(keys(), policy()).with_revocation(list.clone());
        assert_eq!(v.verify_ict(&token, "email", &FixedClock(T0)).unwrap().key_kind, KeyKind::LongTerm);
        list.revoke(long_term.thumbprint());
        assert_eq!(v.verify_ict(&token, "email", &FixedClock(T0)).unwrap_err().code(), "key-revoked");
    }

    struct AlwaysTrust;
    impl TrustPrompt for AlwaysTrust {
        fn decide(&self, _issuer: &str) -> Option<TrustEntry> {
            Some(TrustEntry::authoritative(Vec::<String>::new(), 0))
        }
    }

    #[test]
    fn prompt_consulted_only_for_unknown_issuers() {
        let token = ict("https://social.example", &client(), &["email"], 300, T0);
        let v = verifier().with_prompt(Arc::new(AlwaysTrust));
        let auth = v.verify_ict(&token, "email", &FixedClock(T0)).unwrap();
        assert_eq!(auth.provenance("name"), Some(Provenance::Uncertified));
        assert_eq!(auth.provenance("sub"), Some(Provenance::Authoritative));
        assert!(!v.policy().is_known("https://social.example"));
    }

    #[test]
    fn selection_prefers_rank_then_earliest_expiry() {
        let key = client();
        let insecure = ict("https://social.example", &key, &["vc"], 300, T0);
        let mail = ict(MAIL, &key, &["vc"], 300, T0);
        let sel = verifier().select_from_multiple(&[&insecure, &mail], "vc", &FixedClock(T0)).unwrap();
        assert_eq!(sel.index, 1);
        assert_eq!(sel.rejections[0].as_ref().unwrap().code(), "untrusted-issuer");

        let v = Verifier::new(
            keys(),
            TrustPolicy::new()
                .with(MAIL, TrustEntry::authoritative(["email"], 5))
                .with(BANK, TrustEntry::verifying(["name"], 5)),
        );
        let short = ict(MAIL, &key, &["vc"], 100, T0);
        let long = ict(BANK, &key, &["vc"], 200, T0);
        for order in [[&short, &long], [&long, &short]] {
            let sel = v.select_from_multiple(&order, "vc", &FixedClock(T0)).unwrap();
            assert_eq!(order[sel.index], &short);
        }
    }

    #[test]
    fn selection_rejects_mixed_keys_and_all_untrusted() {
        let a = ict(MAIL, &client(), &["vc"], 300, T0);
        let b = ict(BANK, &client(), &["vc"], 300, T0);
        assert_eq!(
            verifier().select_from_multiple(&[a, b], "vc", &FixedClock(T0)),
            Err(SelectionError::KeyMismatch)
        );

        let key = client();
        let x = ict("https://social.example", &key, &["vc"], 300, T0);
        let y = ict("https://other.example", &key, &["vc"], 300, T0);
        match verifier().select_from_multiple(&[x, y], "vc", &FixedClock(T0)) {
            Err(SelectionError::AllRejected(reasons)) => assert_eq!(reasons.len(), 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn result_report_shape() {
        let token = ict(MAIL, &client(), &["email"], 300, T0);
        let ok = verifier().verify_ict(&token, "email", &FixedClock(T0));
        let report = serde_json::to_value(AuthenticationResult::from(&ok)).unwrap();
        assert_eq!(report["verdict"], "accepted");
        assert_eq!(report["claims"]["email"]["provenance"], "authoritative");

        let bad = verifier().verify_ict(&token, "vc", &FixedClock(T0));
        let report = serde_json::to_value(AuthenticationResult::from(&bad)).unwrap();
        assert_eq!(report["verdict"], "rejected");
        assert_eq!(report["rejection_reason"], "context-mismatch");
    }
}
