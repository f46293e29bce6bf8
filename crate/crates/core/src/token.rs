//! The Identity Certification Token claim set and its issue/verify operations.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;
use url::Url;

use crate::clock::Clock;
use crate::encoding::{b64url, random_bytes};
use crate::jwk::Jwk;
use crate::jws::{CompactToken, JoseHeader, JwsError};
use crate::keys::{KeyError, KeyKind, KeyPair, PublicKey};

/// JOSE `typ` of an ICT. ID Tokens use `JWT` and are refused where an ICT is expected.
pub const ICT_TYP: &str = "ict+jwt";

/// Upper bound on the lifetime of any ICT, in seconds.
pub const MAX_VALIDITY_SECS: i64 = 3600;

/// Claim names with a fixed meaning in the ICT. User info may not override them.
pub const RESERVED_CLAIMS: &[&str] = &[
    "iss", "sub", "aud", "iat", "nbf", "exp", "jti", "ctx", "cnf", "rev_srv",
];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TokenError {
    #[error("validity of {0} s exceeds the {MAX_VALIDITY_SECS} s maximum")]
    ValidityTooLong(i64),
    #[error("validity must be positive, got {0} s")]
    NonPositiveValidity(i64),
    #[error("at least one context is required")]
    EmptyContexts,
    #[error("invalid context {0:?}: expected a lower-case identifier")]
    InvalidContext(String),
    #[error("confirmation key contains private key material")]
    PrivateMaterialInKey,
    #[error("identity claim {0:?} collides with a reserved claim name")]
    ReservedClaim(String),
    #[error("issuer is not a URL: {0}")]
    InvalidIssuer(String),
    #[error("signature invalid")]
    SignatureInvalid,
    #[error("token expired at {expires_at}")]
    Expired { expires_at: i64 },
    #[error("token not valid before {not_before}")]
    NotYetValid { not_before: i64 },
    #[error("wrong token type {0:?}, expected \"{ICT_TYP}\"")]
    WrongTokenType(Option<String>),
    #[error("malformed token: {0}")]
    Malformed(String),
    #[error(transparent)]
    Key(#[from] KeyError),
}

impl From<JwsError> for TokenError {
    fn from(err: JwsError) -> Self {
        match err {
            JwsError::Malformed(msg) => TokenError::Malformed(msg),
            JwsError::SignatureInvalid => TokenError::SignatureInvalid,
            JwsError::Key(key) => TokenError::Key(key),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confirmation {
    pub jwk: Jwk,
}

/// Claims carried by an ICT.
///
/// The key kind is not a separate claim: a token names a revocation server
/// exactly when it certifies a long-term key.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IctClaims {
    #[serde(rename = "iss")]
    pub issuer: String,
    #[serde(rename = "sub")]
    pub subject: String,
    #[serde(rename = "iat")]
    pub issued_at: i64,
    #[serde(rename = "nbf")]
    pub not_before: i64,
    #[serde(rename = "exp")]
    pub expires_at: i64,
    #[serde(rename = "jti")]
    pub token_id: String,
    #[serde(rename = "ctx")]
    pub contexts: BTreeSet<String>,
    #[serde(rename = "cnf")]
    pub confirmation: Confirmation,
    #[serde(rename = "rev_srv", default, skip_serializing_if = "Option::is_none")]
    pub revocation_server: Option<Url>,
    #[serde(flatten)]
    pub identity_claims: BTreeMap<String, Value>,
}

impl IctClaims {
    pub fn builder(issuer: impl Into<String>, subject: impl Into<String>, key: Jwk) -> IctClaimsBuilder {
        IctClaimsBuilder {
            issuer: issuer.into(),
            subject: subject.into(),
            key,
            contexts: BTreeSet::new(),
            validity: 0,
            user_info: serde_json::Map::new(),
            revocation_server: None,
        }
    }

    pub fn confirmation_key(&self) -> &Jwk {
        &self.confirmation.jwk
    }

    pub fn key_kind(&self) -> KeyKind {
        if self.revocation_server.is_some() {
            KeyKind::LongTerm
        } else {
            KeyKind::Ephemeral
        }
    }

    pub fn lifetime(&self) -> i64 {
        self.expires_at - self.issued_at
    }

    /// Structural invariants every ICT must satisfy, whoever signed it.
    pub fn check_invariants(&self) -> Result<(), TokenError> {
        if self.lifetime() <= 0 {
            return Err(TokenError::Malformed("exp not after iat".into()));
        }
        if self.lifetime() > MAX_VALIDITY_SECS {
            return Err(TokenError::ValidityTooLong(self.lifetime()));
        }
        if self.contexts.is_empty() {
            return Err(TokenError::EmptyContexts);
        }
        if !self.confirmation.jwk.is_public_only() {
            return Err(TokenError::PrivateMaterialInKey);
        }
        Ok(())
    }
}

pub fn is_valid_context(context: &str) -> bool {
    !context.is_empty()
        && context
            .bytes()
            .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_' || b == b'-')
}

/// Assembles [`IctClaims`] from user info and request parameters.
#[derive(Clone, Debug)]
pub struct IctClaimsBuilder {
    issuer: String,
    subject: String,
    key: Jwk,
    contexts: BTreeSet<String>,
    validity: i64,
    user_info: serde_json::Map<String, Value>,
    revocation_server: Option<Url>,
}

impl IctClaimsBuilder {
    pub fn contexts<I, S>(mut self, contexts: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.contexts = contexts.into_iter().map(Into::into).collect();
        self
    }

    pub fn validity_seconds(mut self, seconds: i64) -> Self {
        self.validity = seconds;
        self
    }

    /// User info as returned by the provider. A `sub` member is dropped;
    /// the subject lives in its own field.
    pub fn user_info(mut self, user_info: serde_json::Map<String, Value>) -> Self {
        self.user_info = user_info;
        self
    }

    pub fn revocation_server(mut self, server: Option<Url>) -> Self {
        self.revocation_server = server;
        self
    }

    pub fn build(self, clock: &dyn Clock) -> Result<IctClaims, TokenError> {
        if self.validity <= 0 {
            return Err(TokenError::NonPositiveValidity(self.validity));
        }
        if self.validity > MAX_VALIDITY_SECS {
            return Err(TokenError::ValidityTooLong(self.validity));
        }
        if self.contexts.is_empty() {
            return Err(TokenError::EmptyContexts);
        }
        if let Some(bad) = self.contexts.iter().find(|c| !is_valid_context(c)) {
            return Err(TokenError::InvalidContext(bad.clone()));
        }
        if !self.key.is_public_only() {
            return Err(TokenError::PrivateMaterialInKey);
        }
        Url::parse(&self.issuer).map_err(|e| TokenError::InvalidIssuer(e.to_string()))?;

        let mut identity_claims = BTreeMap::new();
        for (name, value) in self.user_info {
            if name == "sub" {
                continue;
            }
            if RESERVED_CLAIMS.contains(&name.as_str()) {
                return Err(TokenError::ReservedClaim(name));
            }
            identity_claims.insert(name, value);
        }

        let now = clock.now();
        Ok(IctClaims {
            issuer: self.issuer,
            subject: self.subject,
            issued_at: now,
            not_before: now,
            expires_at: now + self.validity,
            token_id: b64url(random_bytes::<16>()),
            contexts: self.contexts,
            confirmation: Confirmation { jwk: self.key },
            revocation_server: self.revocation_server,
            identity_claims,
        })
    }
}

/// Signs `claims` with the provider key. The header carries `typ` `ict+jwt`.
pub fn sign_token(claims: &IctClaims, op_key: &KeyPair, key_id: &str) -> Result<CompactToken, TokenError> {
    claims.check_invariants()?;
    let payload = serde_json::to_vec(claims).expect("claims serialize");
    Ok(CompactToken::sign(ICT_TYP, Some(key_id), &payload, op_key))
}

/// Verifies signature, type and validity window of an ICT and returns its claims.
///
/// The window is inclusive on both ends: a token is usable from `nbf`
/// through `exp`.
pub fn verify_token_signature(
    token: &str,
    op_public_key: &Jwk,
    clock: &dyn Clock,
) -> Result<IctClaims, TokenError> {
    let compact = CompactToken::parse(token)?;
    let key = PublicKey::from_jwk(op_public_key)?;
    compact.verify_signature(&key)?;
    if compact.header().typ.as_deref() != Some(ICT_TYP) {
        return Err(TokenError::WrongTokenType(compact.header().typ.clone()));
    }
    let claims = parse_claims(&compact)?;
    claims.check_invariants()?;
    let now = clock.now();
    if now < claims.not_before {
        return Err(TokenError::NotYetValid {
            not_before: claims.not_before,
        });
    }
    if now > claims.expires_at {
        return Err(TokenError::Expired {
            expires_at: claims.expires_at,
        });
    }
    Ok(claims)
}

/// Reads header and claims without any signature or validity check.
/// The result is untrusted; it only serves to locate the issuer and key.
pub fn decode_unverified(token: &str) -> Result<(JoseHeader, IctClaims), TokenError> {
    let compact = CompactToken::parse(token)?;
    let claims = parse_claims(&compact)?;
    Ok((compact.header().clone(), claims))
}

fn parse_claims(compact: &CompactToken) -> Result<IctClaims, TokenError> {
    serde_json::from_slice(&compact.payload())
        .map_err(|e| TokenError::Malformed(format!("claims: {e}")))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use serde_json::json;

    use super::*;
    use crate::clock::FixedClock;
    use crate::keys::tests::shared_rsa;
    use crate::keys::Algorithm;

    const T0: i64 = 1_700_000_000;
    const ISSUER: &str = "https://op.example.org";

    fn client_key() -> KeyPair {
        KeyPair::generate(Algorithm::Es256, KeyKind::Ephemeral, None).unwrap()
    }

    fn user_info() -> serde_json::Map<String, Value> {
        json!({"sub": "alice-sub-1", "name": "Alice", "email": "alice@example.org"})
            .as_object()
            .unwrap()
            .clone()
    }

    fn claims(validity: i64) -> IctClaims {
        IctClaims::builder(ISSUER, "alice-sub-1", client_key().public_jwk().clone())
            .contexts(["email"])
            .validity_seconds(validity)
            .user_info(user_info())
            .build(&FixedClock(T0))
            .unwrap()
    }

    /// Base64url decoder written against RFC 4648 section 5, independent of
    /// the codec used by the implementation.
    fn reference_b64url_decode(text: &str) -> Vec<u8> {
        const ALPHABET: &[u8] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789-_";
        let mut bits = 0u32;
        let mut nbits = 0;
        let mut out = Vec::new();
        for ch in text.bytes() {
            let v = ALPHABET.iter().position(|&a| a == ch).expect("base64url char") as u32;
            bits = (bits << 6) | v;
            nbits += 6;
            if nbits >= 8 {
                nbits -= 8;
                out.push((bits >> nbits) as u8);
                bits &= (1 << nbits) - 1;
            }
        }
        out
    }

    #[test]
    fn validity_300_gives_five_minute_window() {
        let c = claims(300);
        assert_eq!(c.issued_at, T0);
        assert_eq!(c.not_before, T0);
        assert_eq!(c.expires_at - c.issued_at, 300);
    }

    #[test]
    fn validity_over_one_hour_is_refused() {
        let err = IctClaims::builder(ISSUER, "s", client_key().public_jwk().clone())
            .contexts(["email"])
            .validity_seconds(3601)
            .build(&FixedClock(T0))
            .unwrap_err();
        assert_eq!(err, TokenError::ValidityTooLong(3601));
        assert_eq!(claims(3600).lifetime(), 3600);
    }

    #[test]
    fn token_ids_are_unique() {
        assert_ne!(claims(300).token_id, claims(300).token_id);
    }

    #[test]
    fn subject_is_removed_from_identity_claims() {
        let c = claims(300);
        assert_eq!(c.subject, "alice-sub-1");
        assert!(!c.identity_claims.contains_key("sub"));
        assert_eq!(c.identity_claims["name"], json!("Alice"));
    }

    #[test]
    fn builder_rejects_bad_inputs() {
        let key = client_key().public_jwk().clone();
        let base = IctClaims::builder(ISSUER, "s", key.clone()).validity_seconds(60);
        assert_eq!(base.clone().build(&FixedClock(T0)).unwrap_err(), TokenError::EmptyContexts);
        assert!(matches!(
            base.clone().contexts(["E-Mail"]).build(&FixedClock(T0)),
            Err(TokenError::InvalidContext(_))
        ));
        let private = Jwk {
            d: Some("secret".into()),
            ..key
        };
        assert_eq!(
            IctClaims::builder(ISSUER, "s", private)
                .contexts(["vc"])
                .validity_seconds(60)
                .build(&FixedClock(T0))
                .unwrap_err(),
            TokenError::PrivateMaterialInKey
        );
        let mut info = user_info();
        info.insert("iss".into(), json!("https://evil.example"));
        assert_eq!(
            base.clone().contexts(["vc"]).user_info(info).build(&FixedClock(T0)).unwrap_err(),
            TokenError::ReservedClaim("iss".into())
        );
        assert_eq!(
            base.contexts(["vc"]).validity_seconds(0).build(&FixedClock(T0)).unwrap_err(),
            TokenError::NonPositiveValidity(0)
        );
    }

    #[test]
    fn sign_verify_round_trip() {
        let op = shared_rsa();
        let c = claims(300);
        let token = sign_token(&c, op, "op-key-1").unwrap();
        let verified = verify_token_signature(token.as_str(), op.public_jwk(), &FixedClock(T0 + 10)).unwrap();
        assert_eq!(verified, c);
    }

    #[test]
    fn wrong_op_key_is_signature_invalid() {
        let token = sign_token(&claims(300), shared_rsa(), "k").unwrap();
        let other = KeyPair::generate(Algorithm::Es256, KeyKind::Ephemeral, None).unwrap();
        assert_eq!(
            verify_token_signature(token.as_str(), other.public_jwk(), &FixedClock(T0)),
            Err(TokenError::SignatureInvalid)
        );
    }

    #[test]
    fn header_decodes_to_ict_typ_under_reference_decoder() {
        let token = sign_token(&claims(300), shared_rsa(), "op-key-1").unwrap();
        let header_segment = token.as_str().split('.').next().unwrap();
        let header: Value = serde_json::from_slice(&reference_b64url_decode(header_segment)).unwrap();
        assert_eq!(header["typ"], json!("ict+jwt"));
        assert_eq!(header["alg"], json!("RS256"));
        assert_eq!(header["kid"], json!("op-key-1"));
    }

    #[test]
    fn validity_window_boundaries() {
        let op = shared_rsa();
        let c = claims(300);
        let token = sign_token(&c, op, "k").unwrap();
        let at = |t| verify_token_signature(token.as_str(), op.public_jwk(), &FixedClock(t));
        assert!(at(c.expires_at).is_ok());
        assert_eq!(at(c.expires_at + 1), Err(TokenError::Expired { expires_at: c.expires_at }));
        assert!(at(c.not_before).is_ok());
        assert_eq!(at(c.not_before - 1), Err(TokenError::NotYetValid { not_before: c.not_before }));
    }

    #[test]
    fn plain_jwt_is_wrong_token_type() {
        let op = shared_rsa();
        let payload = serde_json::to_vec(&claims(300)).unwrap();
        let id_token = CompactToken::sign("JWT", Some("k"), &payload, op);
        assert_eq!(
            verify_token_signature(id_token.as_str(), op.public_jwk(), &FixedClock(T0)),
            Err(TokenError::WrongTokenType(Some("JWT".into())))
        );
    }

    #[test]
    fn decode_unverified_contract() {
        let token = sign_token(&claims(300), shared_rsa(), "k").unwrap();
        let (header, decoded) = decode_unverified(token.as_str()).unwrap();
        assert_eq!(decoded.issuer, ISSUER);
        assert_eq!(header.kid.as_deref(), Some("k"));

        assert!(matches!(decode_unverified("abc.def"), Err(TokenError::Malformed(_))));

        let mut parts: Vec<String> = token.as_str().split('.').map(str::to_string).collect();
        parts[2] = b64url(b"definitely not a signature");
        let corrupted = parts.join(".");
        assert_eq!(decode_unverified(&corrupted).unwrap().1.issuer, ISSUER);
    }

    #[test]
    fn long_term_key_kind_follows_revocation_server() {
        let c = IctClaims::builder(ISSUER, "s", client_key().public_jwk().clone())
            .contexts(["email"])
            .validity_seconds(60)
            .revocation_server(Some("https://keys.example.org".parse().unwrap()))
            .build(&FixedClock(T0))
            .unwrap();
        assert_eq!(c.key_kind(), KeyKind::LongTerm);
        assert_eq!(claims(60).key_kind(), KeyKind::Ephemeral);
    }

    fn arb_claims() -> impl Strategy<Value = IctClaims> {
        (
            1i64..=MAX_VALIDITY_SECS,
            prop::collection::btree_set("[a-z]{1,8}", 1..4),
            prop::collection::btree_map("[a-z_]{1,10}", "[ -~]{0,20}", 0..5),
            "[a-zA-Z0-9-]{1,20}",
            any::<bool>(),
        )
            .prop_map(|(validity, contexts, extra, subject, long_term)| {
                let info = extra
                    .into_iter()
                    .filter(|(k, _)| !RESERVED_CLAIMS.contains(&k.as_str()))
                    .map(|(k, v)| (k, Value::String(v)))
                    .collect();
                IctClaims::builder(ISSUER, subject, client_key().public_jwk().clone())
                    .contexts(contexts)
                    .validity_seconds(validity)
                    .user_info(info)
                    .revocation_server(long_term.then(|| "https://rev.example.org/".parse().unwrap()))
                    .build(&FixedClock(T0))
                    .unwrap()
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn round_trip_and_unverified_decode(c in arb_claims()) {
            let op = shared_rsa();
            let token = sign_token(&c, op, "k").unwrap();
            prop_assert!(c.lifetime() <= MAX_VALIDITY_SECS);
            prop_assert_eq!(&decode_unverified(token.as_str()).unwrap().1, &c);
            let verified = verify_token_signature(token.as_str(), op.public_jwk(), &FixedClock(T0)).unwrap();
            prop_assert_eq!(verified, c);
        }

        #[test]
        fn any_single_byte_flip_fails_verification(pos in any::<prop::sample::Index>(), flip in 1u8..=255) {
            let op = shared_rsa();
            let token = sign_token(&claims(300), op, "k").unwrap();
            let mut bytes = token.as_str().as_bytes().to_vec();
            let i = pos.index(bytes.len());
            bytes[i] ^= flip;
            if let Ok(mutated) = String::from_utf8(bytes) {
                prop_assert!(verify_token_signature(&mutated, op.public_jwk(), &FixedClock(T0)).is_err());
            }
        }
    }
}
