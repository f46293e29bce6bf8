//! Asymmetric key material for the two supported JWS algorithms.
//!
//! Only asymmetric algorithms are accepted: a proof of possession has to be
//! checkable by a third party that never learns the signing secret.

use std::fmt;
use std::str::FromStr;

use p256::ecdsa::signature::{Signer, Verifier};
use rand_core::OsRng;
use rsa::pkcs1::DecodeRsaPrivateKey;
use rsa::pkcs8::{DecodePrivateKey, EncodePrivateKey, LineEnding};
use rsa::signature::SignatureEncoding;
use rsa::traits::PublicKeyParts;
use rsa::{BigUint, RsaPrivateKey, RsaPublicKey};
use serde::{Deserialize, Serialize};
use sha2::Sha256;
use thiserror::Error;
use url::Url;

use crate::encoding::{b64url, b64url_decode};
use crate::jwk::Jwk;

pub const RSA_MODULUS_BITS: usize = 2048;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum KeyError {
    #[error("unsupported algorithm: {0}")]
    UnsupportedAlgorithm(String),
    #[error("long-term keys need a revocation server")]
    MissingRevocationServer,
    #[error("ephemeral keys must not name a revocation server")]
    UnexpectedRevocationServer,
    #[error("invalid key: {0}")]
    InvalidKey(String),
    #[error("signature verification failed")]
    BadSignature,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "RS256")]
    Rs256,
    #[serde(rename = "ES256")]
    Es256,
}

impl Algorithm {
    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Rs256 => "RS256",
            Algorithm::Es256 => "ES256",
        }
    }

    pub(crate) fn key_type(self) -> &'static str {
        match self {
            Algorithm::Rs256 => "RSA",
            Algorithm::Es256 => "EC",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = KeyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "RS256" => Ok(Algorithm::Rs256),
            "ES256" => Ok(Algorithm::Es256),
            _ => Err(KeyError::UnsupportedAlgorithm(s.to_string())),
        }
    }
}

/// Whether a client key lives only as long as its ICT, or is a long-term
/// key whose validity is governed by a revocation server.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeyKind {
    Ephemeral,
    LongTerm,
}

impl KeyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            KeyKind::Ephemeral => "ephemeral",
            KeyKind::LongTerm => "long_term",
        }
    }

    pub fn check_revocation_server(self, server: Option<&Url>) -> Result<(), KeyError> {
        match (self, server) {
            (KeyKind::LongTerm, None) => Err(KeyError::MissingRevocationServer),
            (KeyKind::Ephemeral, Some(_)) => Err(KeyError::UnexpectedRevocationServer),
            _ => Ok(()),
        }
    }
}

impl FromStr for KeyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ephemeral" => Ok(KeyKind::Ephemeral),
            "long_term" | "long-term" => Ok(KeyKind::LongTerm),
            other => Err(format!("unknown key kind: {other}")),
        }
    }
}

#[derive(Clone)]
enum PrivateKey {
    Rsa(Box<RsaPrivateKey>),
    Es256(p256::ecdsa::SigningKey),
}

/// A signing key pair together with its publication metadata.
///
/// The private half is held in memory only; it never appears in the JWK
/// returned by [`KeyPair::public_jwk`].
#[derive(Clone)]
pub struct KeyPair {
    algorithm: Algorithm,
    public: Jwk,
    private: PrivateKey,
    kind: KeyKind,
    revocation_server: Option<Url>,
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair")
            .field("algorithm", &self.algorithm)
            .field("public", &self.public)
            .field("kind", &self.kind)
            .field("revocation_server", &self.revocation_server)
            .finish_non_exhaustive()
    }
}

/// Parses `algorithm` and generates a fresh key pair for it.
pub fn generate_signing_keypair(
    algorithm: &str,
    kind: KeyKind,
    revocation_server: Option<Url>,
) -> Result<KeyPair, KeyError> {
    KeyPair::generate(algorithm.parse()?, kind, revocation_server)
}

impl KeyPair {
    pub fn generate(
        algorithm: Algorithm,
        kind: KeyKind,
        revocation_server: Option<Url>,
    ) -> Result<Self, KeyError> {
        kind.check_revocation_server(revocation_server.as_ref())?;
        let private = match algorithm {
            Algorithm::Rs256 => {
                let key = RsaPrivateKey::new(&mut OsRng, RSA_MODULUS_BITS)
                    .map_err(|e| KeyError::InvalidKey(e.to_string()))?;
                PrivateKey::Rsa(Box::new(key))
            }
            Algorithm::Es256 => PrivateKey::Es256(p256::ecdsa::SigningKey::random(&mut OsRng)),
        };
        Ok(Self::assemble(private, kind, revocation_server))
    }

    /// Loads a PKCS#8 (RSA or P-256) or PKCS#1 (RSA) PEM private key.
    pub fn from_pem(
        pem: &str,
        kind: KeyKind,
        revocation_server: Option<Url>,
    ) -> Result<Self, KeyError> {
        kind.check_revocation_server(revocation_server.as_ref())?;
        let private = if let Ok(key) = RsaPrivateKey::from_pkcs8_pem(pem) {
            PrivateKey::Rsa(Box::new(key))
        } else if let Ok(key) = RsaPrivateKey::from_pkcs1_pem(pem) {
            PrivateKey::Rsa(Box::new(key))
        } else if let Ok(key) = p256::ecdsa::SigningKey::from_pkcs8_pem(pem) {
            PrivateKey::Es256(key)
        } else {
            return Err(KeyError::InvalidKey(
                "not a PKCS#8 RSA/P-256 or PKCS#1 RSA private key".into(),
            ));
        };
        if let PrivateKey::Rsa(key) = &private {
            if key.size() * 8 < RSA_MODULUS_BITS {
                return Err(KeyError::InvalidKey(format!(
                    "RSA modulus shorter than {RSA_MODULUS_BITS} bits"
                )));
            }
        }
        Ok(Self::assemble(private, kind, revocation_server))
    }

    fn assemble(private: PrivateKey, kind: KeyKind, revocation_server: Option<Url>) -> Self {
        let (algorithm, public) = match &private {
            PrivateKey::Rsa(key) => (
                Algorithm::Rs256,
                PublicKey::Rsa(key.to_public_key()).to_jwk(),
            ),
            PrivateKey::Es256(key) => (
                Algorithm::Es256,
                PublicKey::Es256(*key.verifying_key()).to_jwk(),
            ),
        };
        KeyPair {
            algorithm,
            public,
            private,
            kind,
            revocation_server,
        }
    }

    pub fn to_pkcs8_pem(&self) -> String {
        let pem = match &self.private {
            PrivateKey::Rsa(key) => key.to_pkcs8_pem(LineEnding::LF),
            PrivateKey::Es256(key) => key.to_pkcs8_pem(LineEnding::LF),
        };
        pem.expect("in-memory key encodes as PKCS#8").to_string()
    }

    pub fn algorithm(&self) -> Algorithm {
        self.algorithm
    }

    pub fn kind(&self) -> KeyKind {
        self.kind
    }

    pub fn revocation_server(&self) -> Option<&Url> {
        self.revocation_server.as_ref()
    }

    /// The public half as a JWK without `kid`.
    pub fn public_jwk(&self) -> &Jwk {
        &self.public
    }

    pub fn public_key(&self) -> PublicKey {
        match &self.private {
            PrivateKey::Rsa(key) => PublicKey::Rsa(key.to_public_key()),
            PrivateKey::Es256(key) => PublicKey::Es256(*key.verifying_key()),
        }
    }

    pub fn thumbprint(&self) -> String {
        self.public
            .thumbprint()
            .expect("generated JWKs carry all required members")
    }

    /// Signs `message` with the algorithm of this key. ES256 signatures use
    /// the fixed 64-byte `r || s` layout of JWS.
    pub fn sign(&self, message: &[u8]) -> Vec<u8> {
        match &self.private {
            PrivateKey::Rsa(key) => {
                let signer = rsa::pkcs1v15::SigningKey::<Sha256>::new((**key).clone());
                signer.sign(message).to_vec()
            }
            PrivateKey::Es256(key) => {
                let signature: p256::ecdsa::Signature = key.sign(message);
                signature.to_bytes().to_vec()
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PublicKey {
    Rsa(RsaPublicKey),
    Es256(p256::ecdsa::VerifyingKey),
}

impl PublicKey {
    pub fn from_jwk(jwk: &Jwk) -> Result<Self, KeyError> {
        let member = |value: &Option<String>, name: &str| -> Result<Vec<u8>, KeyError> {
            let text = value
                .as_deref()
                .ok_or_else(|| KeyError::InvalidKey(format!("missing member {name}")))?;
            b64url_decode(text).map_err(|e| KeyError::InvalidKey(format!("member {name}: {e}")))
        };
        match jwk.algorithm()? {
            Algorithm::Rs256 => {
                let n = BigUint::from_bytes_be(&member(&jwk.n, "n")?);
                let e = BigUint::from_bytes_be(&member(&jwk.e, "e")?);
                let key =
                    RsaPublicKey::new(n, e).map_err(|e| KeyError::InvalidKey(e.to_string()))?;
                if key.size() * 8 < RSA_MODULUS_BITS {
                    return Err(KeyError::InvalidKey(format!(
                        "RSA modulus shorter than {RSA_MODULUS_BITS} bits"
                    )));
                }
                Ok(PublicKey::Rsa(key))
            }
            Algorithm::Es256 => {
                let coordinate = |name, value: &Option<String>| -> Result<p256::FieldBytes, KeyError> {
                    let bytes: [u8; 32] = member(value, name)?.try_into().map_err(|_| {
                        KeyError::InvalidKey("P-256 coordinates must be 32 bytes".into())
                    })?;
                    Ok(bytes.into())
                };
                let point = p256::EncodedPoint::from_affine_coordinates(
                    &coordinate("x", &jwk.x)?,
                    &coordinate("y", &jwk.y)?,
                    false,
                );
                p256::ecdsa::VerifyingKey::from_encoded_point(&point)
                    .map(PublicKey::Es256)
                    .map_err(|_| KeyError::InvalidKey("point not on P-256".into()))
            }
        }
    }

    pub fn algorithm(&self) -> Algorithm {
        match self {
            PublicKey::Rsa(_) => Algorithm::Rs256,
            PublicKey::Es256(_) => Algorithm::Es256,
        }
    }

    pub fn to_jwk(&self) -> Jwk {
        match self {
            PublicKey::Rsa(key) => Jwk {
                kty: "RSA".into(),
                alg: Some(Algorithm::Rs256.as_str().into()),
                n: Some(b64url(key.n().to_bytes_be())),
                e: Some(b64url(key.e().to_bytes_be())),
                ..Jwk::default()
            },
            PublicKey::Es256(key) => {
                let point = key.to_encoded_point(false);
                Jwk {
                    kty: "EC".into(),
                    alg: Some(Algorithm::Es256.as_str().into()),
                    crv: Some("P-256".into()),
                    x: Some(b64url(point.x().expect("uncompressed point"))),
                    y: Some(b64url(point.y().expect("uncompressed point"))),
                    ..Jwk::default()
                }
            }
        }
    }

    pub fn verify(&self, message: &[u8], signature: &[u8]) -> Result<(), KeyError> {
        match self {
            PublicKey::Rsa(key) => {
                let signature = rsa::pkcs1v15::Signature::try_from(signature)
                    .map_err(|_| KeyError::BadSignature)?;
                rsa::pkcs1v15::VerifyingKey::<Sha256>::new(key.clone())
                    .verify(message, &signature)
                    .map_err(|_| KeyError::BadSignature)
            }
            PublicKey::Es256(key) => {
                let signature = p256::ecdsa::Signature::from_slice(signature)
                    .map_err(|_| KeyError::BadSignature)?;
                key.verify(message, &signature)
                    .map_err(|_| KeyError::BadSignature)
            }
        }
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use std::sync::OnceLock;

    use super::*;

    /// One RSA key per test binary; 2048-bit generation is slow.
    pub(crate) fn shared_rsa() -> &'static KeyPair {
        static KEY: OnceLock<KeyPair> = OnceLock::new();
        KEY.get_or_init(|| KeyPair::generate(Algorithm::Rs256, KeyKind::Ephemeral, None).unwrap())
    }

    #[test]
    fn rs256_pair_has_2048_bit_modulus() {
        let key = shared_rsa();
        match key.public_key() {
            PublicKey::Rsa(public) => assert_eq!(public.size() * 8, 2048),
            other => panic!("expected RSA key, got {other:?}"),
        }
        assert_eq!(key.public_jwk().kty, "RSA");
    }

    #[test]
    fn sign_verify_round_trip_for_both_algorithms() {
        let es = KeyPair::generate(Algorithm::Es256, KeyKind::Ephemeral, None).unwrap();
        for key in [shared_rsa(), &es] {
            let signature = key.sign(b"message");
            let public = PublicKey::from_jwk(key.public_jwk()).unwrap();
            public.verify(b"message", &signature).unwrap();
            assert_eq!(public.verify(b"messagf", &signature), Err(KeyError::BadSignature));
        }
        assert_eq!(es.sign(b"m").len(), 64);
    }

    #[test]
    fn symmetric_algorithms_are_rejected() {
        let err = generate_signing_keypair("HS256", KeyKind::Ephemeral, None).unwrap_err();
        assert_eq!(err, KeyError::UnsupportedAlgorithm("HS256".into()));
        assert!("none".parse::<Algorithm>().is_err());
    }

    #[test]
    fn revocation_server_iff_long_term() {
        let url: Url = "https://keys.example.org".parse().unwrap();
        assert_eq!(
            KeyPair::generate(Algorithm::Es256, KeyKind::LongTerm, None).unwrap_err(),
            KeyError::MissingRevocationServer
        );
        assert_eq!(
            KeyPair::generate(Algorithm::Es256, KeyKind::Ephemeral, Some(url.clone()))
                .unwrap_err(),
            KeyError::UnexpectedRevocationServer
        );
        let key = KeyPair::generate(Algorithm::Es256, KeyKind::LongTerm, Some(url)).unwrap();
        assert_eq!(key.kind(), KeyKind::LongTerm);
    }

    #[test]
    fn successive_keys_differ() {
        let a = KeyPair::generate(Algorithm::Es256, KeyKind::Ephemeral, None).unwrap();
        let b = KeyPair::generate(Algorithm::Es256, KeyKind::Ephemeral, None).unwrap();
        assert_ne!(a.thumbprint(), b.thumbprint());
    }

    #[test]
    fn pem_round_trip_preserves_public_key() {
        let es = KeyPair::generate(Algorithm::Es256, KeyKind::Ephemeral, None).unwrap();
        for key in [shared_rsa(), &es] {
            let pem = key.to_pkcs8_pem();
            let loaded = KeyPair::from_pem(&pem, KeyKind::Ephemeral, None).unwrap();
            assert_eq!(loaded.public_jwk(), key.public_jwk());
        }
    }

    #[test]
    fn public_jwk_never_contains_private_members() {
        let jwk = shared_rsa().public_jwk();
        assert!(jwk.is_public_only());
        let json = serde_json::to_value(jwk).unwrap();
        for name in ["d", "p", "q", "dp", "dq", "qi"] {
            assert!(json.get(name).is_none());
        }
    }

    #[test]
    fn short_rsa_moduli_are_refused() {
        let small = RsaPrivateKey::new(&mut OsRng, 1024).unwrap();
        let jwk = PublicKey::Rsa(small.to_public_key()).to_jwk();
        assert!(matches!(PublicKey::from_jwk(&jwk), Err(KeyError::InvalidKey(_))));
    }

    #[test]
    fn key_kind_parses_both_spellings() {
        assert_eq!("long-term".parse::<KeyKind>().unwrap(), KeyKind::LongTerm);
        assert_eq!("long_term".parse::<KeyKind>().unwrap(), KeyKind::LongTerm);
        assert!("forever".parse::<KeyKind>().is_err());
    }
}
