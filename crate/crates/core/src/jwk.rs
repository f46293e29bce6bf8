//! JSON Web Keys.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::encoding::b64url;
use crate::keys::{Algorithm, KeyError};

/// A JWK as it appears on the wire.
///
/// Private members are modeled so that keys received from untrusted input can
/// be checked with [`Jwk::is_public_only`]; keys produced by this crate for
/// publication never carry them.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Jwk {
    pub kty: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kid: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alg: Option<String>,
    #[serde(rename = "use", default, skip_serializing_if = "Option::is_none")]
    pub key_use: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub e: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crv: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dp: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dq: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qi: Option<String>,
}

impl Jwk {
    pub fn is_public_only(&self) -> bool {
        [&self.d, &self.p, &self.q, &self.dp, &self.dq, &self.qi]
            .iter()
            .all(|member| member.is_none())
    }

    /// Copy of this key with every private member removed.
    pub fn to_public(&self) -> Jwk {
        Jwk {
            d: None,
            p: None,
            q: None,
            dp: None,
            dq: None,
            qi: None,
            ..self.clone()
        }
    }

    pub fn with_kid(mut self, kid: impl Into<String>) -> Jwk {
        self.kid = Some(kid.into());
        self
    }

    /// Signature algorithm implied by the key. An explicit `alg` member wins;
    /// otherwise RSA keys map to RS256 and P-256 keys to ES256.
    pub fn algorithm(&self) -> Result<Algorithm, KeyError> {
        if let Some(alg) = &self.alg {
            let algorithm: Algorithm = alg.parse()?;
            if algorithm.key_type() != self.kty {
                return Err(KeyError::InvalidKey(format!(
                    "alg {alg} does not fit kty {}",
                    self.kty
                )));
            }
            return Ok(algorithm);
        }
        match (self.kty.as_str(), self.crv.as_deref()) {
            ("RSA", _) => Ok(Algorithm::Rs256),
            ("EC", Some("P-256")) => Ok(Algorithm::Es256),
            (kty, crv) => Err(KeyError::UnsupportedAlgorithm(format!(
                "kty {kty}, crv {}",
                crv.unwrap_or("-")
            ))),
        }
    }

    /// RFC 7638 thumbprint: SHA-256 over the required public members in
    /// lexicographic order, base64url encoded.
    pub fn thumbprint(&self) -> Result<String, KeyError> {
        let missing = |name: &str| KeyError::InvalidKey(format!("missing member {name}"));
        let canonical = match self.kty.as_str() {
            "RSA" => {
                let e = self.e.as_deref().ok_or_else(|| missing("e"))?;
                let n = self.n.as_deref().ok_or_else(|| missing("n"))?;
                format!(r#"{{"e":"{e}","kty":"RSA","n":"{n}"}}"#)
            }
            "EC" => {
                let crv = self.crv.as_deref().ok_or_else(|| missing("crv"))?;
                let x = self.x.as_deref().ok_or_else(|| missing("x"))?;
                let y = self.y.as_deref().ok_or_else(|| missing("y"))?;
                format!(r#"{{"crv":"{crv}","kty":"EC","x":"{x}","y":"{y}"}}"#)
            }
            other => return Err(KeyError::UnsupportedAlgorithm(format!("kty {other}"))),
        };
        Ok(b64url(Sha256::digest(canonical.as_bytes())))
    }
}

/// A JWK Set document.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct JwkSet {
    pub keys: Vec<Jwk>,
}

impl JwkSet {
    pub fn find(&self, kid: Option<&str>) -> Option<&Jwk> {
        match kid {
            Some(kid) => self.keys.iter().find(|k| k.kid.as_deref() == Some(kid)),
            None if self.keys.len() == 1 => self.keys.first(),
            None => None,
        }
    }
}
