//! Compact JWS serialization.
//!
//! A [`CompactToken`] keeps the exact serialized string it was parsed from or
//! produced as. Segments are never re-encoded from parsed JSON, so
//! `parse(s).as_str() == s` for every accepted input.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoding::{b64url, b64url_decode};
use crate::keys::{KeyError, KeyPair, PublicKey};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum JwsError {
    #[error("malformed token: {0}")]
    Malformed(String),
    #[error("signature invalid")]
    SignatureInvalid,
    #[error(transparent)]
    Key(#[from] KeyError),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct JoseHeader {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub typ: Option<String>,
    pub alg: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kid: Option<String>,
}

#[derive(Clone, PartialEq, Eq)]
pub struct CompactToken {
    serialized: String,
    header_end: usize,
    payload_end: usize,
    header: JoseHeader,
}

impl fmt::Debug for CompactToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_tuple("CompactToken").field(&self.serialized).finish()
    }
}

impl fmt::Display for CompactToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.serialized)
    }
}

impl CompactToken {
    /// Signs `payload` under `key`. The header's `alg` is taken from the key.
    pub fn sign(typ: &str, kid: Option<&str>, payload: &[u8], key: &KeyPair) -> CompactToken {
        let header = JoseHeader {
            typ: Some(typ.to_string()),
            alg: key.algorithm().as_str().to_string(),
            kid: kid.map(str::to_string),
        };
        let header_json = serde_json::to_vec(&header).expect("header serializes");
        let signing_input = format!("{}.{}", b64url(header_json), b64url(payload));
        let signature = key.sign(signing_input.as_bytes());
        let serialized = format!("{signing_input}.{}", b64url(signature));
        Self::parse(&serialized).expect("freshly signed token parses")
    }

    /// Splits and decodes the structure of a compact JWS without checking
    /// the signature.
    pub fn parse(serialized: &str) -> Result<CompactToken, JwsError> {
        let malformed = |msg: &str| JwsError::Malformed(msg.to_string());
        let mut dots = serialized.match_indices('.').map(|(i, _)| i);
        let (Some(header_end), Some(payload_end), None) = (dots.next(), dots.next(), dots.next())
        else {
            return Err(malformed("expected three dot-separated segments"));
        };
        let header_bytes = b64url_decode(&serialized[..header_end])
            .map_err(|e| JwsError::Malformed(format!("header segment: {e}")))?;
        b64url_decode(&serialized[header_end + 1..payload_end])
            .map_err(|e| JwsError::Malformed(format!("payload segment: {e}")))?;
        b64url_decode(&serialized[payload_end + 1..])
            .map_err(|e| JwsError::Malformed(format!("signature segment: {e}")))?;
        let header: JoseHeader = serde_json::from_slice(&header_bytes)
            .map_err(|e| JwsError::Malformed(format!("header JSON: {e}")))?;
        Ok(CompactToken {
            serialized: serialized.to_string(),
            header_end,
            payload_end,
            header,
        })
    }

    pub fn header(&self) -> &JoseHeader {
        &self.header
    }

    pub fn as_str(&self) -> &str {
        &self.serialized
    }

    pub fn into_string(self) -> String {
        self.serialized
    }

    pub fn payload(&self) -> Vec<u8> {
        b64url_decode(&self.serialized[self.header_end + 1..self.payload_end])
            .expect("validated in parse")
    }

    pub fn signature(&self) -> Vec<u8> {
        b64url_decode(&self.serialized[self.payload_end + 1..]).expect("validated in parse")
    }

    fn signing_input(&self) -> &[u8] {
        &self.serialized.as_bytes()[..self.payload_end]
    }

    /// Checks the signature under `key`. The header `alg` must name the
    /// algorithm of the key; `none` and symmetric algorithms never verify.
    pub fn verify_signature(&self, key: &PublicKey) -> Result<(), JwsError> {
        if self.header.alg != key.algorithm().as_str() {
            return Err(JwsError::SignatureInvalid);
        }
        key.verify(self.signing_input(), &self.signature())
            .map_err(|_| JwsError::SignatureInvalid)
    }
}
