//! Proof of possession for ICT requests.
//!
//! The client signs `nonce "." timestamp` with the private key whose public
//! half it asks to be certified. The issuer accepts a proof only if the
//! timestamp is within the allowed skew of its own clock and the nonce has
//! not been seen within the cache TTL.

use std::collections::HashMap;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Clock;
use crate::encoding::{b64url, b64url_bytes, b64url_decode, random_bytes};
use crate::jwk::Jwk;
use crate::keys::{KeyPair, PublicKey};

pub const DEFAULT_MAX_SKEW_SECS: i64 = 15;
pub const DEFAULT_NONCE_TTL_SECS: i64 = 30;
pub const NONCE_BYTES: usize = 16;

/// Purge opportunistically once the cache holds this many entries.
const PURGE_THRESHOLD: usize = 10_000;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProofOfPossession {
    pub nonce: String,
    #[serde(rename = "ts")]
    pub timestamp: i64,
    #[serde(rename = "sig", with = "b64url_bytes")]
    pub signature: Vec<u8>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PopError {
    #[error("timestamp deviates {skew} s from server time")]
    StaleTimestamp { skew: i64 },
    #[error("nonce already used")]
    ReplayedNonce,
    #[error("signature does not verify under the submitted key")]
    BadSignature,
    #[error("malformed proof of possession: {0}")]
    Malformed(String),
}

impl PopError {
    /// Protocol error code reported to clients.
    pub fn code(&self) -> &'static str {
        match self {
            PopError::StaleTimestamp { .. } => "stale-timestamp",
            PopError::ReplayedNonce => "replayed-nonce",
            PopError::BadSignature => "bad-signature",
            PopError::Malformed(_) => "malformed-pop",
        }
    }
}

/// The exact byte string a proof signs.
pub fn signing_input(nonce: &str, timestamp: i64) -> String {
    format!("{nonce}.{timestamp}")
}

impl ProofOfPossession {
    pub fn create(client_key: &KeyPair, clock: &dyn Clock) -> Self {
        Self::with_nonce(client_key, b64url(random_bytes::<NONCE_BYTES>()), clock.now())
    }

    /// Signs a caller-chosen nonce and timestamp.
    pub fn with_nonce(client_key: &KeyPair, nonce: String, timestamp: i64) -> Self {
        let signature = client_key.sign(signing_input(&nonce, timestamp).as_bytes());
        ProofOfPossession {
            nonce,
            timestamp,
            signature,
        }
    }
}

/// Nonces seen recently, with their insertion times.
///
/// An entry inserted at `t` is live through `t + ttl` and expired from
/// `t + ttl + 1` on.
#[derive(Debug)]
pub struct NonceCache {
    ttl_seconds: i64,
    entries: Mutex<HashMap<String, i64>>,
}

impl Default for NonceCache {
    fn default() -> Self {
        Self::new(DEFAULT_NONCE_TTL_SECS)
    }
}

impl NonceCache {
    pub fn new(ttl_seconds: i64) -> Self {
        NonceCache {
            ttl_seconds,
            entries: Mutex::new(HashMap::new()),
        }
    }

    pub fn ttl_seconds(&self) -> i64 {
        self.ttl_seconds
    }

    fn live(&self, inserted_at: i64, now: i64) -> bool {
        now - inserted_at <= self.ttl_seconds
    }

    pub fn contains(&self, nonce: &str, clock: &dyn Clock) -> bool {
        let now = clock.now();
        let entries = self.entries.lock().expect("nonce cache poisoned");
        entries.get(nonce).is_some_and(|&at| self.live(at, now))
    }

    /// Inserts `nonce` unless a live entry exists. Returns whether it was inserted.
    pub fn check_and_insert(&self, nonce: &str, clock: &dyn Clock) -> bool {
        let now = clock.now();
        let mut entries = self.entries.lock().expect("nonce cache poisoned");
        if entries.len() >= PURGE_THRESHOLD {
            entries.retain(|_, at| self.live(*at, now));
        }
        match entries.get(nonce) {
            Some(&at) if self.live(at, now) => false,
            _ => {
                entries.insert(nonce.to_string(), now);
                true
            }
        }
    }

    /// Drops expired entries and returns how many were removed.
    pub fn purge_expired(&self, clock: &dyn Clock) -> usize {
        let now = clock.now();
        let mut entries = self.entries.lock().expect("nonce cache poisoned");
        let before = entries.len();
        entries.retain(|_, at| self.live(*at, now));
        before - entries.len()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("nonce cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Verifies `pop` against the submitted client key.
///
/// Checks run in order: nonce shape, timestamp skew (inclusive bound),
/// signature, and finally the replay cache. The cache is touched only when
/// everything else passed, and the lookup and insertion happen under one
/// lock, so concurrent submissions of one nonce admit exactly one.
pub fn verify_pop(
    pop: &ProofOfPossession,
    client_public_key: &Jwk,
    cache: &NonceCache,
    clock: &dyn Clock,
    max_skew_seconds: i64,
) -> Result<(), PopError> {
    let nonce = b64url_decode(&pop.nonce)
        .map_err(|e| PopError::Malformed(format!("nonce: {e}")))?;
    if nonce.len() != NONCE_BYTES {
        return Err(PopError::Malformed(format!(
            "nonce is {} bytes, expected {NONCE_BYTES}",
            nonce.len()
        )));
    }
    let skew = clock.now() - pop.timestamp;
    if skew.abs() > max_skew_seconds {
        return Err(PopError::StaleTimestamp { skew });
    }
    let key = PublicKey::from_jwk(client_public_key)
        .map_err(|e| PopError::Malformed(format!("public key: {e}")))?;
    key.verify(signing_input(&pop.nonce, pop.timestamp).as_bytes(), &pop.signature)
        .map_err(|_| PopError::BadSignature)?;
    if !cache.check_and_insert(&pop.nonce, clock) {
        return Err(PopError::ReplayedNonce);
    }
    Ok(())
}
