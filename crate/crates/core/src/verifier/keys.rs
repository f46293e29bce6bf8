//! Provider key lookup by `(issuer, kid)`.

use std::collections::HashMap;
use std::sync::{OnceLock, RwLock};
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::jwk::{Jwk, JwkSet};

pub const JWKS_CACHE_TTL: Duration = Duration::from_secs(300);
pub const JWKS_PATH: &str = "/.well-known/jwks.json";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum KeyLookupError {
    #[error("no key with kid {kid:?} for issuer {issuer}")]
    UnknownKeyId { issuer: String, kid: Option<String> },
    #[error("key source unreachable: {0}")]
    Unreachable(String),
}

pub trait KeyLookup: Send + Sync {
    fn lookup(&self, issuer: &str, kid: Option<&str>) -> Result<Jwk, KeyLookupError>;
}

/// Keys configured up front, e.g. pinned provider keys or test fixtures.
#[derive(Clone, Debug, Default)]
pub struct StaticKeys {
    by_issuer: HashMap<String, JwkSet>,
}

impl StaticKeys {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, issuer: impl Into<String>, key: Jwk) -> Self {
        self.insert(issuer, key);
        self
    }

    pub fn insert(&mut self, issuer: impl Into<String>, key: Jwk) {
        self.by_issuer
            .entry(issuer.into())
            .or_default()
            .keys
            .push(key.to_public());
    }
}

impl KeyLookup for StaticKeys {
    fn lookup(&self, issuer: &str, kid: Option<&str>) -> Result<Jwk, KeyLookupError> {
        self.by_issuer
            .get(issuer)
            .and_then(|set| set.find(kid))
            .cloned()
            .ok_or_else(|| KeyLookupError::UnknownKeyId {
                issuer: issuer.to_string(),
                kid: kid.map(str::to_string),
            })
    }
}

/// Fetches provider JWK sets over HTTP and caches them per issuer.
///
/// The set for an issuer is read from `{issuer}/.well-known/jwks.json`
/// unless overridden. A cached set is reused for [`JWKS_CACHE_TTL`]; an
/// unknown `kid` on a cached set triggers one refetch, which picks up key
/// rotation. Uses a blocking HTTP client, so call it off async executors.
pub struct JwksKeyStore {
    ttl: Duration,
    overrides: HashMap<String, String>,
    cache: RwLock<HashMap<String, (Instant, JwkSet)>>,
    http: OnceLock<reqwest::blocking::Client>,
}

impl Default for JwksKeyStore {
    fn default() -> Self {
        Self::new()
    }
}

impl JwksKeyStore {
    pub fn new() -> Self {
        JwksKeyStore {
            ttl: JWKS_CACHE_TTL,
            overrides: HashMap::new(),
            cache: RwLock::new(HashMap::new()),
            http: OnceLock::new(),
        }
    }

    pub fn with_ttl(mut self, ttl: Duration) -> Self {
        self.ttl = ttl;
        self
    }

    /// Use `jwks_url` instead of the well-known location for `issuer`.
    pub fn with_jwks_url(mut self, issuer: impl Into<String>, jwks_url: impl Into<String>) -> Self {
        self.overrides.insert(issuer.into(), jwks_url.into());
        self
    }

    fn jwks_url(&self, issuer: &str) -> String {
        self.overrides
            .get(issuer)
            .cloned()
            .unwrap_or_else(|| format!("{}{JWKS_PATH}", issuer.trim_end_matches('/')))
    }

    fn fetch(&self, issuer: &str) -> Result<JwkSet, KeyLookupError> {
        let http = self.http.get_or_init(|| {
            reqwest::blocking::Client::builder()
                .timeout(Duration::from_secs(5))
                .build()
                .expect("HTTP client builds")
        });
        let unreachable = |e: reqwest::Error| KeyLookupError::Unreachable(e.to_string());
        let set: JwkSet = http
            .get(self.jwks_url(issuer))
            .send()
            .and_then(|r| r.error_for_status())
            .and_then(|r| r.json())
            .map_err(unreachable)?;
        self.cache
            .write()
            .expect("jwks cache poisoned")
            .insert(issuer.to_string(), (Instant::now(), set.clone()));
        Ok(set)
    }
}

impl KeyLookup for JwksKeyStore {
    fn lookup(&self, issuer: &str, kid: Option<&str>) -> Result<Jwk, KeyLookupError> {
        let cached = {
            let cache = self.cache.read().expect("jwks cache poisoned");
            cache
                .get(issuer)
                .filter(|(at, _)| at.elapsed() < self.ttl)
                .and_then(|(_, set)| set.find(kid).cloned())
        };
        if let Some(key) = cached {
            return Ok(key);
        }
        self.fetch(issuer)?
            .find(kid)
            .map(Jwk::to_public)
            .ok_or_else(|| KeyLookupError::UnknownKeyId {
                issuer: issuer.to_string(),
                kid: kid.map(str::to_string),
            })
    }
}
