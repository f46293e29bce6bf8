//! Revocation status of long-term client keys.
//!
//! A revocation server publishes `GET {server}/revoked` as a JSON array of
//! RFC 7638 key thumbprints. Anything other than a successful fetch of that
//! list counts as unreachable, and callers treat unreachable as rejection.

use std::collections::HashSet;
use std::sync::{OnceLock, RwLock};
use std::time::Duration;

use thiserror::Error;
use url::Url;

pub const REVOKED_PATH: &str = "/revoked";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RevocationStatus {
    Good,
    Revoked,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("revocation server unreachable: {0}")]
pub struct RevocationUnreachable(pub String);

pub trait RevocationChecker: Send + Sync {
    fn status(&self, server: &Url, thumbprint: &str) -> Result<RevocationStatus, RevocationUnreachable>;
}

pub fn revocation_list_url(server: &Url) -> String {
    format!("{}{REVOKED_PATH}", server.as_str().trim_end_matches('/'))
}

/// Queries the revocation list over HTTP with a blocking client.
#[derive(Default)]
pub struct HttpRevocationChecker {
    http: OnceLock<reqwest::blocking::Client>,
}

impl HttpRevocationChecker {
    pub fn new() -> Self {
        Self::default()
    }
}

impl RevocationChecker for HttpRevocationChecker {
    fn status(&self, server: &Url, thumbprint: &str) -> Result<RevocationStatus, RevocationUnreachable> {
        let http = self.http.get_or_init(|| {
            reqwest::blocking::Client::builder()
                .timeout(Duration::from_secs(5))
                .build()
                .expect("HTTP client builds")
        });
        let revoked: Vec<String> = http
            .get(revocation_list_url(server))
            .send()
            .and_then(|r| r.error_for_status())
            .and_then(|r| r.json())
            .map_err(|e| RevocationUnreachable(e.to_string()))?;
        if revoked.iter().any(|t| t == thumbprint) {
            Ok(RevocationStatus::Revoked)
        } else {
            Ok(RevocationStatus::Good)
        }
    }
}

/// One-shot check against `server` over HTTP.
pub fn check_revocation(server: &Url, thumbprint: &str) -> Result<RevocationStatus, RevocationUnreachable> {
    HttpRevocationChecker::new().status(server, thumbprint)
}

/// An in-memory list, consulted regardless of the server named in the token.
#[derive(Debug, Default)]
pub struct StaticRevocationList {
    revoked: RwLock<HashSet<String>>,
}

impl StaticRevocationList {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn revoke(&self, thumbprint: impl Into<String>) {
        self.revoked
            .write()
            .expect("revocation list poisoned")
            .insert(thumbprint.into());
    }
}

impl RevocationChecker for StaticRevocationList {
    fn status(&self, _server: &Url, thumbprint: &str) -> Result<RevocationStatus, RevocationUnreachable> {
        if self.revoked.read().expect("revocation list poisoned").contains(thumbprint) {
            Ok(RevocationStatus::Revoked)
        } else {
            Ok(RevocationStatus::Good)
        }
    }
}
