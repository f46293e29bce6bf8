//! HTTP services around ICTs: a stub OpenID Provider, the `/ict` issuance
//! endpoint, a revocation list server, blocking clients for all three and a
//! local deployment harness used by tests, demos and benchmarks.

pub mod client;
pub mod issuer;
pub mod op_stub;
pub mod revocation;
pub mod testkit;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use axum::extract::{Request, State};
use axum::http::{header, HeaderMap};
use axum::middleware::{self, Next};
use axum::response::Response;
use axum::Router;
use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use rand_core::{OsRng, RngCore};
use serde::{Deserialize, Serialize};

/// Error body shared by every service: `{"error": code, "detail": text}`.
/// `reason` refines `error` where one code covers several failures.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    #[serde(default)]
    pub detail: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

/// `n` random bytes, base64url encoded.
pub fn random_token(n: usize) -> String {
    let mut bytes = vec![0u8; n];
    OsRng.fill_bytes(&mut bytes);
    URL_SAFE_NO_PAD.encode(bytes)
}

pub(crate) fn bearer_token(headers: &HeaderMap) -> Option<&str> {
    let value = headers.get(header::AUTHORIZATION)?.to_str().ok()?;
    let (scheme, token) = value.split_once(' ')?;
    let token = token.trim();
    (scheme.eq_ignore_ascii_case("bearer") && !token.is_empty()).then_some(token)
}

/// Counts requests currently being served and remembers the peak.
#[derive(Debug, Default)]
pub struct InFlight {
    current: AtomicUsize,
    peak: AtomicUsize,
    total: AtomicUsize,
}

impl InFlight {
    pub fn current(&self) -> usize {
        self.current.load(Ordering::SeqCst)
    }

    pub fn peak(&self) -> usize {
        self.peak.load(Ordering::SeqCst)
    }

    pub fn total(&self) -> usize {
        self.total.load(Ordering::SeqCst)
    }

    pub fn reset(&self) {
        self.peak.store(self.current(), Ordering::SeqCst);
        self.total.store(0, Ordering::SeqCst);
    }
}

async fn count_in_flight(State(gauge): State<Arc<InFlight>>, request: Request, next: Next) -> Response {
    let now = gauge.current.fetch_add(1, Ordering::SeqCst) + 1;
    gauge.peak.fetch_max(now, Ordering::SeqCst);
    gauge.total.fetch_add(1, Ordering::SeqCst);
    let response = next.run(request).await;
    gauge.current.fetch_sub(1, Ordering::SeqCst);
    response
}

/// Wraps `router` so that `gauge` tracks its concurrent requests.
pub fn track_in_flight(router: Router, gauge: Arc<InFlight>) -> Router {
    router.layer(middleware::from_fn_with_state(gauge, count_in_flight))
}
