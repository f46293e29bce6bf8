//! A key revocation server: `GET /revoked` lists revoked key thumbprints.

use std::collections::BTreeSet;
use std::sync::{Arc, RwLock};

use axum::extract::State;
use axum::routing::get;
use axum::{Json, Router};

#[derive(Debug, Default)]
pub struct RevocationList {
    revoked: RwLock<BTreeSet<String>>,
}

impl RevocationList {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn revoke(&self, thumbprint: impl Into<String>) {
        self.revoked.write().expect("revocation list poisoned").insert(thumbprint.into());
    }

    pub fn reinstate(&self, thumbprint: &str) -> bool {
        self.revoked.write().expect("revocation list poisoned").remove(thumbprint)
    }

    pub fn contains(&self, thumbprint: &str) -> bool {
        self.revoked.read().expect("revocation list poisoned").contains(thumbprint)
    }

    pub fn snapshot(&self) -> Vec<String> {
        self.revoked.read().expect("revocation list poisoned").iter().cloned().collect()
    }
}

async fn list_revoked(State(list): State<Arc<RevocationList>>) -> Json<Vec<String>> {
    Json(list.snapshot())
}

pub fn router(list: Arc<RevocationList>) -> Router {
    Router::new()
        .route(ict_core::verifier::REVOKED_PATH, get(list_revoked))
        .with_state(list)
}
