//! The `/ict` endpoint.
//!
//! A request carries an access token, the client's public key, a proof of
//! possession for that key and the contexts the ICT should be valid for.
//! The endpoint checks the token's e2e scopes, fetches the user's claims
//! from the provider's userinfo endpoint (which also validates the access
//! token), verifies the proof of possession, and signs an ICT with the
//! provider key. It never introspects access tokens itself.
//!
//! Holding the provider's signing key in this service is only suitable for
//! test deployments.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use axum::extract::rejection::JsonRejection;
use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use ict_core::jwk::JwkSet;
use ict_core::pop::{verify_pop, DEFAULT_MAX_SKEW_SECS, DEFAULT_NONCE_TTL_SECS};
use ict_core::token::{is_valid_context, sign_token, MAX_VALIDITY_SECS};
use ict_core::{
    Clock, CompactToken, IctClaims, Jwk, KeyKind, KeyPair, NonceCache, PopError,
    ProofOfPossession, PublicKey,
};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;
use url::Url;

use crate::op_stub::access_token_scopes;
use crate::{bearer_token, ErrorBody};

/// Environment variable naming the issuer's TOML configuration file.
pub const CONFIG_ENV: &str = "ICT_ISSUER_CONFIG";
pub const ICT_PATH: &str = "/ict";
pub const E2E_SCOPE_PREFIX: &str = "e2e_auth_";
/// Scopes that release identity claims; at least one must accompany the e2e scopes.
pub const IDENTITY_SCOPES: &[&str] = &["profile", "email", "phone", "address"];

const USERINFO_TIMEOUT: Duration = Duration::from_secs(5);

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IssuerConfig {
    /// The provider identifier placed in `iss`.
    pub issuer_url: String,
    /// PEM file with the provider's private key; relative paths are taken
    /// relative to the configuration file.
    #[serde(default)]
    pub signing_key_path: PathBuf,
    pub key_id: String,
    pub userinfo_url: Url,
    /// Context name to its maximum ICT lifetime in seconds.
    pub allowed_contexts: BTreeMap<String, i64>,
    pub default_validity_seconds: i64,
    #[serde(default = "default_skew")]
    pub max_skew_seconds: i64,
    #[serde(default = "default_ttl")]
    pub nonce_ttl_seconds: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub listen: Option<String>,
}

fn default_skew() -> i64 {
    DEFAULT_MAX_SKEW_SECS
}

fn default_ttl() -> i64 {
    DEFAULT_NONCE_TTL_SECS
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("parsing configuration: {0}")]
    Parse(String),
    #[error("{0}")]
    Invalid(String),
    #[error("signing key: {0}")]
    Key(#[from] ict_core::KeyError),
    #[error("environment variable {CONFIG_ENV} is not set")]
    NotConfigured,
}

impl IssuerConfig {
    /// The recommended context lifetimes: 300 s for video and instant
    /// messaging, one hour for email.
    pub fn recommended_contexts() -> BTreeMap<String, i64> {
        ["vc", "im", "email"]
            .into_iter()
            .filter_map(|c| Some((c.to_string(), ict_core::flows::recommended_validity(c)?)))
            .collect()
    }

    pub fn new(issuer_url: impl Into<String>, key_id: impl Into<String>, userinfo_url: Url) -> Self {
        IssuerConfig {
            issuer_url: issuer_url.into(),
            signing_key_path: PathBuf::new(),
            key_id: key_id.into(),
            userinfo_url,
            allowed_contexts: Self::recommended_contexts(),
            default_validity_seconds: 300,
            max_skew_seconds: DEFAULT_MAX_SKEW_SECS,
            nonce_ttl_seconds: DEFAULT_NONCE_TTL_SECS,
            listen: None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let config: IssuerConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config = Self::from_toml(&text)?;
        if config.signing_key_path.is_relative() {
            if let Some(dir) = path.parent() {
                config.signing_key_path = dir.join(&config.signing_key_path);
            }
        }
        Ok(config)
    }

    /// Loads the file named by [`CONFIG_ENV`].
    pub fn from_env() -> Result<Self, ConfigError> {
        let path = std::env::var_os(CONFIG_ENV).ok_or(ConfigError::NotConfigured)?;
        Self::load(PathBuf::from(path))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |msg: String| Err(ConfigError::Invalid(msg));
        if self.allowed_contexts.is_empty() {
            return invalid("allowed_contexts is empty".into());
        }
        for (context, max) in &self.allowed_contexts {
            if !is_valid_context(context) {
                return invalid(format!("invalid context name {context:?}"));
            }
            if *max <= 0 || *max > MAX_VALIDITY_SECS {
                return invalid(format!(
                    "max validity of {context:?} must be in 1..={MAX_VALIDITY_SECS}, got {max}"
                ));
            }
        }
        let smallest = self.allowed_contexts.values().copied().min().unwrap_or(0);
        if self.default_validity_seconds <= 0 || self.default_validity_seconds > smallest {
            return invalid(format!(
                "default_validity_seconds must be in 1..={smallest}, got {}",
                self.default_validity_seconds
            ));
        }
        if self.max_skew_seconds < 0 || self.nonce_ttl_seconds < 2 * self.max_skew_seconds {
            // A nonce must stay cached as long as its timestamp could still be accepted.
            return invalid(format!(
                "nonce_ttl_seconds ({}) must be at least twice max_skew_seconds ({})",
                self.nonce_ttl_seconds, self.max_skew_seconds
            ));
        }
        Ok(())
    }

    /// Lifetime granted for `requested` seconds over `contexts`.
    pub fn effective_validity(&self, requested: Option<i64>, contexts: &BTreeSet<String>) -> i64 {
        let context_max = contexts
            .iter()
            .filter_map(|c| self.allowed_contexts.get(c))
            .copied()
            .min()
            .unwrap_or(MAX_VALIDITY_SECS);
        requested
            .unwrap_or(self.default_validity_seconds)
            .min(context_max)
            .min(MAX_VALIDITY_SECS)
    }
}

/// Body of `POST /ict`. The access token travels in the Authorization header.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IctRequest {
    pub public_key: Jwk,
    pub pop: ProofOfPossession,
    pub contexts: Vec<String>,
    #[serde(default, rename = "validity", skip_serializing_if = "Option::is_none")]
    pub requested_validity: Option<i64>,
    #[serde(default = "ephemeral")]
    pub key_kind: KeyKind,
    #[serde(default, rename = "rev_srv", skip_serializing_if = "Option::is_none")]
    pub revocation_server: Option<Url>,
}

fn ephemeral() -> KeyKind {
    KeyKind::Ephemeral
}

impl IctRequest {
    /// A request for `key` with a fresh proof of possession.
    pub fn new<I, S>(key: &KeyPair, contexts: I, clock: &dyn Clock) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        IctRequest {
            public_key: key.public_jwk().clone(),
            pop: ProofOfPossession::create(key, clock),
            contexts: contexts.into_iter().map(Into::into).collect(),
            requested_validity: None,
            key_kind: key.kind(),
            revocation_server: key.revocation_server().cloned(),
        }
    }

    pub fn with_validity(mut self, seconds: i64) -> Self {
        self.requested_validity = Some(seconds);
        self
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum IssueError {
    #[error("access token rejected by the userinfo endpoint")]
    InvalidToken,
    #[error("missing scopes: {}", missing.join(" "))]
    InsufficientScope { missing: Vec<String> },
    #[error("proof of possession rejected: {0}")]
    PopRejected(PopError),
    #[error("context {0:?} is not offered by this issuer")]
    UnknownContext(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("userinfo endpoint unavailable: {0}")]
    UpstreamUnavailable(String),
    #[error("malformed userinfo response: {0}")]
    MalformedUpstreamResponse(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl IssueError {
    pub fn code(&self) -> &'static str {
        match self {
            IssueError::InvalidToken => "invalid-token",
            IssueError::InsufficientScope { .. } => "insufficient-scope",
            IssueError::PopRejected(_) => "pop-rejected",
            IssueError::UnknownContext(_) => "unknown-context",
            IssueError::InvalidRequest(_) => "invalid-request",
            IssueError::UpstreamUnavailable(_) => "upstream-unavailable",
            IssueError::MalformedUpstreamResponse(_) => "malformed-upstream-response",
            IssueError::Internal(_) => "internal-error",
        }
    }

    pub fn status(&self) -> StatusCode {
        match self {
            IssueError::InvalidToken => StatusCode::UNAUTHORIZED,
            IssueError::InsufficientScope { .. } => StatusCode::FORBIDDEN,
            IssueError::PopRejected(_) | IssueError::UnknownContext(_) | IssueError::InvalidRequest(_) => {
                StatusCode::BAD_REQUEST
            }
            IssueError::UpstreamUnavailable(_) | IssueError::MalformedUpstreamResponse(_) => {
                StatusCode::BAD_GATEWAY
            }
            IssueError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    pub fn body(&self) -> ErrorBody {
        ErrorBody {
            error: self.code().to_string(),
            detail: self.to_string(),
            reason: match self {
                IssueError::PopRejected(e) => Some(e.code().to_string()),
                _ => None,
            },
        }
    }
}

impl IntoResponse for IssueError {
    fn into_response(self) -> Response {
        (self.status(), Json(self.body())).into_response()
    }
}

/// Grants `requested` if every context has its `e2e_auth_<context>` scope
/// and at least one identity scope is present. All or nothing.
pub fn check_e2e_scope(
    token_scopes: &BTreeSet<String>,
    requested: &BTreeSet<String>,
) -> Result<BTreeSet<String>, IssueError> {
    let mut missing = Vec::new();
    if !IDENTITY_SCOPES.iter().any(|s| token_scopes.contains(*s)) {
        missing.push("profile".to_string());
    }
    for context in requested {
        let scope = format!("{E2E_SCOPE_PREFIX}{context}");
        if !token_scopes.contains(&scope) {
            missing.push(scope);
        }
    }
    if missing.is_empty() {
        Ok(requested.clone())
    } else {
        Err(IssueError::InsufficientScope { missing })
    }
}

/// Standard OIDC userinfo request. The response must name the subject.
pub async fn fetch_userinfo(
    http: &reqwest::Client,
    access_token: &str,
    userinfo_url: &Url,
) -> Result<Map<String, Value>, IssueError> {
    let response = http
        .get(userinfo_url.clone())
        .bearer_auth(access_token)
        .send()
        .await
        .map_err(|e| IssueError::UpstreamUnavailable(e.to_string()))?;
    let status = response.status();
    if status == reqwest::StatusCode::UNAUTHORIZED || status == reqwest::StatusCode::FORBIDDEN {
        return Err(IssueError::InvalidToken);
    }
    if !status.is_success() {
        return Err(IssueError::UpstreamUnavailable(format!("userinfo returned {status}")));
    }
    let claims: Map<String, Value> = response
        .json()
        .await
        .map_err(|e| IssueError::MalformedUpstreamResponse(e.to_string()))?;
    match claims.get("sub") {
        Some(Value::String(sub)) if !sub.is_empty() => Ok(claims),
        _ => Err(IssueError::MalformedUpstreamResponse("no sub claim".into())),
    }
}

pub struct Issuer {
    config: IssuerConfig,
    key: KeyPair,
    nonces: NonceCache,
    clock: Arc<dyn Clock>,
    http: reqwest::Client,
}

impl Issuer {
    pub fn new(config: IssuerConfig, key: KeyPair, clock: Arc<dyn Clock>) -> Result<Self, ConfigError> {
        config.validate()?;
        let http = reqwest::Client::builder()
            .timeout(USERINFO_TIMEOUT)
            .build()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(Issuer {
            nonces: NonceCache::new(config.nonce_ttl_seconds),
            config,
            key,
            clock,
            http,
        })
    }

    /// Loads the signing key named in the configuration.
    pub fn from_config(config: IssuerConfig, clock: Arc<dyn Clock>) -> Result<Self, ConfigError> {
        let path = &config.signing_key_path;
        let pem = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.clone(),
            source,
        })?;
        let key = KeyPair::from_pem(&pem, KeyKind::Ephemeral, None)?;
        Self::new(config, key, clock)
    }

    pub fn config(&self) -> &IssuerConfig {
        &self.config
    }

    pub fn nonce_cache(&self) -> &NonceCache {
        &self.nonces
    }

    pub fn jwks(&self) -> JwkSet {
        JwkSet {
            keys: vec![self.key.public_jwk().clone().with_kid(&self.config.key_id)],
        }
    }

    /// Shape checks that need no upstream call.
    fn validate_request(&self, request: &IctRequest) -> Result<BTreeSet<String>, IssueError> {
        if request.contexts.is_empty() {
            return Err(IssueError::InvalidRequest("contexts is empty".into()));
        }
        let contexts: BTreeSet<String> = request.contexts.iter().cloned().collect();
        if let Some(unknown) = contexts.iter().find(|c| !self.config.allowed_contexts.contains_key(*c)) {
            return Err(IssueError::UnknownContext(unknown.clone()));
        }
        if !request.public_key.is_public_only() {
            return Err(IssueError::InvalidRequest("public_key contains private members".into()));
        }
        PublicKey::from_jwk(&request.public_key).map_err(|e| IssueError::InvalidRequest(e.to_string()))?;
        request
            .key_kind
            .check_revocation_server(request.revocation_server.as_ref())
            .map_err(|e| IssueError::InvalidRequest(e.to_string()))?;
        if let Some(v) = request.requested_validity {
            if v <= 0 {
                return Err(IssueError::InvalidRequest(format!("validity must be positive, got {v}")));
            }
        }
        Ok(contexts)
    }

    /// Scope check, userinfo fetch, PoP check, claim assembly, signing, in
    /// that order. A PoP failure after the userinfo fetch issues nothing.
    pub async fn handle_ict_request(
        &self,
        access_token: &str,
        request: &IctRequest,
    ) -> Result<CompactToken, IssueError> {
        let contexts = self.validate_request(request)?;

        let token_scopes = access_token_scopes(access_token).ok_or(IssueError::InvalidToken)?;
        let granted = check_e2e_scope(&token_scopes, &contexts)?;

        let user_info = fetch_userinfo(&self.http, access_token, &self.config.userinfo_url).await?;

        verify_pop(
            &request.pop,
            &request.public_key,
            &self.nonces,
            self.clock.as_ref(),
            self.config.max_skew_seconds,
        )
        .map_err(IssueError::PopRejected)?;

        let subject = user_info["sub"].as_str().unwrap_or_default().to_string();
        let validity = self.config.effective_validity(request.requested_validity, &granted);
        let claims = IctClaims::builder(&self.config.issuer_url, subject, request.public_key.clone())
            .contexts(granted)
            .validity_seconds(validity)
            .user_info(user_info)
            .revocation_server(request.revocation_server.clone())
            .build(self.clock.as_ref())
            .map_err(|e| IssueError::MalformedUpstreamResponse(e.to_string()))?;
        sign_token(&claims, &self.key, &self.config.key_id).map_err(|e| IssueError::Internal(e.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IctResponse {
    pub ict: String,
}

async fn ict_endpoint(
    State(issuer): State<Arc<Issuer>>,
    headers: HeaderMap,
    body: Result<Json<IctRequest>, JsonRejection>,
) -> Result<Json<IctResponse>, IssueError> {
    let access_token = bearer_token(&headers).ok_or(IssueError::InvalidToken)?;
    let Json(request) = body.map_err(|e| IssueError::InvalidRequest(e.body_text()))?;
    let ict = issuer.handle_ict_request(access_token, &request).await?;
    Ok(Json(IctResponse { ict: ict.into_string() }))
}

async fn health() -> Json<Value> {
    Json(json!({"status": "ok"}))
}

async fn jwks_endpoint(State(issuer): State<Arc<Issuer>>) -> Json<JwkSet> {
    Json(issuer.jwks())
}

pub fn router(issuer: Arc<Issuer>) -> Router {
    Router::new()
        .route(ICT_PATH, post(ict_endpoint))
        .route("/health", get(health))
        .route(ict_core::verifier::JWKS_PATH, get(jwks_endpoint))
        .with_state(issuer)
}
