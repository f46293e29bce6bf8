//! A minimal OpenID Provider for tests and desk-scale benchmarks.
//!
//! Tokens are issued directly through a password grant; refresh tokens rotate
//! on every use. Access tokens are signed JWTs (`typ: at+jwt`) so that a
//! resource server can read the granted scopes, but the stub only honours
//! access tokens it has recorded itself.

use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use axum::extract::State;
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Form, Json, Router};
use ict_core::jwk::JwkSet;
use ict_core::{Clock, CompactToken, KeyPair};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::{bearer_token, random_token};

pub const ACCESS_TOKEN_LIFETIME_SECS: i64 = 300;
pub const ID_TOKEN_LIFETIME_SECS: i64 = 300;
pub const ACCESS_TOKEN_TYP: &str = "at+jwt";
pub const ID_TOKEN_TYP: &str = "JWT";
pub const CLIENT_ID: &str = "ict-client";

const DEFAULT_USERS: &str = include_str!("../fixtures/users.json");

/// Claims released per scope. `profile` releases every claim not listed
/// under another scope.
const PHONE_CLAIMS: &[&str] = &["phone_number", "phone_number_verified"];
const ADDRESS_CLAIMS: &[&str] = &["address"];
const EMAIL_CLAIMS: &[&str] = &["email", "email_verified"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StubUser {
    pub username: String,
    pub password: String,
    pub sub: String,
    #[serde(default)]
    pub claims: Map<String, Value>,
    #[serde(default)]
    pub granted_scopes: BTreeSet<String>,
}

impl StubUser {
    fn released_claims(&self, scopes: &BTreeSet<String>) -> Map<String, Value> {
        let has = |s: &str| scopes.contains(s);
        let mut out = Map::new();
        for (name, value) in &self.claims {
            let released = if PHONE_CLAIMS.contains(&name.as_str()) {
                has("phone")
            } else if ADDRESS_CLAIMS.contains(&name.as_str()) {
                has("address")
            } else if EMAIL_CLAIMS.contains(&name.as_str()) {
                has("email") || has("profile")
            } else {
                has("profile")
            };
            if released {
                out.insert(name.clone(), value.clone());
            }
        }
        out.insert("sub".into(), Value::String(self.sub.clone()));
        out
    }
}

pub fn default_users() -> Vec<StubUser> {
    serde_json::from_str(DEFAULT_USERS).expect("bundled user fixture is valid")
}

pub fn load_users(path: impl AsRef<Path>) -> Result<Vec<StubUser>, StubError> {
    let text = std::fs::read_to_string(path).map_err(|e| StubError::Fixture(e.to_string()))?;
    serde_json::from_str(&text).map_err(|e| StubError::Fixture(e.to_string()))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IssuedTokenRecord {
    pub access_token: String,
    pub refresh_token: String,
    pub sub: String,
    pub scopes: BTreeSet<String>,
    pub expires_at: i64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenResponse {
    pub access_token: String,
    pub refresh_token: String,
    pub id_token: String,
    pub token_type: String,
    pub expires_in: i64,
    #[serde(default)]
    pub scope: String,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StubError {
    #[error("unknown user or wrong password")]
    BadCredentials,
    #[error("scope {0:?} not granted to this user")]
    ScopeNotGranted(String),
    #[error("refresh token unknown or already used")]
    InvalidRefreshToken,
    #[error("access token unknown or expired")]
    InvalidToken,
    #[error("unsupported grant type {0:?}")]
    UnsupportedGrantType(String),
    #[error("missing form field {0:?}")]
    MissingField(&'static str),
    #[error("user fixture: {0}")]
    Fixture(String),
    #[error("snapshot: {0}")]
    Snapshot(String),
}

impl StubError {
    pub fn code(&self) -> &'static str {
        match self {
            StubError::BadCredentials => "bad-credentials",
            StubError::ScopeNotGranted(_) => "scope-not-granted",
            StubError::InvalidRefreshToken => "invalid-refresh-token",
            StubError::InvalidToken => "invalid-token",
            StubError::UnsupportedGrantType(_) => "unsupported-grant-type",
            StubError::MissingField(_) => "invalid-request",
            StubError::Fixture(_) | StubError::Snapshot(_) => "server-error",
        }
    }

    fn status(&self) -> StatusCode {
        match self {
            StubError::InvalidToken => StatusCode::UNAUTHORIZED,
            StubError::Fixture(_) | StubError::Snapshot(_) => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::BAD_REQUEST,
        }
    }
}

impl IntoResponse for StubError {
    fn into_response(self) -> Response {
        let body = Json(json!({"error": self.code(), "detail": self.to_string()}));
        if self == StubError::InvalidToken {
            let challenge = [(header::WWW_AUTHENTICATE, "Bearer error=\"invalid_token\"")];
            return (self.status(), challenge, body).into_response();
        }
        (self.status(), body).into_response()
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct TokenTable {
    by_access: HashMap<String, IssuedTokenRecord>,
    /// refresh token -> access token of the same record
    by_refresh: HashMap<String, String>,
}

impl TokenTable {
    fn insert(&mut self, record: IssuedTokenRecord) {
        self.by_refresh
            .insert(record.refresh_token.clone(), record.access_token.clone());
        self.by_access.insert(record.access_token.clone(), record);
    }
}

/// The stub provider. Cheap to share behind an `Arc`.
pub struct OpStub {
    issuer: String,
    key: KeyPair,
    key_id: String,
    users: HashMap<String, StubUser>,
    tokens: Mutex<TokenTable>,
    clock: Arc<dyn Clock>,
    snapshot: Option<PathBuf>,
}

impl OpStub {
    pub fn new(
        issuer: impl Into<String>,
        key: KeyPair,
        key_id: impl Into<String>,
        users: Vec<StubUser>,
        clock: Arc<dyn Clock>,
    ) -> Result<Self, StubError> {
        let mut by_name = HashMap::new();
        let mut subs = BTreeSet::new();
        for user in users {
            if !subs.insert(user.sub.clone()) {
                return Err(StubError::Fixture(format!("duplicate sub {:?}", user.sub)));
            }
            by_name.insert(user.username.clone(), user);
        }
        Ok(OpStub {
            issuer: issuer.into(),
            key,
            key_id: key_id.into(),
            users: by_name,
            tokens: Mutex::new(TokenTable::default()),
            clock,
            snapshot: None,
        })
    }

    /// Persists the token table to `path` after every change, restoring it
    /// first if the file exists.
    pub fn with_snapshot(mut self, path: impl Into<PathBuf>) -> Result<Self, StubError> {
        let path = path.into();
        if path.exists() {
            let text = std::fs::read_to_string(&path).map_err(|e| StubError::Snapshot(e.to_string()))?;
            let table: TokenTable =
                serde_json::from_str(&text).map_err(|e| StubError::Snapshot(e.to_string()))?;
            *self.tokens.get_mut().expect("token table poisoned") = table;
        }
        self.snapshot = Some(path);
        Ok(self)
    }

    pub fn issuer(&self) -> &str {
        &self.issuer
    }

    pub fn key_id(&self) -> &str {
        &self.key_id
    }

    pub fn jwks(&self) -> JwkSet {
        JwkSet {
            keys: vec![self.key.public_jwk().clone().with_kid(&self.key_id)],
        }
    }

    pub fn issue_tokens(
        &self,
        username: &str,
        password: &str,
        scopes: &BTreeSet<String>,
    ) -> Result<TokenResponse, StubError> {
        let user = self
            .users
            .get(username)
            .filter(|u| u.password == password)
            .ok_or(StubError::BadCredentials)?;
        if let Some(extra) = scopes.difference(&user.granted_scopes).next() {
            return Err(StubError::ScopeNotGranted(extra.clone()));
        }
        let mut table = self.tokens.lock().expect("token table poisoned");
        let response = self.mint(&user.sub, scopes.clone(), &mut table);
        self.persist(&table)?;
        Ok(response)
    }

    /// Exchanges a live refresh token for a fresh token set. The old refresh
    /// token stops working; of concurrent uses of one token exactly one wins.
    pub fn refresh(&self, refresh_token: &str) -> Result<TokenResponse, StubError> {
        let mut table = self.tokens.lock().expect("token table poisoned");
        let access = table
            .by_refresh
            .remove(refresh_token)
            .ok_or(StubError::InvalidRefreshToken)?;
        let old = table
            .by_access
            .remove(&access)
            .ok_or(StubError::InvalidRefreshToken)?;
        let response = self.mint(&old.sub, old.scopes, &mut table);
        self.persist(&table)?;
        Ok(response)
    }

    pub fn userinfo(&self, access_token: &str) -> Result<Map<String, Value>, StubError> {
        let record = {
            let table = self.tokens.lock().expect("token table poisoned");
            table.by_access.get(access_token).cloned()
        }
        .ok_or(StubError::InvalidToken)?;
        if self.clock.now() >= record.expires_at {
            return Err(StubError::InvalidToken);
        }
        let user = self
            .users
            .values()
            .find(|u| u.sub == record.sub)
            .ok_or(StubError::InvalidToken)?;
        Ok(user.released_claims(&record.scopes))
    }

    pub fn record(&self, access_token: &str) -> Option<IssuedTokenRecord> {
        self.tokens
            .lock()
            .expect("token table poisoned")
            .by_access
            .get(access_token)
            .cloned()
    }

    fn mint(&self, sub: &str, scopes: BTreeSet<String>, table: &mut TokenTable) -> TokenResponse {
        let now = self.clock.now();
        let scope = scopes.iter().map(String::as_str).collect::<Vec<_>>().join(" ");
        let at_claims = json!({
            "iss": self.issuer,
            "sub": sub,
            "aud": CLIENT_ID,
            "client_id": CLIENT_ID,
            "scope": scope,
            "iat": now,
            "exp": now + ACCESS_TOKEN_LIFETIME_SECS,
            "jti": random_token(16),
        });
        let access_token = self.sign(ACCESS_TOKEN_TYP, &at_claims);
        let id_claims = json!({
            "iss": self.issuer,
            "sub": sub,
            "aud": CLIENT_ID,
            "iat": now,
            "exp": now + ID_TOKEN_LIFETIME_SECS,
        });
        let id_token = self.sign(ID_TOKEN_TYP, &id_claims);
        let refresh_token = random_token(32);
        table.insert(IssuedTokenRecord {
            access_token: access_token.clone(),
            refresh_token: refresh_token.clone(),
            sub: sub.to_string(),
            scopes,
            expires_at: now + ACCESS_TOKEN_LIFETIME_SECS,
        });
        TokenResponse {
            access_token,
            refresh_token,
            id_token,
            token_type: "Bearer".into(),
            expires_in: ACCESS_TOKEN_LIFETIME_SECS,
            scope,
        }
    }

    fn sign(&self, typ: &str, claims: &Value) -> String {
        let payload = serde_json::to_vec(claims).expect("claims serialize");
        CompactToken::sign(typ, Some(&self.key_id), &payload, &self.key).into_string()
    }

    fn persist(&self, table: &TokenTable) -> Result<(), StubError> {
        let Some(path) = &self.snapshot else {
            return Ok(());
        };
        let text = serde_json::to_string(table).map_err(|e| StubError::Snapshot(e.to_string()))?;
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, text)
            .and_then(|_| std::fs::rename(&tmp, path))
            .map_err(|e| StubError::Snapshot(e.to_string()))
    }
}

/// Reads the `scope` claim of an access token without verifying it.
/// Returns `None` for tokens that are not JWTs.
pub fn access_token_scopes(access_token: &str) -> Option<BTreeSet<String>> {
    let token = CompactToken::parse(access_token).ok()?;
    let claims: Value = serde_json::from_slice(&token.payload()).ok()?;
    let scope = claims.get("scope")?.as_str()?;
    Some(scope.split_whitespace().map(str::to_string).collect())
}

fn form_field<'a>(form: &'a HashMap<String, String>, name: &'static str) -> Result<&'a str, StubError> {
    form.get(name).map(String::as_str).ok_or(StubError::MissingField(name))
}

async fn token_endpoint(
    State(stub): State<Arc<OpStub>>,
    Form(form): Form<HashMap<String, String>>,
) -> Result<Json<TokenResponse>, StubError> {
    let response = match form_field(&form, "grant_type")? {
        "password" => {
            let scopes = form
                .get("scope")
                .map(|s| s.split_whitespace().map(str::to_string).collect())
                .unwrap_or_default();
            stub.issue_tokens(form_field(&form, "username")?, form_field(&form, "password")?, &scopes)?
        }
        "refresh_token" => stub.refresh(form_field(&form, "refresh_token")?)?,
        other => return Err(StubError::UnsupportedGrantType(other.to_string())),
    };
    Ok(Json(response))
}

async fn userinfo_endpoint(
    State(stub): State<Arc<OpStub>>,
    headers: HeaderMap,
) -> Result<Json<Map<String, Value>>, StubError> {
    let token = bearer_token(&headers).ok_or(StubError::InvalidToken)?;
    stub.userinfo(token).map(Json)
}

async fn jwks_endpoint(State(stub): State<Arc<OpStub>>) -> Json<JwkSet> {
    Json(stub.jwks())
}

pub fn router(stub: Arc<OpStub>) -> Router {
    Router::new()
        .route("/token", post(token_endpoint))
        .route("/userinfo", get(userinfo_endpoint).post(userinfo_endpoint))
        .route(ict_core::verifier::JWKS_PATH, get(jwks_endpoint))
        .with_state(stub)
}
