//! Blocking HTTP clients for the stub provider and the issuer.
//!
//! These wrap `reqwest::blocking` and must not be called from inside an
//! async runtime.

use std::fmt;
use std::time::Duration;

use ict_core::jwk::JwkSet;
use reqwest::blocking::{Client, Response};
use serde::de::DeserializeOwned;
use serde_json::{Map, Value};

use crate::issuer::{IctRequest, IctResponse, ICT_PATH};
use crate::op_stub::TokenResponse;
use crate::ErrorBody;

const TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ClientError {
    /// The service answered with an error body.
    Service { status: u16, body: ErrorBody },
    Transport(String),
    Decode(String),
}

impl ClientError {
    /// The service's error code, or `unreachable` / `bad-response`.
    pub fn code(&self) -> &str {
        match self {
            ClientError::Service { body, .. } => &body.error,
            ClientError::Transport(_) => "unreachable",
            ClientError::Decode(_) => "bad-response",
        }
    }

    pub fn reason(&self) -> Option<&str> {
        match self {
            ClientError::Service { body, .. } => body.reason.as_deref(),
            _ => None,
        }
    }
}

impl fmt::Display for ClientError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClientError::Service { status, body } => {
                write!(f, "{} ({status})", body.error)?;
                if let Some(reason) = &body.reason {
                    write!(f, "/{reason}")?;
                }
                if !body.detail.is_empty() {
                    write!(f, ": {}", body.detail)?;
                }
                Ok(())
            }
            ClientError::Transport(e) => write!(f, "unreachable: {e}"),
            ClientError::Decode(e) => write!(f, "bad response: {e}"),
        }
    }
}

impl std::error::Error for ClientError {}

fn http() -> Client {
    Client::builder().timeout(TIMEOUT).build().expect("HTTP client builds")
}

fn decode<T: DeserializeOwned>(response: reqwest::Result<Response>) -> Result<T, ClientError> {
    let response = response.map_err(|e| ClientError::Transport(e.to_string()))?;
    let status = response.status();
    let text = response.text().map_err(|e| ClientError::Transport(e.to_string()))?;
    if !status.is_success() {
        let body = serde_json::from_str(&text).unwrap_or(ErrorBody {
            error: format!("http-{}", status.as_u16()),
            detail: text,
            reason: None,
        });
        return Err(ClientError::Service {
            status: status.as_u16(),
            body,
        });
    }
    serde_json::from_str(&text).map_err(|e| ClientError::Decode(e.to_string()))
}

fn trim(base: &str) -> String {
    base.trim_end_matches('/').to_string()
}

#[derive(Clone, Debug)]
pub struct StubClient {
    base: String,
    http: Client,
}

impl StubClient {
    pub fn new(base: &str) -> Self {
        StubClient {
            base: trim(base),
            http: http(),
        }
    }

    pub fn password_grant(&self, username: &str, password: &str, scopes: &[&str]) -> Result<TokenResponse, ClientError> {
        let scope = scopes.join(" ");
        let form = [
            ("grant_type", "password"),
            ("username", username),
            ("password", password),
            ("scope", scope.as_str()),
        ];
        decode(self.http.post(format!("{}/token", self.base)).form(&form).send())
    }

    pub fn refresh(&self, refresh_token: &str) -> Result<TokenResponse, ClientError> {
        let form = [("grant_type", "refresh_token"), ("refresh_token", refresh_token)];
        decode(self.http.post(format!("{}/token", self.base)).form(&form).send())
    }

    pub fn userinfo(&self, access_token: &str) -> Result<Map<String, Value>, ClientError> {
        decode(
            self.http
                .get(format!("{}/userinfo", self.base))
                .bearer_auth(access_token)
                .send(),
        )
    }

    pub fn jwks(&self) -> Result<JwkSet, ClientError> {
        decode(
            self.http
                .get(format!("{}{}", self.base, ict_core::verifier::JWKS_PATH))
                .send(),
        )
    }
}

#[derive(Clone, Debug)]
pub struct IctClient {
    base: String,
    http: Client,
}

impl IctClient {
    pub fn new(base: &str) -> Self {
        IctClient {
            base: trim(base),
            http: http(),
        }
    }

    /// Sends an ICT Request and returns the serialized ICT.
    pub fn request_ict(&self, access_token: &str, request: &IctRequest) -> Result<String, ClientError> {
        let response: IctResponse = decode(
            self.http
                .post(format!("{}{ICT_PATH}", self.base))
                .bearer_auth(access_token)
                .json(request)
                .send(),
        )?;
        Ok(response.ict)
    }

    pub fn health(&self) -> Result<(), ClientError> {
        decode::<Value>(self.http.get(format!("{}/health", self.base)).send()).map(|_| ())
    }
}
