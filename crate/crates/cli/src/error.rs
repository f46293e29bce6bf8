use std::fmt;
use std::process::ExitCode;

use ict_services::client::ClientError;
use serde_json::json;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Text,
    Json,
}

/// A failed command. Usage errors exit with 2, everything else with 1.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Failure {
        code: String,
        reason: Option<String>,
        detail: String,
    },
}

impl CliError {
    pub fn usage(detail: impl Into<String>) -> Self {
        CliError::Usage(detail.into())
    }

    pub fn failure(code: impl Into<String>, detail: impl fmt::Display) -> Self {
        CliError::Failure {
            code: code.into(),
            reason: None,
            detail: detail.to_string(),
        }
    }

    pub fn io(what: impl fmt::Display, err: std::io::Error) -> Self {
        Self::failure("io-error", format!("{what}: {err}"))
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Failure { .. } => 1,
        }
    }

    fn code(&self) -> &str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Failure { code, .. } => code,
        }
    }

    pub fn report(&self, format: Format) -> ExitCode {
        match format {
            Format::Json => {
                let (reason, detail) = match self {
                    CliError::Usage(detail) => (None, detail),
                    CliError::Failure { reason, detail, .. } => (reason.as_deref(), detail),
                };
                let mut body = json!({
                    "error": self.code(),
                    "detail": detail,
                    "exit_code": self.exit_code(),
                });
                if let Some(reason) = reason {
                    body["reason"] = reason.into();
                }
                eprintln!("{body}");
            }
            Format::Text => eprintln!("error: {self}"),
        }
        ExitCode::from(self.exit_code())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(detail) => f.write_str(detail),
            CliError::Failure { code, reason, detail } => {
                f.write_str(code)?;
                if let Some(reason) = reason {
                    write!(f, "/{reason}")?;
                }
                if !detail.is_empty() {
                    write!(f, ": {detail}")?;
                }
                Ok(())
            }
        }
    }
}

impl From<ClientError> for CliError {
    fn from(err: ClientError) -> Self {
        let detail = match &err {
            ClientError::Service { status, body } => format!("{} (HTTP {status})", body.detail),
            other => other.to_string(),
        };
        CliError::Failure {
            code: err.code().to_string(),
            reason: err.reason().map(str::to_string),
            detail,
        }
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;
