pub mod bench;
pub mod demo;
pub mod keys;
pub mod request;
pub mod serve;
pub mod verify;

use std::path::Path;

use ict_core::{Algorithm, KeyKind, KeyPair};
use url::Url;

use crate::error::{CliError, CliResult};

pub fn parse_algorithm(alg: &str) -> CliResult<Algorithm> {
    alg.parse()
        .map_err(|_| CliError::usage(format!("unsupported algorithm {alg:?}; use rs256 or es256")))
}

/// Key kind and revocation server, checked against each other.
pub fn parse_kind(kind: &str, rev_srv: Option<&str>) -> CliResult<(KeyKind, Option<Url>)> {
    let kind: KeyKind = kind.parse().map_err(CliError::usage)?;
    let server = rev_srv
        .map(|s| Url::parse(s).map_err(|e| CliError::usage(format!("--rev-srv {s:?}: {e}"))))
        .transpose()?;
    kind.check_revocation_server(server.as_ref())
        .map_err(|e| CliError::usage(format!("{e} (--kind {kind:?}, --rev-srv)", kind = kind.as_str())))?;
    Ok((kind, server))
}

pub fn read_file(path: &Path) -> CliResult<String> {
    if !path.exists() {
        return Err(CliError::usage(format!("{} does not exist", path.display())));
    }
    std::fs::read_to_string(path).map_err(|e| CliError::io(path.display(), e))
}

pub fn load_key(path: &Path, kind: KeyKind, server: Option<Url>) -> CliResult<KeyPair> {
    let pem = read_file(path)?;
    KeyPair::from_pem(&pem, kind, server)
        .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

pub fn print_json(value: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(value).expect("JSON value serializes"));
}
