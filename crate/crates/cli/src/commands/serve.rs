//! Long-running stub provider and issuer processes. Both print
//! `listening on <url>` once the socket is bound and run until interrupted.

use std::io::Write;
use std::sync::Arc;

use axum::Router;
use ict_core::{Algorithm, KeyKind, KeyPair, SystemClock};
use ict_services::issuer::{self, Issuer, IssuerConfig};
use ict_services::op_stub::{self, default_users, load_users, OpStub};
use ict_services::revocation::{self, RevocationList};
use tokio::net::TcpListener;
use url::Url;

use super::{load_key, read_file};
use crate::error::{CliError, CliResult};
use crate::{ServeArgs, StubArgs};

fn init_logging() {
    let _ = tracing_subscriber::fmt()
        .with_max_level(tracing_subscriber::filter::LevelFilter::INFO)
        .with_writer(std::io::stderr)
        .try_init();
}

fn runtime() -> CliResult<tokio::runtime::Runtime> {
    tokio::runtime::Runtime::new().map_err(|e| CliError::failure("startup-failed", e))
}

fn bind(runtime: &tokio::runtime::Runtime, listen: &str) -> CliResult<(TcpListener, String)> {
    let listener = runtime
        .block_on(TcpListener::bind(listen))
        .map_err(|e| CliError::failure("bind-failed", format!("{listen}: {e}")))?;
    let addr = listener.local_addr().map_err(|e| CliError::failure("bind-failed", e))?;
    Ok((listener, format!("http://{addr}")))
}

fn run(runtime: tokio::runtime::Runtime, listener: TcpListener, url: &str, router: Router) -> CliResult {
    println!("listening on {url}");
    let _ = std::io::stdout().flush();
    runtime
        .block_on(async move {
            axum::serve(listener, router)
                .with_graceful_shutdown(async {
                    let _ = tokio::signal::ctrl_c().await;
                })
                .await
        })
        .map_err(|e| CliError::failure("server-error", e))
}

pub fn stub(args: &StubArgs) -> CliResult {
    init_logging();
    let key = match &args.key {
        Some(path) => load_key(path, KeyKind::Ephemeral, None)?,
        None => {
            let key = KeyPair::generate(Algorithm::Rs256, KeyKind::Ephemeral, None)
                .map_err(|e| CliError::failure("keygen-failed", e))?;
            if let Some(path) = &args.write_key {
                std::fs::write(path, key.to_pkcs8_pem()).map_err(|e| CliError::io(path.display(), e))?;
            }
            key
        }
    };
    let users = match &args.users {
        Some(path) => {
            read_file(path)?;
            load_users(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?
        }
        None => default_users(),
    };
    let revoked = RevocationList::new();
    if let Some(path) = &args.revoked {
        let list: Vec<String> = serde_json::from_str(&read_file(path)?)
            .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        list.into_iter().for_each(|t| revoked.revoke(t));
    }

    let runtime = runtime()?;
    let (listener, url) = bind(&runtime, &args.listen)?;
    let issuer_url = args.issuer_url.clone().unwrap_or_else(|| url.clone());
    let mut stub = OpStub::new(&issuer_url, key, &args.key_id, users, Arc::new(SystemClock))
        .map_err(|e| CliError::usage(e.to_string()))?;
    if let Some(path) = &args.snapshot {
        stub = stub.with_snapshot(path).map_err(|e| CliError::failure("io-error", e))?;
    }
    let router = op_stub::router(Arc::new(stub)).merge(revocation::router(Arc::new(revoked)));
    run(runtime, listener, &url, router)
}

pub fn serve(args: &ServeArgs) -> CliResult {
    init_logging();
    let config_error = |e: issuer::ConfigError| CliError::usage(e.to_string());
    let mut config = match &args.config {
        Some(path) => {
            read_file(path)?;
            IssuerConfig::load(path).map_err(config_error)?
        }
        None => IssuerConfig::from_env().map_err(config_error)?,
    };
    if let Some(listen) = &args.listen {
        config.listen = Some(listen.clone());
    }
    if let Some(url) = &args.issuer_url {
        config.issuer_url = url.clone();
    }
    if let Some(url) = &args.userinfo_url {
        config.userinfo_url = Url::parse(url).map_err(|e| CliError::usage(format!("--userinfo-url: {e}")))?;
    }
    config.validate().map_err(config_error)?;

    let clock = Arc::new(SystemClock);
    let issuer = match &args.key {
        Some(path) => Issuer::new(config.clone(), load_key(path, KeyKind::Ephemeral, None)?, clock),
        None => Issuer::from_config(config.clone(), clock),
    }
    .map_err(config_error)?;

    let runtime = runtime()?;
    let listen = config.listen.as_deref().unwrap_or("127.0.0.1:8081");
    let (listener, url) = bind(&runtime, listen)?;
    run(runtime, listener, &url, issuer::router(Arc::new(issuer)))
}
