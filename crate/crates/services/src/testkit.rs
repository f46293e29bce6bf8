//! Stub provider, issuer and revocation server on ephemeral local ports.
//!
//! The services run on a private multi-threaded runtime owned by
//! [`LocalDeployment`]; dropping the deployment shuts them down. Callers use
//! the blocking clients from ordinary threads.

use std::sync::Arc;

use axum::Router;
use ict_core::{Algorithm, Clock, KeyKind, KeyPair, SystemClock};
use tokio::runtime::Runtime;

use crate::client::{IctClient, StubClient};
use crate::issuer::{Issuer, IssuerConfig};
use crate::op_stub::{default_users, OpStub, StubUser};
use crate::revocation::RevocationList;
use crate::{issuer, op_stub, revocation, track_in_flight, InFlight};

pub const OP_KEY_ID: &str = "op-key-1";

/// Adjusts the issuer configuration before the issuer starts.
pub type ConfigHook = Box<dyn FnOnce(&mut IssuerConfig)>;

pub struct DeploymentOptions {
    pub clock: Arc<dyn Clock>,
    pub users: Vec<StubUser>,
    pub op_algorithm: Algorithm,
    pub configure: Option<ConfigHook>,
}

impl Default for DeploymentOptions {
    fn default() -> Self {
        DeploymentOptions {
            clock: Arc::new(SystemClock),
            users: default_users(),
            op_algorithm: Algorithm::Rs256,
            configure: None,
        }
    }
}

pub struct LocalDeployment {
    /// Base URL of the stub; also the provider identifier (`iss`).
    pub op_url: String,
    /// Base URL of the `/ict` service.
    pub issuer_url: String,
    /// Base URL of the revocation server.
    pub revocation_url: String,
    pub stub: Arc<OpStub>,
    pub issuer: Arc<Issuer>,
    pub revocations: Arc<RevocationList>,
    pub stub_load: Arc<InFlight>,
    pub issuer_load: Arc<InFlight>,
    op_key_pem: String,
    runtime: Option<Runtime>,
}

fn reserve() -> std::io::Result<std::net::TcpListener> {
    let listener = std::net::TcpListener::bind("127.0.0.1:0")?;
    listener.set_nonblocking(true)?;
    Ok(listener)
}

fn serve_on(runtime: &Runtime, listener: std::net::TcpListener, router: Router) {
    runtime.spawn(async move {
        let listener = tokio::net::TcpListener::from_std(listener).expect("listener converts");
        if let Err(e) = axum::serve(listener, router).await {
            tracing::error!("local service stopped: {e}");
        }
    });
}

impl LocalDeployment {
    pub fn start() -> std::io::Result<Self> {
        Self::start_with(DeploymentOptions::default())
    }

    pub fn start_with(options: DeploymentOptions) -> std::io::Result<Self> {
        let other = |e: String| std::io::Error::other(e);
        let runtime = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(4)
            .enable_all()
            .build()?;

        // Addresses first: the stub needs to know its own URL as issuer.
        let (stub_listener, issuer_listener, revocation_listener) = (reserve()?, reserve()?, reserve()?);
        let op_url = format!("http://{}", stub_listener.local_addr()?);
        let issuer_url = format!("http://{}", issuer_listener.local_addr()?);
        let revocation_url = format!("http://{}", revocation_listener.local_addr()?);

        let op_key = KeyPair::generate(options.op_algorithm, KeyKind::Ephemeral, None).map_err(|e| other(e.to_string()))?;
        let op_key_pem = op_key.to_pkcs8_pem();
        let issuer_key = KeyPair::from_pem(&op_key_pem, KeyKind::Ephemeral, None).map_err(|e| other(e.to_string()))?;

        let stub = Arc::new(
            OpStub::new(&op_url, op_key, OP_KEY_ID, options.users, options.clock.clone())
                .map_err(|e| other(e.to_string()))?,
        );
        let userinfo = url::Url::parse(&format!("{op_url}/userinfo")).map_err(|e| other(e.to_string()))?;
        let mut config = IssuerConfig::new(&op_url, OP_KEY_ID, userinfo);
        if let Some(configure) = options.configure {
            configure(&mut config);
        }
        let issuer = Arc::new(Issuer::new(config, issuer_key, options.clock).map_err(|e| other(e.to_string()))?);
        let revocations = Arc::new(RevocationList::new());
        let stub_load = Arc::new(InFlight::default());
        let issuer_load = Arc::new(InFlight::default());

        serve_on(&runtime, stub_listener, track_in_flight(op_stub::router(stub.clone()), stub_load.clone()));
        serve_on(&runtime, issuer_listener, track_in_flight(issuer::router(issuer.clone()), issuer_load.clone()));
        serve_on(&runtime, revocation_listener, revocation::router(revocations.clone()));

        Ok(LocalDeployment {
            op_url,
            issuer_url,
            revocation_url,
            stub,
            issuer,
            revocations,
            stub_load,
            issuer_load,
            op_key_pem,
            runtime: Some(runtime),
        })
    }

    pub fn stub_client(&self) -> StubClient {
        StubClient::new(&self.op_url)
    }

    pub fn ict_client(&self) -> IctClient {
        IctClient::new(&self.issuer_url)
    }

    /// The provider's private key, for tests that need to forge or re-host it.
    pub fn op_key_pem(&self) -> &str {
        &self.op_key_pem
    }
}

impl Drop for LocalDeployment {
    fn drop(&mut self) {
        if let Some(runtime) = self.runtime.take() {
            runtime.shutdown_background();
        }
    }
}
