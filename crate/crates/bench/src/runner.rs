//! Closed-loop request loops against the token and ICT endpoints.
//!
//! Exactly one request is in flight at any time: the next request is sent
//! only after the previous response arrived. Each run starts with discarded
//! warm-up requests, then counts the requests completed within the run
//! duration.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use ict_core::{Algorithm, KeyKind, KeyPair, SystemClock};
use ict_services::client::{ClientError, IctClient, StubClient};
use ict_services::issuer::IctRequest;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats::mean_ci95;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Experiment {
    /// Refresh token exchange at the provider's token endpoint.
    #[serde(rename = "A_token_refresh")]
    TokenRefresh,
    /// Key generation, proof of possession and ICT Request.
    #[serde(rename = "B_ict_request")]
    IctRequest,
}

impl FromStr for Experiment {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "a" | "token-refresh" | "a_token_refresh" => Ok(Experiment::TokenRefresh),
            "b" | "ict-request" | "b_ict_request" => Ok(Experiment::IctRequest),
            other => Err(format!("unknown experiment {other:?}, expected a or b")),
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Experiment::TokenRefresh => "A_token_refresh",
            Experiment::IctRequest => "B_ict_request",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub experiment: Experiment,
    pub stub_url: String,
    pub issuer_url: String,
    pub username: String,
    pub password: String,
    pub scopes: Vec<String>,
    pub contexts: Vec<String>,
    #[serde(with = "secs")]
    pub run_duration: Duration,
    pub run_count: usize,
    pub client_algorithm: Algorithm,
    pub warmup_requests: usize,
}

mod secs {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Duration::try_from_secs_f64(f64::deserialize(d)?).map_err(serde::de::Error::custom)
    }
}

impl BenchConfig {
    /// One-minute runs, 20 of them, as alice asking for an email ICT.
    pub fn new(experiment: Experiment, stub_url: impl Into<String>, issuer_url: impl Into<String>) -> Self {
        BenchConfig {
            experiment,
            stub_url: stub_url.into(),
            issuer_url: issuer_url.into(),
            username: "alice".into(),
            password: "alice-pw".into(),
            scopes: vec!["openid".into(), "profile".into(), "e2e_auth_email".into()],
            contexts: vec!["email".into()],
            run_duration: Duration::from_secs(60),
            run_count: 20,
            client_algorithm: Algorithm::Es256,
            warmup_requests: 1,
        }
    }

    pub fn with_runs(mut self, run_count: usize, run_duration: Duration) -> Self {
        self.run_count = run_count;
        self.run_duration = run_duration;
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub experiment: Experiment,
    /// Requests completed in each run.
    pub runs: Vec<u64>,
    pub run_duration_seconds: f64,
    pub run_count: usize,
    pub per_minute: Vec<f64>,
    pub mean_per_minute: f64,
    pub ci95: (f64, f64),
    /// Set when fewer than two runs make the interval collapse to the mean.
    pub ci_degenerate: bool,
    /// Client key generation happens inside the timed loop (experiment B).
    pub keygen_in_loop: bool,
    pub warnings: Vec<String>,
    pub parameters: BenchConfig,
}

impl BenchReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Assembles the report from raw per-run counts.
    pub fn from_counts(config: &BenchConfig, runs: Vec<u64>) -> Self {
        let seconds = config.run_duration.as_secs_f64();
        let per_minute: Vec<f64> = runs.iter().map(|&c| c as f64 * 60.0 / seconds).collect();
        let mut warnings = Vec::new();
        let (mean, lo, hi, degenerate) = match mean_ci95(&per_minute) {
            Ok(ci) => (ci.mean, ci.lo, ci.hi, false),
            Err(e) => {
                let mean = per_minute.iter().sum::<f64>() / per_minute.len().max(1) as f64;
                warnings.push(format!("{e}; reporting [mean, mean]"));
                (mean, mean, mean, true)
            }
        };
        let keygen_in_loop = config.experiment == Experiment::IctRequest;
        if keygen_in_loop {
            warnings.push(format!(
                "client {} key generation is included in every timed iteration",
                config.client_algorithm.as_str()
            ));
        }
        BenchReport {
            experiment: config.experiment,
            run_count: runs.len(),
            runs,
            run_duration_seconds: seconds,
            per_minute,
            mean_per_minute: mean,
            ci95: (lo, hi),
            ci_degenerate: degenerate,
            keygen_in_loop,
            warnings,
            parameters: config.clone(),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BenchError {
    #[error("endpoint unreachable: {0}")]
    EndpointUnreachable(String),
    #[error("could not obtain tokens: {0}")]
    AuthSetupFailed(String),
    #[error("request failed during run {run}: {error}")]
    RequestFailed { run: usize, error: String },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

fn setup_error(e: ClientError) -> BenchError {
    match e {
        ClientError::Transport(t) => BenchError::EndpointUnreachable(t),
        other => BenchError::AuthSetupFailed(other.to_string()),
    }
}

/// Client-side state threaded through one experiment.
struct Session {
    config: BenchConfig,
    stub: StubClient,
    issuer: IctClient,
    refresh_token: String,
    access_token: String,
}

impl Session {
    fn open(config: &BenchConfig) -> Result<Self, BenchError> {
        let stub = StubClient::new(&config.stub_url);
        let scopes: Vec<&str> = config.scopes.iter().map(String::as_str).collect();
        let tokens = stub
            .password_grant(&config.username, &config.password, &scopes)
            .map_err(setup_error)?;
        Ok(Session {
            config: config.clone(),
            issuer: IctClient::new(&config.issuer_url),
            stub,
            refresh_token: tokens.refresh_token,
            access_token: tokens.access_token,
        })
    }

    /// Fresh access token before each run of experiment B, so a long run
    /// series never outlives the token.
    fn prepare_run(&mut self) -> Result<(), ClientError> {
        if self.config.experiment == Experiment::IctRequest {
            let tokens = self.stub.refresh(&self.refresh_token)?;
            self.refresh_token = tokens.refresh_token;
            self.access_token = tokens.access_token;
        }
        Ok(())
    }

    fn one_request(&mut self) -> Result<(), ClientError> {
        match self.config.experiment {
            Experiment::TokenRefresh => {
                let tokens = self.stub.refresh(&self.refresh_token)?;
                self.refresh_token = tokens.refresh_token;
                self.access_token = tokens.access_token;
            }
            Experiment::IctRequest => {
                let key = KeyPair::generate(self.config.client_algorithm, KeyKind::Ephemeral, None)
                    .map_err(|e| ClientError::Decode(e.to_string()))?;
                let request = IctRequest::new(&key, self.config.contexts.iter().cloned(), &SystemClock);
                self.issuer.request_ict(&self.access_token, &request)?;
            }
        }
        Ok(())
    }
}

/// Runs the configured experiment and reports per-run counts with the
/// mean rate per minute and its 95% interval.
pub fn run_experiment(config: &BenchConfig) -> Result<BenchReport, BenchError> {
    run_experiment_with_progress(config, |_, _| {})
}

/// As [`run_experiment`], calling `progress(run_index, count)` after each run.
pub fn run_experiment_with_progress(
    config: &BenchConfig,
    mut progress: impl FnMut(usize, u64),
) -> Result<BenchReport, BenchError> {
    if config.run_count == 0 {
        return Err(BenchError::InvalidConfig("run_count must be at least 1".into()));
    }
    if config.run_duration.is_zero() {
        return Err(BenchError::InvalidConfig("run duration must be positive".into()));
    }
    let mut session = Session::open(config)?;
    let mut runs = Vec::with_capacity(config.run_count);
    for run in 0..config.run_count {
        let failed = |e: ClientError| BenchError::RequestFailed {
            run,
            error: e.to_string(),
        };
        session.prepare_run().map_err(failed)?;
        for _ in 0..config.warmup_requests {
            session.one_request().map_err(failed)?;
        }
        let mut count = 0u64;
        let start = Instant::now();
        while start.elapsed() < config.run_duration {
            session.one_request().map_err(failed)?;
            if start.elapsed() <= config.run_duration {
                count += 1;
            }
        }
        progress(run, count);
        runs.push(count);
    }
    Ok(BenchReport::from_counts(config, runs))
}
