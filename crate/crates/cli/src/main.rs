//! `ict`: key generation, ICT requests, verification, flow demos,
//! benchmarks, and launchers for the stub provider and the issuer.
//!
//! Exit codes: 0 success, 1 protocol or verification failure, 2 usage error.
//! With `--format json`, errors are printed to stderr as
//! `{"error": code, "reason"?: code, "detail": text, "exit_code": n}`.

mod commands;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::{CliError, Format};

#[derive(Parser)]
#[command(name = "ict", version, about = "Identity Certification Token tools")]
struct Cli {
    /// Output format for results and errors.
    #[arg(long, global = true, value_enum, default_value_t = OutputFormat::Text, env = "ICT_FORMAT")]
    format: OutputFormat,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum OutputFormat {
    Text,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a client key pair (PEM private key and JWK public key).
    Keygen(KeygenArgs),
    /// Obtain an ICT for a client key from an issuer.
    RequestIct(RequestIctArgs),
    /// Verify an ICT against a trust policy.
    Verify(VerifyArgs),
    /// Mutual authentication of two users in a video call, against an in-process stub.
    DemoVc,
    /// Binding a messaging channel key to a received ICT, against an in-process stub.
    DemoIm(DemoImArgs),
    /// Signing and verifying an email, against an in-process stub.
    DemoEmail(DemoEmailArgs),
    /// Closed-loop throughput benchmark of the token or ICT endpoint.
    Bench(BenchArgs),
    /// Run the stub OpenID Provider.
    Stub(StubArgs),
    /// Run the ICT issuance service.
    Serve(ServeArgs),
}

#[derive(Args)]
pub struct KeygenArgs {
    /// rs256 or es256.
    #[arg(long, default_value = "es256")]
    pub alg: String,
    /// ephemeral or long-term.
    #[arg(long, default_value = "ephemeral")]
    pub kind: String,
    /// Revocation server of a long-term key.
    #[arg(long)]
    pub rev_srv: Option<String>,
    /// Output path prefix; writes PREFIX.pem and PREFIX.jwk.json.
    #[arg(long, default_value = "ict-key")]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct RequestIctArgs {
    /// Base URL of the ICT service.
    #[arg(long, env = "ICT_ISSUER_URL")]
    pub issuer: String,
    /// Access token to present.
    #[arg(long, env = "ICT_ACCESS_TOKEN", conflicts_with = "op_stub")]
    pub token: Option<String>,
    /// Obtain the access token from this stub provider with a password grant.
    #[arg(long, env = "ICT_OP_STUB_URL")]
    pub op_stub: Option<String>,
    #[arg(long, requires = "op_stub")]
    pub user: Option<String>,
    #[arg(long, requires = "op_stub")]
    pub password: Option<String>,
    /// Scope for the password grant (repeatable). Defaults to openid,
    /// profile and e2e_auth_<context> for each context.
    #[arg(long = "scope", requires = "op_stub")]
    pub scopes: Vec<String>,
    /// PEM private key of the client.
    #[arg(long, env = "ICT_KEY")]
    pub key: PathBuf,
    #[arg(long, default_value = "ephemeral")]
    pub kind: String,
    #[arg(long)]
    pub rev_srv: Option<String>,
    /// Context the ICT is requested for (repeatable).
    #[arg(long = "context", default_value = "email")]
    pub contexts: Vec<String>,
    /// Requested lifetime in seconds.
    #[arg(long)]
    pub validity: Option<i64>,
    /// Write the ICT here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Testing aid: reuse the proof of possession stored in this file,
    /// creating it on first use.
    #[arg(long, hide = true)]
    pub reuse_pop: Option<PathBuf>,
}

#[derive(Args)]
pub struct VerifyArgs {
    /// File holding the ICT, or - for stdin.
    #[arg(long, default_value = "-")]
    pub ict: String,
    /// Context the ICT is presented for.
    #[arg(long)]
    pub context: String,
    /// Trust policy file (JSON). Without it every issuer is insecure.
    #[arg(long, env = "ICT_POLICY")]
    pub policy: Option<PathBuf>,
    /// Ask on stdin whether to trust issuers the policy does not list.
    #[arg(long)]
    pub interactive: bool,
    /// Record trust decisions from the prompt in the policy file.
    #[arg(long, requires = "interactive")]
    pub save: bool,
    /// Fetch the issuer keys from this JWKS URL instead of the issuer's well-known location.
    #[arg(long)]
    pub jwks_url: Option<String>,
}

#[derive(Args)]
pub struct DemoImArgs {
    /// Confirm the ICT this many seconds after it was received.
    #[arg(long, default_value_t = 0)]
    pub confirm_after: i64,
}

#[derive(Args)]
pub struct DemoEmailArgs {
    /// Sign with a long-term key registered at the demo revocation server.
    #[arg(long)]
    pub long_term: bool,
    /// Revoke the long-term key before the recipient verifies.
    #[arg(long, requires = "long_term")]
    pub revoke: bool,
    /// Verify this many hours after delivery.
    #[arg(long, default_value_t = 0)]
    pub verify_after_hours: i64,
    /// The recipient does not trust its inbox timestamp.
    #[arg(long)]
    pub untrusted_inbox: bool,
}

#[derive(Args)]
pub struct BenchArgs {
    /// a (token refresh) or b (ICT request).
    #[arg(long)]
    pub experiment: String,
    /// Seconds per run.
    #[arg(long, default_value_t = 60.0)]
    pub duration: f64,
    #[arg(long, default_value_t = 20)]
    pub runs: usize,
    /// Write the JSON report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Stub provider URL; an in-process deployment is started when absent.
    #[arg(long, requires = "issuer")]
    pub op_stub: Option<String>,
    /// ICT service URL.
    #[arg(long, requires = "op_stub")]
    pub issuer: Option<String>,
    #[arg(long, default_value = "alice")]
    pub user: String,
    #[arg(long, default_value = "alice-pw")]
    pub password: String,
    /// Client key algorithm for experiment b.
    #[arg(long, default_value = "es256")]
    pub client_alg: String,
}

#[derive(Args)]
pub struct StubArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub listen: String,
    /// Provider identifier; defaults to http://<bound address>.
    #[arg(long)]
    pub issuer_url: Option<String>,
    /// PEM signing key; a fresh RS256 key is generated when absent.
    #[arg(long)]
    pub key: Option<PathBuf>,
    /// Save the generated signing key here.
    #[arg(long, conflicts_with = "key")]
    pub write_key: Option<PathBuf>,
    #[arg(long, default_value = "op-key-1")]
    pub key_id: String,
    /// User fixtures (JSON); the bundled users are used when absent.
    #[arg(long)]
    pub users: Option<PathBuf>,
    /// Persist issued tokens to this file.
    #[arg(long)]
    pub snapshot: Option<PathBuf>,
    /// JSON array of revoked key thumbprints, served at /revoked.
    #[arg(long)]
    pub revoked: Option<PathBuf>,
}

#[derive(Args)]
pub struct ServeArgs {
    /// Configuration file (TOML); defaults to $ICT_ISSUER_CONFIG.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub listen: Option<String>,
    #[arg(long)]
    pub issuer_url: Option<String>,
    #[arg(long)]
    pub userinfo_url: Option<String>,
    /// PEM signing key, overriding signing_key_path.
    #[arg(long)]
    pub key: Option<PathBuf>,
}

fn json_requested(args: &[String]) -> bool {
    let format_env = std::env::var("ICT_FORMAT").is_ok_and(|v| v == "json");
    args.windows(2).any(|w| w[0] == "--format" && w[1] == "json")
        || args.iter().any(|a| a == "--format=json")
        || format_env
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) if json_requested(&args) => {
            let detail = e.render().to_string();
            return CliError::usage(detail.trim()).report(Format::Json);
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(2);
        }
    };
    let format = match cli.format {
        OutputFormat::Text => Format::Text,
        OutputFormat::Json => Format::Json,
    };
    let result = match cli.command {
        Command::Keygen(a) => commands::keys::keygen(&a, format),
        Command::RequestIct(a) => commands::request::request_ict(&a, format),
        Command::Verify(a) => commands::verify::verify(&a, format),
        Command::DemoVc => commands::demo::demo_vc(format),
        Command::DemoIm(a) => commands::demo::demo_im(&a, format),
        Command::DemoEmail(a) => commands::demo::demo_email(&a, format),
        Command::Bench(a) => commands::bench::bench(&a, format),
        Command::Stub(a) => commands::serve::stub(&a),
        Command::Serve(a) => commands::serve::serve(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => e.report(format),
    }
}
