use std::io::{BufRead, Write};
use std::sync::{Arc, Mutex};

use ict_core::token::decode_unverified;
use ict_core::verifier::JwksKeyStore;
use ict_core::verifier::{Authentication, AuthenticationResult, TrustPrompt};
use ict_core::{SystemClock, TrustEntry, TrustPolicy, Verifier};
use serde_json::Value;

use super::read_file;
use crate::error::{CliError, CliResult, Format};
use crate::VerifyArgs;

fn read_stdin_line() -> CliResult<String> {
    let mut line = String::new();
    std::io::stdin()
        .lock()
        .read_line(&mut line)
        .map_err(|e| CliError::io("stdin", e))?;
    Ok(line.trim().to_string())
}

/// The ICT from a file or stdin, either bare or as `{"ict": ...}`.
fn read_ict(source: &str) -> CliResult<String> {
    let text = if source == "-" {
        read_stdin_line()?
    } else {
        read_file(source.as_ref())?.trim().to_string()
    };
    if text.starts_with('{') {
        let value: Value = serde_json::from_str(&text).map_err(|e| CliError::usage(format!("ICT input: {e}")))?;
        return value["ict"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| CliError::usage("ICT input has no \"ict\" field"));
    }
    if text.is_empty() {
        return Err(CliError::usage("no ICT given"));
    }
    Ok(text)
}

/// Asks on stderr, reads the answer from stdin. A yes trusts the issuer for
/// its own subject identifiers only.
#[derive(Default)]
struct StdinPrompt {
    accepted: Mutex<Vec<(String, TrustEntry)>>,
}

impl TrustPrompt for StdinPrompt {
    fn decide(&self, issuer: &str) -> Option<TrustEntry> {
        eprint!("issuer {issuer} is not in the trust policy; trust it for this verification? [y/N] ");
        let _ = std::io::stderr().flush();
        let answer = read_stdin_line().ok()?;
        if !matches!(answer.to_ascii_lowercase().as_str(), "y" | "yes") {
            return None;
        }
        let entry = TrustEntry::authoritative(Vec::<String>::new(), 0);
        self.accepted.lock().unwrap().push((issuer.to_string(), entry.clone()));
        Some(entry)
    }
}

fn render_value(value: &Value) -> String {
    match value {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn print_table(auth: &Authentication) {
    println!("accepted: {} at {}", auth.subject, auth.issuer);
    let kid = auth.confirmation_key.thumbprint().unwrap_or_default();
    println!(
        "key {} ({}), contexts {}, expires {}",
        kid,
        auth.key_kind.as_str(),
        auth.contexts.iter().cloned().collect::<Vec<_>>().join(","),
        auth.expires_at
    );
    let rows: Vec<(&str, String, &str)> = auth
        .claims
        .iter()
        .map(|(name, c)| {
            let provenance = match c.provenance {
                ict_core::Provenance::Authoritative => "authoritative",
                ict_core::Provenance::Verified => "verified",
                ict_core::Provenance::Uncertified => "uncertified",
            };
            (name.as_str(), render_value(&c.value), provenance)
        })
        .collect();
    let w0 = rows.iter().map(|r| r.0.len()).max().unwrap_or(0).max(5);
    let w1 = rows.iter().map(|r| r.1.chars().count()).max().unwrap_or(0).max(5);
    println!("{:<w0$}  {:<w1$}  PROVENANCE", "CLAIM", "VALUE");
    for (name, value, provenance) in rows {
        println!("{name:<w0$}  {value:<w1$}  {provenance}");
    }
}

pub fn verify(args: &VerifyArgs, format: Format) -> CliResult {
    let policy = match &args.policy {
        Some(path) if !path.exists() && args.save => TrustPolicy::new(),
        Some(path) => TrustPolicy::from_json(&read_file(path)?)
            .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?,
        None if args.save => return Err(CliError::usage("--save needs --policy")),
        None => TrustPolicy::new(),
    };
    let ict = read_ict(&args.ict)?;

    let mut keys = JwksKeyStore::new();
    if let Some(url) = &args.jwks_url {
        let issuer = decode_unverified(&ict)
            .map(|(_, c)| c.issuer)
            .map_err(|e| CliError::failure("malformed-token", e))?;
        keys = keys.with_jwks_url(issuer, url);
    }
    let prompt = Arc::new(StdinPrompt::default());
    let mut verifier = Verifier::new(Arc::new(keys), policy.clone());
    if args.interactive {
        verifier = verifier.with_prompt(prompt.clone());
    }

    let outcome = verifier.verify_ict(&ict, &args.context, &SystemClock);

    if args.save {
        let accepted = prompt.accepted.lock().unwrap();
        if !accepted.is_empty() {
            let path = args.policy.as_ref().expect("checked above");
            let mut policy = policy;
            for (issuer, entry) in accepted.iter() {
                policy.insert(issuer.clone(), entry.clone());
            }
            policy.save(path).map_err(|e| CliError::failure("io-error", e))?;
        }
    }

    match (format, &outcome) {
        (Format::Json, _) => {
            let result = AuthenticationResult::from(&outcome);
            println!("{}", serde_json::to_string_pretty(&result).expect("result serializes"));
        }
        (Format::Text, Ok(auth)) => print_table(auth),
        (Format::Text, Err(_)) => {}
    }
    outcome
        .map(|_| ())
        .map_err(|rejection| CliError::failure(rejection.code(), &rejection.reason))
}
