use ict_core::token::decode_unverified;
use ict_core::{ProofOfPossession, SystemClock};
use ict_services::client::{IctClient, StubClient};
use ict_services::issuer::IctRequest;
use serde_json::json;

use super::{load_key, parse_kind, print_json};
use crate::error::{CliError, CliResult, Format};
use crate::RequestIctArgs;

fn access_token(args: &RequestIctArgs) -> CliResult<String> {
    if let Some(token) = &args.token {
        return Ok(token.clone());
    }
    let Some(stub) = &args.op_stub else {
        return Err(CliError::usage("either --token or --op-stub is required"));
    };
    let (Some(user), Some(password)) = (&args.user, &args.password) else {
        return Err(CliError::usage("--op-stub needs --user and --password"));
    };
    let scopes: Vec<String> = if args.scopes.is_empty() {
        ["openid", "profile"]
            .into_iter()
            .map(String::from)
            .chain(args.contexts.iter().map(|c| format!("e2e_auth_{c}")))
            .collect()
    } else {
        args.scopes.clone()
    };
    let scopes: Vec<&str> = scopes.iter().map(String::as_str).collect();
    Ok(StubClient::new(stub).password_grant(user, password, &scopes)?.access_token)
}

/// The stored proof when `--reuse-pop` names an existing file, otherwise a
/// fresh one (saved to that file if given).
fn proof(args: &RequestIctArgs, fresh: ProofOfPossession) -> CliResult<ProofOfPossession> {
    let Some(path) = &args.reuse_pop else {
        return Ok(fresh);
    };
    if path.exists() {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path.display(), e))?;
        return serde_json::from_str(&text)
            .map_err(|e| CliError::usage(format!("{}: not a stored proof: {e}", path.display())));
    }
    let text = serde_json::to_string(&fresh).expect("proof serializes");
    std::fs::write(path, text).map_err(|e| CliError::io(path.display(), e))?;
    Ok(fresh)
}

pub fn request_ict(args: &RequestIctArgs, format: Format) -> CliResult {
    let (kind, server) = parse_kind(&args.kind, args.rev_srv.as_deref())?;
    let key = load_key(&args.key, kind, server)?;
    if let Some(v) = args.validity {
        if v <= 0 {
            return Err(CliError::usage("--validity must be positive"));
        }
    }

    let token = access_token(args)?;
    let mut request = IctRequest::new(&key, args.contexts.iter().cloned(), &SystemClock);
    request.requested_validity = args.validity;
    request.pop = proof(args, request.pop)?;

    let ict = IctClient::new(&args.issuer).request_ict(&token, &request)?;

    if let Some(path) = &args.out {
        std::fs::write(path, format!("{ict}\n")).map_err(|e| CliError::io(path.display(), e))?;
    }
    match format {
        Format::Json => {
            let claims = decode_unverified(&ict).ok().map(|(_, c)| c);
            print_json(&json!({
                "ict": ict,
                "iss": claims.as_ref().map(|c| c.issuer.clone()),
                "sub": claims.as_ref().map(|c| c.subject.clone()),
                "exp": claims.as_ref().map(|c| c.expires_at),
                "ctx": claims.as_ref().map(|c| c.contexts.clone()),
            }));
        }
        Format::Text if args.out.is_none() => println!("{ict}"),
        Format::Text => {}
    }
    Ok(())
}
