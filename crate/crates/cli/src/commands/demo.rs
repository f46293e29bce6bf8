//! Flow demos against an in-process stub provider and issuer.

use std::sync::Arc;

use ict_core::flows::{email_sign, recommended_validity, email_verify, vc_complete, vc_initiate, vc_respond, FlowError, ReceivedIct};
use ict_core::verifier::JwksKeyStore;
use ict_core::{Algorithm, Clock, FixedClock, KeyKind, KeyPair, ManualClock, SystemClock, TrustEntry, TrustPolicy, Verifier};
use ict_services::issuer::IctRequest;
use ict_services::testkit::LocalDeployment;
use serde_json::json;
use url::Url;

use super::print_json;
use crate::error::{CliError, CliResult, Format};
use crate::{DemoEmailArgs, DemoImArgs};

fn flow_error(e: FlowError) -> CliError {
    CliError::failure(e.code(), e)
}

fn start() -> CliResult<LocalDeployment> {
    LocalDeployment::start().map_err(|e| CliError::failure("startup-failed", e))
}

fn fresh_key(kind: KeyKind, server: Option<Url>) -> CliResult<KeyPair> {
    KeyPair::generate(Algorithm::Es256, kind, server).map_err(|e| CliError::failure("keygen-failed", e))
}

/// Password grant for `user`, then an ICT for `key` in `context` with the
/// recommended lifetime of that context.
fn obtain_ict(d: &LocalDeployment, user: &str, key: &KeyPair, context: &str) -> CliResult<String> {
    let scope = format!("e2e_auth_{context}");
    let password = format!("{user}-pw");
    let tokens = d
        .stub_client()
        .password_grant(user, &password, &["openid", "profile", "email", &scope])?;
    let mut request = IctRequest::new(key, [context], &SystemClock);
    request.requested_validity = recommended_validity(context);
    Ok(d.ict_client().request_ict(&tokens.access_token, &request)?)
}

/// Both demo parties trust the stub as authoritative for email addresses.
fn verifier(d: &LocalDeployment) -> Verifier {
    let policy = TrustPolicy::new().with(d.op_url.clone(), TrustEntry::authoritative(["email"], 1));
    Verifier::new(Arc::new(JwksKeyStore::new()), policy)
}

fn say(format: Format, line: impl AsRef<str>) {
    if format == Format::Text {
        println!("{}", line.as_ref());
    }
}

pub fn demo_vc(format: Format) -> CliResult {
    let d = start()?;
    let (alice_key, bob_key) = (fresh_key(KeyKind::Ephemeral, None)?, fresh_key(KeyKind::Ephemeral, None)?);
    let alice_ict = obtain_ict(&d, "alice", &alice_key, "vc")?;
    let bob_ict = obtain_ict(&d, "bob", &bob_key, "vc")?;
    say(format, format!("provider {}: issued vc ICTs to alice and bob", d.op_url));

    let (alice_verifier, bob_verifier) = (verifier(&d), verifier(&d));
    let (hello, pending) =
        vc_initiate(&alice_key, &alice_ict, "alice", "bob", &SystemClock).map_err(flow_error)?;
    say(format, format!("alice -> bob  handshake {}", hello.session_id));
    let (reply, seen_by_bob) =
        vc_respond(&hello, &bob_key, &bob_ict, &bob_verifier, &SystemClock).map_err(flow_error)?;
    say(format, format!("bob   authenticated {} ({})", seen_by_bob.subject, seen_by_bob.issuer));
    let mutual = vc_complete(&pending, &reply, &alice_verifier, &SystemClock).map_err(flow_error)?;
    say(format, format!("alice authenticated {} ({})", mutual.peer.subject, mutual.peer.issuer));
    say(format, format!("session {} established", mutual.session_id));

    if format == Format::Json {
        print_json(&json!({
            "flow": "vc",
            "session_id": mutual.session_id.as_str(),
            "initiator": { "sub": seen_by_bob.subject, "thumbprint": alice_key.thumbprint() },
            "responder": { "sub": mutual.peer.subject, "thumbprint": bob_key.thumbprint() },
        }));
    }
    Ok(())
}

pub fn demo_im(args: &DemoImArgs, format: Format) -> CliResult {
    if args.confirm_after < 0 {
        return Err(CliError::usage("--confirm-after must not be negative"));
    }
    let d = start()?;
    let alice_key = fresh_key(KeyKind::Ephemeral, None)?;
    let alice_ict = obtain_ict(&d, "alice", &alice_key, "im")?;
    say(format, "alice sends her im ICT over the new chat");

    let clock = ManualClock::new(SystemClock.now());
    let received = ReceivedIct::stamp(alice_ict, &clock);
    clock.advance(args.confirm_after);
    say(format, format!("bob confirms {} s after receipt", args.confirm_after));

    let auth = received
        .bind(alice_key.public_jwk(), &verifier(&d))
        .map_err(flow_error)?;
    say(
        format,
        format!("channel key {} bound to {} ({})", alice_key.thumbprint(), auth.subject, auth.issuer),
    );
    if format == Format::Json {
        print_json(&json!({
            "flow": "im",
            "sub": auth.subject,
            "iss": auth.issuer,
            "channel_key_thumbprint": alice_key.thumbprint(),
            "received_at": received.received_at,
            "confirmed_at": clock.now(),
        }));
    }
    Ok(())
}

pub fn demo_email(args: &DemoEmailArgs, format: Format) -> CliResult {
    if args.verify_after_hours < 0 {
        return Err(CliError::usage("--verify-after-hours must not be negative"));
    }
    let d = start()?;
    let key = if args.long_term {
        let server = Url::parse(&d.revocation_url).map_err(|e| CliError::failure("startup-failed", e))?;
        fresh_key(KeyKind::LongTerm, Some(server))?
    } else {
        fresh_key(KeyKind::Ephemeral, None)?
    };
    let ict = obtain_ict(&d, "alice", &key, "email")?;
    let message = email_sign(
        b"Quarterly figures attached.",
        &[b"figures.csv contents".to_vec()],
        &key,
        &ict,
        &SystemClock,
    )
    .map_err(flow_error)?;
    say(format, format!("alice signed a message at {} (key kind {})", message.sent_at, key.kind().as_str()));

    if args.revoke {
        d.revocations.revoke(key.thumbprint());
        say(format, "alice revoked her key");
    }
    let inbox_timestamp = message.sent_at;
    let now = FixedClock(SystemClock.now() + args.verify_after_hours * 3600);
    let trust_inbox = !args.untrusted_inbox;
    say(
        format,
        format!(
            "bob verifies {} h later ({} inbox time)",
            args.verify_after_hours,
            if trust_inbox { "trusted" } else { "untrusted" }
        ),
    );
    let auth = email_verify(&message, &verifier(&d), inbox_timestamp, trust_inbox, &now).map_err(flow_error)?;
    let email = auth.claims.get("email").map(|c| c.value.clone());
    say(format, format!("signature valid, sender {} ({})", auth.subject, auth.issuer));
    if format == Format::Json {
        print_json(&json!({
            "flow": "email",
            "sub": auth.subject,
            "email": email,
            "iss": auth.issuer,
            "key_kind": auth.key_kind.as_str(),
            "sent_at": message.sent_at,
            "verified_at": now.0,
        }));
    }
    Ok(())
}
