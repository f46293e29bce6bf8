//! Stub provider and issuer over real HTTP on loopback.

use std::collections::BTreeSet;
use std::sync::Arc;

use ict_core::pop::signing_input;
use ict_core::token::verify_token_signature;
use ict_core::verifier::{HttpRevocationChecker, JwksKeyStore};
use ict_core::{
    Algorithm, Clock, CompactToken, FixedClock, IctClaims, KeyKind, KeyPair, ManualClock,
    ProofOfPossession, SystemClock, TrustEntry, TrustPolicy, Verifier,
};
use ict_services::client::ClientError;
use ict_services::issuer::{fetch_userinfo, IctRequest, IssueError};
use ict_services::testkit::{DeploymentOptions, LocalDeployment, OP_KEY_ID};
use proptest::prelude::*;
use url::Url;

const T0: i64 = 1_700_000_000;
const EMAIL_SCOPES: &[&str] = &["profile", "e2e_auth_email"];

fn es256() -> KeyPair {
    KeyPair::generate(Algorithm::Es256, KeyKind::Ephemeral, None).unwrap()
}

fn alice_token(d: &LocalDeployment, scopes: &[&str]) -> String {
    d.stub_client()
        .password_grant("alice", "alice-pw", scopes)
        .unwrap()
        .access_token
}

fn service_error(result: Result<String, ClientError>) -> (u16, String, Option<String>) {
    match result.unwrap_err() {
        ClientError::Service { status, body } => (status, body.error, body.reason),
        other => panic!("expected a service error, got {other}"),
    }
}

#[test]
fn issued_ict_verifies_under_published_key() {
    let d = LocalDeployment::start().unwrap();
    let at = alice_token(&d, EMAIL_SCOPES);
    let key = es256();
    let ict = d
        .ict_client()
        .request_ict(&at, &IctRequest::new(&key, ["email"], &SystemClock))
        .unwrap();

    let jwks = d.stub_client().jwks().unwrap();
    assert_eq!(jwks.keys.len(), 1);
    assert!(jwks.keys[0].is_public_only());
    let token = CompactToken::parse(&ict).unwrap();
    assert_eq!(token.header().kid.as_deref(), Some(OP_KEY_ID));
    assert_eq!(token.header().typ.as_deref(), Some("ict+jwt"));

    let claims = verify_token_signature(&ict, &jwks.keys[0], &SystemClock).unwrap();
    assert_eq!(claims.issuer, d.op_url);
    assert_eq!(claims.subject, "alice-sub-1");
    assert_eq!(claims.contexts, BTreeSet::from(["email".to_string()]));
    assert_eq!(claims.confirmation_key(), key.public_jwk());
    assert!(claims.lifetime() <= 3600);

    // Identity claims are exactly what userinfo returned, minus sub.
    let mut info = d.stub_client().userinfo(&at).unwrap();
    info.remove("sub");
    assert_eq!(claims.identity_claims.len(), info.len());
    for (name, value) in info {
        assert_eq!(claims.identity_claims.get(&name), Some(&value), "{name}");
    }

    // And the verifier library accepts it, fetching the key over HTTP.
    let policy = TrustPolicy::new().with(&d.op_url, TrustEntry::authoritative(["email"], 1));
    let verifier = Verifier::new(Arc::new(JwksKeyStore::new()), policy);
    let auth = verifier.verify_ict(&ict, "email", &SystemClock).unwrap();
    assert_eq!(auth.subject, "alice-sub-1");
}

#[test]
fn rs256_client_keys_are_accepted() {
    let d = LocalDeployment::start().unwrap();
    let at = alice_token(&d, &["profile", "e2e_auth_vc"]);
    let key = KeyPair::generate(Algorithm::Rs256, KeyKind::Ephemeral, None).unwrap();
    let ict = d
        .ict_client()
        .request_ict(&at, &IctRequest::new(&key, ["vc"], &SystemClock))
        .unwrap();
    let (_, claims) = ict_core::token::decode_unverified(&ict).unwrap();
    assert_eq!(claims.confirmation_key().kty, "RSA");
}

#[test]
fn scope_and_context_errors() {
    let d = LocalDeployment::start().unwrap();
    let client = d.ict_client();
    let key = es256();

    let profile_only = alice_token(&d, &["profile"]);
    let req = IctRequest::new(&key, ["email"], &SystemClock);
    assert_eq!(service_error(client.request_ict(&profile_only, &req)).0, 403);

    let email = alice_token(&d, EMAIL_SCOPES);
    let req = IctRequest::new(&key, ["email", "vc"], &SystemClock);
    let (status, code, _) = service_error(client.request_ict(&email, &req));
    assert_eq!((status, code.as_str()), (403, "insufficient-scope"));

    let req = IctRequest::new(&key, ["chat"], &SystemClock);
    let (status, code, _) = service_error(client.request_ict(&email, &req));
    assert_eq!((status, code.as_str()), (400, "unknown-context"));

    let req = IctRequest::new(&key, Vec::<String>::new(), &SystemClock);
    assert_eq!(service_error(client.request_ict(&email, &req)).1, "invalid-request");
}

#[test]
fn access_token_errors() {
    let clock = Arc::new(ManualClock::new(T0));
    let d = LocalDeployment::start_with(DeploymentOptions {
        clock: clock.clone(),
        ..Default::default()
    })
    .unwrap();
    let client = d.ict_client();
    let key = es256();

    let req = IctRequest::new(&key, ["email"], clock.as_ref());
    let (status, code, _) = service_error(client.request_ict("opaque-garbage", &req));
    assert_eq!((status, code.as_str()), (401, "invalid-token"));

    let at = alice_token(&d, EMAIL_SCOPES);
    // Structurally a JWT with the right scopes, but not one the provider issued.
    let forged = {
        let payload = br#"{"sub":"alice-sub-1","scope":"profile e2e_auth_email"}"#;
        CompactToken::sign("at+jwt", None, payload, &es256()).into_string()
    };
    let (status, code, _) = service_error(client.request_ict(&forged, &req));
    assert_eq!((status, code.as_str()), (401, "invalid-token"));

    clock.advance(301);
    let req = IctRequest::new(&key, ["email"], clock.as_ref());
    let (status, code, _) = service_error(client.request_ict(&at, &req));
    assert_eq!((status, code.as_str()), (401, "invalid-token"));
}

#[test]
fn pop_errors_carry_distinguishing_reason() {
    let clock = Arc::new(ManualClock::new(T0));
    let d = LocalDeployment::start_with(DeploymentOptions {
        clock: clock.clone(),
        ..Default::default()
    })
    .unwrap();
    let client = d.ict_client();
    let at = alice_token(&d, EMAIL_SCOPES);
    let key = es256();

    let req = IctRequest::new(&key, ["email"], clock.as_ref());
    client.request_ict(&at, &req).unwrap();
    let (status, code, reason) = service_error(client.request_ict(&at, &req));
    assert_eq!((status, code.as_str(), reason.as_deref()), (400, "pop-rejected", Some("replayed-nonce")));

    let stale = IctRequest::new(&key, ["email"], &FixedClock(T0 - 16));
    assert_eq!(
        service_error(client.request_ict(&at, &stale)).2.as_deref(),
        Some("stale-timestamp")
    );

    // PoP made with a different key than the one presented.
    let mut wrong = IctRequest::new(&key, ["email"], clock.as_ref());
    wrong.pop = ProofOfPossession::create(&es256(), clock.as_ref());
    assert_eq!(service_error(client.request_ict(&at, &wrong)).2.as_deref(), Some("bad-signature"));
}

#[test]
fn pop_failure_after_userinfo_issues_nothing() {
    let d = LocalDeployment::start().unwrap();
    let at = alice_token(&d, EMAIL_SCOPES);
    d.stub_load.reset();
    let key = es256();
    let mut req = IctRequest::new(&key, ["email"], &SystemClock);
    req.pop.signature[0] ^= 1;
    let (status, _, reason) = service_error(d.ict_client().request_ict(&at, &req));
    assert_eq!((status, reason.as_deref()), (400, Some("bad-signature")));
    assert_eq!(d.stub_load.total(), 1, "exactly one userinfo call");
    // The nonce of the rejected request was not consumed.
    assert!(!d.issuer.nonce_cache().contains(&req.pop.nonce, &SystemClock));
}

#[test]
fn upstream_unavailable_maps_to_502() {
    let closed = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap();
    let d = LocalDeployment::start_with(DeploymentOptions {
        configure: Some(Box::new(move |c| {
            c.userinfo_url = Url::parse(&format!("http://{closed}/userinfo")).unwrap();
        })),
        ..Default::default()
    })
    .unwrap();
    let at = alice_token(&d, EMAIL_SCOPES);
    let req = IctRequest::new(&es256(), ["email"], &SystemClock);
    let (status, code, _) = service_error(d.ict_client().request_ict(&at, &req));
    assert_eq!((status, code.as_str()), (502, "upstream-unavailable"));
}

#[test]
fn userinfo_without_sub_is_malformed() {
    use axum::routing::get;
    use axum::{Json, Router};

    let runtime = tokio::runtime::Runtime::new().unwrap();
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let addr = listener.local_addr().unwrap();
        let app = Router::new()
            .route("/nosub", get(|| async { Json(serde_json::json!({"name": "Alice"})) }))
            .route("/down", get(|| async { (axum::http::StatusCode::SERVICE_UNAVAILABLE, "down") }))
            .route("/denied", get(|| async { axum::http::StatusCode::UNAUTHORIZED }));
        tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
        let http = reqwest::Client::new();
        let url = |p: &str| Url::parse(&format!("http://{addr}{p}")).unwrap();
        assert!(matches!(
            fetch_userinfo(&http, "at", &url("/nosub")).await,
            Err(IssueError::MalformedUpstreamResponse(_))
        ));
        assert!(matches!(
            fetch_userinfo(&http, "at", &url("/down")).await,
            Err(IssueError::UpstreamUnavailable(_))
        ));
        assert_eq!(fetch_userinfo(&http, "at", &url("/denied")).await, Err(IssueError::InvalidToken));
    });
}

#[test]
fn refresh_then_userinfo_and_ict() {
    let d = LocalDeployment::start().unwrap();
    let stub = d.stub_client();
    let first = stub.password_grant("alice", "alice-pw", EMAIL_SCOPES).unwrap();
    let second = stub.refresh(&first.refresh_token).unwrap();
    let e = stub.refresh(&first.refresh_token).unwrap_err();
    assert_eq!(e.code(), "invalid-refresh-token");
    assert_eq!(stub.userinfo(&first.access_token).unwrap_err().code(), "invalid-token");
    let info = stub.userinfo(&second.access_token).unwrap();
    assert_eq!(info["sub"], "alice-sub-1");
    let req = IctRequest::new(&es256(), ["email"], &SystemClock);
    assert!(d.ict_client().request_ict(&second.access_token, &req).is_ok());
}

#[test]
fn token_endpoint_errors() {
    let d = LocalDeployment::start().unwrap();
    let stub = d.stub_client();
    assert_eq!(stub.password_grant("alice", "nope", &["profile"]).unwrap_err().code(), "bad-credentials");
    assert_eq!(stub.password_grant("bob", "bob-pw", &["phone"]).unwrap_err().code(), "scope-not-granted");
    d.ict_client().health().unwrap();
}

#[test]
fn long_term_key_ict_and_revocation_server() {
    let d = LocalDeployment::start().unwrap();
    let at = alice_token(&d, EMAIL_SCOPES);
    let rev = Url::parse(&d.revocation_url).unwrap();
    let key = KeyPair::generate(Algorithm::Es256, KeyKind::LongTerm, Some(rev.clone())).unwrap();
    let ict = d
        .ict_client()
        .request_ict(&at, &IctRequest::new(&key, ["email"], &SystemClock).with_validity(3600))
        .unwrap();
    let (_, claims) = ict_core::token::decode_unverified(&ict).unwrap();
    assert_eq!(claims.key_kind(), KeyKind::LongTerm);
    assert_eq!(claims.revocation_server.as_ref(), Some(&rev));
    assert_eq!(claims.lifetime(), 3600);

    let policy = TrustPolicy::new().with(&d.op_url, TrustEntry::authoritative(["email"], 1));
    let verifier = Verifier::new(Arc::new(JwksKeyStore::new()), policy)
        .with_revocation(Arc::new(HttpRevocationChecker::new()));
    assert!(verifier.verify_ict(&ict, "email", &SystemClock).is_ok());
    d.revocations.revoke(key.thumbprint());
    assert_eq!(
        verifier.verify_ict(&ict, "email", &SystemClock).unwrap_err().code(),
        "key-revoked"
    );

    // Long-term kind without a server is refused up front.
    let mut req = IctRequest::new(&key, ["email"], &SystemClock);
    req.revocation_server = None;
    assert_eq!(service_error(d.ict_client().request_ict(&at, &req)).1, "invalid-request");
}

#[test]
fn duplicated_nonces_are_accepted_once_under_concurrency() {
    let d = LocalDeployment::start().unwrap();
    let at = alice_token(&d, EMAIL_SCOPES);
    let key = es256();
    let now = SystemClock.now();
    let requests: Vec<IctRequest> = (0..8)
        .flat_map(|i| {
            let mut req = IctRequest::new(&key, ["email"], &SystemClock);
            req.pop = ProofOfPossession::with_nonce(&key, format!("nonce{i:02}AAAAAAAAAAAAAAA"), now);
            std::iter::repeat_n(req, 4)
        })
        .collect();
    assert_eq!(requests.len(), 32);
    let barrier = Arc::new(std::sync::Barrier::new(32));
    let handles: Vec<_> = requests
        .into_iter()
        .map(|req| {
            let (client, at, barrier) = (d.ict_client(), at.clone(), barrier.clone());
            std::thread::spawn(move || {
                barrier.wait();
                (req.pop.nonce.clone(), client.request_ict(&at, &req))
            })
        })
        .collect();
    let mut accepted = std::collections::HashMap::<String, usize>::new();
    for handle in handles {
        let (nonce, result) = handle.join().unwrap();
        match result {
            Ok(_) => *accepted.entry(nonce).or_default() += 1,
            Err(e) => assert_eq!(e.reason(), Some("replayed-nonce"), "{e}"),
        }
    }
    assert_eq!(accepted.len(), 8);
    assert!(accepted.values().all(|&n| n == 1));
}

#[test]
fn pop_signing_input_is_nonce_dot_timestamp() {
    let key = es256();
    let pop = ProofOfPossession::with_nonce(&key, "abc".into(), 42);
    key.public_key()
        .verify(b"abc.42", &pop.signature)
        .unwrap();
    assert_eq!(signing_input("abc", 42), "abc.42");
}

fn deployment() -> &'static LocalDeployment {
    static D: std::sync::OnceLock<LocalDeployment> = std::sync::OnceLock::new();
    D.get_or_init(|| LocalDeployment::start().unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Every emitted ICT satisfies the claim invariants, verifies under the
    /// published key, and never outlives min(requested, context max, 3600).
    #[test]
    fn emitted_icts_respect_invariants(
        contexts in prop::sample::subsequence(vec!["email", "vc", "im"], 1..=3),
        requested in prop::option::of(1i64..10_000),
    ) {
        let d = deployment();
        let mut scopes = vec!["profile".to_string()];
        scopes.extend(contexts.iter().map(|c| format!("e2e_auth_{c}")));
        let scopes: Vec<&str> = scopes.iter().map(String::as_str).collect();
        let at = alice_token(d, &scopes);
        let key = es256();
        let mut req = IctRequest::new(&key, contexts.clone(), &SystemClock);
        req.requested_validity = requested;
        let ict = d.ict_client().request_ict(&at, &req).unwrap();

        let jwk = d.stub.jwks().keys[0].clone();
        let claims: IctClaims = verify_token_signature(&ict, &jwk, &SystemClock).unwrap();
        prop_assert!(claims.check_invariants().is_ok());
        let context_max = contexts.iter().map(|c| if *c == "email" { 3600 } else { 300 }).min().unwrap();
        let bound = requested.unwrap_or(300).min(context_max).min(3600);
        prop_assert_eq!(claims.lifetime(), bound);
        prop_assert_eq!(claims.contexts.len(), contexts.len());
    }
}
