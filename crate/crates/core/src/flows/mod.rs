//! Transport-agnostic end-to-end authentication flows.
//!
//! Every flow consumes and produces plain messages; nothing here assumes
//! the transport between the parties is honest.
//!
//! * [`vc`]: mutual handshake for video conferences, bound to a session id.
//! * [`im`]: binding an ICT to the key of an established messaging channel.
//! * [`email`]: signed messages carrying the sender's ICT.

pub mod email;
pub mod im;
pub mod vc;

use thiserror::Error;

use crate::jwk::Jwk;
use crate::keys::{KeyPair, PublicKey};
use crate::token::{decode_unverified, IctClaims};
use crate::verifier::Rejection;

pub use email::{email_sign, email_verify, SignedMessage};
pub use im::{im_bind_channel, ReceivedIct};
pub use vc::{
    vc_complete, vc_initiate, vc_respond, HandshakeMessage, MutualAuthentication,
    PendingHandshake, PendingHandshakes, SessionId,
};

pub const VC_CONTEXT: &str = "vc";
pub const IM_CONTEXT: &str = "im";
pub const EMAIL_CONTEXT: &str = "email";

/// Recommended ICT lifetimes per context, in seconds.
pub const VC_VALIDITY_SECS: i64 = 300;
pub const IM_VALIDITY_SECS: i64 = 300;
pub const EMAIL_VALIDITY_SECS: i64 = 3600;

pub fn recommended_validity(context: &str) -> Option<i64> {
    match context {
        VC_CONTEXT => Some(VC_VALIDITY_SECS),
        IM_CONTEXT => Some(IM_VALIDITY_SECS),
        EMAIL_CONTEXT => Some(EMAIL_VALIDITY_SECS),
        _ => None,
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FlowError {
    #[error("own ICT does not certify own key")]
    KeyIctMismatch,
    #[error("ICT is not valid for context {expected:?}")]
    WrongContext { expected: String },
    #[error("handshake signature invalid")]
    BadHandshakeSignature,
    #[error("response belongs to a different session")]
    SessionMismatch,
    #[error("ICT key differs from the channel key")]
    KeyMismatch,
    #[error("ICT had expired at {expires_at} when it was received")]
    ReceiptAfterExpiry { expires_at: i64 },
    #[error("message signature invalid")]
    BadSignature,
    #[error("ICT expired at {expires_at}, before reference time {reference_time}")]
    IctExpiredAtReferenceTime { expires_at: i64, reference_time: i64 },
    #[error("identifier {0:?} may not contain '|'")]
    InvalidPartyId(String),
    #[error("malformed ICT: {0}")]
    MalformedIct(String),
    #[error("ICT rejected: {0}")]
    Rejected(#[from] Rejection),
}

impl FlowError {
    pub fn code(&self) -> &'static str {
        match self {
            FlowError::KeyIctMismatch => "key-ict-mismatch",
            FlowError::WrongContext { .. } => "wrong-context",
            FlowError::BadHandshakeSignature => "bad-handshake-signature",
            FlowError::SessionMismatch => "session-mismatch",
            FlowError::KeyMismatch => "key-mismatch",
            FlowError::ReceiptAfterExpiry { .. } => "receipt-after-expiry",
            FlowError::BadSignature => "bad-signature",
            FlowError::IctExpiredAtReferenceTime { .. } => "ict-expired",
            FlowError::InvalidPartyId(_) => "invalid-party-id",
            FlowError::MalformedIct(_) => "malformed-ict",
            FlowError::Rejected(r) => r.code(),
        }
    }
}

/// Checks that our own ICT certifies our own key for `context`.
fn check_own_ict(own_key: &KeyPair, own_ict: &str, context: &str) -> Result<IctClaims, FlowError> {
    let (_, claims) = decode_unverified(own_ict).map_err(|e| FlowError::MalformedIct(e.to_string()))?;
    if claims.confirmation_key().thumbprint().ok() != Some(own_key.thumbprint()) {
        return Err(FlowError::KeyIctMismatch);
    }
    if !claims.contexts.contains(context) {
        return Err(FlowError::WrongContext {
            expected: context.to_string(),
        });
    }
    Ok(claims)
}

/// The confirmation key of a peer's ICT, read before the ICT is verified.
/// Only used to check a signature; trust comes from the verifier afterwards.
fn peer_confirmation_key(ict: &str) -> Result<(Jwk, PublicKey), FlowError> {
    let (_, claims) = decode_unverified(ict).map_err(|e| FlowError::MalformedIct(e.to_string()))?;
    let jwk = claims.confirmation.jwk;
    let key = PublicKey::from_jwk(&jwk).map_err(|e| FlowError::MalformedIct(e.to_string()))?;
    Ok((jwk, key))
}
