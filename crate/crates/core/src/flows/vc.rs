//! Mutual authentication for video conferences.
//!
//! The initiator signs its ICT together with a fresh session id and sends
//! both through the (untrusted) conference server. The responder checks the
//! signature and the ICT, then answers with its own ICT signed over the same
//! session id. The initiator completes only if the response carries the
//! session id it created, which defeats relaying a response from another
//! session. Two messages, no third round.

use std::collections::HashMap;
use std::fmt;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{check_own_ict, peer_confirmation_key, FlowError, VC_CONTEXT};
use crate::clock::Clock;
use crate::encoding::{b64url_bytes, random_bytes};
use crate::jwk::Jwk;
use crate::keys::KeyPair;
use crate::verifier::{Authentication, Verifier};

/// `initiator | responder | unix millis | 64 random bits (hex)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SessionId(String);

impl SessionId {
    pub fn new(initiator: &str, responder: &str, clock: &dyn Clock) -> Result<Self, FlowError> {
        for id in [initiator, responder] {
            if id.contains('|') {
                return Err(FlowError::InvalidPartyId(id.to_string()));
            }
        }
        let nonce = u64::from_be_bytes(random_bytes::<8>());
        Ok(SessionId(format!(
            "{initiator}|{responder}|{}|{nonce:016x}",
            clock.now_millis()
        )))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn initiator(&self) -> &str {
        self.0.split('|').next().unwrap_or_default()
    }

    pub fn responder(&self) -> &str {
        self.0.split('|').nth(1).unwrap_or_default()
    }
}

impl fmt::Display for SessionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HandshakeMessage {
    pub ict: String,
    pub session_id: SessionId,
    #[serde(rename = "sig", with = "b64url_bytes")]
    pub signature: Vec<u8>,
}

fn handshake_input(session_id: &SessionId, ict: &str) -> Vec<u8> {
    format!("{}.{ict}", session_id.as_str()).into_bytes()
}

impl HandshakeMessage {
    fn signed(key: &KeyPair, ict: &str, session_id: SessionId) -> Self {
        let signature = key.sign(&handshake_input(&session_id, ict));
        HandshakeMessage {
            ict: ict.to_string(),
            session_id,
            signature,
        }
    }

    /// Checks the signature against the key certified by the enclosed ICT.
    fn check_signature(&self) -> Result<(), FlowError> {
        let (_, key) = peer_confirmation_key(&self.ict)?;
        key.verify(&handshake_input(&self.session_id, &self.ict), &self.signature)
            .map_err(|_| FlowError::BadHandshakeSignature)
    }
}

/// What the initiator remembers between sending and completing.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PendingHandshake {
    pub session_id: SessionId,
    pub peer_id: String,
    own_key: Jwk,
}

/// Result of a completed mutual handshake. The two confirmed keys are what
/// the parties use to set up their encrypted channel.
#[derive(Clone, Debug, PartialEq)]
pub struct MutualAuthentication {
    pub session_id: SessionId,
    pub peer: Authentication,
    pub own_key: Jwk,
    pub peer_key: Jwk,
}

pub fn vc_initiate(
    own_key: &KeyPair,
    own_ict: &str,
    own_id: &str,
    peer_id: &str,
    clock: &dyn Clock,
) -> Result<(HandshakeMessage, PendingHandshake), FlowError> {
    check_own_ict(own_key, own_ict, VC_CONTEXT)?;
    let session_id = SessionId::new(own_id, peer_id, clock)?;
    let pending = PendingHandshake {
        session_id: session_id.clone(),
        peer_id: peer_id.to_string(),
        own_key: own_key.public_jwk().clone(),
    };
    Ok((HandshakeMessage::signed(own_key, own_ict, session_id), pending))
}

/// Authenticates the initiator and, if it is trusted, answers with our own
/// ICT signed over the same session id. Nothing is sent on rejection.
pub fn vc_respond(
    incoming: &HandshakeMessage,
    own_key: &KeyPair,
    own_ict: &str,
    verifier: &Verifier,
    clock: &dyn Clock,
) -> Result<(HandshakeMessage, Authentication), FlowError> {
    check_own_ict(own_key, own_ict, VC_CONTEXT)?;
    incoming.check_signature()?;
    let peer = verifier.verify_ict(&incoming.ict, VC_CONTEXT, clock)?;
    let response = HandshakeMessage::signed(own_key, own_ict, incoming.session_id.clone());
    Ok((response, peer))
}

/// Completes the handshake on the initiator side.
///
/// Once complete, the result stays valid for the lifetime of the channel;
/// ICT expiry after this point is not re-checked.
pub fn vc_complete(
    pending: &PendingHandshake,
    response: &HandshakeMessage,
    verifier: &Verifier,
    clock: &dyn Clock,
) -> Result<MutualAuthentication, FlowError> {
    if response.session_id != pending.session_id {
        return Err(FlowError::SessionMismatch);
    }
    response.check_signature()?;
    let peer = verifier.verify_ict(&response.ict, VC_CONTEXT, clock)?;
    Ok(MutualAuthentication {
        session_id: pending.session_id.clone(),
        peer_key: peer.confirmation_key.clone(),
        peer,
        own_key: pending.own_key.clone(),
    })
}

/// Pending handshakes of one party, keyed by session id.
#[derive(Debug, Default)]
pub struct PendingHandshakes {
    pending: Mutex<HashMap<SessionId, PendingHandshake>>,
}

impl PendingHandshakes {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&self, pending: PendingHandshake) {
        self.pending
            .lock()
            .expect("pending table poisoned")
            .insert(pending.session_id.clone(), pending);
    }

    pub fn take(&self, session_id: &SessionId) -> Option<PendingHandshake> {
        self.pending
            .lock()
            .expect("pending table poisoned")
            .remove(session_id)
    }

    pub fn len(&self) -> usize {
        self.pending.lock().expect("pending table poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Completes the handshake the response claims to belong to. Unknown or
    /// already completed sessions are a session mismatch.
    pub fn complete(
        &self,
        response: &HandshakeMessage,
        verifier: &Verifier,
        clock: &dyn Clock,
    ) -> Result<MutualAuthentication, FlowError> {
        let pending = self.take(&response.session_id).ok_or(FlowError::SessionMismatch)?;
        match vc_complete(&pending, response, verifier, clock) {
            Ok(done) => Ok(done),
            Err(err) => {
                self.insert(pending);
                Err(err)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::FixedClock;

    #[test]
    fn session_id_layout() {
        let id = SessionId::new("alice", "bob", &FixedClock(1_700_000_000)).unwrap();
        let parts: Vec<&str> = id.as_str().split('|').collect();
        assert_eq!(parts.len(), 4);
        assert_eq!(parts[..3], ["alice", "bob", "1700000000000"]);
        assert_eq!(parts[3].len(), 16);
        assert_eq!(id.initiator(), "alice");
        assert_eq!(id.responder(), "bob");
    }

    #[test]
    fn session_ids_never_repeat() {
        let clock = FixedClock(1);
        let ids: std::collections::HashSet<_> =
            (0..1000).map(|_| SessionId::new("a", "b", &clock).unwrap()).collect();
        assert_eq!(ids.len(), 1000);
    }

    #[test]
    fn separator_in_party_id_is_refused() {
        assert_eq!(
            SessionId::new("a|x", "b", &FixedClock(1)).unwrap_err(),
            FlowError::InvalidPartyId("a|x".into())
        );
    }
}
