//! Signed messages (email) carrying the sender's ICT.
//!
//! The sender signs body, attachments, send time and ICT as one unit with
//! the key the ICT certifies. The signature input is a length-prefixed
//! concatenation so no two distinct messages share an encoding.

use serde::{Deserialize, Serialize};

use super::{check_own_ict, peer_confirmation_key, FlowError, EMAIL_CONTEXT};
use crate::clock::{Clock, FixedClock};
use crate::encoding::{b64url_byte_list, b64url_bytes};
use crate::keys::{KeyKind, KeyPair};
use crate::token::decode_unverified;
use crate::verifier::{Authentication, RejectReason, Verifier};

const DOMAIN_TAG: &[u8] = b"ict-signed-message-v1";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignedMessage {
    #[serde(with = "b64url_bytes")]
    pub body: Vec<u8>,
    #[serde(with = "b64url_byte_list")]
    pub attachments: Vec<Vec<u8>>,
    pub sent_at: i64,
    pub ict: String,
    #[serde(rename = "sig", with = "b64url_bytes")]
    pub signature: Vec<u8>,
}

fn push_field(out: &mut Vec<u8>, field: &[u8]) {
    out.extend_from_slice(&(field.len() as u64).to_be_bytes());
    out.extend_from_slice(field);
}

/// `tag | len(body) body | count | (len(att) att)* | sent_at (i64 BE) | len(ict) ict`,
/// lengths and count as u64 big endian.
pub fn canonical_encoding(body: &[u8], attachments: &[Vec<u8>], sent_at: i64, ict: &str) -> Vec<u8> {
    let mut out = Vec::with_capacity(DOMAIN_TAG.len() + body.len() + ict.len() + 64);
    push_field(&mut out, DOMAIN_TAG);
    push_field(&mut out, body);
    out.extend_from_slice(&(attachments.len() as u64).to_be_bytes());
    for attachment in attachments {
        push_field(&mut out, attachment);
    }
    out.extend_from_slice(&sent_at.to_be_bytes());
    push_field(&mut out, ict.as_bytes());
    out
}

impl SignedMessage {
    fn signing_input(&self) -> Vec<u8> {
        canonical_encoding(&self.body, &self.attachments, self.sent_at, &self.ict)
    }
}

pub fn email_sign(
    body: &[u8],
    attachments: &[Vec<u8>],
    own_key: &KeyPair,
    own_ict: &str,
    clock: &dyn Clock,
) -> Result<SignedMessage, FlowError> {
    check_own_ict(own_key, own_ict, EMAIL_CONTEXT)?;
    let sent_at = clock.now();
    let signature = own_key.sign(&canonical_encoding(body, attachments, sent_at, own_ict));
    Ok(SignedMessage {
        body: body.to_vec(),
        attachments: attachments.to_vec(),
        sent_at,
        ict: own_ict.to_string(),
        signature,
    })
}

/// Verifies the message signature and the sender's ICT.
///
/// The ICT is evaluated at the inbox timestamp when the receiving mail
/// server is trusted. Otherwise an ephemeral key is evaluated at the current
/// time, and a long-term key at the signed send time, since a long-term key
/// stays valid until revoked and its revocation status is checked now.
pub fn email_verify(
    msg: &SignedMessage,
    verifier: &Verifier,
    inbox_timestamp: i64,
    trust_inbox_time: bool,
    clock: &dyn Clock,
) -> Result<Authentication, FlowError> {
    let (_, key) = peer_confirmation_key(&msg.ict)?;
    key.verify(&msg.signing_input(), &msg.signature)
        .map_err(|_| FlowError::BadSignature)?;

    let (_, claims) = decode_unverified(&msg.ict).map_err(|e| FlowError::MalformedIct(e.to_string()))?;
    let reference_time = if trust_inbox_time {
        inbox_timestamp
    } else if claims.key_kind() == KeyKind::LongTerm {
        msg.sent_at
    } else {
        clock.now()
    };

    verifier
        .verify_ict(&msg.ict, EMAIL_CONTEXT, &FixedClock(reference_time))
        .map_err(|rejection| match rejection.reason {
            RejectReason::TokenExpired { expires_at } => FlowError::IctExpiredAtReferenceTime {
                expires_at,
                reference_time,
            },
            _ => FlowError::Rejected(rejection),
        })
}
