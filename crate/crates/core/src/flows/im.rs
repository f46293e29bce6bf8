//! Authenticating an established instant-messaging channel.
//!
//! The peer sends an ICT for the key that already authenticates the channel.
//! Being able to send over the channel is the proof of possession, so the
//! only extra check is that the ICT certifies exactly that key.

use serde::{Deserialize, Serialize};

use super::{FlowError, IM_CONTEXT};
use crate::clock::{Clock, FixedClock};
use crate::jwk::Jwk;
use crate::verifier::{Authentication, RejectReason, Verifier};

/// Verifies `ict` as it stood at `receipt_time` and binds it to the channel key.
///
/// Evaluating at receipt time lets the user confirm trust later; an ICT
/// that had already expired on arrival must be requested again.
pub fn im_bind_channel(
    channel_public_key: &Jwk,
    ict: &str,
    verifier: &Verifier,
    receipt_time: i64,
) -> Result<Authentication, FlowError> {
    let auth = verifier
        .verify_ict(ict, IM_CONTEXT, &FixedClock(receipt_time))
        .map_err(|rejection| match rejection.reason {
            RejectReason::TokenExpired { expires_at } => FlowError::ReceiptAfterExpiry { expires_at },
            _ => FlowError::Rejected(rejection),
        })?;
    let channel = channel_public_key
        .thumbprint()
        .map_err(|_| FlowError::KeyMismatch)?;
    let certified = auth
        .confirmation_key
        .thumbprint()
        .map_err(|_| FlowError::KeyMismatch)?;
    if channel.as_bytes() != certified.as_bytes() {
        return Err(FlowError::KeyMismatch);
    }
    Ok(auth)
}

/// An ICT stamped with the time it arrived over the channel.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReceivedIct {
    pub ict: String,
    pub received_at: i64,
}

impl ReceivedIct {
    pub fn stamp(ict: impl Into<String>, clock: &dyn Clock) -> Self {
        ReceivedIct {
            ict: ict.into(),
            received_at: clock.now(),
        }
    }

    pub fn bind(&self, channel_public_key: &Jwk, verifier: &Verifier) -> Result<Authentication, FlowError> {
        im_bind_channel(channel_public_key, &self.ict, verifier, self.received_at)
    }
}
