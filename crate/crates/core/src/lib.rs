//! Identity Certification Tokens (ICTs).
//!
//! An ICT is a short-lived JWS, signed by an OpenID Provider, that binds the
//! identity claims of an end-user to a public key chosen by that user's
//! client. Other parties verify the token against the provider's published
//! key and their own trust policy, and then rely on the confirmed key for
//! end-to-end authentication.
//!
//! Layout:
//!
//! * [`keys`] and [`jwk`]: asymmetric key material (RS256, ES256) and JWK handling.
//! * [`jws`]: compact JWS serialization shared by ICTs and ID Tokens.
//! * [`token`]: the ICT claim set and its issue/verify operations.
//! * [`pop`]: proof of possession attached to ICT requests, with a replay cache.
//! * [`policy`] and [`verifier`]: OP trust classification and ICT verification.
//! * [`flows`]: videoconference, instant messaging and email authentication.

pub mod clock;
pub mod flows;
pub mod jwk;
pub mod jws;
pub mod keys;
pub mod pop;
pub mod policy;
pub mod token;
pub mod verifier;

mod encoding;

pub use clock::{Clock, FixedClock, ManualClock, SystemClock};
pub use jwk::Jwk;
pub use jws::{CompactToken, JoseHeader};
pub use keys::{Algorithm, KeyError, KeyKind, KeyPair, PublicKey};
pub use pop::{NonceCache, PopError, ProofOfPossession};
pub use policy::{TrustClass, TrustEntry, TrustPolicy};
pub use token::{IctClaims, TokenError};
pub use verifier::{Authentication, Provenance, RejectReason, Rejection, Verifier};
