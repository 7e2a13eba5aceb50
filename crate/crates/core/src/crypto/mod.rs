//! Cryptographic primitives used by the relay pipeline.
//!
//! Everything here is a pure function of its inputs plus a caller-supplied
//! RNG, so any number of callers may use it concurrently as long as each
//! brings its own RNG.

pub mod aead;
pub mod blind;
pub mod encoding;
pub mod hybrid;
pub mod onion;
pub mod ring;

use thiserror::Error;

use crate::RelayId;

pub use aead::{AeadAlgorithm, SealedEnvelope};
pub use blind::{BlindKeyPair, BlindPublicKey, BlindSignature, BlindingFactor};
pub use hybrid::{EncryptionKeyPair, HybridCiphertext, HybridConfig};
pub use onion::{OnionPacket, PeelResult, RoutingMeta};
pub use ring::{RingKeyPair, RingSignature, SchnorrSignature};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CryptoError {
    #[error("unsupported bit length {0}")]
    UnsupportedBitLength(u32),
    #[error("value out of range for modulus")]
    OutOfRange,
    #[error("authentication failure")]
    AuthenticationFailure,
    #[error("payload of {len} bytes exceeds the {max} byte limit")]
    OversizePayload { len: usize, max: usize },
    #[error("onion path is empty")]
    EmptyPath,
    #[error("relay {0} appears twice in the onion path")]
    DuplicateRelay(RelayId),
    #[error("ring must contain at least 2 members, got {0}")]
    RingTooSmall(usize),
    #[error("signer index {index} out of range for ring of {size}")]
    SignerIndexOutOfRange { index: usize, size: usize },
    #[error("signer secret does not match the ring member at its index")]
    SignerMismatch,
    #[error("malformed encoding: {0}")]
    Malformed(&'static str),
}

pub type Result<T> = std::result::Result<T, CryptoError>;

/// SHA-256 over the concatenation of `parts`.
pub fn sha256(parts: &[&[u8]]) -> [u8; 32] {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    h.finalize().into()
}
