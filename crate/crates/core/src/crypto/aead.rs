//! Authenticated encryption with associated data.
//!
//! Tags are 128 bits and nonces 96 bits for both supported ciphers. Keys
//! are single-use (see [`super::hybrid`]), so random nonces never repeat
//! under one key.

use aes_gcm::aead::{Aead, KeyInit, Payload};
use aes_gcm::{Aes256Gcm, Nonce};
use chacha20poly1305::ChaCha20Poly1305;
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};

use super::encoding::{Reader, Writer};
use super::{sha256, CryptoError, Result};

pub const NONCE_LEN: usize = 12;
pub const TAG_LEN: usize = 16;
pub const KEY_LEN: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AeadAlgorithm {
    #[default]
    Aes256Gcm,
    ChaCha20Poly1305,
}

impl AeadAlgorithm {
    fn id(self) -> u8 {
        match self {
            AeadAlgorithm::Aes256Gcm => 1,
            AeadAlgorithm::ChaCha20Poly1305 => 2,
        }
    }

    fn from_id(id: u8) -> Result<Self> {
        match id {
            1 => Ok(AeadAlgorithm::Aes256Gcm),
            2 => Ok(AeadAlgorithm::ChaCha20Poly1305),
            _ => Err(CryptoError::Malformed("unknown aead algorithm")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SealedEnvelope {
    pub algorithm: AeadAlgorithm,
    pub nonce: [u8; NONCE_LEN],
    pub ciphertext: Vec<u8>,
    pub auth_tag: [u8; TAG_LEN],
    pub associated_data_hash: [u8; 32],
}

// The cipher authenticates the caller's associated data together with the
// algorithm id and the stored digest, so every envelope field is covered.
fn bound_aad(algorithm: AeadAlgorithm, ad_hash: &[u8; 32]) -> Vec<u8> {
    let mut v = Vec::with_capacity(33);
    v.push(algorithm.id());
    v.extend_from_slice(ad_hash);
    v
}

pub fn seal<R: RngCore + CryptoRng>(
    algorithm: AeadAlgorithm,
    key: &[u8; KEY_LEN],
    plaintext: &[u8],
    associated_data: &[u8],
    rng: &mut R,
) -> SealedEnvelope {
    let mut nonce = [0u8; NONCE_LEN];
    rng.fill_bytes(&mut nonce);
    let associated_data_hash = sha256(&[associated_data]);
    let aad = bound_aad(algorithm, &associated_data_hash);
    let payload = Payload { msg: plaintext, aad: &aad };
    let n = Nonce::from_slice(&nonce);
    let mut out = match algorithm {
        AeadAlgorithm::Aes256Gcm => Aes256Gcm::new(key.into()).encrypt(n, payload),
        AeadAlgorithm::ChaCha20Poly1305 => ChaCha20Poly1305::new(key.into()).encrypt(n, payload),
    }
    .expect("in-memory AEAD encryption does not fail");
    let tag_start = out.len() - TAG_LEN;
    let mut auth_tag = [0u8; TAG_LEN];
    auth_tag.copy_from_slice(&out[tag_start..]);
    out.truncate(tag_start);
    SealedEnvelope { algorithm, nonce, ciphertext: out, auth_tag, associated_data_hash }
}

pub fn open(key: &[u8; KEY_LEN], envelope: &SealedEnvelope, associated_data: &[u8]) -> Result<Vec<u8>> {
    if sha256(&[associated_data]) != envelope.associated_data_hash {
        return Err(CryptoError::AuthenticationFailure);
    }
    let aad = bound_aad(envelope.algorithm, &envelope.associated_data_hash);
    let mut msg = Vec::with_capacity(envelope.ciphertext.len() + TAG_LEN);
    msg.extend_from_slice(&envelope.ciphertext);
    msg.extend_from_slice(&envelope.auth_tag);
    let payload = Payload { msg: &msg, aad: &aad };
    let n = Nonce::from_slice(&envelope.nonce);
    match envelope.algorithm {
        AeadAlgorithm::Aes256Gcm => Aes256Gcm::new(key.into()).decrypt(n, payload),
        AeadAlgorithm::ChaCha20Poly1305 => ChaCha20Poly1305::new(key.into()).decrypt(n, payload),
    }
    .map_err(|_| CryptoError::AuthenticationFailure)
}

impl SealedEnvelope {
    pub fn encode_into(&self, w: &mut Writer) {
        w.u8(self.algorithm.id())
            .fixed(&self.nonce)
            .bytes(&self.ciphertext)
            .fixed(&self.auth_tag)
            .fixed(&self.associated_data_hash);
    }

    pub fn decode_from(r: &mut Reader<'_>) -> Result<Self> {
        Ok(SealedEnvelope {
            algorithm: AeadAlgorithm::from_id(r.u8()?)?,
            nonce: r.fixed()?,
            ciphertext: r.bytes()?.to_vec(),
            auth_tag: r.fixed()?,
            associated_data_hash: r.fixed()?,
        })
    }
}
