//! Hybrid public-key encryption: a Diffie-Hellman key encapsulation over
//! Ristretto255 yields a fresh 256-bit key per message, which seals the
//! payload with the configured AEAD.

use curve25519_dalek::ristretto::{CompressedRistretto, RistrettoPoint};
use curve25519_dalek::scalar::Scalar;
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};

use super::aead::{self, AeadAlgorithm, SealedEnvelope};
use super::encoding::{Reader, Writer};
use super::{sha256, CryptoError, Result};

pub const DEFAULT_MAX_PLAINTEXT: usize = 64 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HybridConfig {
    pub aead: AeadAlgorithm,
    pub max_plaintext: usize,
}

impl Default for HybridConfig {
    fn default() -> Self {
        Self { aead: AeadAlgorithm::default(), max_plaintext: DEFAULT_MAX_PLAINTEXT }
    }
}

#[derive(Clone)]
pub struct EncryptionKeyPair {
    secret: Scalar,
    public: RistrettoPoint,
}

impl std::fmt::Debug for EncryptionKeyPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EncryptionKeyPair").field("public", &self.public.compress()).finish_non_exhaustive()
    }
}

impl EncryptionKeyPair {
    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        let secret = Scalar::random(rng);
        Self { secret, public: RistrettoPoint::mul_base(&secret) }
    }

    pub fn public(&self) -> RistrettoPoint {
        self.public
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HybridCiphertext {
    pub encapsulated_key: [u8; 32],
    pub sealed_payload: SealedEnvelope,
}

fn derive_key(ephemeral: &[u8; 32], recipient: &RistrettoPoint, shared: &RistrettoPoint) -> [u8; 32] {
    sha256(&[b"xrelay/kem/v1", ephemeral, recipient.compress().as_bytes(), shared.compress().as_bytes()])
}

pub fn hybrid_encrypt<R: RngCore + CryptoRng>(
    config: &HybridConfig,
    recipient: &RistrettoPoint,
    plaintext: &[u8],
    associated_data: &[u8],
    rng: &mut R,
) -> Result<HybridCiphertext> {
    if plaintext.len() > config.max_plaintext {
        return Err(CryptoError::OversizePayload { len: plaintext.len(), max: config.max_plaintext });
    }
    let eph = Scalar::random(rng);
    let encapsulated_key = RistrettoPoint::mul_base(&eph).compress().to_bytes();
    let key = derive_key(&encapsulated_key, recipient, &(recipient * eph));
    let sealed_payload = aead::seal(config.aead, &key, plaintext, associated_data, rng);
    Ok(HybridCiphertext { encapsulated_key, sealed_payload })
}

pub fn hybrid_decrypt(recipient: &EncryptionKeyPair, ct: &HybridCiphertext, associated_data: &[u8]) -> Result<Vec<u8>> {
    let eph = CompressedRistretto(ct.encapsulated_key).decompress().ok_or(CryptoError::AuthenticationFailure)?;
    let key = derive_key(&ct.encapsulated_key, &recipient.public, &(eph * recipient.secret));
    aead::open(&key, &ct.sealed_payload, associated_data)
}

impl HybridCiphertext {
    pub fn encode_into(&self, w: &mut Writer) {
        let mut inner = Writer::new();
        inner.fixed(&self.encapsulated_key);
        self.sealed_payload.encode_into(&mut inner);
        w.bytes(&inner.finish());
    }

    pub fn decode_from(r: &mut Reader<'_>) -> Result<Self> {
        let mut inner = Reader::new(r.bytes()?);
        let ct = HybridCiphertext {
            encapsulated_key: inner.fixed()?,
            sealed_payload: SealedEnvelope::decode_from(&mut inner)?,
        };
        inner.finish()?;
        Ok(ct)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        self.encode_into(&mut w);
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let ct = Self::decode_from(&mut r)?;
        r.finish()?;
        Ok(ct)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn round_trip_1kib() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let kp = EncryptionKeyPair::generate(&mut rng);
        let mut payload = vec![0u8; 1024];
        rng.fill_bytes(&mut payload);
        let ct = hybrid_encrypt(&HybridConfig::default(), &kp.public(), &payload, b"ad", &mut rng).unwrap();
        assert_eq!(hybrid_decrypt(&kp, &ct, b"ad").unwrap(), payload);
    }

    #[test]
    fn bit_flip_in_ciphertext_fails() {
        let mut rng = ChaCha20Rng::seed_from_u64(12);
        let kp = EncryptionKeyPair::generate(&mut rng);
        let mut ct = hybrid_encrypt(&HybridConfig::default(), &kp.public(), b"payload", b"", &mut rng).unwrap();
        ct.sealed_payload.ciphertext[0] ^= 1;
        assert_eq!(hybrid_decrypt(&kp, &ct, b""), Err(CryptoError::AuthenticationFailure));
    }

    #[test]
    fn other_recipient_fails() {
        let mut rng = ChaCha20Rng::seed_from_u64(13);
        let kp = EncryptionKeyPair::generate(&mut rng);
        let other = EncryptionKeyPair::generate(&mut rng);
        let ct = hybrid_encrypt(&HybridConfig::default(), &kp.public(), b"payload", b"", &mut rng).unwrap();
        assert_eq!(hybrid_decrypt(&other, &ct, b""), Err(CryptoError::AuthenticationFailure));
    }

    #[test]
    fn oversize_payload_is_rejected() {
        let mut rng = ChaCha20Rng::seed_from_u64(14);
        let kp = EncryptionKeyPair::generate(&mut rng);
        let cfg = HybridConfig { max_plaintext: 8, ..Default::default() };
        assert_eq!(
            hybrid_encrypt(&cfg, &kp.public(), &[0u8; 9], b"", &mut rng),
            Err(CryptoError::OversizePayload { len: 9, max: 8 })
        );
    }

    #[test]
    fn fresh_key_per_message() {
        let mut rng = ChaCha20Rng::seed_from_u64(15);
        let kp = EncryptionKeyPair::generate(&mut rng);
        let a = hybrid_encrypt(&HybridConfig::default(), &kp.public(), b"same", b"", &mut rng).unwrap();
        let b = hybrid_encrypt(&HybridConfig::default(), &kp.public(), b"same", b"", &mut rng).unwrap();
        assert_ne!(a.encapsulated_key, b.encapsulated_key);
        assert_ne!(a.sealed_payload.ciphertext, b.sealed_payload.ciphertext);
    }

    #[test]
    fn chacha_config_round_trips() {
        let mut rng = ChaCha20Rng::seed_from_u64(16);
        let kp = EncryptionKeyPair::generate(&mut rng);
        let cfg = HybridConfig { aead: AeadAlgorithm::ChaCha20Poly1305, ..Default::default() };
        let ct = hybrid_encrypt(&cfg, &kp.public(), b"x", b"", &mut rng).unwrap();
        let ct = HybridCiphertext::from_bytes(&ct.to_bytes()).unwrap();
        assert_eq!(hybrid_decrypt(&kp, &ct, b"").unwrap(), b"x");
    }
}
