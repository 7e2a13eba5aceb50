//! Schnorr-style (AOS) ring signatures and plain Schnorr signatures over
//! Ristretto255.
//!
//! A ring signature is a closed chain of challenges
//! `c_{i+1} = H(ring, M, r_i*G + c_i*P_i)`; only a holder of one ring
//! secret can close it. Verification takes no signer index.

use curve25519_dalek::ristretto::{CompressedRistretto, RistrettoPoint};
use curve25519_dalek::scalar::Scalar;
use curve25519_dalek::traits::Identity;
use rand::{CryptoRng, RngCore};
use sha2::{Digest, Sha512};

use super::encoding::{Reader, Writer};
use super::{CryptoError, Result};

#[derive(Clone)]
pub struct RingKeyPair {
    secret: Scalar,
    public: RistrettoPoint,
}

impl std::fmt::Debug for RingKeyPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RingKeyPair").field("public", &self.public.compress()).finish_non_exhaustive()
    }
}

impl RingKeyPair {
    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        loop {
            let secret = Scalar::random(rng);
            let public = RistrettoPoint::mul_base(&secret);
            if public != RistrettoPoint::identity() {
                return Self { secret, public };
            }
        }
    }

    pub fn public(&self) -> RistrettoPoint {
        self.public
    }

    pub fn secret(&self) -> &Scalar {
        &self.secret
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RingSignature {
    pub challenge_seed: Scalar,
    pub responses: Vec<Scalar>,
}

impl RingSignature {
    pub fn ring_size(&self) -> usize {
        self.responses.len()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.u32(self.responses.len() as u32).fixed(self.challenge_seed.as_bytes());
        for r in &self.responses {
            w.fixed(r.as_bytes());
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let n = r.u32()? as usize;
        let challenge_seed = decode_scalar(r.fixed()?)?;
        let mut responses = Vec::with_capacity(n.min(4096));
        for _ in 0..n {
            responses.push(decode_scalar(r.fixed()?)?);
        }
        r.finish()?;
        Ok(Self { challenge_seed, responses })
    }
}

fn decode_scalar(bytes: [u8; 32]) -> Result<Scalar> {
    Option::from(Scalar::from_canonical_bytes(bytes)).ok_or(CryptoError::Malformed("non-canonical scalar"))
}

fn ring_transcript(ring: &[RistrettoPoint], message: &[u8]) -> Sha512 {
    let mut h = Sha512::new();
    h.update(b"xrelay/aos-ring/v1");
    h.update((ring.len() as u64).to_be_bytes());
    for p in ring {
        h.update(p.compress().as_bytes());
    }
    h.update((message.len() as u64).to_be_bytes());
    h.update(message);
    h
}

fn challenge(transcript: &Sha512, commitment: &RistrettoPoint) -> Scalar {
    let mut h = transcript.clone();
    h.update(commitment.compress().as_bytes());
    Scalar::from_hash(h)
}

pub fn ring_sign<R: RngCore + CryptoRng>(
    message: &[u8],
    ring: &[RistrettoPoint],
    signer_index: usize,
    signer_secret: &Scalar,
    rng: &mut R,
) -> Result<RingSignature> {
    let n = ring.len();
    if n < 2 {
        return Err(CryptoError::RingTooSmall(n));
    }
    if signer_index >= n {
        return Err(CryptoError::SignerIndexOutOfRange { index: signer_index, size: n });
    }
    if RistrettoPoint::mul_base(signer_secret) != ring[signer_index] {
        return Err(CryptoError::SignerMismatch);
    }
    let transcript = ring_transcript(ring, message);
    let alpha = Scalar::random(rng);
    let mut responses: Vec<Scalar> = (0..n).map(|_| Scalar::random(rng)).collect();
    let mut c = vec![Scalar::ZERO; n];
    c[(signer_index + 1) % n] = challenge(&transcript, &RistrettoPoint::mul_base(&alpha));
    for step in 1..n {
        let i = (signer_index + step) % n;
        let commitment = RistrettoPoint::vartime_double_scalar_mul_basepoint(&c[i], &ring[i], &responses[i]);
        c[(i + 1) % n] = challenge(&transcript, &commitment);
    }
    responses[signer_index] = alpha - c[signer_index] * signer_secret;
    Ok(RingSignature { challenge_seed: c[0], responses })
}

pub fn ring_verify(message: &[u8], ring: &[RistrettoPoint], sig: &RingSignature) -> bool {
    if sig.ring_size() != ring.len() {
        log::warn!("ring size mismatch: signature {} vs ring {}", sig.ring_size(), ring.len());
        return false;
    }
    if ring.len() < 2 {
        return false;
    }
    let transcript = ring_transcript(ring, message);
    let mut c = sig.challenge_seed;
    for (p, r) in ring.iter().zip(&sig.responses) {
        let commitment = RistrettoPoint::vartime_double_scalar_mul_basepoint(&c, p, r);
        c = challenge(&transcript, &commitment);
    }
    c == sig.challenge_seed
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SchnorrSignature {
    pub commitment: [u8; 32],
    pub response: Scalar,
}

impl SchnorrSignature {
    pub fn to_bytes(&self) -> [u8; 64] {
        let mut out = [0u8; 64];
        out[..32].copy_from_slice(&self.commitment);
        out[32..].copy_from_slice(self.response.as_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8; 64]) -> Result<Self> {
        let mut commitment = [0u8; 32];
        commitment.copy_from_slice(&bytes[..32]);
        let mut s = [0u8; 32];
        s.copy_from_slice(&bytes[32..]);
        Ok(Self { commitment, response: decode_scalar(s)? })
    }
}

fn schnorr_challenge(commitment: &[u8; 32], public: &RistrettoPoint, message: &[u8]) -> Scalar {
    let mut h = Sha512::new();
    h.update(b"xrelay/schnorr/v1");
    h.update(commitment);
    h.update(public.compress().as_bytes());
    h.update(message);
    Scalar::from_hash(h)
}

pub fn schnorr_sign<R: RngCore + CryptoRng>(message: &[u8], key: &RingKeyPair, rng: &mut R) -> SchnorrSignature {
    let k = Scalar::random(rng);
    let commitment = RistrettoPoint::mul_base(&k).compress().to_bytes();
    let c = schnorr_challenge(&commitment, &key.public, message);
    SchnorrSignature { commitment, response: k + c * key.secret }
}

pub fn schnorr_verify(message: &[u8], public: &RistrettoPoint, sig: &SchnorrSignature) -> bool {
    let Some(r) = CompressedRistretto(sig.commitment).decompress() else {
        return false;
    };
    let c = schnorr_challenge(&sig.commitment, public, message);
    RistrettoPoint::mul_base(&sig.response) == r + c * public
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn ring_of(n: usize, rng: &mut ChaCha20Rng) -> (Vec<RingKeyPair>, Vec<RistrettoPoint>) {
        let keys: Vec<_> = (0..n).map(|_| RingKeyPair::generate(rng)).collect();
        let pubs = keys.iter().map(|k| k.public()).collect();
        (keys, pubs)
    }

    #[test]
    fn every_member_can_sign() {
        let mut rng = ChaCha20Rng::seed_from_u64(31);
        let (keys, ring) = ring_of(3, &mut rng);
        for (i, k) in keys.iter().enumerate() {
            let sig = ring_sign(b"m", &ring, i, k.secret(), &mut rng).unwrap();
            assert!(ring_verify(b"m", &ring, &sig));
            assert!(!ring_verify(b"n", &ring, &sig));
        }
    }

    #[test]
    fn replaced_member_breaks_verification() {
        let mut rng = ChaCha20Rng::seed_from_u64(32);
        let (keys, mut ring) = ring_of(3, &mut rng);
        let sig = ring_sign(b"m", &ring, 0, keys[0].secret(), &mut rng).unwrap();
        ring[2] = RingKeyPair::generate(&mut rng).public();
        assert!(!ring_verify(b"m", &ring, &sig));
    }

    #[test]
    fn empty_message_is_fine() {
        let mut rng = ChaCha20Rng::seed_from_u64(33);
        let (keys, ring) = ring_of(2, &mut rng);
        let sig = ring_sign(b"", &ring, 1, keys[1].secret(), &mut rng).unwrap();
        assert!(ring_verify(b"", &ring, &sig));
    }

    #[test]
    fn sign_preconditions() {
        let mut rng = ChaCha20Rng::seed_from_u64(34);
        let (keys, ring) = ring_of(3, &mut rng);
        assert_eq!(ring_sign(b"m", &ring[..1], 0, keys[0].secret(), &mut rng), Err(CryptoError::RingTooSmall(1)));
        assert_eq!(
            ring_sign(b"m", &ring, 3, keys[0].secret(), &mut rng),
            Err(CryptoError::SignerIndexOutOfRange { index: 3, size: 3 })
        );
        assert_eq!(ring_sign(b"m", &ring, 1, keys[0].secret(), &mut rng), Err(CryptoError::SignerMismatch));
    }

    #[test]
    fn size_mismatch_is_false() {
        let mut rng = ChaCha20Rng::seed_from_u64(35);
        let (keys, ring) = ring_of(3, &mut rng);
        let sig = ring_sign(b"m", &ring, 0, keys[0].secret(), &mut rng).unwrap();
        assert!(!ring_verify(b"m", &ring[..2], &sig));
    }

    #[test]
    fn encoding_round_trips() {
        let mut rng = ChaCha20Rng::seed_from_u64(36);
        let (keys, ring) = ring_of(4, &mut rng);
        let sig = ring_sign(b"m", &ring, 2, keys[2].secret(), &mut rng).unwrap();
        let back = RingSignature::from_bytes(&sig.to_bytes()).unwrap();
        assert_eq!(back, sig);
        assert!(ring_verify(b"m", &ring, &back));
    }

    #[test]
    fn schnorr_round_trip_and_tamper() {
        let mut rng = ChaCha20Rng::seed_from_u64(37);
        let k = RingKeyPair::generate(&mut rng);
        let sig = schnorr_sign(b"cert", &k, &mut rng);
        assert!(schnorr_verify(b"cert", &k.public(), &sig));
        assert!(!schnorr_verify(b"cerT", &k.public(), &sig));
        let other = RingKeyPair::generate(&mut rng);
        assert!(!schnorr_verify(b"cert", &other.public(), &sig));
    }
}
