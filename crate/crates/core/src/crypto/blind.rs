//! Chaum RSA blind signatures over a full-domain hash.
//!
//! The requester blinds a digest `m` as `b^e * m mod n`; the signer returns
//! `(b^e * m)^d = b * m^d mod n`; multiplying by `b^-1` leaves `m^d`, which
//! verifies as `s^e = m mod n`.

use num_bigint::{BigUint, RandBigInt};
use num_integer::Integer;
use num_traits::{One, Zero};
use rand::{CryptoRng, Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::{sha256, CryptoError, Result};

pub const SUPPORTED_BIT_LENGTHS: [u32; 4] = [512, 1024, 2048, 3072];
pub const DEFAULT_BIT_LENGTH: u32 = 2048;
const PUBLIC_EXPONENT: u32 = 65_537;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlindPublicKey {
    pub n: BigUint,
    pub e: BigUint,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlindKeyPair {
    public: BlindPublicKey,
    d: BigUint,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlindingFactor {
    b: BigUint,
    b_inverse: BigUint,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlindSignature {
    pub value_s: BigUint,
}

impl BlindKeyPair {
    /// Deterministic RSA key generation from a 64-bit seed.
    pub fn generate(bit_length: u32, rng_seed: u64) -> Result<Self> {
        if !SUPPORTED_BIT_LENGTHS.contains(&bit_length) {
            return Err(CryptoError::UnsupportedBitLength(bit_length));
        }
        let mut rng = ChaCha20Rng::seed_from_u64(rng_seed);
        let e = BigUint::from(PUBLIC_EXPONENT);
        loop {
            let p = random_prime(&mut rng, bit_length / 2);
            let q = random_prime(&mut rng, bit_length / 2);
            if p == q {
                continue;
            }
            let n = &p * &q;
            if n.bits() != u64::from(bit_length) {
                continue;
            }
            let phi = (&p - 1u32) * (&q - 1u32);
            if let Some(d) = e.modinv(&phi) {
                return Ok(BlindKeyPair { public: BlindPublicKey { n, e }, d });
            }
        }
    }

    /// Builds a key from explicit primes without size checks. Only meant for
    /// small textbook instances in tests.
    pub fn from_primes(p: u64, q: u64, e: u64) -> Option<Self> {
        let (p, q, e) = (BigUint::from(p), BigUint::from(q), BigUint::from(e));
        let phi = (&p - 1u32) * (&q - 1u32);
        let d = e.modinv(&phi)?;
        Some(BlindKeyPair { public: BlindPublicKey { n: p * q, e }, d })
    }

    pub fn public(&self) -> &BlindPublicKey {
        &self.public
    }

    pub fn modulus_n(&self) -> &BigUint {
        &self.public.n
    }

    pub fn private_exponent_d(&self) -> &BigUint {
        &self.d
    }
}

impl BlindingFactor {
    /// Random factor in `[2, n)` coprime to `n`.
    pub fn random<R: RngCore + CryptoRng>(n: &BigUint, rng: &mut R) -> Self {
        let two = BigUint::from(2u32);
        loop {
            let b = rng.gen_biguint_range(&two, n);
            if let Some(f) = Self::from_value(b, n) {
                return f;
            }
        }
    }

    /// Any value invertible mod `n`, including the identity factor 1.
    pub fn from_value(b: BigUint, n: &BigUint) -> Option<Self> {
        let b_inverse = b.modinv(n)?;
        Some(Self { b, b_inverse })
    }

    pub fn value(&self) -> &BigUint {
        &self.b
    }

    pub fn inverse(&self) -> &BigUint {
        &self.b_inverse
    }
}

fn check_range(x: &BigUint, n: &BigUint) -> Result<()> {
    if x.is_zero() || x >= n {
        Err(CryptoError::OutOfRange)
    } else {
        Ok(())
    }
}

/// Full-domain hash of `message` into `[1, n)`, coprime to `n`.
pub fn fdh(message: &[u8], public: &BlindPublicKey) -> BigUint {
    let n_bytes = public.n.to_bytes_be();
    let width = n_bytes.len();
    for salt in 0u32.. {
        let mut out = Vec::with_capacity(width + 32);
        let mut counter = 0u32;
        while out.len() < width {
            out.extend_from_slice(&sha256(&[
                b"xrelay/fdh",
                &salt.to_be_bytes(),
                &counter.to_be_bytes(),
                &n_bytes,
                message,
            ]));
            counter += 1;
        }
        out.truncate(width);
        let h = BigUint::from_bytes_be(&out) % &public.n;
        if !h.is_zero() && h.gcd(&public.n).is_one() {
            return h;
        }
    }
    unreachable!("salt space exhausted")
}

pub fn blind<R: RngCore + CryptoRng>(
    message_digest: &BigUint,
    public: &BlindPublicKey,
    rng: &mut R,
) -> Result<(BigUint, BlindingFactor)> {
    check_range(message_digest, &public.n)?;
    let factor = BlindingFactor::random(&public.n, rng);
    let blinded = blind_with_factor(message_digest, public, &factor)?;
    Ok((blinded, factor))
}

pub fn blind_with_factor(
    message_digest: &BigUint,
    public: &BlindPublicKey,
    factor: &BlindingFactor,
) -> Result<BigUint> {
    check_range(message_digest, &public.n)?;
    Ok(factor.b.modpow(&public.e, &public.n) * message_digest % &public.n)
}

pub fn sign_blinded(blinded: &BigUint, key: &BlindKeyPair) -> Result<BigUint> {
    check_range(blinded, &key.public.n)?;
    Ok(blinded.modpow(&key.d, &key.public.n))
}

pub fn unblind(s_prime: &BigUint, factor: &BlindingFactor, n: &BigUint) -> BlindSignature {
    BlindSignature { value_s: s_prime * &factor.b_inverse % n }
}

pub fn verify_unblinded(message_digest: &BigUint, sig: &BlindSignature, public: &BlindPublicKey) -> bool {
    sig.value_s < public.n && sig.value_s.modpow(&public.e, &public.n) == *message_digest
}

const SMALL_PRIMES: [u32; 24] =
    [3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89, 97];

fn random_prime<R: RngCore + CryptoRng>(rng: &mut R, bits: u32) -> BigUint {
    loop {
        let mut candidate = rng.gen_biguint(u64::from(bits));
        // Top two bits set so the product of two such primes has full length.
        candidate.set_bit(u64::from(bits) - 1, true);
        candidate.set_bit(u64::from(bits) - 2, true);
        candidate.set_bit(0, true);
        if is_probable_prime(&candidate, 40, rng) {
            return candidate;
        }
    }
}

pub(crate) fn is_probable_prime<R: RngCore + CryptoRng>(n: &BigUint, rounds: u32, rng: &mut R) -> bool {
    let two = BigUint::from(2u32);
    if *n < two {
        return false;
    }
    for p in SMALL_PRIMES {
        let p = BigUint::from(p);
        if *n == p {
            return true;
        }
        if (n % &p).is_zero() {
            return false;
        }
    }
    if n.is_even() {
        return *n == two;
    }
    let n_minus_one = n - 1u32;
    let s = n_minus_one.trailing_zeros().unwrap_or(0);
    let d = &n_minus_one >> s;
    'witness: for _ in 0..rounds {
        let a = rng.gen_biguint_range(&two, &n_minus_one);
        let mut x = a.modpow(&d, n);
        if x.is_one() || x == n_minus_one {
            continue;
        }
        for _ in 1..s {
            x = x.modpow(&two, n);
            if x == n_minus_one {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

/// Uniform digest in `[1, n)`, for tests and workload generation.
pub fn random_digest<R: Rng + ?Sized>(n: &BigUint, rng: &mut R) -> BigUint {
    loop {
        let mut bytes = vec![0u8; n.to_bytes_be().len()];
        rng.fill_bytes(&mut bytes);
        let m = BigUint::from_bytes_be(&bytes) % n;
        if !m.is_zero() {
            return m;
        }
    }
}
