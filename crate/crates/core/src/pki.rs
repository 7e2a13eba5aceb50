//! Certificate authority for relay membership and the hash-chained audit log.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use curve25519_dalek::ristretto::{CompressedRistretto, RistrettoPoint};
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::ring::{schnorr_sign, schnorr_verify};
use crate::crypto::{sha256, RingKeyPair, SchnorrSignature};
use crate::RelayId;

/// Virtual milliseconds.
pub type VirtualTime = u64;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PkiError {
    #[error("subject {0} already holds a live certificate")]
    DuplicateSubject(RelayId),
    #[error("subject {0} was never issued a certificate")]
    UnknownSubject(RelayId),
    #[error("validity window must be positive")]
    EmptyValidity,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Certificate {
    pub subject_id: RelayId,
    pub encryption_pub: RistrettoPoint,
    pub signing_pub: RistrettoPoint,
    pub issued_at: VirtualTime,
    pub expires_at: VirtualTime,
    pub issuer_signature: SchnorrSignature,
}

impl Certificate {
    /// Bytes covered by the issuer signature.
    pub fn signed_bytes(&self) -> Vec<u8> {
        tbs(self.subject_id, &self.encryption_pub, &self.signing_pub, self.issued_at, self.expires_at)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.signed_bytes();
        out.extend_from_slice(&self.issuer_signature.to_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Option<Self> {
        if bytes.len() != 4 + 32 + 32 + 8 + 8 + 64 + 9 {
            return None;
        }
        let (tag, rest) = bytes.split_at(9);
        if tag != b"xrelay/ca" {
            return None;
        }
        let subject_id = RelayId(u32::from_be_bytes(rest[0..4].try_into().ok()?));
        let encryption_pub = CompressedRistretto(rest[4..36].try_into().ok()?).decompress()?;
        let signing_pub = CompressedRistretto(rest[36..68].try_into().ok()?).decompress()?;
        let issued_at = u64::from_be_bytes(rest[68..76].try_into().ok()?);
        let expires_at = u64::from_be_bytes(rest[76..84].try_into().ok()?);
        let sig: [u8; 64] = rest[84..148].try_into().ok()?;
        let issuer_signature = SchnorrSignature::from_bytes(&sig).ok()?;
        Some(Self { subject_id, encryption_pub, signing_pub, issued_at, expires_at, issuer_signature })
    }
}

fn tbs(
    subject: RelayId,
    enc: &RistrettoPoint,
    sig: &RistrettoPoint,
    issued_at: VirtualTime,
    expires_at: VirtualTime,
) -> Vec<u8> {
    let mut out = Vec::with_capacity(9 + 84);
    out.extend_from_slice(b"xrelay/ca");
    out.extend_from_slice(&subject.0.to_be_bytes());
    out.extend_from_slice(enc.compress().as_bytes());
    out.extend_from_slice(sig.compress().as_bytes());
    out.extend_from_slice(&issued_at.to_be_bytes());
    out.extend_from_slice(&expires_at.to_be_bytes());
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CertStatus {
    Valid,
    BadSignature,
    NotYetValid,
    Expired,
    Revoked,
}

#[derive(Debug)]
pub struct CertificateAuthority {
    root: RingKeyPair,
    issued: std::collections::BTreeMap<RelayId, VirtualTime>,
    revoked: BTreeSet<RelayId>,
}

impl CertificateAuthority {
    pub fn new<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        Self { root: RingKeyPair::generate(rng), issued: Default::default(), revoked: BTreeSet::new() }
    }

    pub fn public(&self) -> RistrettoPoint {
        self.root.public()
    }

    /// `validity` is the lifetime in virtual milliseconds starting at `now`.
    pub fn issue_certificate<R: RngCore + CryptoRng>(
        &mut self,
        subject_id: RelayId,
        encryption_pub: RistrettoPoint,
        signing_pub: RistrettoPoint,
        now: VirtualTime,
        validity: VirtualTime,
        rng: &mut R,
    ) -> Result<Certificate, PkiError> {
        if validity == 0 {
            return Err(PkiError::EmptyValidity);
        }
        if let Some(&exp) = self.issued.get(&subject_id) {
            if now < exp && !self.revoked.contains(&subject_id) {
                return Err(PkiError::DuplicateSubject(subject_id));
            }
        }
        let expires_at = now.saturating_add(validity);
        let bytes = tbs(subject_id, &encryption_pub, &signing_pub, now, expires_at);
        let issuer_signature = schnorr_sign(&bytes, &self.root, rng);
        self.issued.insert(subject_id, expires_at);
        self.revoked.remove(&subject_id);
        Ok(Certificate { subject_id, encryption_pub, signing_pub, issued_at: now, expires_at, issuer_signature })
    }

    pub fn revoke(&mut self, subject_id: RelayId) -> Result<(), PkiError> {
        if !self.issued.contains_key(&subject_id) {
            return Err(PkiError::UnknownSubject(subject_id));
        }
        self.revoked.insert(subject_id);
        Ok(())
    }

    pub fn is_revoked(&self, subject_id: RelayId) -> bool {
        self.revoked.contains(&subject_id)
    }

    pub fn status(&self, cert: &Certificate, now: VirtualTime) -> CertStatus {
        certificate_status(&self.public(), cert, now, |id| self.is_revoked(id))
    }

    pub fn verify_certificate(&self, cert: &Certificate, now: VirtualTime) -> bool {
        self.status(cert, now) == CertStatus::Valid
    }
}

/// Validity window is `[issued_at, expires_at)`.
pub fn certificate_status(
    ca_pub: &RistrettoPoint,
    cert: &Certificate,
    now: VirtualTime,
    is_revoked: impl Fn(RelayId) -> bool,
) -> CertStatus {
    if cert.expires_at <= cert.issued_at || !schnorr_verify(&cert.signed_bytes(), ca_pub, &cert.issuer_signature) {
        return CertStatus::BadSignature;
    }
    if now < cert.issued_at {
        return CertStatus::NotYetValid;
    }
    if now >= cert.expires_at {
        return CertStatus::Expired;
    }
    if is_revoked(cert.subject_id) {
        return CertStatus::Revoked;
    }
    CertStatus::Valid
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EventKind {
    Received,
    Forwarded,
    Submitted,
    Rejected,
    RateLimited,
}

impl EventKind {
    fn code(self) -> u8 {
        match self {
            EventKind::Received => 1,
            EventKind::Forwarded => 2,
            EventKind::Submitted => 3,
            EventKind::Rejected => 4,
            EventKind::RateLimited => 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogEntry {
    #[serde(with = "hex32")]
    pub prev_hash: [u8; 32],
    pub event_kind: EventKind,
    #[serde(with = "hex32")]
    pub payload_digest: [u8; 32],
    pub virtual_time: VirtualTime,
    #[serde(with = "hex32")]
    pub entry_hash: [u8; 32],
}

impl LogEntry {
    pub fn compute_hash(&self) -> [u8; 32] {
        entry_hash(&self.prev_hash, self.event_kind, &self.payload_digest, self.virtual_time)
    }
}

fn entry_hash(prev: &[u8; 32], kind: EventKind, digest: &[u8; 32], t: VirtualTime) -> [u8; 32] {
    sha256(&[b"xrelay/log/v1", prev, &[kind.code()], digest, &t.to_be_bytes()])
}

mod hex32 {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[u8; 32], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[u8; 32], D::Error> {
        let s = String::deserialize(d)?;
        let v = hex::decode(s).map_err(D::Error::custom)?;
        v.try_into().map_err(|_| D::Error::custom("expected 32 bytes"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ChainCheck {
    Intact,
    BrokenAt(usize),
}

#[derive(Debug, Clone, Default)]
pub struct AuditLog {
    entries: Vec<LogEntry>,
}

impl AuditLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn append(&mut self, event_kind: EventKind, payload_digest: [u8; 32], now: VirtualTime) -> &LogEntry {
        let prev_hash = self.entries.last().map(|e| e.entry_hash).unwrap_or([0u8; 32]);
        // Keep virtual_time nondecreasing even if a caller hands us a stale clock.
        let virtual_time = self.entries.last().map_or(now, |e| e.virtual_time.max(now));
        let entry_hash = entry_hash(&prev_hash, event_kind, &payload_digest, virtual_time);
        self.entries.push(LogEntry { prev_hash, event_kind, payload_digest, virtual_time, entry_hash });
        self.entries.last().expect("just pushed")
    }

    pub fn entries(&self) -> &[LogEntry] {
        &self.entries
    }

    /// Test hook for tamper experiments.
    pub fn entries_mut(&mut self) -> &mut [LogEntry] {
        &mut self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn count(&self, kind: EventKind) -> usize {
        self.entries.iter().filter(|e| e.event_kind == kind).count()
    }

    pub fn verify(&self) -> ChainCheck {
        verify_log_chain(&self.entries)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            let _ = writeln!(out, "{}", serde_json::to_string(e).expect("log entry serializes"));
        }
        out
    }

    pub fn from_jsonl(text: &str) -> serde_json::Result<Self> {
        let entries = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<serde_json::Result<Vec<_>>>()?;
        Ok(Self { entries })
    }
}

pub fn verify_log_chain(entries: &[LogEntry]) -> ChainCheck {
    let mut prev = [0u8; 32];
    let mut prev_time = 0;
    for (i, e) in entries.iter().enumerate() {
        if e.prev_hash != prev || e.entry_hash != e.compute_hash() || e.virtual_time < prev_time {
            return ChainCheck::BrokenAt(i);
        }
        prev = e.entry_hash;
        prev_time = e.virtual_time;
    }
    ChainCheck::Intact
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::EncryptionKeyPair;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn issue(ca: &mut CertificateAuthority, id: u32, rng: &mut ChaCha20Rng) -> Result<Certificate, PkiError> {
        let enc = EncryptionKeyPair::generate(rng).public();
        let sig = RingKeyPair::generate(rng).public();
        ca.issue_certificate(RelayId(id), enc, sig, 0, 1000, rng)
    }

    #[test]
    fn issue_verify_duplicate_revoke() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let mut ca = CertificateAuthority::new(&mut rng);
        let cert = issue(&mut ca, 7, &mut rng).unwrap();
        assert!(ca.verify_certificate(&cert, 10));
        assert_eq!(issue(&mut ca, 7, &mut rng), Err(PkiError::DuplicateSubject(RelayId(7))));
        ca.revoke(RelayId(7)).unwrap();
        assert_eq!(ca.status(&cert, 10), CertStatus::Revoked);
        assert_eq!(ca.revoke(RelayId(8)), Err(PkiError::UnknownSubject(RelayId(8))));
    }

    #[test]
    fn expiry_is_exclusive() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let mut ca = CertificateAuthority::new(&mut rng);
        let cert = issue(&mut ca, 1, &mut rng).unwrap();
        assert!(ca.verify_certificate(&cert, 999));
        assert_eq!(ca.status(&cert, 1000), CertStatus::Expired);
    }

    #[test]
    fn every_flipped_byte_breaks_the_certificate() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let mut ca = CertificateAuthority::new(&mut rng);
        let cert = issue(&mut ca, 1, &mut rng).unwrap();
        let bytes = cert.to_bytes();
        assert_eq!(Certificate::from_bytes(&bytes).as_ref(), Some(&cert));
        for i in 0..bytes.len() {
            let mut b = bytes.clone();
            b[i] ^= 0x01;
            if let Some(c) = Certificate::from_bytes(&b) {
                assert!(!ca.verify_certificate(&c, 10), "byte {i}");
            }
        }
    }

    #[test]
    fn self_signed_certificate_fails() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let mut ca = CertificateAuthority::new(&mut rng);
        let mut rogue = CertificateAuthority::new(&mut rng);
        let cert = issue(&mut rogue, 3, &mut rng).unwrap();
        assert!(!ca.verify_certificate(&cert, 1));
        assert!(issue(&mut ca, 3, &mut rng).is_ok());
    }

    fn recompute(entries: &[LogEntry]) -> Option<usize> {
        // independent re-derivation of the chain
        let mut prev = [0u8; 32];
        for (i, e) in entries.iter().enumerate() {
            let mut buf = b"xrelay/log/v1".to_vec();
            buf.extend_from_slice(&e.prev_hash);
            buf.push(e.event_kind.code());
            buf.extend_from_slice(&e.payload_digest);
            buf.extend_from_slice(&e.virtual_time.to_be_bytes());
            let h: [u8; 32] = <sha2::Sha256 as sha2::Digest>::digest(&buf).into();
            if e.prev_hash != prev || h != e.entry_hash {
                return Some(i);
            }
            prev = e.entry_hash;
        }
        None
    }

    #[test]
    fn log_chain_detects_mutation() {
        let mut log = AuditLog::new();
        assert_eq!(log.verify(), ChainCheck::Intact);
        for i in 0..100u64 {
            log.append(EventKind::Received, sha256(&[&i.to_be_bytes()]), i);
        }
        assert_eq!(log.verify(), ChainCheck::Intact);
        assert_eq!(recompute(log.entries()), None);
        log.entries_mut()[50].payload_digest[0] ^= 1;
        assert_eq!(log.verify(), ChainCheck::BrokenAt(50));
        assert_eq!(recompute(log.entries()), Some(50));
    }

    #[test]
    fn jsonl_round_trip_is_lowercase_hex() {
        let mut log = AuditLog::new();
        log.append(EventKind::RateLimited, [0xAB; 32], 5);
        let text = log.to_jsonl();
        assert!(text.contains("\"abab"));
        assert!(text.contains("RATE_LIMITED"));
        let back = AuditLog::from_jsonl(&text).unwrap();
        assert_eq!(back.entries(), log.entries());
    }

    proptest::proptest! {
        #[test]
        fn any_single_field_mutation_is_caught(idx in 0usize..20, field in 0u8..5, bit in 0usize..256) {
            let mut log = AuditLog::new();
            for i in 0..20u64 {
                log.append(EventKind::Forwarded, sha256(&[&i.to_be_bytes()]), i * 3);
            }
            let e = &mut log.entries_mut()[idx];
            match field {
                0 => e.prev_hash[bit / 8] ^= 1 << (bit % 8),
                1 => e.payload_digest[bit / 8] ^= 1 << (bit % 8),
                2 => e.entry_hash[bit / 8] ^= 1 << (bit % 8),
                3 => e.virtual_time ^= 1 << (bit % 64),
                _ => e.event_kind = if e.event_kind == EventKind::Forwarded { EventKind::Rejected } else { EventKind::Forwarded },
            }
            proptest::prop_assert_eq!(log.verify(), ChainCheck::BrokenAt(idx));
        }
    }
}
