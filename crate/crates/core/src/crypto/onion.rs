//! Layered onion packets.
//!
//! Each layer holds a header (next hop or terminal marker plus routing
//! metadata) and a body (the next packet, or the terminal payload), both
//! hybrid-encrypted for the relay the layer is addressed to. The identity
//! blob is encrypted once for the destination contract and carried
//! bit-identical through every layer; every layer's header and body bind
//! its digest as associated data.

use std::collections::HashSet;

use curve25519_dalek::ristretto::RistrettoPoint;
use rand::{CryptoRng, RngCore};

use super::encoding::{Reader, Writer};
use super::hybrid::{hybrid_decrypt, hybrid_encrypt, EncryptionKeyPair, HybridCiphertext, HybridConfig};
use super::{sha256, CryptoError, Result};
use crate::RelayId;

const IDENTITY_AD: &[u8] = b"xrelay/identity";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RoutingMeta {
    /// Zero-based position of this layer's relay on the forwarding path.
    pub hop_index: u32,
    /// Forwardings still scheduled after this hop (used by Shortest Ping).
    pub hops_remaining: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OnionPacket {
    pub layer_for: RelayId,
    pub header: HybridCiphertext,
    pub body: HybridCiphertext,
    pub identity_blob: HybridCiphertext,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PeelResult {
    Forward { next_hop: RelayId, inner: OnionPacket, identity_blob: HybridCiphertext, routing: RoutingMeta },
    Terminal { payload: Vec<u8>, identity_blob: HybridCiphertext, routing: RoutingMeta },
}

impl PeelResult {
    pub fn identity_blob(&self) -> &HybridCiphertext {
        match self {
            PeelResult::Forward { identity_blob, .. } | PeelResult::Terminal { identity_blob, .. } => identity_blob,
        }
    }
}

fn layer_ad(kind: &[u8], layer_for: RelayId, identity_blob: &HybridCiphertext) -> Vec<u8> {
    let mut ad = Vec::with_capacity(kind.len() + 36);
    ad.extend_from_slice(kind);
    ad.extend_from_slice(&layer_for.0.to_be_bytes());
    ad.extend_from_slice(&sha256(&[&identity_blob.to_bytes()]));
    ad
}

fn encode_header(next_hop: Option<RelayId>, routing: RoutingMeta) -> Vec<u8> {
    let mut w = Writer::new();
    match next_hop {
        Some(id) => w.u8(1).u32(id.0),
        None => w.u8(0).u32(0),
    };
    w.u32(routing.hop_index).u32(routing.hops_remaining);
    w.finish()
}

fn decode_header(bytes: &[u8]) -> Result<(Option<RelayId>, RoutingMeta)> {
    let mut r = Reader::new(bytes);
    let flag = r.u8()?;
    let id = r.u32()?;
    let routing = RoutingMeta { hop_index: r.u32()?, hops_remaining: r.u32()? };
    r.finish()?;
    let next = match flag {
        0 => None,
        1 => Some(RelayId(id)),
        _ => return Err(CryptoError::Malformed("bad next-hop marker")),
    };
    Ok((next, routing))
}

fn seal_layer<R: RngCore + CryptoRng>(
    config: &HybridConfig,
    relay: RelayId,
    relay_pub: &RistrettoPoint,
    next_hop: Option<RelayId>,
    routing: RoutingMeta,
    body_plain: &[u8],
    identity_blob: &HybridCiphertext,
    rng: &mut R,
) -> Result<OnionPacket> {
    let header = hybrid_encrypt(
        config,
        relay_pub,
        &encode_header(next_hop, routing),
        &layer_ad(b"xrelay/onion/header", relay, identity_blob),
        rng,
    )?;
    let body =
        hybrid_encrypt(config, relay_pub, body_plain, &layer_ad(b"xrelay/onion/body", relay, identity_blob), rng)?;
    Ok(OnionPacket { layer_for: relay, header, body, identity_blob: identity_blob.clone() })
}

/// Encrypts the sender identity for the destination contract.
pub fn seal_identity<R: RngCore + CryptoRng>(
    config: &HybridConfig,
    destination_contract_pub: &RistrettoPoint,
    identity_plain: &[u8],
    rng: &mut R,
) -> Result<HybridCiphertext> {
    hybrid_encrypt(config, destination_contract_pub, identity_plain, IDENTITY_AD, rng)
}

pub fn open_identity(contract: &EncryptionKeyPair, blob: &HybridCiphertext) -> Result<Vec<u8>> {
    hybrid_decrypt(contract, blob, IDENTITY_AD)
}

/// Builds a packet with one layer per relay in `path`, innermost layer
/// terminal. The identity is encrypted only under `destination_contract_pub`.
pub fn onion_wrap<R: RngCore + CryptoRng>(
    config: &HybridConfig,
    path: &[(RelayId, RistrettoPoint)],
    terminal_payload: &[u8],
    identity_plain: &[u8],
    destination_contract_pub: &RistrettoPoint,
    rng: &mut R,
) -> Result<OnionPacket> {
    let identity_blob = seal_identity(config, destination_contract_pub, identity_plain, rng)?;
    onion_wrap_sealed(config, path, terminal_payload, &identity_blob, 0, rng)
}

/// Like [`onion_wrap`] but reuses an already sealed identity blob, with
/// hop indices starting at `first_hop_index`.
pub fn onion_wrap_sealed<R: RngCore + CryptoRng>(
    config: &HybridConfig,
    path: &[(RelayId, RistrettoPoint)],
    terminal_payload: &[u8],
    identity_blob: &HybridCiphertext,
    first_hop_index: u32,
    rng: &mut R,
) -> Result<OnionPacket> {
    if path.is_empty() {
        return Err(CryptoError::EmptyPath);
    }
    let mut seen = HashSet::new();
    for (id, _) in path {
        if !seen.insert(*id) {
            return Err(CryptoError::DuplicateRelay(*id));
        }
    }
    let last = path.len() - 1;
    let meta = |i: usize| RoutingMeta { hop_index: first_hop_index + i as u32, hops_remaining: (last - i) as u32 };
    let (id, pk) = &path[last];
    let mut packet = seal_layer(config, *id, pk, None, meta(last), terminal_payload, identity_blob, rng)?;
    for i in (0..last).rev() {
        let (id, pk) = &path[i];
        let next = packet.layer_for;
        packet = seal_layer(config, *id, pk, Some(next), meta(i), &packet.to_bytes(), identity_blob, rng)?;
    }
    Ok(packet)
}

/// Single terminal layer carrying explicit routing metadata. Relays use this
/// to re-encrypt the opaque payload for the hop they picked.
pub fn onion_wrap_layer<R: RngCore + CryptoRng>(
    config: &HybridConfig,
    relay: RelayId,
    relay_pub: &RistrettoPoint,
    terminal_payload: &[u8],
    identity_blob: &HybridCiphertext,
    routing: RoutingMeta,
    rng: &mut R,
) -> Result<OnionPacket> {
    seal_layer(config, relay, relay_pub, None, routing, terminal_payload, identity_blob, rng)
}

/// Removes exactly one layer with the relay's key.
pub fn onion_peel(relay_key: &EncryptionKeyPair, packet: &OnionPacket) -> Result<PeelResult> {
    let header = hybrid_decrypt(
        relay_key,
        &packet.header,
        &layer_ad(b"xrelay/onion/header", packet.layer_for, &packet.identity_blob),
    )?;
    let (next_hop, routing) = decode_header(&header)?;
    let body = hybrid_decrypt(
        relay_key,
        &packet.body,
        &layer_ad(b"xrelay/onion/body", packet.layer_for, &packet.identity_blob),
    )?;
    let identity_blob = packet.identity_blob.clone();
    match next_hop {
        None => Ok(PeelResult::Terminal { payload: body, identity_blob, routing }),
        Some(next_hop) => {
            let inner = OnionPacket::from_bytes(&body)?;
            if inner.layer_for != next_hop || inner.identity_blob != identity_blob {
                return Err(CryptoError::AuthenticationFailure);
            }
            Ok(PeelResult::Forward { next_hop, inner, identity_blob, routing })
        }
    }
}

impl OnionPacket {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.u32(self.layer_for.0);
        self.header.encode_into(&mut w);
        self.body.encode_into(&mut w);
        self.identity_blob.encode_into(&mut w);
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let packet = OnionPacket {
            layer_for: RelayId(r.u32()?),
            header: HybridCiphertext::decode_from(&mut r)?,
            body: HybridCiphertext::decode_from(&mut r)?,
            identity_blob: HybridCiphertext::decode_from(&mut r)?,
        };
        r.finish()?;
        Ok(packet)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    struct Fixture {
        keys: Vec<EncryptionKeyPair>,
        contract: EncryptionKeyPair,
        rng: ChaCha20Rng,
    }

    fn fixture(n: usize) -> Fixture {
        let mut rng = ChaCha20Rng::seed_from_u64(21);
        let keys = (0..n).map(|_| EncryptionKeyPair::generate(&mut rng)).collect();
        let contract = EncryptionKeyPair::generate(&mut rng);
        Fixture { keys, contract, rng }
    }

    fn path(f: &Fixture) -> Vec<(RelayId, RistrettoPoint)> {
        f.keys.iter().enumerate().map(|(i, k)| (RelayId(i as u32 + 1), k.public())).collect()
    }

    #[test]
    fn single_layer_peels_to_terminal() {
        let mut f = fixture(1);
        let p = path(&f);
        let pkt = onion_wrap(&HybridConfig::default(), &p, b"pay", b"alice", &f.contract.public(), &mut f.rng).unwrap();
        match onion_peel(&f.keys[0], &pkt).unwrap() {
            PeelResult::Terminal { payload, identity_blob, .. } => {
                assert_eq!(payload, b"pay");
                assert_eq!(open_identity(&f.contract, &identity_blob).unwrap(), b"alice");
            }
            other => panic!("expected terminal, got {other:?}"),
        }
    }

    #[test]
    fn out_of_order_peel_fails() {
        let mut f = fixture(3);
        let p = path(&f);
        let pkt = onion_wrap(&HybridConfig::default(), &p, b"pay", b"alice", &f.contract.public(), &mut f.rng).unwrap();
        assert_eq!(onion_peel(&f.keys[1], &pkt), Err(CryptoError::AuthenticationFailure));
    }

    #[test]
    fn peel_walks_the_path_and_keeps_identity_blob() {
        let mut f = fixture(4);
        let p = path(&f);
        let mut pkt =
            onion_wrap(&HybridConfig::default(), &p, b"pay", b"alice", &f.contract.public(), &mut f.rng).unwrap();
        let blob = pkt.identity_blob.clone();
        for i in 0..3 {
            match onion_peel(&f.keys[i], &pkt).unwrap() {
                PeelResult::Forward { next_hop, inner, identity_blob, routing } => {
                    assert_eq!(next_hop, RelayId(i as u32 + 2));
                    assert_eq!(identity_blob, blob);
                    assert_eq!(routing.hop_index, i as u32);
                    pkt = inner;
                }
                other => panic!("expected forward, got {other:?}"),
            }
        }
        assert!(matches!(onion_peel(&f.keys[3], &pkt).unwrap(), PeelResult::Terminal { .. }));
    }

    #[test]
    fn path_errors() {
        let mut f = fixture(2);
        let cfg = HybridConfig::default();
        let cpub = f.contract.public();
        assert_eq!(onion_wrap(&cfg, &[], b"", b"", &cpub, &mut f.rng), Err(CryptoError::EmptyPath));
        let dup = vec![(RelayId(1), f.keys[0].public()), (RelayId(1), f.keys[1].public())];
        assert_eq!(onion_wrap(&cfg, &dup, b"", b"", &cpub, &mut f.rng), Err(CryptoError::DuplicateRelay(RelayId(1))));
    }

    #[test]
    fn tampered_identity_blob_breaks_layer() {
        let mut f = fixture(2);
        let p = path(&f);
        let mut pkt =
            onion_wrap(&HybridConfig::default(), &p, b"pay", b"alice", &f.contract.public(), &mut f.rng).unwrap();
        pkt.identity_blob.sealed_payload.ciphertext[0] ^= 0x80;
        assert_eq!(onion_peel(&f.keys[0], &pkt), Err(CryptoError::AuthenticationFailure));
    }

    #[test]
    fn encoding_round_trips() {
        let mut f = fixture(2);
        let p = path(&f);
        let pkt = onion_wrap(&HybridConfig::default(), &p, b"pay", b"alice", &f.contract.public(), &mut f.rng).unwrap();
        assert_eq!(OnionPacket::from_bytes(&pkt.to_bytes()).unwrap(), pkt);
    }
}
