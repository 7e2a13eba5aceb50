//! Relay node state machine and the three forwarding protocols.
//!
//! A relay holds a single-layer packet for itself: it peels that layer,
//! asks its protocol where the transaction goes next, and re-encrypts the
//! still opaque payload for the chosen hop. Packets built ahead of time with
//! [`crate::crypto::onion::onion_wrap`] are also accepted; their embedded
//! next hop is followed as is.

use std::collections::{BTreeMap, HashMap, HashSet};

use curve25519_dalek::ristretto::RistrettoPoint;
use rand::seq::{IteratorRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::onion::{onion_peel, onion_wrap_layer};
use crate::crypto::ring::{ring_sign, ring_verify};
use crate::crypto::{
    sha256, CryptoError, EncryptionKeyPair, HybridCiphertext, HybridConfig, OnionPacket, PeelResult, RingKeyPair,
    RingSignature, RoutingMeta,
};
use crate::netsim::{Millis, Topology};
use crate::pki::{AuditLog, Certificate, EventKind};
use crate::{RelayId, TxId};

pub const DEFAULT_STEM_CONTINUE_PROB: f64 = 0.9;
pub const DEFAULT_FANOUT: usize = 2;
pub const DEFAULT_PROXY_CONTINUE_PROB: f64 = 0.8;
pub const DEFAULT_SHORTEST_PING_HOPS: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RelayError {
    #[error("no peers available")]
    NoPeersAvailable,
    #[error("peer {0} is not certified")]
    UncertifiedPeer(RelayId),
    #[error("invalid protocol parameters: {0}")]
    InvalidProtocol(String),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "protocol", rename_all = "snake_case")]
pub enum ForwardingProtocol {
    Dandelion {
        stem_continue_prob: f64,
    },
    Clover {
        fanout: usize,
        proxy_continue_prob: f64,
    },
    /// `hops` is how many relay-to-relay hops follow the entry node.
    ShortestPing {
        hops: u32,
    },
}

impl ForwardingProtocol {
    pub fn dandelion() -> Self {
        Self::Dandelion { stem_continue_prob: DEFAULT_STEM_CONTINUE_PROB }
    }

    pub fn clover() -> Self {
        Self::Clover { fanout: DEFAULT_FANOUT, proxy_continue_prob: DEFAULT_PROXY_CONTINUE_PROB }
    }

    pub fn shortest_ping() -> Self {
        Self::ShortestPing { hops: DEFAULT_SHORTEST_PING_HOPS }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Dandelion { .. } => "dandelion",
            Self::Clover { .. } => "clover",
            Self::ShortestPing { .. } => "shortest_ping",
        }
    }

    /// Degenerate 0 is allowed for the probabilities so edge cases can be
    /// exercised; 1 would never terminate.
    pub fn validate(&self) -> Result<(), RelayError> {
        let prob = |p: f64, what: &str| {
            if (0.0..1.0).contains(&p) {
                Ok(())
            } else {
                Err(RelayError::InvalidProtocol(format!("{what} must be in [0, 1), got {p}")))
            }
        };
        match *self {
            Self::Dandelion { stem_continue_prob } => prob(stem_continue_prob, "stem_continue_prob"),
            Self::Clover { fanout, proxy_continue_prob } => {
                if fanout < 2 {
                    return Err(RelayError::InvalidProtocol(format!("fanout must be >= 2, got {fanout}")));
                }
                prob(proxy_continue_prob, "proxy_continue_prob")
            }
            Self::ShortestPing { .. } => Ok(()),
        }
    }

    /// Phase tag on the envelope handed to the entry node.
    pub fn entry_phase(&self) -> PhaseTag {
        match self {
            Self::Dandelion { .. } => PhaseTag::Stem,
            Self::Clover { .. } => PhaseTag::Diffusion,
            Self::ShortestPing { .. } => PhaseTag::Direct,
        }
    }

    pub fn entry_routing(&self) -> RoutingMeta {
        let hops_remaining = match self {
            Self::ShortestPing { hops } => *hops,
            _ => 0,
        };
        RoutingMeta { hop_index: 0, hops_remaining }
    }
}

impl Default for ForwardingProtocol {
    fn default() -> Self {
        Self::dandelion()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PhaseTag {
    Stem,
    Fluff,
    Diffusion,
    Proxy,
    Direct,
}

impl PhaseTag {
    fn code(self) -> u8 {
        match self {
            PhaseTag::Stem => 1,
            PhaseTag::Fluff => 2,
            PhaseTag::Diffusion => 3,
            PhaseTag::Proxy => 4,
            PhaseTag::Direct => 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Decision {
    Forward(Vec<(RelayId, PhaseTag)>),
    Submit,
}

/// What the relay knows about a peer; `believed_up` flips to false after a
/// failed delivery.
#[derive(Debug, Clone)]
pub struct PeerInfo {
    pub encryption_pub: RistrettoPoint,
    pub signing_pub: RistrettoPoint,
    pub believed_up: bool,
}

/// Dandelion++ stem/fluff. The stem never hands the transaction straight
/// back to `sender`; with no other peer it fluffs instead.
pub fn dandelion_step<R: Rng + ?Sized>(
    stem_continue_prob: f64,
    phase: PhaseTag,
    sender: Option<RelayId>,
    peers: &[RelayId],
    rng: &mut R,
) -> Result<Decision, RelayError> {
    if phase == PhaseTag::Fluff {
        return Ok(Decision::Submit);
    }
    if !rng.gen_bool(stem_continue_prob) {
        return Ok(Decision::Submit);
    }
    if peers.is_empty() {
        return Err(RelayError::NoPeersAvailable);
    }
    match peers.iter().filter(|p| Some(**p) != sender).choose(rng) {
        Some(&next) => Ok(Decision::Forward(vec![(next, PhaseTag::Stem)])),
        None => Ok(Decision::Submit),
    }
}

/// Clover diffusion/proxy. Only the entry node sees `Diffusion`.
pub fn clover_step<R: Rng + ?Sized>(
    fanout: usize,
    proxy_continue_prob: f64,
    phase: PhaseTag,
    sender: Option<RelayId>,
    peers: &[RelayId],
    rng: &mut R,
) -> Result<Decision, RelayError> {
    if phase == PhaseTag::Diffusion {
        let picked: Vec<RelayId> = peers.iter().copied().filter(|p| Some(*p) != sender).choose_multiple(rng, fanout);
        if picked.is_empty() {
            return Err(RelayError::NoPeersAvailable);
        }
        let mut picked = picked;
        picked.shuffle(rng);
        return Ok(Decision::Forward(picked.into_iter().map(|p| (p, PhaseTag::Proxy)).collect()));
    }
    if !rng.gen_bool(proxy_continue_prob) {
        return Ok(Decision::Submit);
    }
    if peers.is_empty() {
        return Err(RelayError::NoPeersAvailable);
    }
    match peers.iter().filter(|p| Some(**p) != sender).choose(rng) {
        Some(&next) => Ok(Decision::Forward(vec![(next, PhaseTag::Proxy)])),
        None => Ok(Decision::Submit),
    }
}

/// Minimum-ping peer, lowest id on ties. `pings` holds only reachable peers.
pub fn shortest_ping_step(hops_remaining: u32, pings: &[(RelayId, Millis)]) -> Result<Decision, RelayError> {
    if hops_remaining == 0 {
        return Ok(Decision::Submit);
    }
    pings
        .iter()
        .min_by_key(|(id, ping)| (*ping, *id))
        .map(|(id, _)| Decision::Forward(vec![(*id, PhaseTag::Direct)]))
        .ok_or(RelayError::NoPeersAvailable)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelayEnvelope {
    pub packet: OnionPacket,
    pub hop_signature: RingSignature,
    pub ring_snapshot: Vec<RistrettoPoint>,
    pub phase_tag: PhaseTag,
    pub tx_id: TxId,
}

impl RelayEnvelope {
    /// The ring signature covers the packet bytes plus the phase tag and tx id.
    pub fn signed_bytes(packet: &OnionPacket, phase: PhaseTag, tx_id: &TxId) -> Vec<u8> {
        let mut m = packet.to_bytes();
        m.push(phase.code());
        m.extend_from_slice(&tx_id.0);
        m
    }

    pub fn verify_signature(&self) -> bool {
        ring_verify(
            &Self::signed_bytes(&self.packet, self.phase_tag, &self.tx_id),
            &self.ring_snapshot,
            &self.hop_signature,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RateLimiterConfig {
    pub max_requests_per_window: u32,
    pub window: Millis,
    pub enabled: bool,
}

impl Default for RateLimiterConfig {
    fn default() -> Self {
        Self { max_requests_per_window: 100, window: 1000, enabled: false }
    }
}

#[derive(Debug, Clone, Default)]
struct RateWindow {
    index: u64,
    count: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RejectReason {
    InvalidSignature,
    RateLimited,
    AuthFailure,
    DuplicateTx,
}

#[derive(Debug, Clone)]
pub enum Action {
    ForwardTo(Vec<(RelayId, RelayEnvelope)>),
    SubmitToChain(Submission),
    /// `ack` tells the sender its request was dropped by the rate limiter.
    Reject {
        reason: RejectReason,
        ack: bool,
    },
}

/// Final hop hand-off to the destination contract, ring-signed by the
/// submitting relay so the contract can check it came through the network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Submission {
    pub payload: Vec<u8>,
    pub identity_blob: HybridCiphertext,
    pub tx_id: TxId,
    /// Relays that handled this copy, entry included.
    pub hops: u32,
    pub ring: Vec<RistrettoPoint>,
    pub signature: RingSignature,
}

impl Submission {
    pub fn signed_bytes(payload: &[u8], identity_blob: &HybridCiphertext, tx_id: &TxId) -> Vec<u8> {
        let mut m = b"xrelay/submit".to_vec();
        m.extend_from_slice(&(payload.len() as u32).to_be_bytes());
        m.extend_from_slice(payload);
        m.extend_from_slice(&identity_blob.to_bytes());
        m.extend_from_slice(&tx_id.0);
        m
    }

    pub fn verify_signature(&self) -> bool {
        ring_verify(&Self::signed_bytes(&self.payload, &self.identity_blob, &self.tx_id), &self.ring, &self.signature)
    }
}

/// What a relay is allowed to remember about a transaction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Observation {
    pub tx_id: TxId,
    pub from: Option<RelayId>,
    pub to: Vec<RelayId>,
    pub phase: PhaseTag,
    pub at: Millis,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RelayCounters {
    pub received: u64,
    pub forwarded: u64,
    pub submitted: u64,
    pub rejected: BTreeMap<String, u64>,
}

/// Pinging for Shortest Ping; implemented by the network topology.
pub trait LinkView {
    fn ping(&self, from: RelayId, to: RelayId) -> Option<Millis>;
}

impl LinkView for Topology {
    fn ping(&self, from: RelayId, to: RelayId) -> Option<Millis> {
        Topology::ping(self, from, to).ok().flatten()
    }
}

pub struct RelayNode {
    pub id: RelayId,
    pub certificate: Certificate,
    encryption: EncryptionKeyPair,
    ring_key: RingKeyPair,
    peers: BTreeMap<RelayId, PeerInfo>,
    certified_signing: HashSet<[u8; 32]>,
    trusted_origins: HashSet<[u8; 32]>,
    ring: Vec<RistrettoPoint>,
    pub ring_size: Option<usize>,
    pub protocol: ForwardingProtocol,
    pub rate_limiter: RateLimiterConfig,
    window: RateWindow,
    seen_packets: HashSet<[u8; 32]>,
    pub audit_log: AuditLog,
    pub observations: Vec<Observation>,
    pub counters: RelayCounters,
    pub hybrid: HybridConfig,
    outbox: HashMap<(TxId, RelayId), Retained>,
    route_rng: ChaCha20Rng,
    crypto_rng: ChaCha20Rng,
}

/// Sender-side memory of a forwarded copy, kept so it can be re-routed if
/// the delivery bounces. Holds only ciphertexts.
#[derive(Debug, Clone)]
struct Retained {
    payload: Vec<u8>,
    identity_blob: HybridCiphertext,
    routing: RoutingMeta,
    phase: PhaseTag,
}

impl std::fmt::Debug for RelayNode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RelayNode").field("id", &self.id).field("peers", &self.peers.len()).finish_non_exhaustive()
    }
}

impl RelayNode {
    pub fn new(
        certificate: Certificate,
        encryption: EncryptionKeyPair,
        ring_key: RingKeyPair,
        protocol: ForwardingProtocol,
        seed: u64,
    ) -> Self {
        assert_eq!(certificate.encryption_pub, encryption.public(), "certificate does not match encryption key");
        assert_eq!(certificate.signing_pub, ring_key.public(), "certificate does not match signing key");
        let mut certified_signing = HashSet::new();
        certified_signing.insert(ring_key.public().compress().to_bytes());
        Self {
            id: certificate.subject_id,
            ring: vec![ring_key.public()],
            certificate,
            encryption,
            ring_key,
            peers: BTreeMap::new(),
            certified_signing,
            trusted_origins: HashSet::new(),
            ring_size: None,
            protocol,
            rate_limiter: RateLimiterConfig::default(),
            window: RateWindow::default(),
            seen_packets: HashSet::new(),
            audit_log: AuditLog::new(),
            observations: Vec::new(),
            counters: RelayCounters::default(),
            hybrid: HybridConfig::default(),
            outbox: HashMap::new(),
            route_rng: ChaCha20Rng::seed_from_u64(seed),
            crypto_rng: ChaCha20Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15),
        }
    }

    pub fn encryption_pub(&self) -> RistrettoPoint {
        self.encryption.public()
    }

    pub fn signing_pub(&self) -> RistrettoPoint {
        self.ring_key.public()
    }

    /// Inserts the peer only when `verify` accepts its certificate.
    pub fn add_peer(&mut self, cert: &Certificate, verify: impl Fn(&Certificate) -> bool) -> bool {
        if cert.subject_id == self.id || !verify(cert) {
            return false;
        }
        self.peers.insert(
            cert.subject_id,
            PeerInfo { encryption_pub: cert.encryption_pub, signing_pub: cert.signing_pub, believed_up: true },
        );
        self.certified_signing.insert(cert.signing_pub.compress().to_bytes());
        self.rebuild_ring();
        true
    }

    /// Accepts ingress envelopes whose ring includes this chain contract key.
    pub fn trust_origin(&mut self, contract_signing_pub: RistrettoPoint) {
        self.trusted_origins.insert(contract_signing_pub.compress().to_bytes());
    }

    pub fn remove_peer(&mut self, id: RelayId) {
        if let Some(p) = self.peers.remove(&id) {
            self.certified_signing.remove(&p.signing_pub.compress().to_bytes());
            self.rebuild_ring();
        }
    }

    fn rebuild_ring(&mut self) {
        let mut members: Vec<(RelayId, RistrettoPoint)> =
            self.peers.iter().map(|(id, p)| (*id, p.signing_pub)).collect();
        members.push((self.id, self.ring_key.public()));
        members.sort_by_key(|(id, _)| *id);
        self.ring = members.into_iter().map(|(_, p)| p).collect();
    }

    pub fn peer_ids(&self) -> Vec<RelayId> {
        self.peers.keys().copied().collect()
    }

    pub fn peer(&self, id: RelayId) -> Option<&PeerInfo> {
        self.peers.get(&id)
    }

    pub fn mark_peer(&mut self, id: RelayId, up: bool) {
        if let Some(p) = self.peers.get_mut(&id) {
            p.believed_up = up;
        }
    }

    fn live_peers(&self) -> Vec<RelayId> {
        self.peers.iter().filter(|(_, p)| p.believed_up).map(|(id, _)| *id).collect()
    }

    fn ring_for_signing(&mut self) -> (Vec<RistrettoPoint>, usize) {
        let me = self.ring_key.public();
        let ring = match self.ring_size {
            Some(k) if k < self.ring.len() => {
                let mut picked: Vec<RistrettoPoint> =
                    self.ring.iter().filter(|p| **p != me).copied().choose_multiple(&mut self.crypto_rng, k.max(2) - 1);
                picked.push(me);
                picked.sort_by_key(|p| p.compress().to_bytes());
                picked
            }
            _ => self.ring.clone(),
        };
        let idx = ring.iter().position(|p| *p == me).expect("signer is in its own ring");
        (ring, idx)
    }

    /// Re-encrypts the opaque payload for `next_id` and ring-signs the result.
    #[allow(clippy::too_many_arguments)]
    pub fn wrap_next_hop(
        &mut self,
        payload: &[u8],
        next_id: RelayId,
        identity_blob: &HybridCiphertext,
        routing: RoutingMeta,
        phase_tag: PhaseTag,
        tx_id: TxId,
    ) -> Result<RelayEnvelope, RelayError> {
        let peer = self.peers.get(&next_id).ok_or(RelayError::UncertifiedPeer(next_id))?;
        let packet = onion_wrap_layer(
            &self.hybrid,
            next_id,
            &peer.encryption_pub,
            payload,
            identity_blob,
            routing,
            &mut self.crypto_rng,
        )?;
        self.sign_packet(packet, phase_tag, tx_id)
    }

    /// Ring-signs an already built packet (for source-routed onions).
    pub fn sign_packet(
        &mut self,
        packet: OnionPacket,
        phase_tag: PhaseTag,
        tx_id: TxId,
    ) -> Result<RelayEnvelope, RelayError> {
        let (ring, idx) = self.ring_for_signing();
        let msg = RelayEnvelope::signed_bytes(&packet, phase_tag, &tx_id);
        let hop_signature = ring_sign(&msg, &ring, idx, self.ring_key.secret(), &mut self.crypto_rng)?;
        Ok(RelayEnvelope { packet, hop_signature, ring_snapshot: ring, phase_tag, tx_id })
    }

    fn rate_limited(&mut self, now: Millis) -> bool {
        if !self.rate_limiter.enabled {
            return false;
        }
        let index = now / self.rate_limiter.window.max(1);
        if index != self.window.index {
            self.window = RateWindow { index, count: 0 };
        }
        if self.window.count >= self.rate_limiter.max_requests_per_window {
            return true;
        }
        self.window.count += 1;
        false
    }

    fn reject(&mut self, reason: RejectReason, digest: [u8; 32], now: Millis) -> Action {
        let kind = if reason == RejectReason::RateLimited { EventKind::RateLimited } else { EventKind::Rejected };
        self.audit_log.append(kind, digest, now);
        *self.counters.rejected.entry(format!("{reason:?}")).or_default() += 1;
        Action::Reject { reason, ack: reason == RejectReason::RateLimited }
    }

    /// Handles one incoming envelope. `sender` is `None` when the envelope
    /// came straight from the originating chain contract.
    pub fn on_receive(
        &mut self,
        envelope: &RelayEnvelope,
        sender: Option<RelayId>,
        now: Millis,
        links: &dyn LinkView,
    ) -> Result<Action, RelayError> {
        let packet_bytes = envelope.packet.to_bytes();
        let digest = sha256(&[&packet_bytes]);
        if self.rate_limited(now) {
            return Ok(self.reject(RejectReason::RateLimited, digest, now));
        }
        let ring_certified = envelope.ring_snapshot.iter().all(|p| {
            let k = p.compress().to_bytes();
            self.certified_signing.contains(&k) || self.trusted_origins.contains(&k)
        });
        if !ring_certified || !envelope.verify_signature() {
            return Ok(self.reject(RejectReason::InvalidSignature, digest, now));
        }
        if envelope.packet.layer_for != self.id {
            return Ok(self.reject(RejectReason::AuthFailure, digest, now));
        }
        if !self.seen_packets.insert(digest) {
            return Ok(self.reject(RejectReason::DuplicateTx, digest, now));
        }
        let peeled = match onion_peel(&self.encryption, &envelope.packet) {
            Ok(p) => p,
            Err(_) => return Ok(self.reject(RejectReason::AuthFailure, digest, now)),
        };
        self.counters.received += 1;
        self.audit_log.append(EventKind::Received, digest, now);
        let tx_id = envelope.tx_id;

        let (payload, identity_blob, routing) = match peeled {
            PeelResult::Forward { next_hop, inner, .. } => {
                if !self.peers.contains_key(&next_hop) {
                    return Err(RelayError::UncertifiedPeer(next_hop));
                }
                let env = self.sign_packet(inner, PhaseTag::Direct, tx_id)?;
                return Ok(self.emit_forward(vec![(next_hop, env)], sender, envelope.phase_tag, tx_id, now));
            }
            PeelResult::Terminal { payload, identity_blob, routing } => (payload, identity_blob, routing),
        };

        let decision = self.decide(envelope.phase_tag, sender, routing, links)?;
        match decision {
            Decision::Submit => {
                self.counters.submitted += 1;
                self.audit_log.append(EventKind::Submitted, digest, now);
                self.observations.push(Observation {
                    tx_id,
                    from: sender,
                    to: vec![],
                    phase: envelope.phase_tag,
                    at: now,
                });
                let (ring, idx) = self.ring_for_signing();
                let msg = Submission::signed_bytes(&payload, &identity_blob, &tx_id);
                let signature = ring_sign(&msg, &ring, idx, self.ring_key.secret(), &mut self.crypto_rng)?;
                Ok(Action::SubmitToChain(Submission {
                    payload,
                    identity_blob,
                    tx_id,
                    hops: routing.hop_index + 1,
                    ring,
                    signature,
                }))
            }
            Decision::Forward(next) => {
                let mut out = Vec::with_capacity(next.len());
                for (id, phase) in next {
                    let r = RoutingMeta {
                        hop_index: routing.hop_index + 1,
                        hops_remaining: routing.hops_remaining.saturating_sub(1),
                    };
                    out.push((id, self.wrap_next_hop(&payload, id, &identity_blob, r, phase, tx_id)?));
                    self.outbox.insert(
                        (tx_id, id),
                        Retained { payload: payload.clone(), identity_blob: identity_blob.clone(), routing: r, phase },
                    );
                }
                Ok(self.emit_forward(out, sender, envelope.phase_tag, tx_id, now))
            }
        }
    }

    fn emit_forward(
        &mut self,
        out: Vec<(RelayId, RelayEnvelope)>,
        sender: Option<RelayId>,
        phase: PhaseTag,
        tx_id: TxId,
        now: Millis,
    ) -> Action {
        for (_, env) in &out {
            self.audit_log.append(EventKind::Forwarded, sha256(&[&env.packet.to_bytes()]), now);
        }
        self.counters.forwarded += out.len() as u64;
        let to = out.iter().map(|(id, _)| *id).collect();
        self.observations.push(Observation { tx_id, from: sender, to, phase, at: now });
        Action::ForwardTo(out)
    }

    pub fn decide(
        &mut self,
        phase: PhaseTag,
        sender: Option<RelayId>,
        routing: RoutingMeta,
        links: &dyn LinkView,
    ) -> Result<Decision, RelayError> {
        let live = self.live_peers();
        match self.protocol {
            ForwardingProtocol::Dandelion { stem_continue_prob } => {
                dandelion_step(stem_continue_prob, phase, sender, &live, &mut self.route_rng)
            }
            ForwardingProtocol::Clover { fanout, proxy_continue_prob } => {
                clover_step(fanout, proxy_continue_prob, phase, sender, &live, &mut self.route_rng)
            }
            ForwardingProtocol::ShortestPing { .. } => {
                let pings: Vec<(RelayId, Millis)> = self
                    .peers
                    .keys()
                    .filter(|id| Some(**id) != sender)
                    .filter_map(|id| links.ping(self.id, *id).map(|p| (*id, p)))
                    .collect();
                shortest_ping_step(routing.hops_remaining, &pings)
            }
        }
    }

    /// Picks a replacement hop after a bounce, skipping `exclude`.
    pub fn pick_reroute(&mut self, exclude: &HashSet<RelayId>) -> Option<RelayId> {
        self.live_peers().into_iter().filter(|p| !exclude.contains(p)).choose(&mut self.route_rng)
    }

    /// Re-routes a copy whose delivery to `failed` bounced. `None` when no
    /// candidate remains or nothing was sent to `failed` for this tx.
    pub fn reroute(
        &mut self,
        tx_id: TxId,
        failed: RelayId,
        exclude: &HashSet<RelayId>,
    ) -> Result<Option<(RelayId, RelayEnvelope)>, RelayError> {
        let Some(kept) = self.outbox.remove(&(tx_id, failed)) else {
            return Ok(None);
        };
        let Some(next) = self.pick_reroute(exclude) else {
            return Ok(None);
        };
        let env = self.wrap_next_hop(&kept.payload, next, &kept.identity_blob, kept.routing, kept.phase, tx_id)?;
        self.outbox.insert((tx_id, next), kept);
        Ok(Some((next, env)))
    }

    /// Drops retained copies for a finished transaction.
    pub fn forget(&mut self, tx_id: TxId) {
        self.outbox.retain(|(t, _), _| *t != tx_id);
    }

    /// True when nothing in this node's state holds `needle` as plaintext.
    pub fn state_excludes(&self, needle: &[u8]) -> bool {
        if needle.is_empty() {
            return true;
        }
        let jsonl = self.audit_log.to_jsonl();
        let obs = format!("{:?}", self.observations);
        let hay = [jsonl.as_bytes(), obs.as_bytes()];
        let hex = hex::encode(needle);
        hay.iter().all(|h| !contains(h, needle) && !contains(h, hex.as_bytes()))
    }
}

fn contains(hay: &[u8], needle: &[u8]) -> bool {
    hay.windows(needle.len()).any(|w| w == needle)
}

/// Per-tx id counts of transmissions, for tests and metrics.
pub fn count_by_tx(obs: &[Observation]) -> HashMap<TxId, usize> {
    let mut m = HashMap::new();
    for o in obs {
        *m.entry(o.tx_id).or_insert(0) += o.to.len();
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::onion::seal_identity;
    use crate::netsim::{Topology, DEFAULT_LATENCY_RANGE};
    use crate::pki::CertificateAuthority;

    struct Rig {
        nodes: Vec<RelayNode>,
        topo: Topology,
        contract: EncryptionKeyPair,
        rng: ChaCha20Rng,
    }

    fn rig(n: u32, protocol: ForwardingProtocol) -> Rig {
        let mut rng = ChaCha20Rng::seed_from_u64(77);
        let mut ca = CertificateAuthority::new(&mut rng);
        let mut nodes = Vec::new();
        for i in 0..n {
            let enc = EncryptionKeyPair::generate(&mut rng);
            let sig = RingKeyPair::generate(&mut rng);
            let cert = ca.issue_certificate(RelayId(i), enc.public(), sig.public(), 0, 1 << 40, &mut rng).unwrap();
            nodes.push(RelayNode::new(cert, enc, sig, protocol, 1000 + i as u64));
        }
        let certs: Vec<Certificate> = nodes.iter().map(|n| n.certificate.clone()).collect();
        for node in &mut nodes {
            for c in &certs {
                node.add_peer(c, |c| ca.verify_certificate(c, 0));
            }
        }
        let ids: Vec<RelayId> = (0..n).map(RelayId).collect();
        let topo = Topology::random(&ids, DEFAULT_LATENCY_RANGE, true, 5).unwrap();
        let contract = EncryptionKeyPair::generate(&mut rng);
        Rig { nodes, topo, contract, rng }
    }

    impl Rig {
        /// Envelope for node `to`, signed by node `from`.
        fn envelope(&mut self, from: usize, to: u32, phase: PhaseTag, routing: RoutingMeta) -> RelayEnvelope {
            let blob =
                seal_identity(&HybridConfig::default(), &self.contract.public(), b"alice", &mut self.rng).unwrap();
            self.nodes[from].wrap_next_hop(b"opaque", RelayId(to), &blob, routing, phase, TxId([9; 16])).unwrap()
        }
    }

    fn walk_len(q: f64, rng: &mut ChaCha20Rng, peers: &[RelayId]) -> usize {
        let mut hops = 1;
        let mut sender = None;
        let mut at = peers[0];
        while let Decision::Forward(next) = dandelion_step(q, PhaseTag::Stem, sender, peers, rng).unwrap() {
            sender = Some(at);
            at = next[0].0;
            hops += 1;
        }
        hops
    }

    #[test]
    fn dandelion_zero_prob_submits() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let peers: Vec<RelayId> = (0..5).map(RelayId).collect();
        for _ in 0..100 {
            assert_eq!(dandelion_step(0.0, PhaseTag::Stem, None, &peers, &mut rng).unwrap(), Decision::Submit);
        }
    }

    #[test]
    fn dandelion_stem_length_is_geometric() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let peers: Vec<RelayId> = (0..100).map(RelayId).collect();
        let total: usize = (0..10_000).map(|_| walk_len(0.9, &mut rng, &peers)).sum();
        let mean = total as f64 / 10_000.0;
        assert!((mean - 10.0).abs() <= 0.5, "mean stem length {mean}");
    }

    #[test]
    fn dandelion_never_backtracks() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let only = [RelayId(4)];
        for _ in 0..200 {
            let d = dandelion_step(0.9, PhaseTag::Stem, Some(RelayId(4)), &only, &mut rng).unwrap();
            assert_eq!(d, Decision::Submit);
        }
        let two = [RelayId(4), RelayId(5)];
        for _ in 0..200 {
            if let Decision::Forward(n) = dandelion_step(0.9, PhaseTag::Stem, Some(RelayId(4)), &two, &mut rng).unwrap()
            {
                assert_eq!(n, vec![(RelayId(5), PhaseTag::Stem)]);
            }
        }
    }

    #[test]
    fn clover_diffusion_picks_distinct_peers() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let peers: Vec<RelayId> = (0..10).map(RelayId).collect();
        for _ in 0..100 {
            let Decision::Forward(next) = clover_step(3, 0.5, PhaseTag::Diffusion, None, &peers, &mut rng).unwrap()
            else {
                panic!("diffusion must forward")
            };
            let ids: HashSet<RelayId> = next.iter().map(|(id, _)| *id).collect();
            assert_eq!(ids.len(), 3);
            assert!(next.iter().all(|(_, p)| *p == PhaseTag::Proxy));
        }
        assert_eq!(clover_step(2, 0.5, PhaseTag::Diffusion, None, &[], &mut rng), Err(RelayError::NoPeersAvailable));
    }

    #[test]
    fn clover_forwardings_match_branching_expectation() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let peers: Vec<RelayId> = (0..100).map(RelayId).collect();
        let (fanout, p) = (2usize, 0.8);
        let mut total = 0usize;
        let runs = 10_000;
        for _ in 0..runs {
            let Decision::Forward(first) = clover_step(fanout, p, PhaseTag::Diffusion, None, &peers, &mut rng).unwrap()
            else {
                unreachable!()
            };
            total += first.len();
            for (mut at, _) in first {
                let mut sender = RelayId(0);
                while let Decision::Forward(n) =
                    clover_step(fanout, p, PhaseTag::Proxy, Some(sender), &peers, &mut rng).unwrap()
                {
                    total += 1;
                    sender = at;
                    at = n[0].0;
                }
            }
        }
        let expected = fanout as f64 * (1.0 + p / (1.0 - p));
        let mean = total as f64 / runs as f64;
        assert!((mean - expected).abs() <= 0.05 * expected, "mean {mean} vs {expected}");
    }

    #[test]
    fn shortest_ping_rules() {
        let pings = [(RelayId(1), 14), (RelayId(2), 8), (RelayId(3), 22)];
        assert_eq!(shortest_ping_step(1, &pings).unwrap(), Decision::Forward(vec![(RelayId(2), PhaseTag::Direct)]));
        let tie = [(RelayId(7), 8), (RelayId(3), 8)];
        assert_eq!(shortest_ping_step(1, &tie).unwrap(), Decision::Forward(vec![(RelayId(3), PhaseTag::Direct)]));
        assert_eq!(shortest_ping_step(1, &[]), Err(RelayError::NoPeersAvailable));
        assert_eq!(shortest_ping_step(0, &[]).unwrap(), Decision::Submit);
    }

    #[test]
    fn stem_envelope_forwards_to_one_peer() {
        let mut r = rig(6, ForwardingProtocol::Dandelion { stem_continue_prob: 0.9 });
        let mut forwarded = 0;
        for _ in 0..20 {
            let env = r.envelope(0, 1, PhaseTag::Stem, RoutingMeta::default());
            let topo = r.topo.clone();
            match r.nodes[1].on_receive(&env, Some(RelayId(0)), 0, &topo).unwrap() {
                Action::ForwardTo(out) => {
                    assert_eq!(out.len(), 1);
                    assert_ne!(out[0].0, RelayId(0));
                    assert_eq!(out[0].1.packet.identity_blob, env.packet.identity_blob);
                    forwarded += 1;
                }
                Action::SubmitToChain(sub) => {
                    assert_eq!(sub.payload, b"opaque");
                    assert!(sub.verify_signature());
                }
                Action::Reject { reason, .. } => panic!("{reason:?}"),
            }
        }
        assert!(forwarded > 10);
    }

    #[test]
    fn wrapped_envelope_is_accepted_downstream() {
        let mut r = rig(4, ForwardingProtocol::dandelion());
        let env = r.envelope(2, 3, PhaseTag::Stem, RoutingMeta::default());
        assert!(env.verify_signature());
        let topo = r.topo.clone();
        let act = r.nodes[3].on_receive(&env, Some(RelayId(2)), 0, &topo).unwrap();
        assert!(!matches!(act, Action::Reject { .. }));
        assert_eq!(r.nodes[3].audit_log.count(EventKind::Received), 1);
        assert!(r.nodes[3].state_excludes(b"alice"));
        assert!(r.nodes[3].state_excludes(b"opaque"));
    }

    #[test]
    fn flipped_signature_is_rejected_and_logged() {
        let mut r = rig(4, ForwardingProtocol::dandelion());
        let mut env = r.envelope(0, 1, PhaseTag::Stem, RoutingMeta::default());
        env.hop_signature.responses[0] += curve25519_dalek::Scalar::ONE;
        let topo = r.topo.clone();
        let act = r.nodes[1].on_receive(&env, Some(RelayId(0)), 0, &topo).unwrap();
        assert!(matches!(act, Action::Reject { reason: RejectReason::InvalidSignature, ack: false }));
        assert_eq!(r.nodes[1].audit_log.count(EventKind::Rejected), 1);
    }

    #[test]
    fn tampered_packet_or_phase_is_rejected() {
        let mut r = rig(4, ForwardingProtocol::dandelion());
        let topo = r.topo.clone();
        let mut env = r.envelope(0, 1, PhaseTag::Stem, RoutingMeta::default());
        env.packet.body.sealed_payload.ciphertext[0] ^= 1;
        let act = r.nodes[1].on_receive(&env, Some(RelayId(0)), 0, &topo).unwrap();
        assert!(matches!(act, Action::Reject { reason: RejectReason::InvalidSignature, .. }));
        let mut env = r.envelope(0, 1, PhaseTag::Stem, RoutingMeta::default());
        env.phase_tag = PhaseTag::Fluff;
        let act = r.nodes[1].on_receive(&env, Some(RelayId(0)), 0, &topo).unwrap();
        assert!(matches!(act, Action::Reject { reason: RejectReason::InvalidSignature, .. }));
    }

    #[test]
    fn uncertified_ring_is_rejected() {
        let mut r = rig(4, ForwardingProtocol::dandelion());
        let topo = r.topo.clone();
        let env = r.envelope(0, 1, PhaseTag::Stem, RoutingMeta::default());
        r.nodes[1].remove_peer(RelayId(0));
        let act = r.nodes[1].on_receive(&env, Some(RelayId(0)), 0, &topo).unwrap();
        assert!(matches!(act, Action::Reject { reason: RejectReason::InvalidSignature, .. }));
    }

    #[test]
    fn misaddressed_and_replayed_packets() {
        let mut r = rig(4, ForwardingProtocol::dandelion());
        let topo = r.topo.clone();
        let env = r.envelope(0, 2, PhaseTag::Stem, RoutingMeta::default());
        let act = r.nodes[1].on_receive(&env, Some(RelayId(0)), 0, &topo).unwrap();
        assert!(matches!(act, Action::Reject { reason: RejectReason::AuthFailure, .. }));
        assert!(!matches!(r.nodes[2].on_receive(&env, Some(RelayId(0)), 0, &topo).unwrap(), Action::Reject { .. }));
        let act = r.nodes[2].on_receive(&env, Some(RelayId(0)), 1, &topo).unwrap();
        assert!(matches!(act, Action::Reject { reason: RejectReason::DuplicateTx, .. }));
    }

    #[test]
    fn rate_limiter_caps_exactly() {
        let mut r = rig(3, ForwardingProtocol::Dandelion { stem_continue_prob: 0.0 });
        r.nodes[1].rate_limiter = RateLimiterConfig { max_requests_per_window: 5, window: 100, enabled: true };
        let topo = r.topo.clone();
        let mut accepted = 0;
        for i in 0..8 {
            let env = r.envelope(0, 1, PhaseTag::Stem, RoutingMeta::default());
            match r.nodes[1].on_receive(&env, Some(RelayId(0)), i, &topo).unwrap() {
                Action::Reject { reason, ack } => {
                    assert_eq!(reason, RejectReason::RateLimited);
                    assert!(ack);
                }
                _ => accepted += 1,
            }
        }
        assert_eq!(accepted, 5);
        assert_eq!(r.nodes[1].audit_log.count(EventKind::RateLimited), 3);
        let env = r.envelope(0, 1, PhaseTag::Stem, RoutingMeta::default());
        assert!(!matches!(r.nodes[1].on_receive(&env, Some(RelayId(0)), 100, &topo).unwrap(), Action::Reject { .. }));
    }

    #[test]
    fn wrap_to_unknown_peer_fails() {
        let mut r = rig(3, ForwardingProtocol::dandelion());
        let blob = seal_identity(&HybridConfig::default(), &r.contract.public(), b"x", &mut r.rng).unwrap();
        let err =
            r.nodes[0].wrap_next_hop(b"p", RelayId(42), &blob, RoutingMeta::default(), PhaseTag::Stem, TxId([0; 16]));
        assert_eq!(err.unwrap_err(), RelayError::UncertifiedPeer(RelayId(42)));
    }

    #[test]
    fn shortest_ping_node_uses_topology() {
        let mut r = rig(5, ForwardingProtocol::shortest_ping());
        let topo = r.topo.clone();
        let env = r.envelope(0, 1, PhaseTag::Direct, RoutingMeta { hop_index: 0, hops_remaining: 1 });
        let Action::ForwardTo(out) = r.nodes[1].on_receive(&env, None, 0, &topo).unwrap() else { panic!() };
        let best =
            (0..5u32).filter(|&i| i != 1).map(|i| (topo.latency(RelayId(1), RelayId(i)).unwrap(), i)).min().unwrap().1;
        assert_eq!(out[0].0, RelayId(best));
        let next = out[0].1.clone();
        let act = r.nodes[best as usize].on_receive(&next, Some(RelayId(1)), 50, &topo).unwrap();
        assert!(matches!(act, Action::SubmitToChain(Submission { hops: 2, .. })));
    }

    #[test]
    fn partial_ring_still_verifies() {
        let mut r = rig(10, ForwardingProtocol::dandelion());
        r.nodes[0].ring_size = Some(3);
        let env = r.envelope(0, 1, PhaseTag::Stem, RoutingMeta::default());
        assert_eq!(env.ring_snapshot.len(), 3);
        let topo = r.topo.clone();
        assert!(!matches!(r.nodes[1].on_receive(&env, Some(RelayId(0)), 0, &topo).unwrap(), Action::Reject { .. }));
    }

    #[test]
    fn protocol_validation() {
        assert!(ForwardingProtocol::Clover { fanout: 1, proxy_continue_prob: 0.5 }.validate().is_err());
        assert!(ForwardingProtocol::Dandelion { stem_continue_prob: 1.0 }.validate().is_err());
        assert!(ForwardingProtocol::clover().validate().is_ok());
        let p: ForwardingProtocol =
            serde_json::from_str(r#"{"protocol":"dandelion","stem_continue_prob":0.5}"#).unwrap();
        assert_eq!(p, ForwardingProtocol::Dandelion { stem_continue_prob: 0.5 });
    }
}
