//! The whole simulated stack: network, relays and both chain contracts.
//!
//! Relay ids are `0..n_relays`; one extra network node, the gateway, hosts
//! both contracts. Requests enter at the gateway, are handed to an entry
//! relay, and come back to the gateway as submissions.
//!
//! `CryptoMode::Fast` skips envelopes and signatures and moves only routing
//! metadata. Routing decisions draw from a separate random stream, so both
//! modes route identically for the same seed.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use num_bigint::BigUint;
use rand::seq::IteratorRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chains::{
    seal_request, ChainError, ChainKind, CrossChainRequest, Executed, PermissionedChainSim, PermissionlessChainSim,
    RequestPayload, TokenTransferMessage, TransferOutcome, TransferRejection,
};
use crate::crypto::blind::{blind, unblind, verify_unblinded};
use crate::crypto::{BlindKeyPair, CryptoError, EncryptionKeyPair, RingKeyPair, RoutingMeta};
use crate::netsim::{Dispatch, Millis, Network, Topology, DEFAULT_LATENCY_RANGE, DEFAULT_SERVICE_TIME};
use crate::pki::{CertificateAuthority, ChainCheck};
use crate::relay::{
    Action, Decision, ForwardingProtocol, PhaseTag, RateLimiterConfig, RelayEnvelope, RelayNode, Submission,
};
use crate::{RelayId, TxId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CryptoMode {
    Full,
    #[default]
    Fast,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub n_relays: usize,
    pub protocol: ForwardingProtocol,
    pub seed: u64,
    pub latency_range: (Millis, Millis),
    pub service_time: Millis,
    pub crypto: CryptoMode,
    /// `None` rings over every certified relay.
    pub ring_size: Option<usize>,
    pub rate_limit: RateLimiterConfig,
    pub blind_bits: u32,
    /// Time the destination contract needs to include a request.
    pub destination_block_ms: Millis,
    pub entry_retries: u32,
    pub max_reroutes: u32,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            n_relays: 100,
            protocol: ForwardingProtocol::dandelion(),
            seed: 0,
            latency_range: DEFAULT_LATENCY_RANGE,
            service_time: DEFAULT_SERVICE_TIME,
            crypto: CryptoMode::Fast,
            ring_size: None,
            rate_limit: RateLimiterConfig::default(),
            blind_bits: 512,
            destination_block_ms: 0,
            entry_retries: 5,
            max_reroutes: 3,
        }
    }
}

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct HopRecord {
    pub relay: RelayId,
    /// `None` for the entry hop (handed over by the contract).
    pub from: Option<RelayId>,
    pub at: Millis,
    pub phase: PhaseTag,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TxOutcome {
    Pending,
    Completed,
    Failed(FailReason),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum FailReason {
    NoEntryAvailable,
    AllCopiesLost,
}

#[derive(Debug, Clone)]
pub struct RequestSpec {
    pub user: String,
    pub payload: RequestPayload,
    pub destination: ChainKind,
}

impl RequestSpec {
    pub fn data(user: &str, bytes: &[u8]) -> Self {
        Self {
            user: user.to_owned(),
            payload: RequestPayload::Data { bytes: bytes.to_vec() },
            destination: ChainKind::Permissioned,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TxRecord {
    pub tx_id: TxId,
    pub user: String,
    pub destination: ChainKind,
    pub issued_at: Millis,
    pub entry: Option<RelayId>,
    pub entry_received_at: Option<Millis>,
    pub entry_attempts: u32,
    pub reroutes: u32,
    pub trace: Vec<HopRecord>,
    /// Relay-to-relay sends, all copies.
    pub transmissions: u32,
    pub first_submit_at: Option<Millis>,
    /// Relays on the path of the first accepted copy, entry included.
    pub hops: Option<u32>,
    pub submissions: u32,
    pub duplicates: u32,
    pub outcome: TxOutcome,
    pub reply: Option<BigUint>,
    pub transfer: Option<TransferOutcome>,
    in_flight: u32,
    payload: RequestPayload,
    request: Option<CrossChainRequest>,
    excluded_entries: BTreeSet<RelayId>,
    failed_hops: HashSet<RelayId>,
}

impl TxRecord {
    /// Entry receipt to first accepted submission.
    pub fn forwarding_time(&self) -> Option<Millis> {
        Some(self.first_submit_at? - self.entry_received_at?)
    }

    /// Issue to inclusion at the destination, retries included.
    pub fn processing_time(&self, block_ms: Millis) -> Option<Millis> {
        Some(self.first_submit_at? + block_ms - self.issued_at)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct WorldStats {
    pub rejects: BTreeMap<String, u64>,
    pub invalid_signature_rejects: u64,
    pub relay_errors: u64,
    pub chain_errors: u64,
    pub acks: u64,
    pub entry_failures: u64,
    pub bounces: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AuditReport {
    pub invalid_signature_rejects: u64,
    pub identity_leaks: usize,
    pub unregistered_forwarders: usize,
    pub broken_logs: usize,
}

impl AuditReport {
    pub fn clean(&self) -> bool {
        self.invalid_signature_rejects == 0
            && self.identity_leaks == 0
            && self.unregistered_forwarders == 0
            && self.broken_logs == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TransferReport {
    pub sign_tx: usize,
    pub transfer_tx: Option<usize>,
    pub outcome: Option<TransferOutcome>,
}

#[derive(Debug, Clone)]
enum Msg {
    Inject(usize),
    Envelope { tx: usize, env: Box<RelayEnvelope> },
    Meta { tx: usize, phase: PhaseTag, routing: RoutingMeta },
    Submit { tx: usize, sub: Option<Box<Submission>>, hops: u32 },
    Ack,
}

pub struct World {
    pub cfg: WorldConfig,
    net: Network<Msg>,
    pub relays: Vec<RelayNode>,
    pub permissioned: PermissionedChainSim,
    pub permissionless: PermissionlessChainSim,
    gateway: RelayId,
    route_rng: ChaCha20Rng,
    crypto_rng: ChaCha20Rng,
    failure_rng: ChaCha20Rng,
    txs: Vec<TxRecord>,
    pub stats: WorldStats,
}

impl std::fmt::Debug for World {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("World").field("cfg", &self.cfg).field("txs", &self.txs.len()).finish_non_exhaustive()
    }
}

fn sub_seed(seed: u64, stream: u64) -> u64 {
    let mut r = ChaCha20Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r.gen()
}

impl World {
    pub fn new(cfg: WorldConfig) -> Result<Self, WorldError> {
        if cfg.n_relays < 2 {
            return Err(WorldError::Config("n_relays must be at least 2".into()));
        }
        cfg.protocol.validate().map_err(|e| WorldError::Config(e.to_string()))?;
        let mut crypto_rng = ChaCha20Rng::seed_from_u64(sub_seed(cfg.seed, 1));
        let ca = CertificateAuthority::new(&mut crypto_rng);
        let blind = BlindKeyPair::generate(cfg.blind_bits, sub_seed(cfg.seed, 2))?;
        let mut permissioned = PermissionedChainSim::new(ca, blind, &mut crypto_rng);
        let permissionless = PermissionlessChainSim::new(permissioned.blind_public().clone(), &mut crypto_rng);

        let validity = Millis::MAX / 4;
        let mut relays = Vec::with_capacity(cfg.n_relays);
        for i in 0..cfg.n_relays as u32 {
            let enc = EncryptionKeyPair::generate(&mut crypto_rng);
            let sig = RingKeyPair::generate(&mut crypto_rng);
            let cert = permissioned
                .ca_mut()
                .issue_certificate(RelayId(i), enc.public(), sig.public(), 0, validity, &mut crypto_rng)
                .map_err(|e| WorldError::Config(e.to_string()))?;
            permissioned
                .register_relay(&cert, 0)
                .map_err(|e| WorldError::Config(format!("registration failed: {e:?}")))?;
            let mut node = RelayNode::new(cert, enc, sig, cfg.protocol, sub_seed(cfg.seed, 100 + i as u64));
            node.ring_size = cfg.ring_size;
            node.rate_limiter = cfg.rate_limit;
            node.trust_origin(permissioned.contract_signing_pub());
            relays.push(node);
        }
        // Each certificate is checked once against the CA; every relay then
        // admits exactly the verified set.
        let certs: Vec<_> = permissioned.registry().values().map(|e| e.certificate.clone()).collect();
        let verified: Vec<bool> = certs.iter().map(|c| permissioned.ca().verify_certificate(c, 0)).collect();
        for node in &mut relays {
            for (c, ok) in certs.iter().zip(&verified) {
                node.add_peer(c, |_| *ok);
            }
        }
        let mut permissionless = permissionless;
        let keys: Vec<_> = certs.iter().map(|c| c.signing_pub).collect();
        permissionless.sync_relays(keys.iter());

        let gateway = RelayId(cfg.n_relays as u32);
        let nodes: Vec<RelayId> = (0..=cfg.n_relays as u32).map(RelayId).collect();
        let topo = Topology::random(&nodes, cfg.latency_range, true, sub_seed(cfg.seed, 3))
            .map_err(|e| WorldError::Config(e.to_string()))?;
        let net = Network::new(topo, cfg.service_time);
        Ok(Self {
            route_rng: ChaCha20Rng::seed_from_u64(sub_seed(cfg.seed, 4)),
            failure_rng: ChaCha20Rng::seed_from_u64(sub_seed(cfg.seed, 5)),
            crypto_rng,
            cfg,
            net,
            relays,
            permissioned,
            permissionless,
            gateway,
            txs: Vec::new(),
            stats: WorldStats::default(),
        })
    }

    pub fn gateway(&self) -> RelayId {
        self.gateway
    }

    pub fn topology(&self) -> &Topology {
        self.net.topology()
    }

    pub fn now(&self) -> Millis {
        self.net.now()
    }

    pub fn records(&self) -> &[TxRecord] {
        &self.txs
    }

    pub fn served(&self, id: RelayId) -> u64 {
        self.net.served(id)
    }

    /// Hands back every record and starts a fresh batch. Only valid once the
    /// network is idle, since in-flight messages index into the batch.
    pub fn total_served(&self) -> u64 {
        self.net.total_served()
    }

    pub fn take_records(&mut self) -> Vec<TxRecord> {
        assert_eq!(self.net.pending(), 0, "take_records while messages are in flight");
        std::mem::take(&mut self.txs)
    }

    pub fn authorize(&mut self, user: &str) {
        self.permissioned.authorize_user(user);
    }

    /// Takes `count` distinct random relays down. The registry is not told.
    pub fn fail_random_relays(&mut self, count: usize) -> Vec<RelayId> {
        let mut picked: Vec<RelayId> =
            (0..self.cfg.n_relays as u32).map(RelayId).choose_multiple(&mut self.failure_rng, count);
        picked.sort();
        for id in &picked {
            self.net.fail_node(*id).expect("relay exists");
        }
        picked
    }

    pub fn fail_relay(&mut self, id: RelayId) {
        let _ = self.net.fail_node(id);
    }

    /// Queues a request for issue at virtual time `at`. Returns its index.
    pub fn schedule_request(&mut self, at: Millis, spec: RequestSpec) -> Result<usize, WorldError> {
        let tx_id = self.permissioned.next_tx_id(&spec.user)?;
        let idx = self.txs.len();
        self.txs.push(TxRecord {
            tx_id,
            user: spec.user,
            destination: spec.destination,
            issued_at: at,
            entry: None,
            entry_received_at: None,
            entry_attempts: 0,
            reroutes: 0,
            trace: Vec::new(),
            transmissions: 0,
            first_submit_at: None,
            hops: None,
            submissions: 0,
            duplicates: 0,
            outcome: TxOutcome::Pending,
            reply: None,
            transfer: None,
            in_flight: 0,
            payload: spec.payload,
            request: None,
            excluded_entries: BTreeSet::new(),
            failed_hops: HashSet::new(),
        });
        self.net.schedule_local(self.gateway, at, Msg::Inject(idx)).expect("gateway exists");
        Ok(idx)
    }

    /// Runs the event loop until nothing is pending.
    pub fn run(&mut self) -> crate::netsim::RunStats {
        let mut events = 0;
        while let Some(d) = self.net.next_dispatch(Millis::MAX) {
            events += 1;
            self.handle(d);
        }
        crate::netsim::RunStats { events_dispatched: events, final_time: self.net.now(), horizon_exceeded: false }
    }

    fn handle(&mut self, d: Dispatch<Msg>) {
        match d {
            Dispatch::Deliver { from, to, msg, .. } => {
                if to == self.gateway {
                    match msg {
                        Msg::Inject(i) => {
                            self.inject(i);
                            self.check_done(i);
                        }
                        Msg::Submit { tx, sub, hops } => self.on_submit(tx, sub, hops),
                        _ => {}
                    }
                    return;
                }
                let sender = (from != self.gateway).then_some(from);
                match msg {
                    Msg::Envelope { tx, env } => self.relay_full(tx, to, sender, &env),
                    Msg::Meta { tx, phase, routing } => self.relay_fast(tx, to, sender, phase, routing),
                    Msg::Ack => self.stats.acks += 1,
                    _ => {}
                }
            }
            Dispatch::DeliveryFailure { from, to, msg, .. } => {
                let tx = match &msg {
                    Msg::Envelope { tx, .. } | Msg::Meta { tx, .. } | Msg::Submit { tx, .. } => *tx,
                    _ => return,
                };
                self.txs[tx].in_flight -= 1;
                if from == self.gateway {
                    self.stats.entry_failures += 1;
                    self.txs[tx].excluded_entries.insert(to);
                    self.inject(tx);
                } else {
                    self.stats.bounces += 1;
                    self.bounce(tx, from, to, msg);
                }
                self.check_done(tx);
            }
        }
    }

    fn inject(&mut self, i: usize) {
        let now = self.net.now();
        let t = &mut self.txs[i];
        if t.entry_attempts > self.cfg.entry_retries {
            return;
        }
        t.entry_attempts += 1;
        let entry = match self.permissioned.select_entry_excluding(&mut self.route_rng, &t.excluded_entries) {
            Ok(e) => e,
            Err(_) => return,
        };
        t.entry = Some(entry);
        let protocol = self.cfg.protocol;
        let msg = match self.cfg.crypto {
            CryptoMode::Fast => Msg::Meta { tx: i, phase: protocol.entry_phase(), routing: protocol.entry_routing() },
            CryptoMode::Full => {
                if t.request.is_none() {
                    let dest_pub = match t.destination {
                        ChainKind::Permissioned => self.permissioned.contract_pub(),
                        ChainKind::Permissionless => self.permissionless.contract_pub(),
                    };
                    match seal_request(
                        &self.permissioned.hybrid,
                        t.tx_id,
                        &t.user,
                        &t.payload,
                        ChainKind::Permissioned,
                        t.destination,
                        &dest_pub,
                        &mut self.crypto_rng,
                    ) {
                        Ok(r) => t.request = Some(r),
                        Err(_) => {
                            self.stats.chain_errors += 1;
                            return;
                        }
                    }
                }
                let req = t.request.clone().expect("sealed above");
                match self.permissioned.ingress(
                    req,
                    entry,
                    protocol.entry_phase(),
                    protocol.entry_routing(),
                    now,
                    &mut self.crypto_rng,
                ) {
                    Ok(ing) => Msg::Envelope { tx: i, env: Box::new(ing.envelope) },
                    Err(_) => {
                        self.stats.chain_errors += 1;
                        return;
                    }
                }
            }
        };
        self.txs[i].in_flight += 1;
        self.net.send_unserviced(self.gateway, entry, msg).expect("entry exists");
    }

    fn arrive(&mut self, tx: usize, relay: RelayId, sender: Option<RelayId>, phase: PhaseTag) {
        let now = self.net.now();
        let t = &mut self.txs[tx];
        t.in_flight -= 1;
        t.trace.push(HopRecord { relay, from: sender, at: now, phase });
        if sender.is_none() && t.entry_received_at.is_none() {
            t.entry_received_at = Some(now);
        }
    }

    fn relay_full(&mut self, tx: usize, r: RelayId, sender: Option<RelayId>, env: &RelayEnvelope) {
        self.arrive(tx, r, sender, env.phase_tag);
        let now = self.net.now();
        let topo = self.net.topology();
        let action = self.relays[r.0 as usize].on_receive(env, sender, now, topo);
        match action {
            Err(_) => self.stats.relay_errors += 1,
            Ok(Action::ForwardTo(out)) => {
                for (next, e) in out {
                    self.txs[tx].in_flight += 1;
                    self.txs[tx].transmissions += 1;
                    self.net.send(r, next, Msg::Envelope { tx, env: Box::new(e) }).expect("peer exists");
                }
            }
            Ok(Action::SubmitToChain(sub)) => {
                self.txs[tx].in_flight += 1;
                let hops = sub.hops;
                self.net.send(r, self.gateway, Msg::Submit { tx, sub: Some(Box::new(sub)), hops }).expect("gateway");
            }
            Ok(Action::Reject { reason, ack }) => {
                *self.stats.rejects.entry(format!("{reason:?}")).or_default() += 1;
                if reason == crate::relay::RejectReason::InvalidSignature {
                    self.stats.invalid_signature_rejects += 1;
                }
                if let (true, Some(s)) = (ack, sender) {
                    self.net.send_unserviced(r, s, Msg::Ack).expect("sender exists");
                }
            }
        }
        self.check_done(tx);
    }

    fn relay_fast(&mut self, tx: usize, r: RelayId, sender: Option<RelayId>, phase: PhaseTag, routing: RoutingMeta) {
        self.arrive(tx, r, sender, phase);
        let topo = self.net.topology();
        match self.relays[r.0 as usize].decide(phase, sender, routing, topo) {
            Err(_) => self.stats.relay_errors += 1,
            Ok(Decision::Forward(next)) => {
                let routing = RoutingMeta {
                    hop_index: routing.hop_index + 1,
                    hops_remaining: routing.hops_remaining.saturating_sub(1),
                };
                for (id, p) in next {
                    self.txs[tx].in_flight += 1;
                    self.txs[tx].transmissions += 1;
                    self.net.send(r, id, Msg::Meta { tx, phase: p, routing }).expect("peer exists");
                }
            }
            Ok(Decision::Submit) => {
                self.txs[tx].in_flight += 1;
                let hops = routing.hop_index + 1;
                self.net.send(r, self.gateway, Msg::Submit { tx, sub: None, hops }).expect("gateway");
            }
        }
        self.check_done(tx);
    }

    fn bounce(&mut self, tx: usize, from: RelayId, failed: RelayId, msg: Msg) {
        let t = &mut self.txs[tx];
        t.failed_hops.insert(failed);
        if t.reroutes >= self.cfg.max_reroutes {
            return;
        }
        t.reroutes += 1;
        let mut exclude = t.failed_hops.clone();
        if let Some(prev) = t.trace.iter().rev().find(|h| h.relay == from).and_then(|h| h.from) {
            exclude.insert(prev);
        }
        let node = &mut self.relays[from.0 as usize];
        let next = match msg {
            Msg::Meta { phase, routing, .. } => {
                node.pick_reroute(&exclude).map(|id| (id, Msg::Meta { tx, phase, routing }))
            }
            Msg::Envelope { env, .. } => match node.reroute(env.tx_id, failed, &exclude) {
                Ok(Some((id, e))) => Some((id, Msg::Envelope { tx, env: Box::new(e) })),
                Ok(None) => None,
                Err(_) => {
                    self.stats.relay_errors += 1;
                    None
                }
            },
            _ => None,
        };
        if let Some((id, m)) = next {
            self.txs[tx].in_flight += 1;
            self.txs[tx].transmissions += 1;
            self.net.send(from, id, m).expect("peer exists");
        }
    }

    fn on_submit(&mut self, tx: usize, sub: Option<Box<Submission>>, hops: u32) {
        let now = self.net.now();
        self.txs[tx].in_flight -= 1;
        self.txs[tx].submissions += 1;
        let first = match sub {
            None => self.txs[tx].first_submit_at.is_none(),
            Some(sub) => match self.txs[tx].destination {
                ChainKind::Permissioned => match self.permissioned.accept_submission(&sub, now) {
                    Ok(Executed::Recorded { blind_signature, .. }) => {
                        self.txs[tx].reply = blind_signature;
                        true
                    }
                    Ok(Executed::Duplicate) => false,
                    Err(_) => {
                        self.stats.chain_errors += 1;
                        false
                    }
                },
                ChainKind::Permissionless => match self.permissionless.accept_submission(&sub, now) {
                    Ok(TransferOutcome::Rejected(TransferRejection::Duplicate)) => false,
                    Ok(o) => {
                        self.txs[tx].transfer = Some(o);
                        true
                    }
                    Err(_) => {
                        self.stats.chain_errors += 1;
                        false
                    }
                },
            },
        };
        let t = &mut self.txs[tx];
        if first && t.first_submit_at.is_none() {
            t.first_submit_at = Some(now);
            t.hops = Some(hops);
            t.outcome = TxOutcome::Completed;
        } else {
            t.duplicates += 1;
        }
        self.check_done(tx);
    }

    fn check_done(&mut self, tx: usize) {
        let t = &mut self.txs[tx];
        if t.in_flight > 0 {
            return;
        }
        if t.outcome == TxOutcome::Pending {
            t.outcome = TxOutcome::Failed(if t.trace.is_empty() {
                FailReason::NoEntryAvailable
            } else {
                FailReason::AllCopiesLost
            });
        }
        if self.cfg.crypto == CryptoMode::Full {
            let id = t.tx_id;
            let hops: BTreeSet<RelayId> = t.trace.iter().map(|h| h.relay).collect();
            for r in hops {
                self.relays[r.0 as usize].forget(id);
            }
        }
    }

    /// Blind-signed token transfer through the relays, both legs, run to
    /// completion. Needs `CryptoMode::Full`.
    pub fn token_transfer(&mut self, user: &str, recipient: &str, amount: u64) -> Result<TransferReport, WorldError> {
        if self.cfg.crypto != CryptoMode::Full {
            return Err(WorldError::Config("token transfers need full crypto".into()));
        }
        let signer = self.permissioned.blind_public().clone();
        let nonce: [u8; 16] = self.crypto_rng.gen();
        let message = TokenTransferMessage::new(recipient, amount, nonce, &signer);
        let (blinded, factor) = blind(&message.digest, &signer, &mut self.crypto_rng)?;
        let at = self.net.now();
        let sign_tx = self.schedule_request(
            at,
            RequestSpec {
                user: user.to_owned(),
                payload: RequestPayload::BlindSign { blinded },
                destination: ChainKind::Permissioned,
            },
        )?;
        self.run();
        let Some(s_prime) = self.txs[sign_tx].reply.clone() else {
            return Ok(TransferReport { sign_tx, transfer_tx: None, outcome: None });
        };
        let signature = unblind(&s_prime, &factor, &signer.n);
        if !verify_unblinded(&message.digest, &signature, &signer) {
            return Ok(TransferReport { sign_tx, transfer_tx: None, outcome: None });
        }
        let at = self.net.now();
        let transfer_tx = self.schedule_request(
            at,
            RequestSpec {
                user: user.to_owned(),
                payload: RequestPayload::TokenTransfer { message, signature: signature.value_s },
                destination: ChainKind::Permissionless,
            },
        )?;
        self.run();
        Ok(TransferReport { sign_tx, transfer_tx: Some(transfer_tx), outcome: self.txs[transfer_tx].transfer })
    }

    /// Global checks over a finished run. Identity checks need full crypto.
    pub fn audit(&self) -> AuditReport {
        let users: BTreeSet<&str> = self.txs.iter().map(|t| t.user.as_str()).collect();
        let identity_leaks = if self.cfg.crypto == CryptoMode::Full {
            self.relays.iter().map(|r| users.iter().filter(|u| !r.state_excludes(u.as_bytes())).count()).sum()
        } else {
            0
        };
        let now = self.net.now();
        let unregistered_forwarders = self
            .txs
            .iter()
            .flat_map(|t| t.trace.iter().map(|h| h.relay))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .filter(|r| {
                self.permissioned
                    .registry()
                    .get(r)
                    .is_none_or(|e| !self.permissioned.ca().verify_certificate(&e.certificate, now))
            })
            .count();
        let broken_logs = self.relays.iter().filter(|r| r.audit_log.verify() != ChainCheck::Intact).count();
        AuditReport {
            invalid_signature_rejects: self.stats.invalid_signature_rejects,
            identity_leaks,
            unregistered_forwarders,
            broken_logs,
        }
    }
}
