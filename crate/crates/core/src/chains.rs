//! In-process stand-ins for the two ledgers: the permissioned side (relay
//! registry, request origination, blind signer, identity decryption) and the
//! permissionless side (signature check, crediting, replay suppression).

use std::collections::{BTreeMap, BTreeSet};

use curve25519_dalek::ristretto::RistrettoPoint;
use num_bigint::BigUint;
use rand::seq::IteratorRandom;
use rand::{CryptoRng, Rng, RngCore};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::blind::{fdh, sign_blinded, verify_unblinded};
use crate::crypto::hybrid::{hybrid_decrypt, hybrid_encrypt};
use crate::crypto::onion::{onion_wrap_layer, onion_wrap_sealed, open_identity, seal_identity};
use crate::crypto::ring::ring_sign;
use crate::crypto::{
    sha256, BlindKeyPair, BlindPublicKey, BlindSignature, CryptoError, EncryptionKeyPair, HybridCiphertext,
    HybridConfig, RingKeyPair, RoutingMeta,
};
use crate::netsim::Millis;
use crate::pki::{AuditLog, CertStatus, Certificate, CertificateAuthority, EventKind};
use crate::relay::{ForwardingProtocol, PhaseTag, RelayEnvelope, Submission};
use crate::{RelayId, TxId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ChainKind {
    Permissioned,
    Permissionless,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RegistrationError {
    InvalidCert,
    Expired,
    Revoked,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ChainError {
    #[error("no available relays")]
    NoAvailableRelays,
    #[error("user {0} is not authorized")]
    UnauthorizedUser(String),
    #[error("identity or payload failed to decrypt")]
    AuthFailure,
    #[error("submission did not carry a valid relay signature")]
    UnverifiedSubmission,
    #[error("relay registration rejected: {0:?}")]
    Registration(RegistrationError),
    #[error("malformed request: {0}")]
    Malformed(String),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

mod hex_big {
    use num_bigint::BigUint;
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &BigUint, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&v.to_str_radix(16))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BigUint, D::Error> {
        let s = String::deserialize(d)?;
        BigUint::parse_bytes(s.as_bytes(), 16).ok_or_else(|| D::Error::custom("bad hex integer"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenTransferMessage {
    pub recipient_account: String,
    pub amount: u64,
    #[serde(with = "hex::serde")]
    pub nonce: [u8; 16],
    #[serde(with = "hex_big")]
    pub digest: BigUint,
}

impl TokenTransferMessage {
    pub fn new(recipient_account: &str, amount: u64, nonce: [u8; 16], signer: &BlindPublicKey) -> Self {
        let digest = fdh(&Self::preimage(recipient_account, amount, &nonce), signer);
        Self { recipient_account: recipient_account.to_owned(), amount, nonce, digest }
    }

    fn preimage(recipient: &str, amount: u64, nonce: &[u8; 16]) -> Vec<u8> {
        let mut m = b"xrelay/token/v1".to_vec();
        m.extend_from_slice(&(recipient.len() as u32).to_be_bytes());
        m.extend_from_slice(recipient.as_bytes());
        m.extend_from_slice(&amount.to_be_bytes());
        m.extend_from_slice(nonce);
        m
    }

    pub fn digest_matches(&self, signer: &BlindPublicKey) -> bool {
        fdh(&Self::preimage(&self.recipient_account, self.amount, &self.nonce), signer) == self.digest
    }
}

/// Plaintext inside `CrossChainRequest::payload_ciphertext`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RequestPayload {
    BlindSign {
        #[serde(with = "hex_big")]
        blinded: BigUint,
    },
    TokenTransfer {
        message: TokenTransferMessage,
        #[serde(with = "hex_big")]
        signature: BigUint,
    },
    Data {
        #[serde(with = "hex::serde")]
        bytes: Vec<u8>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CrossChainRequest {
    pub tx_id: TxId,
    pub payload_ciphertext: HybridCiphertext,
    pub identity_ciphertext: HybridCiphertext,
    pub origin_chain: ChainKind,
    pub destination_chain: ChainKind,
}

impl CrossChainRequest {
    /// What relays carry: the payload ciphertext, opaque to them.
    pub fn opaque_payload(&self) -> Vec<u8> {
        self.payload_ciphertext.to_bytes()
    }
}

pub fn derive_tx_id(user_id: &str, nonce: u64) -> TxId {
    let h = sha256(&[b"xrelay/tx", user_id.as_bytes(), &nonce.to_be_bytes()]);
    let mut id = [0u8; 16];
    id.copy_from_slice(&h[..16]);
    TxId(id)
}

fn payload_ad(tx_id: &TxId) -> Vec<u8> {
    let mut ad = b"xrelay/payload".to_vec();
    ad.extend_from_slice(&tx_id.0);
    ad
}

pub fn seal_request<R: RngCore + CryptoRng>(
    config: &HybridConfig,
    tx_id: TxId,
    user_id: &str,
    payload: &RequestPayload,
    origin: ChainKind,
    destination: ChainKind,
    destination_contract_pub: &RistrettoPoint,
    rng: &mut R,
) -> Result<CrossChainRequest, ChainError> {
    let plain = serde_json::to_vec(payload).map_err(|e| ChainError::Malformed(e.to_string()))?;
    let payload_ciphertext = hybrid_encrypt(config, destination_contract_pub, &plain, &payload_ad(&tx_id), rng)?;
    let identity_ciphertext = seal_identity(config, destination_contract_pub, user_id.as_bytes(), rng)?;
    Ok(CrossChainRequest {
        tx_id,
        payload_ciphertext,
        identity_ciphertext,
        origin_chain: origin,
        destination_chain: destination,
    })
}

/// Decrypts what a destination contract received.
pub fn open_request(
    contract: &EncryptionKeyPair,
    tx_id: &TxId,
    opaque_payload: &[u8],
    identity_blob: &HybridCiphertext,
) -> Result<(String, RequestPayload), ChainError> {
    let identity = open_identity(contract, identity_blob).map_err(|_| ChainError::AuthFailure)?;
    let ct = HybridCiphertext::from_bytes(opaque_payload).map_err(|_| ChainError::AuthFailure)?;
    let plain = hybrid_decrypt(contract, &ct, &payload_ad(tx_id)).map_err(|_| ChainError::AuthFailure)?;
    let payload = serde_json::from_slice(&plain).map_err(|e| ChainError::Malformed(e.to_string()))?;
    let identity = String::from_utf8(identity).map_err(|_| ChainError::Malformed("identity is not utf-8".into()))?;
    Ok((identity, payload))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegistryEntry {
    pub certificate: Certificate,
    pub available: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub seq: u64,
    pub channel: String,
    pub tx_id: String,
    pub identity: String,
    pub payload_digest: String,
    pub virtual_time: Millis,
}

/// Ingress hand-off from the origin contract to the entry relay.
#[derive(Debug, Clone)]
pub struct Ingress {
    pub request: CrossChainRequest,
    pub entry: RelayId,
    pub envelope: RelayEnvelope,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Executed {
    Recorded { entry: LedgerEntry, blind_signature: Option<BigUint> },
    Duplicate,
}

/// Checks that every ring member is a relay the contract currently trusts
/// and that the ring signature verifies.
fn submission_trusted(sub: &Submission, trusted: impl Fn(&RistrettoPoint) -> bool) -> bool {
    sub.ring.iter().all(trusted) && sub.verify_signature()
}

pub struct PermissionedChainSim {
    contract: EncryptionKeyPair,
    contract_signer: RingKeyPair,
    ca: CertificateAuthority,
    registry: BTreeMap<RelayId, RegistryEntry>,
    ledger: Vec<LedgerEntry>,
    blind_signer: BlindKeyPair,
    allow_list: BTreeSet<String>,
    nonces: BTreeMap<String, u64>,
    processed: BTreeSet<TxId>,
    pub signer_transcript: Vec<BigUint>,
    pub audit_log: AuditLog,
    pub channel: String,
    pub hybrid: HybridConfig,
}

impl std::fmt::Debug for PermissionedChainSim {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PermissionedChainSim")
            .field("registry", &self.registry.len())
            .field("ledger", &self.ledger.len())
            .finish_non_exhaustive()
    }
}

impl PermissionedChainSim {
    pub fn new<R: RngCore + CryptoRng>(ca: CertificateAuthority, blind_signer: BlindKeyPair, rng: &mut R) -> Self {
        Self {
            contract: EncryptionKeyPair::generate(rng),
            contract_signer: RingKeyPair::generate(rng),
            ca,
            registry: BTreeMap::new(),
            ledger: Vec::new(),
            blind_signer,
            allow_list: BTreeSet::new(),
            nonces: BTreeMap::new(),
            processed: BTreeSet::new(),
            signer_transcript: Vec::new(),
            audit_log: AuditLog::new(),
            channel: "interop".into(),
            hybrid: HybridConfig::default(),
        }
    }

    pub fn contract_pub(&self) -> RistrettoPoint {
        self.contract.public()
    }

    pub fn contract_signing_pub(&self) -> RistrettoPoint {
        self.contract_signer.public()
    }

    pub fn contract_keypair(&self) -> &EncryptionKeyPair {
        &self.contract
    }

    pub fn blind_public(&self) -> &BlindPublicKey {
        self.blind_signer.public()
    }

    pub fn ca(&self) -> &CertificateAuthority {
        &self.ca
    }

    pub fn ca_mut(&mut self) -> &mut CertificateAuthority {
        &mut self.ca
    }

    pub fn authorize_user(&mut self, user: &str) {
        self.allow_list.insert(user.to_owned());
    }

    pub fn register_relay(&mut self, cert: &Certificate, now: Millis) -> Result<(), RegistrationError> {
        match self.ca.status(cert, now) {
            CertStatus::Valid => {}
            CertStatus::Revoked => return Err(RegistrationError::Revoked),
            CertStatus::Expired | CertStatus::NotYetValid => return Err(RegistrationError::Expired),
            CertStatus::BadSignature => return Err(RegistrationError::InvalidCert),
        }
        self.registry.insert(cert.subject_id, RegistryEntry { certificate: cert.clone(), available: true });
        Ok(())
    }

    pub fn registry(&self) -> &BTreeMap<RelayId, RegistryEntry> {
        &self.registry
    }

    pub fn set_available(&mut self, id: RelayId, available: bool) {
        if let Some(e) = self.registry.get_mut(&id) {
            e.available = available;
        }
    }

    /// True when `key` belongs to a registered relay whose certificate is
    /// still valid at `now`.
    pub fn is_registered_key(&self, key: &RistrettoPoint, now: Millis) -> bool {
        self.registry
            .values()
            .any(|e| e.certificate.signing_pub == *key && self.ca.verify_certificate(&e.certificate, now))
    }

    pub fn select_entry_node<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<RelayId, ChainError> {
        self.select_entry_excluding(rng, &BTreeSet::new())
    }

    /// Entry choice that also skips relays this request already failed on.
    pub fn select_entry_excluding<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        exclude: &BTreeSet<RelayId>,
    ) -> Result<RelayId, ChainError> {
        self.registry
            .iter()
            .filter(|(id, e)| e.available && !exclude.contains(id))
            .map(|(id, _)| *id)
            .choose(rng)
            .ok_or(ChainError::NoAvailableRelays)
    }

    pub fn next_tx_id(&mut self, user_id: &str) -> Result<TxId, ChainError> {
        if !self.allow_list.contains(user_id) {
            return Err(ChainError::UnauthorizedUser(user_id.to_owned()));
        }
        let n = self.nonces.entry(user_id.to_owned()).or_insert(0);
        *n += 1;
        Ok(derive_tx_id(user_id, *n))
    }

    /// Ring of two: the contract key and the entry relay's own key, so the
    /// entry knows the envelope came from a trusted origin.
    fn sign_ingress<R: RngCore + CryptoRng>(
        &self,
        packet: crate::crypto::OnionPacket,
        entry_signing: RistrettoPoint,
        phase: PhaseTag,
        tx_id: TxId,
        rng: &mut R,
    ) -> Result<RelayEnvelope, ChainError> {
        let mut ring = vec![self.contract_signer.public(), entry_signing];
        ring.sort_by_key(|p| p.compress().to_bytes());
        let idx = ring.iter().position(|p| *p == self.contract_signer.public()).expect("contract in ring");
        let msg = RelayEnvelope::signed_bytes(&packet, phase, &tx_id);
        let hop_signature = ring_sign(&msg, &ring, idx, self.contract_signer.secret(), rng)?;
        Ok(RelayEnvelope { packet, hop_signature, ring_snapshot: ring, phase_tag: phase, tx_id })
    }

    /// Builds a request, picks an entry relay and seals the first layer for
    /// it. Later hops are chosen by the relays under `protocol`.
    #[allow(clippy::too_many_arguments)]
    pub fn initiate_request<R: RngCore + CryptoRng>(
        &mut self,
        user_id: &str,
        payload: &RequestPayload,
        destination: ChainKind,
        destination_contract_pub: &RistrettoPoint,
        protocol: &ForwardingProtocol,
        now: Millis,
        rng: &mut R,
    ) -> Result<Ingress, ChainError> {
        let tx_id = self.next_tx_id(user_id)?;
        let entry = self.select_entry_node(rng)?;
        let request = seal_request(
            &self.hybrid,
            tx_id,
            user_id,
            payload,
            ChainKind::Permissioned,
            destination,
            destination_contract_pub,
            rng,
        )?;
        self.ingress(request, entry, protocol.entry_phase(), protocol.entry_routing(), now, rng)
    }

    /// Hands an already sealed request to `entry`.
    pub fn ingress<R: RngCore + CryptoRng>(
        &mut self,
        request: CrossChainRequest,
        entry: RelayId,
        phase: PhaseTag,
        routing: RoutingMeta,
        now: Millis,
        rng: &mut R,
    ) -> Result<Ingress, ChainError> {
        let reg = self.registry.get(&entry).ok_or(ChainError::NoAvailableRelays)?;
        let (enc, sig) = (reg.certificate.encryption_pub, reg.certificate.signing_pub);
        let packet = onion_wrap_layer(
            &self.hybrid,
            entry,
            &enc,
            &request.opaque_payload(),
            &request.identity_ciphertext,
            routing,
            rng,
        )?;
        let envelope = self.sign_ingress(packet, sig, phase, request.tx_id, rng)?;
        self.audit_log.append(EventKind::Received, sha256(&[&request.tx_id.0]), now);
        Ok(Ingress { request, entry, envelope })
    }

    /// Source-routed variant: one onion layer per relay in `path`.
    #[allow(clippy::too_many_arguments)]
    pub fn initiate_source_routed<R: RngCore + CryptoRng>(
        &mut self,
        user_id: &str,
        payload: &RequestPayload,
        destination: ChainKind,
        destination_contract_pub: &RistrettoPoint,
        path: &[RelayId],
        now: Millis,
        rng: &mut R,
    ) -> Result<Ingress, ChainError> {
        let tx_id = self.next_tx_id(user_id)?;
        let mut keyed = Vec::with_capacity(path.len());
        for id in path {
            let e = self.registry.get(id).filter(|e| e.available).ok_or(ChainError::NoAvailableRelays)?;
            keyed.push((*id, e.certificate.encryption_pub));
        }
        let entry = *path.first().ok_or(ChainError::Crypto(CryptoError::EmptyPath))?;
        let request = seal_request(
            &self.hybrid,
            tx_id,
            user_id,
            payload,
            ChainKind::Permissioned,
            destination,
            destination_contract_pub,
            rng,
        )?;
        let packet =
            onion_wrap_sealed(&self.hybrid, &keyed, &request.opaque_payload(), &request.identity_ciphertext, 0, rng)?;
        let sig = self.registry[&entry].certificate.signing_pub;
        let envelope = self.sign_ingress(packet, sig, PhaseTag::Direct, tx_id, rng)?;
        self.audit_log.append(EventKind::Received, sha256(&[&tx_id.0]), now);
        Ok(Ingress { request, entry, envelope })
    }

    /// Signs a blinded value. The blinded value is all the signer ever sees.
    pub fn blind_sign_endpoint(&mut self, blinded: &BigUint) -> Result<BigUint, ChainError> {
        let s = sign_blinded(blinded, &self.blind_signer)?;
        self.signer_transcript.push(blinded.clone());
        Ok(s)
    }

    pub fn execute_permissioned_request(
        &mut self,
        tx_id: TxId,
        terminal_payload: &[u8],
        identity_ciphertext: &HybridCiphertext,
        now: Millis,
    ) -> Result<Executed, ChainError> {
        let (identity, payload) = open_request(&self.contract, &tx_id, terminal_payload, identity_ciphertext)?;
        if !self.processed.insert(tx_id) {
            return Ok(Executed::Duplicate);
        }
        let blind_signature = match &payload {
            RequestPayload::BlindSign { blinded } => Some(self.blind_sign_endpoint(blinded)?),
            _ => None,
        };
        let entry = LedgerEntry {
            seq: self.ledger.len() as u64,
            channel: self.channel.clone(),
            tx_id: tx_id.to_hex(),
            identity,
            payload_digest: hex::encode(sha256(&[terminal_payload])),
            virtual_time: now,
        };
        self.ledger.push(entry.clone());
        self.audit_log.append(EventKind::Submitted, sha256(&[&tx_id.0]), now);
        Ok(Executed::Recorded { entry, blind_signature })
    }

    /// Destination-side entry point for relay submissions.
    pub fn accept_submission(&mut self, sub: &Submission, now: Millis) -> Result<Executed, ChainError> {
        if !submission_trusted(sub, |k| self.is_registered_key(k, now)) {
            self.audit_log.append(EventKind::Rejected, sha256(&[&sub.tx_id.0]), now);
            return Err(ChainError::UnverifiedSubmission);
        }
        self.execute_permissioned_request(sub.tx_id, &sub.payload, &sub.identity_blob, now)
    }

    pub fn ledger(&self) -> &[LedgerEntry] {
        &self.ledger
    }

    pub fn ledger_json(&self) -> String {
        serde_json::to_string_pretty(&self.ledger).expect("ledger serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TransferRejection {
    BadSignature,
    Duplicate,
    Overflow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransferOutcome {
    Credited,
    Rejected(TransferRejection),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CreditEntry {
    pub seq: u64,
    pub recipient: String,
    pub amount: u64,
    pub nonce: String,
    pub identity: Option<String>,
    pub virtual_time: Millis,
}

pub struct PermissionlessChainSim {
    contract: EncryptionKeyPair,
    balances: BTreeMap<String, u64>,
    signer_pub: BlindPublicKey,
    processed: BTreeSet<[u8; 16]>,
    trusted_relays: BTreeSet<[u8; 32]>,
    credits: Vec<CreditEntry>,
    pub audit_log: AuditLog,
}

impl std::fmt::Debug for PermissionlessChainSim {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PermissionlessChainSim").field("balances", &self.balances).finish_non_exhaustive()
    }
}

impl PermissionlessChainSim {
    pub fn new<R: RngCore + CryptoRng>(signer_pub: BlindPublicKey, rng: &mut R) -> Self {
        Self {
            contract: EncryptionKeyPair::generate(rng),
            balances: BTreeMap::new(),
            signer_pub,
            processed: BTreeSet::new(),
            trusted_relays: BTreeSet::new(),
            credits: Vec::new(),
            audit_log: AuditLog::new(),
        }
    }

    pub fn contract_pub(&self) -> RistrettoPoint {
        self.contract.public()
    }

    pub fn contract_keypair(&self) -> &EncryptionKeyPair {
        &self.contract
    }

    /// Mirrors the relay registry; only these keys may sign submissions.
    pub fn sync_relays<'a>(&mut self, keys: impl IntoIterator<Item = &'a RistrettoPoint>) {
        self.trusted_relays = keys.into_iter().map(|k| k.compress().to_bytes()).collect();
    }

    pub fn submit_token_transfer(&mut self, message: &TokenTransferMessage, sig: &BlindSignature) -> TransferOutcome {
        self.submit_inner(message, sig, None, 0)
    }

    fn submit_inner(
        &mut self,
        message: &TokenTransferMessage,
        sig: &BlindSignature,
        identity: Option<String>,
        now: Millis,
    ) -> TransferOutcome {
        let digest = sha256(&[&message.nonce]);
        if message.amount == 0
            || !message.digest_matches(&self.signer_pub)
            || !verify_unblinded(&message.digest, sig, &self.signer_pub)
        {
            self.audit_log.append(EventKind::Rejected, digest, now);
            return TransferOutcome::Rejected(TransferRejection::BadSignature);
        }
        if self.processed.contains(&message.nonce) {
            self.audit_log.append(EventKind::Rejected, digest, now);
            return TransferOutcome::Rejected(TransferRejection::Duplicate);
        }
        let balance = self.balances.get(&message.recipient_account).copied().unwrap_or(0);
        let Some(next) = balance.checked_add(message.amount) else {
            self.audit_log.append(EventKind::Rejected, digest, now);
            return TransferOutcome::Rejected(TransferRejection::Overflow);
        };
        self.balances.insert(message.recipient_account.clone(), next);
        self.processed.insert(message.nonce);
        self.credits.push(CreditEntry {
            seq: self.credits.len() as u64,
            recipient: message.recipient_account.clone(),
            amount: message.amount,
            nonce: hex::encode(message.nonce),
            identity,
            virtual_time: now,
        });
        self.audit_log.append(EventKind::Submitted, digest, now);
        TransferOutcome::Credited
    }

    pub fn accept_submission(&mut self, sub: &Submission, now: Millis) -> Result<TransferOutcome, ChainError> {
        if !submission_trusted(sub, |k| self.trusted_relays.contains(&k.compress().to_bytes())) {
            self.audit_log.append(EventKind::Rejected, sha256(&[&sub.tx_id.0]), now);
            return Err(ChainError::UnverifiedSubmission);
        }
        let (identity, payload) = open_request(&self.contract, &sub.tx_id, &sub.payload, &sub.identity_blob)?;
        match payload {
            RequestPayload::TokenTransfer { message, signature } => {
                Ok(self.submit_inner(&message, &BlindSignature { value_s: signature }, Some(identity), now))
            }
            _ => Err(ChainError::Malformed("expected a token transfer".into())),
        }
    }

    pub fn balance(&self, account: &str) -> u64 {
        self.balances.get(account).copied().unwrap_or(0)
    }

    pub fn total_supply(&self) -> u128 {
        self.balances.values().map(|&v| v as u128).sum()
    }

    pub fn credits(&self) -> &[CreditEntry] {
        &self.credits
    }

    pub fn processed_count(&self) -> usize {
        self.processed.len()
    }

    pub fn balances_json(&self) -> String {
        serde_json::to_string_pretty(&self.balances).expect("balances serialize")
    }

    /// Test hook: preload an account.
    pub fn set_balance(&mut self, account: &str, amount: u64) {
        self.balances.insert(account.to_owned(), amount);
    }
}
