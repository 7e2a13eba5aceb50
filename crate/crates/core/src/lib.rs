//! Privacy-preserving relay network bridging a permissioned and a
//! permissionless chain.
//!
//! The crate contains the cryptographic pipeline (blind signatures, ring
//! signatures, hybrid AEAD encryption and onion layering), certificate-gated
//! relay membership with hash-chained audit logs, a deterministic
//! virtual-time network simulator, the relay state machine with pluggable
//! source-obfuscation protocols (Dandelion++, Clover, Shortest Ping), both
//! chain simulations, the breach/collusion analysis and the experiment
//! harness behind the `xrelay` binary.

pub mod analysis;
pub mod chains;
pub mod crypto;
pub mod harness;
pub mod netsim;
pub mod pki;
pub mod relay;
pub mod world;

mod ids;

pub use ids::{RelayId, TxId};
