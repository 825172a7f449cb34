//! Agent-centric distributed ledger: per-agent signed source chains, DNA
//! validation, a gossiping DHT with reputation, mutual-credit fuel and a
//! capability-based healthcare application, plus a deterministic simulator
//! and a full-replication baseline for comparison.

pub mod bench;
pub mod chain;
pub mod crypto;
pub mod dht;
pub mod dna;
pub mod encoding;
pub mod fuel;
pub mod happ;
pub mod payload;
pub mod reputation;
pub mod rules;
pub mod sim;
pub mod validation;

pub use chain::{
    export_records, import_records, init_chain, verify_records, EntryHeader, FailureReason, Record,
    SourceChain, VerificationReport,
};
pub use crypto::{generate_keypair, hash_bytes, sign, verify, AgentId, Digest, KeyPair, Signature};
pub use dht::{neighborhood, DhtParams, Network};
pub use dna::{dna_hash, DnaBuilder, DnaDocument};
pub use reputation::{ExperienceMatrix, Observation};
pub use validation::{
    authenticate_channel, validate_application, validate_transaction, Marketplace, Reason, Verdict,
};
