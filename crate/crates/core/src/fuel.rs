//! Mutual-credit fuel: co-signed transfers stored on both parties' chains,
//! balances derived from chains, and witness-based double-spend audits.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::chain::{ChainError, Record, SourceChain, VerificationReport};
use crate::crypto::{hash_bytes, sign, verify, AgentId, Digest, KeyPair, Signature};
use crate::dht::Network;
use crate::encoding::{Canonical, DecodeError, Decoder, Encoder};
use crate::payload::{Payload, Value};

pub const FUEL_ENTRY: &str = "fuel";
pub const SEED_ENTRY: &str = "fuel_seed";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FuelError {
    #[error("amount must be positive")]
    NonPositiveAmount,
    #[error("sender and receiver are the same agent")]
    SelfPayment,
    #[error(
        "insufficient credit: balance {balance}, amount {amount}, credit limit {credit_limit}"
    )]
    InsufficientCredit {
        balance: i64,
        amount: i64,
        credit_limit: i64,
    },
    #[error("fuel signature does not verify")]
    BadSignature,
    #[error("channel not authenticated: {0}")]
    Unauthenticated(&'static str),
    #[error("chain is invalid at index {0}")]
    InvalidChain(usize),
    #[error(transparent)]
    Chain(#[from] ChainError),
}

/// The signed body of a transfer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FuelBody {
    pub sender: AgentId,
    pub receiver: AgentId,
    pub amount: i64,
    pub sender_prior_balance: i64,
    pub sender_prev_tx: Digest,
    pub timestamp: u64,
}

impl Canonical for FuelBody {
    fn encode_to(&self, enc: &mut Encoder) {
        enc.agent(&self.sender)
            .agent(&self.receiver)
            .i64(self.amount)
            .i64(self.sender_prior_balance)
            .digest(&self.sender_prev_tx)
            .u64(self.timestamp);
    }

    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(FuelBody {
            sender: dec.agent()?,
            receiver: dec.agent()?,
            amount: dec.i64()?,
            sender_prior_balance: dec.i64()?,
            sender_prev_tx: dec.digest()?,
            timestamp: dec.u64()?,
        })
    }
}

impl FuelBody {
    fn bytes(&self) -> Vec<u8> {
        crate::encoding::canonical_encode(self)
    }

    pub fn tx_id(&self) -> Digest {
        hash_bytes(&self.bytes())
    }
}

/// Signed by the sender, waiting for the receiver's countersignature.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PendingFuelTx {
    pub body: FuelBody,
    pub sender_sig: Signature,
}

impl PendingFuelTx {
    pub fn tx_id(&self) -> Digest {
        self.body.tx_id()
    }

    pub fn sender_sig_valid(&self) -> bool {
        verify(&self.body.sender, &self.body.bytes(), &self.sender_sig)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FuelTransaction {
    pub tx_id: Digest,
    pub body: FuelBody,
    pub sender_sig: Signature,
    pub receiver_sig: Signature,
}

impl FuelTransaction {
    pub fn signatures_valid(&self) -> bool {
        let bytes = self.body.bytes();
        self.tx_id == hash_bytes(&bytes)
            && self.body.amount > 0
            && self.body.sender != self.body.receiver
            && verify(&self.body.sender, &bytes, &self.sender_sig)
            && verify(&self.body.receiver, &bytes, &self.receiver_sig)
    }

    pub fn to_payload(&self) -> Payload {
        let b = &self.body;
        Payload::new()
            .with("tx_id", Value::Hash(self.tx_id))
            .with("sender", Value::Agent(b.sender))
            .with("receiver", Value::Agent(b.receiver))
            .with("amount", Value::Int(b.amount))
            .with("sender_prior_balance", Value::Int(b.sender_prior_balance))
            .with("sender_prev_tx", Value::Hash(b.sender_prev_tx))
            .with("timestamp", Value::Int(b.timestamp as i64))
            .with("sender_sig", Value::Bytes(self.sender_sig.0.to_vec()))
            .with("receiver_sig", Value::Bytes(self.receiver_sig.0.to_vec()))
    }

    pub fn from_payload(p: &Payload) -> Option<FuelTransaction> {
        let sig = |name: &str| -> Option<Signature> {
            p.bytes(name)
                .and_then(|b| <[u8; 64]>::try_from(b).ok())
                .map(Signature)
        };
        Some(FuelTransaction {
            tx_id: p.hash("tx_id")?,
            body: FuelBody {
                sender: p.agent("sender")?,
                receiver: p.agent("receiver")?,
                amount: p.int("amount")?,
                sender_prior_balance: p.int("sender_prior_balance")?,
                sender_prev_tx: p.hash("sender_prev_tx")?,
                timestamp: u64::try_from(p.int("timestamp")?).ok()?,
            },
            sender_sig: sig("sender_sig")?,
            receiver_sig: sig("receiver_sig")?,
        })
    }

    pub fn from_record(record: &Record) -> Option<FuelTransaction> {
        if record.entry_type() != FUEL_ENTRY {
            return None;
        }
        Self::from_payload(&record.decode_payload().ok()?)
    }
}

/// Balance effect of one record on its chain owner.
fn record_delta(owner: &AgentId, record: &Record) -> i64 {
    match record.entry_type() {
        SEED_ENTRY => record
            .decode_payload()
            .ok()
            .and_then(|p| p.int("amount"))
            .unwrap_or(0),
        FUEL_ENTRY => match FuelTransaction::from_record(record) {
            Some(tx) if tx.body.receiver == *owner => tx.body.amount,
            Some(tx) if tx.body.sender == *owner => -tx.body.amount,
            _ => 0,
        },
        _ => 0,
    }
}

/// Balance of a chain that is already known to be valid.
pub fn balance_unchecked(chain: &SourceChain) -> i64 {
    let owner = chain.agent_id();
    chain
        .records()
        .iter()
        .map(|r| record_delta(&owner, r))
        .sum()
}

pub fn balance(chain: &SourceChain) -> Result<i64, FuelError> {
    match chain.verify() {
        VerificationReport::Ok => Ok(balance_unchecked(chain)),
        VerificationReport::Failed { index, .. } => Err(FuelError::InvalidChain(index)),
    }
}

/// Entry hash of the owner's latest fuel-related entry, or zero.
pub fn last_fuel_ref(chain: &SourceChain) -> Digest {
    chain
        .records()
        .iter()
        .rev()
        .find(|r| matches!(r.entry_type(), FUEL_ENTRY | SEED_ENTRY))
        .map(|r| r.header.entry_hash)
        .unwrap_or(Digest::ZERO)
}

pub fn seed_grant_payload(amount: i64) -> Payload {
    Payload::new().with("amount", Value::Int(amount))
}

pub fn create_fuel_tx(
    sender_chain: &SourceChain,
    receiver: AgentId,
    amount: i64,
    clock: u64,
) -> Result<PendingFuelTx, FuelError> {
    if amount <= 0 {
        return Err(FuelError::NonPositiveAmount);
    }
    let sender = sender_chain.agent_id();
    if sender == receiver {
        return Err(FuelError::SelfPayment);
    }
    let balance = balance_unchecked(sender_chain);
    let credit_limit = sender_chain.dna().credit_limit();
    if balance - amount < -credit_limit {
        return Err(FuelError::InsufficientCredit {
            balance,
            amount,
            credit_limit,
        });
    }
    let body = FuelBody {
        sender,
        receiver,
        amount,
        sender_prior_balance: balance,
        sender_prev_tx: last_fuel_ref(sender_chain),
        timestamp: clock,
    };
    let sender_sig = sign(sender_chain.owner(), &body.bytes());
    Ok(PendingFuelTx { body, sender_sig })
}

pub fn countersign(
    receiver: &KeyPair,
    pending: &PendingFuelTx,
) -> Result<FuelTransaction, FuelError> {
    if !pending.sender_sig_valid() || pending.body.receiver != receiver.public() {
        return Err(FuelError::BadSignature);
    }
    Ok(FuelTransaction {
        tx_id: pending.tx_id(),
        body: pending.body.clone(),
        sender_sig: pending.sender_sig,
        receiver_sig: sign(receiver, &pending.body.bytes()),
    })
}

/// Receiver side of a transfer: checks the channel, countersigns, appends
/// the same transaction to both chains and gossips the news claim so that
/// `witnesses` distinct non-sender agents (receiver included) hold it.
pub fn accept_fuel_tx<R: Rng>(
    receiver_chain: &mut SourceChain,
    sender_chain: &mut SourceChain,
    pending: &PendingFuelTx,
    net: &mut Network,
    witnesses: usize,
    rng: &mut R,
) -> Result<FuelTransaction, FuelError> {
    let receiver = receiver_chain.agent_id();
    let sender = pending.body.sender;
    if sender_chain.agent_id() != sender {
        return Err(FuelError::BadSignature);
    }
    if !pending.sender_sig_valid() {
        return Err(FuelError::BadSignature);
    }
    if sender_chain.dna_hash() != receiver_chain.dna_hash()
        || sender_chain.dna_hash() != net.network_id()
    {
        return Err(FuelError::Unauthenticated(
            "agents belong to different networks",
        ));
    }
    if !net.market().contains(&net.network_id()) {
        return Err(FuelError::Unauthenticated("application not registered"));
    }
    if net.blacklisted_by(&receiver, &sender) {
        return Err(FuelError::Unauthenticated("sender is blacklisted"));
    }
    let balance = balance_unchecked(sender_chain);
    let credit_limit = sender_chain.dna().credit_limit();
    if pending.body.sender_prior_balance != balance || balance - pending.body.amount < -credit_limit
    {
        return Err(FuelError::InsufficientCredit {
            balance,
            amount: pending.body.amount,
            credit_limit,
        });
    }
    let tx = countersign(receiver_chain.owner(), pending)?;
    let clock = pending
        .body
        .timestamp
        .max(receiver_chain.last_timestamp())
        .max(sender_chain.last_timestamp());
    let payload = tx.to_payload();
    sender_chain.append_payload(FUEL_ENTRY, &payload, clock)?;
    receiver_chain.append_payload(FUEL_ENTRY, &payload, clock)?;

    // Receiver keeps its own copy; the remaining witnesses are split between
    // the two endpoints.
    let claim = NewsClaim { tx: tx.clone() };
    net.record_news(&receiver, &claim);
    let mut pool: Vec<AgentId> = net
        .members()
        .filter(|a| *a != sender && *a != receiver)
        .collect();
    pool.shuffle(rng);
    pool.truncate(witnesses.saturating_sub(1));
    let half = pool.len().div_ceil(2);
    let (from_sender, from_receiver) = pool.split_at(half);
    net.send_news(&sender, from_sender, &claim);
    net.send_news(&receiver, from_receiver, &claim);
    Ok(tx)
}

/// A gossiped statement that `tx` spent the sender's `sender_prev_tx`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NewsClaim {
    pub tx: FuelTransaction,
}

impl NewsClaim {
    pub fn key(&self) -> (AgentId, Digest) {
        (self.tx.body.sender, self.tx.body.sender_prev_tx)
    }

    pub fn is_authentic(&self) -> bool {
        self.tx.signatures_valid()
    }
}

/// A witness's log: which transactions spent each (sender, prev_tx) slot,
/// with the sender-signed bodies kept as evidence.
#[derive(Debug, Clone, Default)]
pub struct NewsLog {
    spends: BTreeMap<(AgentId, Digest), Vec<Digest>>,
    claims: BTreeMap<Digest, PendingFuelTx>,
}

impl NewsLog {
    /// Returns the conflicting earlier tx id if this claim reuses a slot.
    pub fn record(&mut self, claim: &NewsClaim) -> Option<Digest> {
        self.record_pending(&PendingFuelTx {
            body: claim.tx.body.clone(),
            sender_sig: claim.tx.sender_sig,
        })
    }

    pub fn record_pending(&mut self, p: &PendingFuelTx) -> Option<Digest> {
        let id = p.tx_id();
        let ids = self
            .spends
            .entry((p.body.sender, p.body.sender_prev_tx))
            .or_default();
        if ids.contains(&id) {
            return None;
        }
        let conflict = ids.first().copied();
        ids.push(id);
        self.claims.insert(id, p.clone());
        conflict
    }

    pub fn spent_by(&self, sender: &AgentId, prev: &Digest) -> &[Digest] {
        self.spends
            .get(&(*sender, *prev))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn pending(&self, id: &Digest) -> Option<&PendingFuelTx> {
        self.claims.get(id)
    }

    pub fn len(&self) -> usize {
        self.spends.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spends.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FuelVerdict {
    pub ok: bool,
    /// (earlier witnessed tx, candidate tx)
    pub conflict: Option<(Digest, Digest)>,
}

/// Checks a candidate against the logs of the queried witnesses.
pub fn audit_double_spend<'a>(
    candidate: &PendingFuelTx,
    witnesses: impl IntoIterator<Item = &'a NewsLog>,
) -> FuelVerdict {
    let id = candidate.tx_id();
    for log in witnesses {
        if let Some(prior) = log
            .spent_by(&candidate.body.sender, &candidate.body.sender_prev_tx)
            .iter()
            .find(|t| **t != id)
        {
            return FuelVerdict {
                ok: false,
                conflict: Some((*prior, id)),
            };
        }
    }
    FuelVerdict {
        ok: true,
        conflict: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::happ::healthcare_dna;

    fn chain(seed: u8, grant: Option<i64>) -> SourceChain {
        let mut c =
            SourceChain::init(healthcare_dna(), KeyPair::from_seed(&[seed; 32]), None, 0).unwrap();
        if let Some(amount) = grant {
            c.append_payload(SEED_ENTRY, &seed_grant_payload(amount), 0)
                .unwrap();
        }
        c
    }

    #[test]
    fn fresh_balance_is_zero() {
        assert_eq!(balance(&chain(1, None)).unwrap(), 0);
    }

    #[test]
    fn five_credit_pending() {
        let a = chain(1, Some(5));
        let x = chain(2, None);
        let p = create_fuel_tx(&a, x.agent_id(), 5, 1).unwrap();
        assert_eq!(p.body.sender_prior_balance, 5);
        assert_eq!(p.body.sender_prev_tx, a.records()[2].header.entry_hash);
        assert!(p.sender_sig_valid());
    }

    #[test]
    fn create_errors() {
        let a = chain(1, Some(5));
        let x = chain(2, None);
        assert_eq!(
            create_fuel_tx(&a, x.agent_id(), 6, 1),
            Err(FuelError::InsufficientCredit {
                balance: 5,
                amount: 6,
                credit_limit: 0
            })
        );
        assert_eq!(
            create_fuel_tx(&a, x.agent_id(), 0, 1),
            Err(FuelError::NonPositiveAmount)
        );
        assert_eq!(
            create_fuel_tx(&a, a.agent_id(), 1, 1),
            Err(FuelError::SelfPayment)
        );
    }

    #[test]
    fn tampered_amount_breaks_signature() {
        let a = chain(1, Some(5));
        let x = chain(2, None);
        let mut p = create_fuel_tx(&a, x.agent_id(), 2, 1).unwrap();
        p.body.amount = 3;
        assert_eq!(countersign(x.owner(), &p), Err(FuelError::BadSignature));
    }

    #[test]
    fn payload_round_trip() {
        let a = chain(1, Some(5));
        let x = chain(2, None);
        let p = create_fuel_tx(&a, x.agent_id(), 2, 1).unwrap();
        let tx = countersign(x.owner(), &p).unwrap();
        assert!(tx.signatures_valid());
        assert_eq!(FuelTransaction::from_payload(&tx.to_payload()), Some(tx));
    }

    #[test]
    fn audit_finds_reused_slot() {
        let a = chain(1, Some(5));
        let x = chain(2, None);
        let y = chain(3, None);
        let to_x =
            countersign(x.owner(), &create_fuel_tx(&a, x.agent_id(), 5, 1).unwrap()).unwrap();
        let to_y = create_fuel_tx(&a, y.agent_id(), 5, 2).unwrap();
        let mut witness = NewsLog::default();
        assert_eq!(witness.record(&NewsClaim { tx: to_x.clone() }), None);
        let empty = NewsLog::default();
        assert!(audit_double_spend(&to_y, [&empty]).ok);
        let v = audit_double_spend(&to_y, [&empty, &witness]);
        assert_eq!(v.conflict, Some((to_x.tx_id, to_y.tx_id())));
        // the original transaction is not a conflict with itself
        let same = PendingFuelTx {
            body: to_x.body.clone(),
            sender_sig: to_x.sender_sig,
        };
        assert!(audit_double_spend(&same, [&witness]).ok);
    }
}
