//! Sharded DHT for one application network, plus gossip, news claims,
//! audits and the per-peer experience matrices.
//!
//! Every message travels inside a signed [`GossipMessage`] envelope through
//! [`Network::deliver`], which owns the simulated wire: liveness, blacklist
//! exclusion, rate limiting and optional in-flight tampering all happen
//! there. All state lives in ordered maps so iteration order, and therefore
//! every run, is deterministic.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::chain::{GenesisRecord, Record, SourceChain, GENESIS_ENTRY};
use crate::crypto::{hash_bytes, sign, verify, AgentId, Digest, KeyPair, Signature};
use crate::dna::{dna_hash, DnaDocument};
use crate::encoding::{canonical_decode, Encoder};
use crate::fuel::{audit_double_spend, FuelVerdict, NewsClaim, NewsLog, PendingFuelTx};
use crate::happ::GRANT_ENTRY;
use crate::reputation::{ExperienceMatrix, Observation, ReputationParams};
use crate::rules::RuleContext;
use crate::validation::{authenticate_channel_in, Marketplace, Reason, Verdict};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DhtError {
    #[error("record belongs to network {record}, not {network}")]
    ForeignNetwork { record: Digest, network: Digest },
    #[error("agent {0:?} is not a member of this network")]
    NotMember(AgentId),
    #[error("record is not on the author's local chain")]
    NotAppended,
    #[error("system entries are not published")]
    SystemEntry,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct DhtParams {
    /// Target number of holders per published record.
    pub redundancy: usize,
    /// Gossip contacts per online agent per round.
    pub fanout: usize,
    /// Messages one sender may deliver to one receiver per tick.
    pub rate_limit: u32,
    pub reputation: ReputationParams,
}

impl Default for DhtParams {
    fn default() -> Self {
        DhtParams {
            redundancy: 4,
            fanout: 2,
            rate_limit: 20,
            reputation: ReputationParams::default(),
        }
    }
}

/// The XOR-nearest `r` agents to `key`, by the hash of each public key.
pub fn neighborhood(network: &[AgentId], key: &Digest, r: usize) -> Vec<AgentId> {
    let mut ranked: Vec<(Digest, AgentId)> = network
        .iter()
        .map(|a| (key.xor(&a.location()), *a))
        .collect();
    ranked.sort();
    ranked.dedup_by_key(|(_, a)| *a);
    ranked.into_iter().take(r).map(|(_, a)| a).collect()
}

/// A published record together with the author's header lineage, which
/// lets validators check the hash links without seeing private payloads.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bundle {
    pub record: Record,
    pub lineage: Vec<crate::chain::EntryHeader>,
    pub genesis: Record,
}

impl Bundle {
    pub fn from_chain(chain: &SourceChain, seq: u64) -> Option<Bundle> {
        let records = chain.records();
        let seq = seq as usize;
        if seq < 2 || seq >= records.len() {
            return None;
        }
        Some(Bundle {
            record: records[seq].clone(),
            lineage: records[..seq].iter().map(|r| r.header.clone()).collect(),
            genesis: records[1].clone(),
        })
    }

    pub fn key(&self) -> Digest {
        self.record.header_hash()
    }

    pub fn author(&self) -> AgentId {
        self.record.header.author
    }

    fn encode_to(&self, enc: &mut Encoder) {
        enc.item(&self.record)
            .list(&self.lineage, |e, h| {
                e.item(h);
            })
            .item(&self.genesis);
    }

    /// True when every header in the bundle is genuinely signed by its
    /// author and the payload matches its entry hash, so any remaining
    /// defect is the author's own doing.
    pub fn attributable(&self) -> bool {
        let author = self.author();
        self.record.header.signature_valid()
            && self.record.header.entry_hash == hash_bytes(&self.record.payload)
            && self
                .lineage
                .iter()
                .all(|h| h.author == author && h.signature_valid())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WarrantEvidence {
    InvalidBundle(Bundle),
    ConflictingSpends(PendingFuelTx, PendingFuelTx),
}

/// Proof, checkable by anyone, that `offender` broke the rules.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Warrant {
    pub offender: AgentId,
    pub evidence: WarrantEvidence,
}

impl Warrant {
    fn encode_to(&self, enc: &mut Encoder) {
        enc.agent(&self.offender);
        match &self.evidence {
            WarrantEvidence::InvalidBundle(b) => {
                enc.u8(0);
                b.encode_to(enc);
            }
            WarrantEvidence::ConflictingSpends(a, b) => {
                enc.u8(1);
                for p in [a, b] {
                    enc.item(&p.body).signature(&p.sender_sig);
                }
            }
        }
    }

    pub fn id(&self) -> Digest {
        let mut enc = Encoder::new();
        self.encode_to(&mut enc);
        hash_bytes(&enc.finish())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum MessageKind {
    Publish,
    Backup,
    News,
    AuditRequest,
    AuditReply,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MessagePayload {
    Publish(Bundle),
    /// One gossip contact: records the receiver should hold, plus warrants.
    Backup {
        bundles: Vec<Bundle>,
        warrants: Vec<Warrant>,
    },
    News(NewsClaim),
    AuditRequest {
        sender: AgentId,
        prev_tx: Digest,
    },
    AuditReply {
        spends: Vec<PendingFuelTx>,
    },
}

impl MessagePayload {
    pub fn kind(&self) -> MessageKind {
        match self {
            MessagePayload::Publish(_) => MessageKind::Publish,
            MessagePayload::Backup { .. } => MessageKind::Backup,
            MessagePayload::News(_) => MessageKind::News,
            MessagePayload::AuditRequest { .. } => MessageKind::AuditRequest,
            MessagePayload::AuditReply { .. } => MessageKind::AuditReply,
        }
    }

    pub fn digest(&self) -> Digest {
        let mut enc = Encoder::new();
        match self {
            MessagePayload::Publish(b) => {
                enc.u8(0);
                b.encode_to(&mut enc);
            }
            MessagePayload::Backup { bundles, warrants } => {
                enc.u8(1);
                enc.u32(bundles.len() as u32);
                bundles.iter().for_each(|b| b.encode_to(&mut enc));
                enc.u32(warrants.len() as u32);
                warrants.iter().for_each(|w| w.encode_to(&mut enc));
            }
            MessagePayload::News(c) => {
                enc.u8(2).item(&c.tx.to_payload());
            }
            MessagePayload::AuditRequest { sender, prev_tx } => {
                enc.u8(3).agent(sender).digest(prev_tx);
            }
            MessagePayload::AuditReply { spends } => {
                enc.u8(4).list(spends, |e, p| {
                    e.item(&p.body).signature(&p.sender_sig);
                });
            }
        }
        hash_bytes(&enc.finish())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GossipMessage {
    pub kind: MessageKind,
    pub payload: MessagePayload,
    pub sender: AgentId,
    pub signature: Signature,
}

impl GossipMessage {
    fn signing_bytes(kind: MessageKind, sender: &AgentId, payload_digest: &Digest) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.u8(kind as u8).agent(sender).digest(payload_digest);
        enc.finish()
    }

    pub fn new(keys: &KeyPair, payload: MessagePayload) -> Self {
        let kind = payload.kind();
        let sender = keys.public();
        let signature = sign(keys, &Self::signing_bytes(kind, &sender, &payload.digest()));
        GossipMessage {
            kind,
            payload,
            sender,
            signature,
        }
    }

    pub fn verify(&self) -> bool {
        self.kind == self.payload.kind()
            && verify(
                &self.sender,
                &Self::signing_bytes(self.kind, &self.sender, &self.payload.digest()),
                &self.signature,
            )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Receipt {
    pub holder: AgentId,
    pub key: Digest,
}

/// In-flight tampering by an adversary that controls the wire.
#[derive(Debug, Clone, Default)]
pub struct WireTap {
    /// Publish messages still to be mutated.
    pub remaining: u32,
    pub attempts: u64,
    pub detected: u64,
}

/// Cumulative counters; the simulator diffs them per tick.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct NetCounters {
    pub messages: u64,
    pub validations: u64,
    pub validation_cost: u64,
    pub stores: u64,
    pub backups: u64,
    pub rejections: u64,
    pub blacklist_events: u64,
}

#[derive(Debug, Clone)]
struct Peer {
    keys: KeyPair,
    id: AgentId,
    online: bool,
    shard: BTreeMap<Digest, Bundle>,
    experience: ExperienceMatrix,
    news: NewsLog,
    warrants: BTreeMap<Digest, Warrant>,
    verified_headers: BTreeSet<Digest>,
    inbox: BTreeMap<AgentId, u32>,
}

enum Delivery {
    Dropped,
    Rejected,
    Accepted(Option<Box<MessagePayload>>),
}

/// One application network: its DNA, marketplace view and member peers.
#[derive(Debug, Clone)]
pub struct Network {
    id: Digest,
    dna: DnaDocument,
    market: Marketplace,
    params: DhtParams,
    peers: Vec<Peer>,
    index: BTreeMap<AgentId, usize>,
    counters: NetCounters,
    tap: Option<WireTap>,
    unchecked: Vec<(usize, Digest)>,
}

/// Grants are resolved against every DHT shard: whether a grant was
/// published does not depend on who is online right now.
impl RuleContext for Network {
    fn grant_exists(&self, token: &Digest) -> bool {
        self.peers.iter().any(|p| {
            p.shard
                .get(token)
                .is_some_and(|b| b.record.entry_type() == GRANT_ENTRY)
        })
    }
}

impl Network {
    pub fn new(dna: DnaDocument, market: Marketplace, params: DhtParams) -> Self {
        Network {
            id: dna_hash(&dna),
            dna,
            market,
            params,
            peers: Vec::new(),
            index: BTreeMap::new(),
            counters: NetCounters::default(),
            tap: None,
            unchecked: Vec::new(),
        }
    }

    pub fn network_id(&self) -> Digest {
        self.id
    }

    pub fn dna(&self) -> &DnaDocument {
        &self.dna
    }

    pub fn market(&self) -> &Marketplace {
        &self.market
    }

    pub fn params(&self) -> &DhtParams {
        &self.params
    }

    pub fn counters(&self) -> NetCounters {
        self.counters
    }

    pub fn add_member(&mut self, keys: KeyPair) {
        let id = keys.public();
        if self.index.contains_key(&id) {
            return;
        }
        self.index.insert(id, self.peers.len());
        self.peers.push(Peer {
            keys,
            id,
            online: true,
            shard: BTreeMap::new(),
            experience: ExperienceMatrix::new(self.params.reputation),
            news: NewsLog::default(),
            warrants: BTreeMap::new(),
            verified_headers: BTreeSet::new(),
            inbox: BTreeMap::new(),
        });
    }

    pub fn is_member(&self, a: &AgentId) -> bool {
        self.index.contains_key(a)
    }

    pub fn members(&self) -> impl Iterator<Item = AgentId> + '_ {
        self.peers.iter().map(|p| p.id)
    }

    pub fn len(&self) -> usize {
        self.peers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.peers.is_empty()
    }

    fn idx(&self, a: &AgentId) -> Option<usize> {
        self.index.get(a).copied()
    }

    pub fn set_online(&mut self, a: &AgentId, online: bool) {
        if let Some(i) = self.idx(a) {
            self.peers[i].online = online;
        }
    }

    pub fn is_online(&self, a: &AgentId) -> bool {
        self.idx(a).is_some_and(|i| self.peers[i].online)
    }

    pub fn online_members(&self) -> Vec<AgentId> {
        self.peers
            .iter()
            .filter(|p| p.online)
            .map(|p| p.id)
            .collect()
    }

    pub fn experience(&self, a: &AgentId) -> Option<&ExperienceMatrix> {
        self.idx(a).map(|i| &self.peers[i].experience)
    }

    pub fn blacklisted_by(&self, observer: &AgentId, peer: &AgentId) -> bool {
        self.idx(observer)
            .is_some_and(|i| self.peers[i].experience.is_blacklisted(peer))
    }

    /// Applies an observation at `observer`, counting new blacklistings.
    pub fn observe(&mut self, observer: &AgentId, peer: &AgentId, obs: Observation) {
        if let Some(i) = self.idx(observer) {
            if self.peers[i].experience.update(*peer, obs) {
                self.counters.blacklist_events += 1;
            }
        }
    }

    pub fn news_log(&self, a: &AgentId) -> Option<&NewsLog> {
        self.idx(a).map(|i| &self.peers[i].news)
    }

    pub fn shard_len(&self, a: &AgentId) -> usize {
        self.idx(a).map_or(0, |i| self.peers[i].shard.len())
    }

    pub fn shard(&self, a: &AgentId) -> impl Iterator<Item = &Bundle> {
        self.idx(a)
            .into_iter()
            .flat_map(move |i| self.peers[i].shard.values())
    }

    pub fn holders(&self, key: &Digest) -> Vec<AgentId> {
        self.peers
            .iter()
            .filter(|p| p.shard.contains_key(key))
            .map(|p| p.id)
            .collect()
    }

    pub fn online_holders(&self, key: &Digest) -> usize {
        self.peers
            .iter()
            .filter(|p| p.online && p.shard.contains_key(key))
            .count()
    }

    pub fn known_warrants(&self, a: &AgentId) -> usize {
        self.idx(a).map_or(0, |i| self.peers[i].warrants.len())
    }

    pub fn install_tap(&mut self, publishes: u32) {
        self.tap = Some(WireTap {
            remaining: publishes,
            ..WireTap::default()
        });
    }

    pub fn take_tap(&mut self) -> Option<WireTap> {
        self.tap.take()
    }

    /// Start of a tick: per-sender rate counters reset.
    pub fn begin_tick(&mut self) {
        for p in &mut self.peers {
            p.inbox.clear();
        }
    }

    /// A DHT lookup served by any online holder.
    pub fn fetch(&self, _requester: &AgentId, key: &Digest) -> Option<Record> {
        self.peers
            .iter()
            .filter(|p| p.online)
            .find_map(|p| p.shard.get(key))
            .map(|b| b.record.clone())
    }

    /// Any online holder's copy of the bundle stored under `key`.
    pub fn fetch_bundle(&self, key: &Digest) -> Option<&Bundle> {
        self.peers
            .iter()
            .filter(|p| p.online)
            .find_map(|p| p.shard.get(key))
    }

    /// Published records by `author`, as seen by online holders.
    pub fn published_by(&self, author: &AgentId) -> Vec<Record> {
        let mut seen = BTreeMap::new();
        for p in self.peers.iter().filter(|p| p.online) {
            for (k, b) in &p.shard {
                if b.author() == *author {
                    seen.entry(*k).or_insert_with(|| b.record.clone());
                }
            }
        }
        let mut out: Vec<Record> = seen.into_values().collect();
        out.sort_by_key(|r| r.header.seq);
        out
    }

    /// Full structural and rule validation of a bundle under this network's DNA.
    pub fn check_bundle(&self, bundle: &Bundle) -> Verdict {
        self.check_bundle_cached(bundle, None)
    }

    fn check_bundle_cached(&self, bundle: &Bundle, cache: Option<&BTreeSet<Digest>>) -> Verdict {
        let record = &bundle.record;
        let author = bundle.author();
        let seq = record.header.seq as usize;
        if seq < 2 || bundle.lineage.len() != seq {
            return Verdict::invalid(Reason::BadLink);
        }
        if bundle.lineage[0].entry_hash != self.id {
            return Verdict::invalid(Reason::UnregisteredApp);
        }
        let genesis_ok = bundle.genesis.header == bundle.lineage[1]
            && bundle.genesis.entry_type() == GENESIS_ENTRY
            && bundle.genesis.header.entry_hash == hash_bytes(&bundle.genesis.payload)
            && canonical_decode::<GenesisRecord>(&bundle.genesis.payload)
                .is_ok_and(|g| g.dna_hash == self.id && g.agent_id == author);
        if !genesis_ok {
            return Verdict::invalid(Reason::BadLink);
        }
        if !record.header.signature_valid() {
            return Verdict::invalid(Reason::BadSignature);
        }
        let mut prev_hash = Digest::ZERO;
        let mut prev_ts = 0;
        for (i, h) in bundle
            .lineage
            .iter()
            .chain(std::iter::once(&record.header))
            .enumerate()
        {
            let hash = h.hash();
            let known = cache.is_some_and(|c| c.contains(&hash));
            if h.seq != i as u64
                || h.author != author
                || h.prev_header_hash != prev_hash
                || h.timestamp < prev_ts
                || (!known && i < seq && !h.signature_valid())
            {
                return Verdict::invalid(Reason::BadLink);
            }
            prev_hash = hash;
            prev_ts = h.timestamp;
        }
        authenticate_channel_in(record, &self.dna, &self.market, self)
    }

    fn cost_of(&self, bundle: &Bundle) -> u64 {
        self.dna
            .entry_def(bundle.record.entry_type())
            .map_or(1, |d| d.validation_cost_class.latency_ticks())
    }

    /// Validation by peer `i`; successful lineages are remembered.
    fn validate_at(&mut self, i: usize, bundle: &Bundle) -> Verdict {
        self.counters.validations += 1;
        self.counters.validation_cost += self.cost_of(bundle);
        let verdict = self.check_bundle_cached(bundle, Some(&self.peers[i].verified_headers));
        if verdict.valid {
            let cache = &mut self.peers[i].verified_headers;
            cache.extend(bundle.lineage.iter().map(|h| h.hash()));
        }
        verdict
    }

    fn store_at(&mut self, i: usize, bundle: Bundle) -> bool {
        let key = bundle.key();
        let shard = &mut self.peers[i].shard;
        if shard.contains_key(&key) {
            return false;
        }
        shard.insert(key, bundle);
        self.unchecked.push((i, key));
        self.counters.stores += 1;
        true
    }

    fn punish_with_warrant(&mut self, i: usize, warrant: Warrant) {
        let id = warrant.id();
        let observer = self.peers[i].id;
        let offender = warrant.offender;
        if self.peers[i].warrants.insert(id, warrant).is_none() {
            self.observe(&observer, &offender, Observation::InvalidData);
        }
    }

    /// Handles a validated-and-authenticated envelope at peer `i`.
    fn handle(&mut self, i: usize, msg: &GossipMessage) -> Delivery {
        let from = msg.sender;
        match &msg.payload {
            MessagePayload::Publish(bundle) => {
                let verdict = self.validate_at(i, bundle);
                let author = bundle.author();
                if verdict.valid {
                    self.store_at(i, bundle.clone());
                    let me = self.peers[i].id;
                    self.observe(&me, &author, Observation::ValidOk);
                    Delivery::Accepted(None)
                } else {
                    self.counters.rejections += 1;
                    if bundle.attributable() {
                        self.punish_with_warrant(
                            i,
                            Warrant {
                                offender: author,
                                evidence: WarrantEvidence::InvalidBundle(bundle.clone()),
                            },
                        );
                    }
                    Delivery::Rejected
                }
            }
            MessagePayload::Backup { bundles, warrants } => {
                for bundle in bundles {
                    if self.peers[i].shard.contains_key(&bundle.key()) {
                        continue;
                    }
                    if self.validate_at(i, bundle).valid {
                        if self.store_at(i, bundle.clone()) {
                            self.counters.backups += 1;
                        }
                    } else {
                        self.counters.rejections += 1;
                        let me = self.peers[i].id;
                        self.observe(&me, &from, Observation::InvalidData);
                    }
                }
                for w in warrants {
                    self.consider_warrant(i, &from, w);
                }
                Delivery::Accepted(None)
            }
            MessagePayload::News(claim) => {
                if !claim.is_authentic() {
                    self.counters.rejections += 1;
                    return Delivery::Rejected;
                }
                if let Some(prior) = self.peers[i].news.record(claim) {
                    // The witness itself now holds two spends of one slot.
                    if let Some(earlier) = self.peers[i].news.pending(&prior).cloned() {
                        let later = PendingFuelTx {
                            body: claim.tx.body.clone(),
                            sender_sig: claim.tx.sender_sig,
                        };
                        self.punish_double_spend(i, earlier, later);
                    }
                }
                Delivery::Accepted(None)
            }
            MessagePayload::AuditRequest { sender, prev_tx } => {
                let log = &self.peers[i].news;
                let spends = log
                    .spent_by(sender, prev_tx)
                    .iter()
                    .filter_map(|id| log.pending(id).cloned())
                    .collect();
                Delivery::Accepted(Some(Box::new(MessagePayload::AuditReply { spends })))
            }
            MessagePayload::AuditReply { .. } => Delivery::Accepted(None),
        }
    }

    fn punish_double_spend(&mut self, i: usize, earlier: PendingFuelTx, later: PendingFuelTx) {
        let offender = later.body.sender;
        if !earlier.sender_sig_valid() || !later.sender_sig_valid() {
            return;
        }
        let warrant = Warrant {
            offender,
            evidence: WarrantEvidence::ConflictingSpends(earlier, later),
        };
        let observer = self.peers[i].id;
        if self.peers[i]
            .warrants
            .insert(warrant.id(), warrant)
            .is_none()
        {
            self.observe(&observer, &offender, Observation::DoubleSpend);
        }
    }

    fn warrant_holds(&self, w: &Warrant) -> bool {
        match &w.evidence {
            WarrantEvidence::InvalidBundle(b) => {
                b.author() == w.offender && b.attributable() && !self.check_bundle(b).valid
            }
            WarrantEvidence::ConflictingSpends(a, b) => {
                a.body.sender == w.offender
                    && b.body.sender == w.offender
                    && a.body.sender_prev_tx == b.body.sender_prev_tx
                    && a.tx_id() != b.tx_id()
                    && a.sender_sig_valid()
                    && b.sender_sig_valid()
            }
        }
    }

    fn consider_warrant(&mut self, i: usize, from: &AgentId, w: &Warrant) {
        let id = w.id();
        if self.peers[i].warrants.contains_key(&id) {
            return;
        }
        let me = self.peers[i].id;
        if self.warrant_holds(w) {
            let obs = match w.evidence {
                WarrantEvidence::InvalidBundle(_) => Observation::InvalidData,
                WarrantEvidence::ConflictingSpends(..) => Observation::DoubleSpend,
            };
            self.peers[i].warrants.insert(id, w.clone());
            self.observe(&me, &w.offender, obs);
        } else {
            self.observe(&me, from, Observation::InvalidData);
        }
    }

    /// The simulated wire: liveness, exclusion, rate limit, tampering and
    /// envelope verification, then dispatch.
    fn deliver(&mut self, msg: &GossipMessage, to: &AgentId) -> Delivery {
        self.counters.messages += 1;
        let Some(i) = self.idx(to) else {
            return Delivery::Dropped;
        };
        let tampered;
        let mut msg = msg;
        if let (Some(tap), MessagePayload::Publish(bundle)) = (self.tap.as_mut(), &msg.payload) {
            if tap.remaining > 0 && msg.sender != *to {
                tap.remaining -= 1;
                tap.attempts += 1;
                let mut copy = msg.clone();
                let mut b = bundle.clone();
                match b.record.payload.last_mut() {
                    Some(byte) => *byte ^= 0x01,
                    None => b.record.payload.push(1),
                }
                copy.payload = MessagePayload::Publish(b);
                tampered = copy;
                msg = &tampered;
            }
        }
        let peer = &mut self.peers[i];
        if !peer.online {
            return Delivery::Dropped;
        }
        if msg.sender != peer.id {
            if peer.experience.is_blacklisted(&msg.sender) {
                self.counters.rejections += 1;
                return Delivery::Rejected;
            }
            let count = peer.inbox.entry(msg.sender).or_insert(0);
            *count += 1;
            if *count > self.params.rate_limit {
                let over = *count == self.params.rate_limit + 1;
                self.counters.rejections += 1;
                if over {
                    let me = peer.id;
                    self.observe(&me, &msg.sender, Observation::InvalidData);
                }
                return Delivery::Rejected;
            }
        }
        if !msg.verify() {
            self.counters.rejections += 1;
            if let Some(tap) = self.tap.as_mut() {
                tap.detected += 1;
            }
            return Delivery::Rejected;
        }
        self.handle(i, msg)
    }

    fn keys_of(&self, a: &AgentId) -> Option<KeyPair> {
        self.idx(a).map(|i| self.peers[i].keys.clone())
    }

    /// Publishes an already-appended record to its XOR neighborhood of
    /// online peers; each validates with its own DNA copy before storing.
    pub fn publish(
        &mut self,
        author_chain: &SourceChain,
        record: &Record,
    ) -> Result<Vec<Receipt>, DhtError> {
        if author_chain.dna_hash() != self.id {
            return Err(DhtError::ForeignNetwork {
                record: author_chain.dna_hash(),
                network: self.id,
            });
        }
        let author = author_chain.agent_id();
        let keys = self.keys_of(&author).ok_or(DhtError::NotMember(author))?;
        let seq = record.header.seq;
        if seq < 2 {
            return Err(DhtError::SystemEntry);
        }
        if author_chain.get_record(seq).ok() != Some(record) {
            return Err(DhtError::NotAppended);
        }
        let bundle = Bundle::from_chain(author_chain, seq).ok_or(DhtError::NotAppended)?;
        let key = bundle.key();
        let targets = neighborhood(&self.online_members(), &key, self.params.redundancy);
        let msg = GossipMessage::new(&keys, MessagePayload::Publish(bundle));
        let mut receipts = Vec::new();
        for t in targets {
            match self.deliver(&msg, &t) {
                Delivery::Accepted(_) => receipts.push(Receipt { holder: t, key }),
                Delivery::Rejected => {
                    if let Some(i) = self.idx(&author) {
                        self.peers[i]
                            .experience
                            .update_self(Observation::InvalidData);
                    }
                }
                Delivery::Dropped => {}
            }
        }
        if let Some(i) = self.idx(&author) {
            for _ in &receipts {
                self.peers[i].experience.update_self(Observation::ValidOk);
            }
        }
        Ok(receipts)
    }

    /// Stores a news claim directly in `holder`'s own log.
    pub fn record_news(&mut self, holder: &AgentId, claim: &NewsClaim) {
        if let Some(i) = self.idx(holder) {
            self.peers[i].news.record(claim);
        }
    }

    /// One signed news envelope from `from`, delivered to each recipient.
    pub fn send_news(&mut self, from: &AgentId, to: &[AgentId], claim: &NewsClaim) -> usize {
        if to.is_empty() {
            return 0;
        }
        let Some(keys) = self.keys_of(from) else {
            return 0;
        };
        let msg = GossipMessage::new(&keys, MessagePayload::News(claim.clone()));
        to.iter()
            .filter(|t| matches!(self.deliver(&msg, t), Delivery::Accepted(_)))
            .count()
    }

    /// The auditor queries `k` random non-sender members (possibly itself)
    /// for spends of the candidate's previous-transaction slot.
    pub fn audit<R: Rng>(
        &mut self,
        auditor: &AgentId,
        candidate: &PendingFuelTx,
        k: usize,
        rng: &mut R,
    ) -> FuelVerdict {
        let sender = candidate.body.sender;
        let mut pool: Vec<AgentId> = self.members().filter(|a| *a != sender).collect();
        pool.shuffle(rng);
        pool.truncate(k);
        let Some(auditor_keys) = self.keys_of(auditor) else {
            return FuelVerdict {
                ok: true,
                conflict: None,
            };
        };
        let request = GossipMessage::new(
            &auditor_keys,
            MessagePayload::AuditRequest {
                sender,
                prev_tx: candidate.body.sender_prev_tx,
            },
        );
        let mut logs: Vec<NewsLog> = Vec::new();
        for w in pool {
            if w == *auditor {
                if let Some(log) = self.news_log(auditor) {
                    logs.push(log.clone());
                }
                continue;
            }
            let Delivery::Accepted(Some(reply)) = self.deliver(&request, &w) else {
                continue;
            };
            let Some(wkeys) = self.keys_of(&w) else {
                continue;
            };
            let envelope = GossipMessage::new(&wkeys, *reply);
            if let Delivery::Accepted(_) = self.deliver(&envelope, auditor) {
                if let MessagePayload::AuditReply { spends } = &envelope.payload {
                    let mut log = NewsLog::default();
                    for p in spends.iter().filter(|p| p.sender_sig_valid()) {
                        log.record_pending(p);
                    }
                    logs.push(log);
                }
            }
        }
        let verdict = audit_double_spend(candidate, logs.iter());
        if let (Some((earlier, _)), Some(i)) = (verdict.conflict, self.idx(auditor)) {
            let evidence = logs.iter().find_map(|l| l.pending(&earlier)).cloned();
            match evidence {
                Some(e) => self.punish_double_spend(i, e, candidate.clone()),
                None => self.observe(auditor, &sender, Observation::DoubleSpend),
            }
        }
        verdict
    }

    /// Copies of `key` across all shards.
    pub fn shard_entries<'a>(&'a self, key: &'a Digest) -> impl Iterator<Item = &'a Bundle> + 'a {
        self.peers.iter().filter_map(move |p| p.shard.get(key))
    }

    /// A publish envelope from an arbitrary key pair, member or not,
    /// delivered straight onto the wire. Returns whether `to` accepted it.
    pub fn inject_publish(&mut self, keys: &KeyPair, bundle: Bundle, to: &AgentId) -> bool {
        let msg = GossipMessage::new(keys, MessagePayload::Publish(bundle));
        matches!(self.deliver(&msg, to), Delivery::Accepted(_))
    }

    /// Re-validates every record stored since the last call; returns the
    /// number that fail. Shards are append-only, so this covers every
    /// entry exactly once.
    pub fn check_new_stores(&mut self) -> u64 {
        let fresh = std::mem::take(&mut self.unchecked);
        fresh
            .iter()
            .filter(|(i, key)| {
                let b = &self.peers[*i].shard[key];
                *key != b.key() || !self.check_bundle(b).valid
            })
            .count() as u64
    }

    /// Sends `count` junk messages from `from` to `to` within the current tick.
    pub fn flood(&mut self, from: &AgentId, to: &AgentId, count: u32) {
        let Some(keys) = self.keys_of(from) else {
            return;
        };
        let msg = GossipMessage::new(
            &keys,
            MessagePayload::AuditRequest {
                sender: *from,
                prev_tx: Digest::ZERO,
            },
        );
        for _ in 0..count {
            self.deliver(&msg, to);
        }
    }

    /// Online neighborhood of every key held anywhere.
    fn holder_targets(&self) -> BTreeMap<Digest, Vec<usize>> {
        let online = self.online_members();
        let keys: BTreeSet<Digest> = self
            .peers
            .iter()
            .flat_map(|p| p.shard.keys().copied())
            .collect();
        keys.into_iter()
            .map(|k| {
                let idx = neighborhood(&online, &k, self.params.redundancy)
                    .iter()
                    .filter_map(|a| self.idx(a))
                    .collect();
                (k, idx)
            })
            .collect()
    }

    /// One gossip round. Each online agent contacts up to `fanout` peers:
    /// first holder-set members missing records it holds, then uniformly
    /// random online peers. Each contact is one message carrying the
    /// needed backups and unseen warrants. Returns the message count.
    pub fn gossip_round<R: Rng>(&mut self, rng: &mut R) -> usize {
        let targets = self.holder_targets();
        let online: Vec<usize> = (0..self.peers.len())
            .filter(|i| self.peers[*i].online)
            .collect();
        let mut sent = 0;
        for &p in &online {
            if !self.peers[p].online {
                continue;
            }
            let mut needy: BTreeSet<usize> = BTreeSet::new();
            for key in self.peers[p].shard.keys() {
                for &q in &targets[key] {
                    if q != p && !self.peers[q].shard.contains_key(key) {
                        needy.insert(q);
                    }
                }
            }
            let mut contacts: Vec<usize> = needy.into_iter().take(self.params.fanout).collect();
            let mut others: Vec<usize> = online
                .iter()
                .copied()
                .filter(|q| *q != p && !contacts.contains(q))
                .collect();
            others.shuffle(rng);
            let room = self.params.fanout.saturating_sub(contacts.len());
            contacts.extend(others.into_iter().take(room));

            for q in contacts {
                let bundles: Vec<Bundle> = self.peers[p]
                    .shard
                    .iter()
                    .filter(|(k, _)| {
                        targets[*k].contains(&q) && !self.peers[q].shard.contains_key(*k)
                    })
                    .map(|(_, b)| b.clone())
                    .collect();
                let warrants: Vec<Warrant> = self.peers[p]
                    .warrants
                    .iter()
                    .filter(|(id, _)| !self.peers[q].warrants.contains_key(*id))
                    .map(|(_, w)| w.clone())
                    .collect();
                let msg = GossipMessage::new(
                    &self.peers[p].keys,
                    MessagePayload::Backup { bundles, warrants },
                );
                let to = self.peers[q].id;
                self.deliver(&msg, &to);
                sent += 1;
            }
        }
        sent
    }

    /// Every shard entry re-validated under this network's DNA.
    pub fn invalid_stored(&self) -> Vec<(AgentId, Digest)> {
        let mut bad = Vec::new();
        for p in &self.peers {
            for (k, b) in &p.shard {
                if *k != b.key() || !self.check_bundle(b).valid {
                    bad.push((p.id, *k));
                }
            }
        }
        bad
    }

    /// Keys stored anywhere in this network whose author is not a member
    /// or whose DNA entry is not this network's.
    pub fn foreign_records(&self) -> usize {
        self.peers
            .iter()
            .flat_map(|p| p.shard.values())
            .filter(|b| !self.is_member(&b.author()) || b.lineage[0].entry_hash != self.id)
            .count()
    }
}
