//! Full-replication baseline and the complexity comparison.
//!
//! The baseline is a plain hash-linked block list copied to every node:
//! each transaction is broadcast to the other `n - 1` nodes, validated by
//! all `n` and stored by all `n`. Mining difficulty is not modelled; the
//! per-block validation at every node stands in for it. The agent-centric
//! side is measured on the real DHT publish path.

use std::fmt::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::SourceChain;
use crate::crypto::{hash_bytes, sign, verify, Digest, KeyPair, Signature};
use crate::dht::{DhtParams, Network};
use crate::happ::{healthcare_dna, vitals_payload, Metric, VitalsReading, VITALS_ENTRY};
use crate::sim::agent_seed;
use crate::validation::Marketplace;

/// Default application-specific constant of the agent-centric model.
pub const DEFAULT_C: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Blockchain,
    Holochain,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComplexityModel {
    pub kind: ModelKind,
    pub n: u64,
    pub m: u64,
    pub c: f64,
}

impl ComplexityModel {
    pub fn blockchain(n: u64, m: u64) -> Self {
        ComplexityModel {
            kind: ModelKind::Blockchain,
            n,
            m,
            c: 0.0,
        }
    }

    pub fn holochain(n: u64, m: u64, c: f64) -> Self {
        ComplexityModel {
            kind: ModelKind::Holochain,
            n,
            m,
            c,
        }
    }
}

/// `n²·m` for the blockchain, `m·(log2 n + c)` for the agent-centric model.
/// These are model curves, not measured counts.
pub fn eval_model(model: &ComplexityModel) -> f64 {
    let (n, m) = (model.n as f64, model.m as f64);
    match model.kind {
        ModelKind::Blockchain => n * n * m,
        ModelKind::Holochain => m * (n.log2() + model.c),
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BenchError {
    #[error("need at least one node")]
    NoNodes,
    #[error("n = {n} is smaller than the redundancy factor r = {r}")]
    TooFewNodes { n: usize, r: usize },
    #[error("n values must be sorted and distinct")]
    UnsortedSweep,
}

/// Counts from one baseline or agent-centric run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct BenchMetrics {
    pub stores: u64,
    pub messages: u64,
    pub validations: u64,
    /// Records held per node at the end of the run.
    pub per_node_storage: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub index: u64,
    pub prev_hash: Digest,
    pub origin: usize,
    pub tx: Vec<u8>,
    pub signature: Signature,
}

impl Block {
    pub fn hash(&self) -> Digest {
        let mut b = Vec::with_capacity(8 + 32 + 8 + self.tx.len() + 64);
        b.extend_from_slice(&self.index.to_be_bytes());
        b.extend_from_slice(&self.prev_hash.0);
        b.extend_from_slice(&(self.origin as u64).to_be_bytes());
        b.extend_from_slice(&self.tx);
        b.extend_from_slice(self.signature.as_bytes());
        hash_bytes(&b)
    }
}

/// Global block list replicated at every node.
#[derive(Debug, Clone)]
pub struct BaselineChain {
    keys: Vec<KeyPair>,
    replicas: Vec<Vec<Block>>,
    metrics: BenchMetrics,
}

impl BaselineChain {
    pub fn new(n: usize, seed: u64) -> Result<Self, BenchError> {
        if n == 0 {
            return Err(BenchError::NoNodes);
        }
        Ok(BaselineChain {
            keys: (0..n)
                .map(|i| KeyPair::from_seed(&agent_seed(seed, i)))
                .collect(),
            replicas: vec![Vec::new(); n],
            metrics: BenchMetrics::default(),
        })
    }

    pub fn nodes(&self) -> usize {
        self.replicas.len()
    }

    /// Node `origin` creates a block and broadcasts it; every node validates
    /// it against its own replica and appends it.
    pub fn commit(&mut self, origin: usize, tx: Vec<u8>) {
        let tip = self.replicas[origin].last();
        let index = tip.map_or(0, |b| b.index + 1);
        let prev_hash = tip.map_or(Digest::ZERO, Block::hash);
        let signature = sign(&self.keys[origin], &tx);
        let block = Block {
            index,
            prev_hash,
            origin,
            tx,
            signature,
        };
        self.metrics.messages += self.nodes() as u64 - 1;
        for replica in &mut self.replicas {
            let expected_prev = replica.last().map_or(Digest::ZERO, Block::hash);
            let ok = block.prev_hash == expected_prev
                && block.index == replica.len() as u64
                && verify(&self.keys[origin].public(), &block.tx, &block.signature);
            self.metrics.validations += 1;
            assert!(ok, "honest baseline block must validate");
            replica.push(block.clone());
            self.metrics.stores += 1;
        }
    }

    pub fn replica(&self, node: usize) -> &[Block] {
        &self.replicas[node]
    }

    pub fn replicas_identical(&self) -> bool {
        self.replicas.windows(2).all(|w| w[0] == w[1])
    }

    pub fn metrics(&self) -> BenchMetrics {
        BenchMetrics {
            per_node_storage: self.replicas.iter().map(|r| r.len() as u64).collect(),
            ..self.metrics.clone()
        }
    }
}

fn reading(t: u64) -> VitalsReading {
    VitalsReading {
        metric: Metric::Pulse,
        value: 60 + (t % 40) as i64,
        taken_at: t,
    }
}

/// `m` transactions round-robin over `n` nodes, fully replicated.
pub fn run_blockchain_baseline(
    n: usize,
    m: u64,
    seed: u64,
) -> Result<(BaselineChain, BenchMetrics), BenchError> {
    let mut chain = BaselineChain::new(n, seed)?;
    for t in 0..m {
        let tx = crate::encoding::canonical_encode(&vitals_payload(&reading(t)));
        chain.commit(t as usize % n, tx);
    }
    let metrics = chain.metrics();
    Ok((chain, metrics))
}

/// `m` publishes, round-robin over `n` agents, through the DHT. Stores count
/// the two bootstrap records per chain, each local append, and each DHT
/// copy. No gossip rounds run, so with every agent online nothing is
/// re-replicated.
pub fn run_holochain_count(
    n: usize,
    m: u64,
    r: usize,
    seed: u64,
) -> Result<BenchMetrics, BenchError> {
    if n == 0 {
        return Err(BenchError::NoNodes);
    }
    if n < r {
        return Err(BenchError::TooFewNodes { n, r });
    }
    let dna = healthcare_dna();
    let market: Marketplace = [dna.clone()].into_iter().collect();
    let params = DhtParams {
        redundancy: r,
        ..DhtParams::default()
    };
    let mut net = Network::new(dna.clone(), market, params);
    let mut chains: Vec<SourceChain> = (0..n)
        .map(|i| {
            let keys = KeyPair::from_seed(&agent_seed(seed, i));
            net.add_member(keys.clone());
            SourceChain::init(dna.clone(), keys, None, 0).expect("golden DNA is valid")
        })
        .collect();
    for t in 0..m {
        net.begin_tick();
        let chain = &mut chains[t as usize % n];
        let rec = chain
            .append_payload(VITALS_ENTRY, &vitals_payload(&reading(t)), t)
            .expect("vitals entry")
            .clone();
        net.publish(chain, &rec).expect("member publishes");
    }
    let c = net.counters();
    let local: u64 = chains.iter().map(|c| c.len() as u64).sum();
    Ok(BenchMetrics {
        stores: local + c.stores,
        messages: c.messages,
        validations: c.validations,
        per_node_storage: chains
            .iter()
            .map(|ch| (ch.len() + net.shard_len(&ch.agent_id())) as u64)
            .collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub n: usize,
    pub m: u64,
    pub r: usize,
    pub bc_stores: u64,
    pub bc_msgs: u64,
    pub hc_stores: u64,
    pub hc_msgs: u64,
    pub omega_bc: f64,
    pub omega_hc: f64,
}

impl ComparisonRow {
    pub fn message_ratio(&self) -> f64 {
        self.bc_msgs as f64 / self.hc_msgs.max(1) as f64
    }
}

pub const COMPARISON_COLUMNS: &str = "n,m,r,bc_stores,bc_msgs,hc_stores,hc_msgs,omega_bc,omega_hc";

pub const DEFAULT_SWEEP: [usize; 6] = [8, 16, 32, 64, 128, 256];

/// Baseline and agent-centric counts, plus model curves, per sweep point.
pub fn compare_sweep(
    n_values: &[usize],
    m: u64,
    r: usize,
    seed: u64,
) -> Result<Vec<ComparisonRow>, BenchError> {
    if n_values.windows(2).any(|w| w[0] >= w[1]) {
        return Err(BenchError::UnsortedSweep);
    }
    n_values
        .iter()
        .map(|&n| {
            let hc = run_holochain_count(n, m, r, seed)?;
            let (_, bc) = run_blockchain_baseline(n, m, seed)?;
            Ok(ComparisonRow {
                n,
                m,
                r,
                bc_stores: bc.stores,
                bc_msgs: bc.messages,
                hc_stores: hc.stores,
                hc_msgs: hc.messages,
                omega_bc: eval_model(&ComplexityModel::blockchain(n as u64, m)),
                omega_hc: eval_model(&ComplexityModel::holochain(n as u64, m, DEFAULT_C)),
            })
        })
        .collect()
}

/// True iff the baseline/agent-centric message ratio strictly increases.
pub fn monotone_advantage(rows: &[ComparisonRow]) -> bool {
    rows.windows(2)
        .all(|w| w[1].message_ratio() > w[0].message_ratio())
}

pub fn comparison_csv(rows: &[ComparisonRow]) -> String {
    let mut out = String::from(COMPARISON_COLUMNS);
    out.push('\n');
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.n, r.m, r.r, r.bc_stores, r.bc_msgs, r.hc_stores, r.hc_msgs, r.omega_bc, r.omega_hc
        )
        .expect("write to string");
    }
    out
}
