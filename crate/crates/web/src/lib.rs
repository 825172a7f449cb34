//! Browser bindings. Every export takes plain numbers or strings and
//! returns a JSON document; errors come back as `{"error": "..."}`.

use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

use agentchain::bench::{compare_sweep, eval_model, ComplexityModel, DEFAULT_C};
use agentchain::chain::{SourceChain, VerificationReport};
use agentchain::crypto::KeyPair;
use agentchain::happ::{healthcare_dna, publish_vitals, Metric, VitalsReading};
use agentchain::sim::{attack_trials, AttackKind, ScenarioConfig};

const MAX_SWEEP_N: usize = 128;
const MAX_TRIALS: u64 = 2000;
const MAX_CHAIN: usize = 64;

fn respond(r: Result<Value, String>) -> String {
    r.unwrap_or_else(|e| json!({ "error": e })).to_string()
}

/// Model curves for n = 2..=n_max and, for powers of two up to the
/// same bound, counts measured on real networks.
pub fn complexity(n_max: usize, m: u64, r: usize) -> Result<Value, String> {
    if !(2..=100_000).contains(&n_max) || m == 0 {
        return Err("need 2 <= n_max <= 100000 and m >= 1".into());
    }
    let step = (n_max / 200).max(1);
    let model: Vec<Value> = (2..=n_max)
        .step_by(step)
        .map(|n| {
            let b = eval_model(&ComplexityModel::blockchain(n as u64, m));
            let h = eval_model(&ComplexityModel::holochain(n as u64, m, DEFAULT_C));
            json!({ "n": n, "omega_bc": b, "omega_hc": h })
        })
        .collect();
    let points: Vec<usize> = (2..=MAX_SWEEP_N.min(n_max).ilog2())
        .map(|e| 1 << e)
        .filter(|n| *n >= r)
        .collect();
    let rows = compare_sweep(&points, m.min(50), r, 0).map_err(|e| e.to_string())?;
    Ok(json!({ "model": model, "measured": rows }))
}

/// Monte Carlo double-spend detection next to the closed form.
pub fn double_spend(n: usize, g: usize, k: usize, trials: u64, seed: u64) -> Result<Value, String> {
    if trials == 0 || trials > MAX_TRIALS {
        return Err(format!("trials must be in 1..={MAX_TRIALS}"));
    }
    let mut cfg = ScenarioConfig::new(seed, n);
    cfg.r = cfg.r.min(n);
    cfg.g = Some(g);
    cfg.k = Some(k);
    let report = attack_trials(&cfg, AttackKind::DoubleSpend, trials).map_err(|e| e.to_string())?;
    serde_json::to_value(report).map_err(|e| e.to_string())
}

/// Builds a chain of `len` records, corrupts `field` of record `index`
/// and reports where verification first fails.
pub fn tamper(len: usize, index: usize, field: &str) -> Result<Value, String> {
    if !(3..=MAX_CHAIN).contains(&len) || index >= len {
        return Err(format!("need 3 <= len <= {MAX_CHAIN} and index < len"));
    }
    let mut chain = SourceChain::init(healthcare_dna(), KeyPair::from_seed(&[11; 32]), None, 0)
        .map_err(|e| e.to_string())?;
    for t in 1..=(len - 2) as u64 {
        let reading = VitalsReading {
            metric: Metric::Pulse,
            value: 60 + (t % 40) as i64,
            taken_at: t,
        };
        publish_vitals(&mut chain, &reading, t, None).map_err(|e| e.to_string())?;
    }
    let mut records = chain.records().to_vec();
    let r = &mut records[index];
    match field {
        "payload" => match r.payload.last_mut() {
            Some(b) => *b ^= 1,
            None => r.payload.push(0),
        },
        "timestamp" => r.header.timestamp ^= 1,
        "signature" => r.header.signature.0[0] ^= 1,
        "link" => r.header.prev_header_hash.0[0] ^= 1,
        "seq" => r.header.seq += 1,
        other => return Err(format!("unknown field `{other}`")),
    }
    let owner = chain.agent_id();
    let (ok, first, reason) = match agentchain::chain::verify_records(&records, Some(owner)) {
        VerificationReport::Ok => (true, None, None),
        VerificationReport::Failed { index, reason } => {
            (false, Some(index), Some(reason.to_string()))
        }
    };
    let rows: Vec<Value> = records
        .iter()
        .map(|r| json!({ "seq": r.header.seq, "type": r.entry_type(), "header_hash": r.header_hash().to_hex() }))
        .collect();
    Ok(json!({ "ok": ok, "first_failure_index": first, "reason": reason, "records": rows }))
}

#[wasm_bindgen]
pub fn complexity_json(n_max: usize, m: u32, r: usize) -> String {
    respond(complexity(n_max, m as u64, r))
}

#[wasm_bindgen]
pub fn double_spend_json(n: usize, g: usize, k: usize, trials: u32, seed: u32) -> String {
    respond(double_spend(n, g, k, trials as u64, seed as u64))
}

#[wasm_bindgen]
pub fn tamper_json(len: usize, index: usize, field: &str) -> String {
    respond(tamper(len, index, field))
}
