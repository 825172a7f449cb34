//! Acceptance criteria, one pass/fail line each. Runs without the libtest
//! harness so the lines are always printed; exits non-zero on any failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use agentchain::bench::{
    compare_sweep, eval_model, monotone_advantage, ComplexityModel, DEFAULT_SWEEP,
};
use agentchain::chain::{verify_records, Record, SourceChain};
use agentchain::crypto::{hash_bytes, sign, AgentId, Digest, KeyPair};
use agentchain::dna::{dna_hash, CostClass, DnaBuilder};
use agentchain::happ::{
    healthcare_dna, vitals_payload, Denial, Metric, VitalsReading, VITALS_ENTRY,
};
use agentchain::payload::{FieldType, Payload, Value};
use agentchain::reputation::{ExperienceMatrix, Observation, ReputationParams};
use agentchain::sim::{
    attack_trials, dna_mutations, double_spend_detection_probability, run_scenario, AdversarySpec,
    AttackKind, AttackParams, ScenarioConfig, Sim,
};
use agentchain::validation::{authenticate_channel, Marketplace, Reason};

type Outcome = Result<String, String>;

fn scenarios_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn scenario(name: &str) -> ScenarioConfig {
    let text = std::fs::read_to_string(scenarios_dir().join(name)).expect("scenario file");
    ScenarioConfig::from_json(&text).expect("valid scenario")
}

/// Every loadable scenario of the suite, by file name.
fn suite() -> Vec<(String, ScenarioConfig)> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(scenarios_dir())
        .expect("scenarios dir")
        .map(|e| e.expect("dir entry").path())
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    files.sort();
    files
        .into_iter()
        .filter_map(|p| {
            let cfg = ScenarioConfig::from_json(&std::fs::read_to_string(&p).ok()?).ok()?;
            Some((p.file_name()?.to_string_lossy().into_owned(), cfg))
        })
        .collect()
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------- 1

fn note_chain(len: usize, seed: u8, dna: agentchain::dna::DnaDocument, entry: &str) -> SourceChain {
    let mut c = SourceChain::init(dna, KeyPair::from_seed(&[seed; 32]), None, 0).unwrap();
    for i in 2..len {
        let payload = if entry == VITALS_ENTRY {
            vitals_payload(&VitalsReading {
                metric: Metric::Pulse,
                value: 60 + i as i64,
                taken_at: i as u64,
            })
        } else {
            Payload::new().with("text", Value::Text(format!("note {i}")))
        };
        c.append_payload(entry, &payload, i as u64).unwrap();
    }
    c
}

fn fuzz_dna() -> agentchain::dna::DnaDocument {
    DnaBuilder::new("fuzz")
        .entry(
            "note",
            &[("text", FieldType::Text)],
            &["required:text"],
            CostClass::Light,
        )
        .build()
}

/// All single mutations of record `i`: (expected failing index, mutated chain).
fn mutations_of(
    records: &[Record],
    i: usize,
    every_byte: bool,
    keys: &KeyPair,
) -> Vec<(usize, Vec<Record>)> {
    let mut out = Vec::new();
    let mut with = |f: &dyn Fn(&mut Record), expect: usize| {
        let mut v = records.to_vec();
        f(&mut v[i]);
        if v[i] != records[i] {
            out.push((expect, v));
        }
    };
    let payload_positions: Vec<usize> = if every_byte {
        (0..records[i].payload.len()).collect()
    } else {
        vec![
            0,
            records[i].payload.len() / 2,
            records[i].payload.len().saturating_sub(1),
        ]
    };
    for p in payload_positions {
        with(&|r| r.payload[p] ^= 0x01, i);
    }
    let sig_positions: Vec<usize> = if every_byte {
        (0..64).collect()
    } else {
        vec![0, 31, 63]
    };
    for p in sig_positions {
        with(&|r| r.header.signature.0[p] ^= 0x80, i);
    }
    with(&|r| r.header.timestamp += 1, i);
    with(&|r| r.header.entry_type.push('x'), i);
    with(&|r| r.header.entry_hash.0[5] ^= 1, i);
    with(
        &|r| r.header.author = KeyPair::from_seed(&[0xEE; 32]).public(),
        i,
    );
    with(&|r| r.header.seq += 1, i);
    with(&|r| r.header.prev_header_hash.0[0] ^= 1, i);
    // Owner rewrites and re-signs record i: only the next link betrays it.
    if i + 1 < records.len() && i >= 2 {
        with(
            &|r| {
                r.payload.push(0);
                r.header.entry_hash = hash_bytes(&r.payload);
                r.header.signature = sign(keys, &r.header.signing_bytes());
            },
            i + 1,
        );
    }
    out
}

fn criterion_1() -> Outcome {
    let exhaustive_lengths = [2usize, 3, 5, 8, 13, 20];
    let mut cases = 0u64;
    for len in 2..=20 {
        let chain = note_chain(len, len as u8, fuzz_dna(), "note");
        let records = chain.records();
        ensure(verify_records(records, None).is_ok(), || {
            format!("honest chain of {len} fails")
        })?;
        let every_byte = exhaustive_lengths.contains(&len);
        for i in 0..len {
            for (expect, mutated) in mutations_of(records, i, every_byte, chain.owner()) {
                cases += 1;
                let got = verify_records(&mutated, Some(chain.agent_id())).first_failure_index();
                ensure(got == Some(expect), || {
                    format!("len {len}, record {i}: expected failure at {expect}, got {got:?}")
                })?;
            }
        }
    }
    let chain = note_chain(50, 77, healthcare_dna(), VITALS_ENTRY);
    let records = chain.records();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for n in 0..1000 {
        let i = rng.gen_range(0..records.len());
        let mut v = records.to_vec();
        let r = &mut v[i];
        match rng.gen_range(0..4) {
            0 => {
                let p = rng.gen_range(0..r.payload.len());
                r.payload[p] ^= rng.gen_range(1..=255u8);
            }
            1 => {
                let p = rng.gen_range(0..64);
                r.header.signature.0[p] ^= rng.gen_range(1..=255u8);
            }
            2 => match rng.gen_range(0..5) {
                0 => r.header.timestamp = r.header.timestamp.wrapping_add(rng.gen_range(1..1000)),
                1 => r.header.seq = r.header.seq.wrapping_add(rng.gen_range(1..1000)),
                2 => r.header.entry_hash = Digest(rng.gen()),
                3 => r.header.author = AgentId(rng.gen()),
                _ => r.header.entry_type.push_str("-x"),
            },
            _ => r.header.prev_header_hash = Digest(rng.gen()),
        }
        cases += 1;
        let got = verify_records(&v, Some(chain.agent_id())).first_failure_index();
        ensure(got == Some(i), || {
            format!("random mutation {n} at record {i}: got {got:?}")
        })?;
    }
    Ok(format!(
        "{cases} single mutations, all detected at the expected first_failure_index"
    ))
}

// ---------------------------------------------------------------- 2

fn criterion_2() -> Outcome {
    let dna = healthcare_dna();
    let mut chain = SourceChain::init(dna.clone(), KeyPair::from_seed(&[2; 32]), None, 0).unwrap();
    let valid = chain
        .append_payload(
            VITALS_ENTRY,
            &vitals_payload(&VitalsReading {
                metric: Metric::Glucose,
                value: 110,
                taken_at: 1,
            }),
            1,
        )
        .unwrap()
        .clone();
    // A transaction of a type this DNA does not define, correctly signed.
    let mut invalid = valid.clone();
    invalid.header.entry_type = "smuggled".into();
    invalid.header.signature = sign(chain.owner(), &invalid.header.signing_bytes());

    let registered: Marketplace = [dna.clone()].into_iter().collect();
    let unregistered = Marketplace::new();
    let cells = [
        (&valid, &registered, true),
        (&invalid, &registered, false),
        (&valid, &unregistered, false),
        (&invalid, &unregistered, false),
    ];
    let mut table = Vec::new();
    for (rec, market, expect) in cells {
        let v = authenticate_channel(rec, &dna, market);
        ensure(v.valid == expect, || {
            format!("cell expected {expect}, got {:?}", v)
        })?;
        ensure(v.valid == (v.reason == Reason::Ok), || {
            "reason disagrees with verdict".into()
        })?;
        table.push(if v.valid { "ok" } else { "invalid" });
    }
    Ok(format!("{{{}}}", table.join(", ")))
}

// ---------------------------------------------------------------- 3

fn criterion_3() -> Outcome {
    let golden = healthcare_dna();
    let id = dna_hash(&golden);
    let mut ran = 0;
    let mut refused = 0;
    for (name, forked) in dna_mutations(&golden) {
        ensure(dna_hash(&forked) != id, || {
            format!("{name}: hash unchanged")
        })?;
        let mut cfg = scenario("fork.json");
        for adv in &mut cfg.adversaries {
            adv.params.mutation = name.to_string();
        }
        match Sim::new(cfg) {
            Err(_) => {
                // No chain can be initialized under an invalid DNA.
                ensure(forked.validate().is_err(), || {
                    format!("{name}: valid fork refused")
                })?;
                ensure(
                    SourceChain::init(forked.clone(), KeyPair::from_seed(&[1; 32]), None, 0)
                        .is_err(),
                    || format!("{name}: chain init accepted an invalid DNA"),
                )?;
                refused += 1;
            }
            Ok(mut sim) => {
                sim.run();
                let s = sim.summary();
                ensure(s.assertions.cross_network_records == 0, || {
                    format!("{name}: records crossed networks")
                })?;
                let fork = sim.fork_network().expect("fork network");
                ensure(fork.foreign_records() == 0, || {
                    format!("{name}: fork holds main records")
                })?;
                let stats = sim.attack_stats(AttackKind::DnaFork);
                ensure(stats.attempts == 3 && stats.detected == 3, || {
                    format!("{name}: {stats:?}")
                })?;
                ran += 1;
            }
        }
    }
    Ok(format!(
        "{} mutations change the hash; {ran} two-network runs with 0 cross-network records, {refused} invalid forks refused at init",
        ran + refused
    ))
}

// ---------------------------------------------------------------- 4

/// Exact binomial coefficient in integers.
fn choose(n: u128, k: u128) -> u128 {
    (0..k).fold(1u128, |acc, i| acc * (n - i) / (i + 1))
}

fn criterion_4() -> Outcome {
    // Oracle: 1 - C(41,8)/C(49,8), evaluated with integer binomials.
    let (miss, all) = (choose(41, 8), choose(49, 8));
    ensure(miss == 95_548_245 && all == 450_978_066, || {
        format!("binomials {miss} {all}")
    })?;
    let oracle = 1.0 - miss as f64 / all as f64;
    let analytic = double_spend_detection_probability(50, 8, 8);
    ensure((analytic - oracle).abs() < 1e-12, || {
        format!("analytic {analytic} vs oracle {oracle}")
    })?;

    let cfg = scenario("double_spend.json");
    let report = attack_trials(&cfg, AttackKind::DoubleSpend, 10_000).map_err(|e| e.to_string())?;
    ensure(
        report.attempts == 10_000 && report.detected + report.missed == 10_000,
        || format!("{report:?}"),
    )?;
    let rate = report.detection_rate;
    ensure((rate - oracle).abs() <= 0.03, || {
        format!("rate {rate:.4} vs oracle {oracle:.4}")
    })?;

    let mut full = cfg.clone();
    full.g = Some(49);
    let all_witness =
        attack_trials(&full, AttackKind::DoubleSpend, 300).map_err(|e| e.to_string())?;
    ensure(all_witness.detection_rate == 1.0, || {
        format!("g = N-1: {all_witness:?}")
    })?;
    Ok(format!(
        "rate {rate:.4} vs oracle {oracle:.4} (|Δ| = {:.4}) over 10000 trials; g = N-1 → {:.1} over 300",
        (rate - oracle).abs(),
        all_witness.detection_rate
    ))
}

// ---------------------------------------------------------------- 5

fn criterion_5() -> Outcome {
    let mut checked = Vec::new();
    for (name, cfg) in suite() {
        let ticks = cfg.ticks;
        let sim = run_scenario(cfg).map_err(|e| e.to_string())?;
        let s = sim.summary();
        ensure(sim.metrics().rows.len() as u64 == ticks, || {
            format!("{name}: missing ticks")
        })?;
        ensure(s.assertions.conservation_violations == 0, || {
            format!("{name}: {:?}", s.assertions)
        })?;
        ensure(s.balance_total == s.seed_total, || {
            format!("{name}: {} != {}", s.balance_total, s.seed_total)
        })?;
        checked.push(format!("{name}({})", s.seed_total));
    }
    // Random transfer traffic under churn.
    for seed in 0..10u64 {
        let mut cfg = ScenarioConfig::new(seed, 12);
        cfg.ticks = 25;
        cfg.churn = 0.2;
        cfg.seed_grants = (0..4)
            .map(|a| agentchain::sim::SeedGrant {
                agent: a,
                amount: 20 + a as i64,
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        cfg.script = (0..24u64)
            .map(|tick| {
                let from = rng.gen_range(0..12);
                let to = (from + rng.gen_range(1..12)) % 12;
                agentchain::sim::Action::Transfer {
                    tick,
                    from,
                    to,
                    amount: rng.gen_range(1..15),
                }
            })
            .collect();
        let total = cfg.seed_grants.iter().map(|g| g.amount).sum::<i64>();
        let sim = run_scenario(cfg).map_err(|e| e.to_string())?;
        let s = sim.summary();
        ensure(
            s.assertions.conservation_violations == 0 && s.balance_total == total,
            || format!("random transfers seed {seed}: {:?}", s.assertions),
        )?;
    }
    Ok(format!(
        "0 violations at every tick: {} + 10 random transfer runs",
        checked.join(" ")
    ))
}

// ---------------------------------------------------------------- 6

fn criterion_6() -> Outcome {
    let (m, r) = (100u64, 4usize);
    let rows = compare_sweep(&DEFAULT_SWEEP, m, r, 6).map_err(|e| e.to_string())?;
    ensure(rows.len() == DEFAULT_SWEEP.len(), || "row count".into())?;
    for row in &rows {
        let n = row.n as u64;
        ensure(row.hc_stores == m * (1 + r as u64) + 2 * n, || {
            format!("n={n}: hc_stores {}", row.hc_stores)
        })?;
        ensure(row.bc_stores == n * m, || {
            format!("n={n}: bc_stores {}", row.bc_stores)
        })?;
    }
    ensure(monotone_advantage(&rows), || {
        "message ratio not strictly increasing".into()
    })?;
    let ob = eval_model(&ComplexityModel::blockchain(100, 1));
    let oh = eval_model(&ComplexityModel::holochain(100, 1, 1.0));
    let oh_oracle = 100f64.ln() / 2f64.ln() + 1.0;
    ensure(ob == 10_000.0, || format!("Ω_B = {ob}"))?;
    ensure((oh - oh_oracle).abs() < 1e-12, || format!("Ω_H = {oh}"))?;
    let ratios: Vec<String> = rows
        .iter()
        .map(|r| format!("{:.2}", r.message_ratio()))
        .collect();
    Ok(format!(
        "stores exact for n in {DEFAULT_SWEEP:?}; msg ratios [{}]; Ω_B={ob}, Ω_H={oh:.4}",
        ratios.join(", ")
    ))
}

// ---------------------------------------------------------------- 7

fn criterion_7() -> Outcome {
    let sim = run_scenario(scenario("patient_doctor.json")).map_err(|e| e.to_string())?;
    let s = sim.summary();
    let granted: Vec<_> = s.access_log.iter().filter(|e| e.granted).collect();
    ensure(granted.len() == 1 && s.accesses_granted == 1, || {
        format!("{:?}", s.access_log)
    })?;
    ensure(granted[0].records == 2, || {
        format!("pulse readings returned: {}", granted[0].records)
    })?;
    let revoked = s
        .access_log
        .iter()
        .find(|e| e.tick == 7)
        .ok_or("no request after revocation")?;
    ensure(revoked.denial == Some(Denial::Revoked), || {
        format!("{revoked:?}")
    })?;
    ensure(s.assertions_pass, || format!("{:?}", s.assertions))?;

    let probes = attack_trials(
        &ScenarioConfig::new(7, 10),
        AttackKind::ForgedToken,
        100_000,
    )
    .map_err(|e| e.to_string())?;
    ensure(
        probes.accesses_granted == 0 && probes.detected == 100_000,
        || format!("{probes:?}"),
    )?;
    Ok("golden scenario: 1 access, then denied `revoked`; 100000 forged probes: 0 granted".into())
}

// ---------------------------------------------------------------- 8

fn criterion_8() -> Outcome {
    // Oracle: direct evaluation of the update rule from a fresh row.
    let p = ReputationParams::default();
    let etas: Vec<f64> = (0..=3)
        .map(|v| p.initial_confidence * p.penalty_factor.powi(v))
        .collect();
    ensure(
        etas[2] >= p.blacklist_threshold && etas[3] < p.blacklist_threshold,
        || format!("{etas:?}"),
    )?;
    let offender = AgentId([9; 32]);
    let mut m = ExperienceMatrix::new(p);
    for (v, expect) in etas.iter().enumerate().skip(1) {
        m.update(offender, Observation::InvalidData);
        ensure((m.get(&offender).eta - expect).abs() < 1e-12, || {
            format!("after {v}: {:?}", m.get(&offender))
        })?;
        ensure(m.is_blacklisted(&offender) == (v == 3), || {
            format!("blacklist after {v}")
        })?;
    }

    let cfg = scenario("faulty_device.json");
    let bad = 3usize;
    let sim = run_scenario(cfg).map_err(|e| e.to_string())?;
    let s = sim.summary();
    let net = sim.network();
    let bad_id = sim.agent(bad);
    for (i, a) in sim.agents().iter().enumerate() {
        if i != bad {
            ensure(net.blacklisted_by(a, &bad_id), || {
                format!("agent {i} does not blacklist the offender")
            })?;
        }
    }
    ensure(s.blacklisted_by_all_honest == vec![bad], || {
        format!("{:?}", s.blacklisted_by_all_honest)
    })?;
    // The valid reading it publishes afterwards is stored by nobody else.
    let late = sim.chain(bad).records().last().unwrap().header_hash();
    let holders = net.holders(&late);
    ensure(holders.iter().all(|h| *h == bad_id), || {
        format!("late publish stored by {} peers", holders.len())
    })?;
    let control = sim.chain(4).records().last().unwrap().header_hash();
    ensure(net.holders(&control).len() == 4, || {
        "control publish not stored".into()
    })?;
    ensure(s.assertions_pass, || format!("{:?}", s.assertions))?;
    Ok(format!(
        "η: {:.4} → {:.4} → {:.4} → {:.4}; blacklisted by all {} honest peers; later publish rejected",
        etas[0],
        etas[1],
        etas[2],
        etas[3],
        sim.agents().len() - 1
    ))
}

// ---------------------------------------------------------------- 9

fn criterion_9() -> Outcome {
    let mut names = Vec::new();
    let mut suite = suite();
    let mut attacked = ScenarioConfig::new(31, 16);
    attacked.churn = 0.25;
    attacked.seed_grants = vec![agentchain::sim::SeedGrant {
        agent: 1,
        amount: 9,
    }];
    attacked.adversaries = [
        AttackKind::DoubleSpend,
        AttackKind::MitmMutation,
        AttackKind::ForgedToken,
    ]
    .into_iter()
    .enumerate()
    .map(|(i, kind)| AdversarySpec {
        agent: i + 1,
        kind,
        params: AttackParams {
            tick: 2 + i as u64,
            count: 20,
            ..AttackParams::default()
        },
    })
    .collect();
    suite.push(("generated".into(), attacked));
    for (name, cfg) in suite {
        let a = run_scenario(cfg.clone()).map_err(|e| e.to_string())?;
        let b = run_scenario(cfg).map_err(|e| e.to_string())?;
        ensure(a.metrics().to_csv() == b.metrics().to_csv(), || {
            format!("{name}: metrics differ")
        })?;
        ensure(a.export_chains() == b.export_chains(), || {
            format!("{name}: chains differ")
        })?;
        ensure(a.summary().to_json() == b.summary().to_json(), || {
            format!("{name}: summaries differ")
        })?;
        names.push(name);
    }
    Ok(format!(
        "identical metrics.csv and chain exports for {}",
        names.join(", ")
    ))
}

/// (name, check, time budget)
type Criterion = (&'static str, fn() -> Outcome, Option<Duration>);

fn main() -> ExitCode {
    let start = Instant::now();
    let criteria: [Criterion; 9] = [
        (
            "chain tamper detection",
            criterion_1,
            Some(Duration::from_secs(10)),
        ),
        ("channel authentication truth table", criterion_2, None),
        ("fork isolation", criterion_3, None),
        (
            "double-spend detection",
            criterion_4,
            Some(Duration::from_secs(60)),
        ),
        ("mutual-credit conservation", criterion_5, None),
        (
            "storage/message scaling",
            criterion_6,
            Some(Duration::from_secs(120)),
        ),
        ("capability access", criterion_7, None),
        ("reputation exclusion", criterion_8, None),
        ("determinism", criterion_9, None),
    ];
    let mut failed = 0;
    for (i, (name, run, limit)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let mut outcome = run();
        let took = t.elapsed();
        if let (Ok(_), Some(limit)) = (&outcome, limit) {
            if took >= *limit {
                outcome = Err(format!("took {took:.1?}, limit {limit:?}"));
            }
        }
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS  {name} [{took:.2?}]: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name} [{took:.2?}]: {why}", i + 1);
            }
        }
    }
    let total = start.elapsed();
    let budget = Duration::from_secs(300);
    if total < budget {
        println!("criterion 10 PASS  suite wall-clock [{total:.2?}]: under {budget:?}");
    } else {
        failed += 1;
        println!("criterion 10 FAIL  suite wall-clock [{total:.2?}]: over {budget:?}");
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
