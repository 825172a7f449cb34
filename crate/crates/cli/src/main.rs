mod output;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use agentchain::bench::{compare_sweep, comparison_csv, monotone_advantage, DEFAULT_SWEEP};
use agentchain::chain::{import_records, verify_records, VerificationReport};
use agentchain::sim::{attack_trials, run_scenario, AttackKind, ScenarioConfig};

use output::write_atomic;

const SEED_ENV: &str = "AGENTCHAIN_SEED";

#[derive(Parser)]
#[command(
    name = "agentchain",
    version,
    about = "Run agentchain scenarios, attacks and benchmarks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario; writes metrics.csv, summary.json and chain exports.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Repeat one attack against a scenario network; writes report.json.
    Attack {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        kind: AttackKind,
        #[arg(long, default_value_t = 1000)]
        trials: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Agent-centric vs full-replication sweep; writes comparison.csv.
    Bench {
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_SWEEP)]
        n_list: Vec<usize>,
        #[arg(long, default_value_t = 100)]
        m: u64,
        #[arg(long, default_value_t = 4)]
        r: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Verify an exported chain (one canonical-hex record per line).
    Verify {
        #[arg(long)]
        chain: PathBuf,
    },
}

/// Ok(true) = success, Ok(false) = assertion or detection failure,
/// Err = usage, config or IO problem.
type Outcome = Result<bool>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let outcome = match cli.command {
        Command::Run { config, out } => cmd_run(&config, &out),
        Command::Attack {
            config,
            kind,
            trials,
            out,
        } => cmd_attack(&config, kind, trials, &out),
        Command::Bench { n_list, m, r, out } => cmd_bench(&n_list, m, r, &out),
        Command::Verify { chain } => cmd_verify(&chain),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn seed_override() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => {
            Ok(Some(v.trim().parse().with_context(|| {
                format!("{SEED_ENV}={v:?} is not a u64")
            })?))
        }
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => bail!("{SEED_ENV}: {e}"),
    }
}

fn load_config(path: &Path) -> Result<ScenarioConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut cfg =
        ScenarioConfig::from_json(&text).with_context(|| format!("loading {}", path.display()))?;
    if let Some(seed) = seed_override()? {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn json(value: &impl serde::Serialize) -> Result<Vec<u8>> {
    let mut v = serde_json::to_vec_pretty(value)?;
    v.push(b'\n');
    Ok(v)
}

fn cmd_run(config: &Path, out: &Path) -> Outcome {
    let cfg = load_config(config)?;
    let sim = run_scenario(cfg)?;
    write_atomic(&out.join("metrics.csv"), sim.metrics().to_csv().as_bytes())?;
    let summary = sim.summary();
    write_atomic(&out.join("summary.json"), &json(&summary)?)?;
    for (i, c) in sim.chains().iter().enumerate() {
        write_atomic(
            &out.join("chains").join(format!("agent_{i:03}.chain")),
            c.export().as_bytes(),
        )?;
    }
    let t = &summary.totals;
    println!(
        "ticks={} messages={} stores={} rejections={} accesses_granted={} transfers={}",
        summary.ticks,
        t.messages,
        t.stores,
        t.rejections,
        summary.accesses_granted,
        summary.transfers_accepted
    );
    if !summary.assertions_pass {
        eprintln!("assertion failure: {:?}", summary.assertions);
    }
    Ok(summary.assertions_pass)
}

fn cmd_attack(config: &Path, kind: AttackKind, trials: u64, out: &Path) -> Outcome {
    let cfg = load_config(config)?;
    if trials == 0 {
        bail!("--trials must be positive");
    }
    let report = attack_trials(&cfg, kind, trials)?;
    write_atomic(&out.join("report.json"), &json(&report)?)?;
    let analytic = report
        .analytic_rate
        .map(|a| format!(" analytic={a:.4}"))
        .unwrap_or_default();
    println!(
        "{kind}: attempts={} detected={} missed={} rate={:.4}{analytic} floor={:.4} accesses_granted={} {}",
        report.attempts,
        report.detected,
        report.missed,
        report.detection_rate,
        report.floor,
        report.accesses_granted,
        if report.pass { "PASS" } else { "FAIL" }
    );
    Ok(report.pass)
}

fn cmd_bench(n_list: &[usize], m: u64, r: usize, out: &Path) -> Outcome {
    let seed = seed_override()?.unwrap_or(0);
    let rows = compare_sweep(n_list, m, r, seed)?;
    write_atomic(
        &out.join("comparison.csv"),
        comparison_csv(&rows).as_bytes(),
    )?;
    for row in &rows {
        println!(
            "n={:<4} stores bc={:<7} hc={:<6} msgs bc={:<7} hc={:<5} ratio={:.2}",
            row.n,
            row.bc_stores,
            row.hc_stores,
            row.bc_msgs,
            row.hc_msgs,
            row.message_ratio()
        );
    }
    let ok = monotone_advantage(&rows);
    if !ok {
        eprintln!("message ratio is not strictly increasing in n");
    }
    Ok(ok)
}

fn cmd_verify(path: &Path) -> Outcome {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let records = import_records(&text).with_context(|| format!("parsing {}", path.display()))?;
    match verify_records(&records, None) {
        VerificationReport::Ok => {
            println!("ok: {} records", records.len());
            Ok(true)
        }
        VerificationReport::Failed { index, reason } => {
            println!("first_failure_index={index} reason={reason}");
            Ok(false)
        }
    }
}
