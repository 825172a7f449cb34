use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use agentchain::chain::SourceChain;
use agentchain::crypto::KeyPair;
use agentchain::happ::{healthcare_dna, publish_vitals, Metric, VitalsReading};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_agentchain"));
    c.env_remove("AGENTCHAIN_SEED");
    c
}

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn golden_run_grants_one_access() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "run",
        "--config",
        s(&scenario("patient_doctor.json")),
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["accesses_granted"], 1);
    assert_eq!(summary["assertions_pass"], true);
    let csv = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert!(csv.starts_with("tick,messages,"));
    assert_eq!(csv.lines().count(), 11);
}

#[test]
fn invalid_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "run",
        "--config",
        s(&scenario("too_small.json")),
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(code(&o), 2);
    assert!(!dir.path().join("metrics.csv").exists());
    let missing = run(&[
        "run",
        "--config",
        "/nonexistent.json",
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(code(&missing), 2);
    assert_eq!(code(&run(&["frobnicate"])), 2);
    assert_eq!(code(&run(&["run"])), 2);
}

#[test]
fn same_seed_same_metrics_and_seed_override() {
    let dirs: Vec<_> = (0..3).map(|_| tempfile::tempdir().unwrap()).collect();
    let cfg = scenario("ward_fuel.json");
    for d in &dirs[..2] {
        assert_eq!(
            code(&run(&["run", "--config", s(&cfg), "--out", s(d.path())])),
            0
        );
    }
    let o = bin()
        .args(["run", "--config", s(&cfg), "--out", s(dirs[2].path())])
        .env("AGENTCHAIN_SEED", "987654")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    let read = |d: &tempfile::TempDir, f: &str| fs::read(d.path().join(f)).unwrap();
    assert_eq!(read(&dirs[0], "metrics.csv"), read(&dirs[1], "metrics.csv"));
    assert_eq!(
        read(&dirs[0], "chains/agent_003.chain"),
        read(&dirs[1], "chains/agent_003.chain")
    );
    let summary: serde_json::Value =
        serde_json::from_slice(&read(&dirs[2], "summary.json")).unwrap();
    assert_eq!(summary["seed"], 987654);
    assert_ne!(
        read(&dirs[0], "chains/agent_003.chain"),
        read(&dirs[2], "chains/agent_003.chain")
    );
}

#[test]
fn default_bench_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["bench", "--out", s(dir.path())]);
    assert_eq!(code(&o), 0);
    let csv = fs::read_to_string(dir.path().join("comparison.csv")).unwrap();
    let lines: Vec<_> = csv.lines().collect();
    assert_eq!(
        lines[0],
        "n,m,r,bc_stores,bc_msgs,hc_stores,hc_msgs,omega_bc,omega_hc"
    );
    assert_eq!(lines.len(), 7);
    assert!(lines[1].starts_with("8,100,4,800,700,516,400,"));
}

#[test]
fn single_point_bench() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "bench",
        "--n-list",
        "20",
        "--m",
        "10",
        "--r",
        "3",
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(code(&o), 0);
    let csv = fs::read_to_string(dir.path().join("comparison.csv")).unwrap();
    assert_eq!(
        csv.lines()
            .nth(1)
            .unwrap()
            .split(',')
            .take(7)
            .collect::<Vec<_>>(),
        ["20", "10", "3", "200", "190", "80", "30"]
    );
    assert_eq!(
        code(&run(&["bench", "--n-list", "16,8", "--out", s(dir.path())])),
        2
    );
}

fn ten_record_chain() -> String {
    let mut c = SourceChain::init(healthcare_dna(), KeyPair::from_seed(&[3; 32]), None, 0).unwrap();
    for t in 1..=8 {
        let r = VitalsReading {
            metric: Metric::Pulse,
            value: 60 + t as i64,
            taken_at: t,
        };
        publish_vitals(&mut c, &r, t, None).unwrap();
    }
    c.export()
}

#[test]
fn verify_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let text = ten_record_chain();
    let honest = dir.path().join("honest.chain");
    fs::write(&honest, &text).unwrap();
    let o = run(&["verify", "--chain", s(&honest)]);
    assert_eq!(code(&o), 0);
    assert_eq!(String::from_utf8_lossy(&o.stdout).trim(), "ok: 10 records");

    // Flip one payload byte of record 7 (the last hex pair on its line).
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    let line = &mut lines[7];
    let at = line.len() - 2;
    let byte = u8::from_str_radix(&line[at..], 16).unwrap() ^ 0x01;
    line.replace_range(at.., &format!("{byte:02x}"));
    let tampered = dir.path().join("tampered.chain");
    fs::write(&tampered, lines.join("\n") + "\n").unwrap();
    let o = run(&["verify", "--chain", s(&tampered)]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stdout).contains("first_failure_index=7"));

    let truncated = dir.path().join("truncated.chain");
    fs::write(&truncated, &text[..text.len() - 40]).unwrap();
    assert_eq!(code(&run(&["verify", "--chain", s(&truncated)])), 2);
    fs::write(&truncated, "not hex\n").unwrap();
    assert_eq!(code(&run(&["verify", "--chain", s(&truncated)])), 2);
}

#[test]
fn attack_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenario("attacks.json");
    for (kind, trials) in [
        ("tamper_own_history", "50"),
        ("forged_token", "2000"),
        ("dna_fork", "3"),
    ] {
        let out = dir.path().join(kind);
        let o = run(&[
            "attack",
            "--config",
            s(&cfg),
            "--kind",
            kind,
            "--trials",
            trials,
            "--out",
            s(&out),
        ]);
        assert_eq!(
            code(&o),
            0,
            "{kind}: {}",
            String::from_utf8_lossy(&o.stdout)
        );
        let report: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
        assert_eq!(report["detection_rate"], 1.0, "{kind}");
        assert_eq!(report["accesses_granted"], 0, "{kind}");
    }
    let o = run(&[
        "attack",
        "--config",
        s(&cfg),
        "--kind",
        "teleport",
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(code(&o), 2);
}

#[test]
fn double_spend_floor_decides_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(scenario("double_spend.json")).unwrap()).unwrap();
    // Unreachable floor: detection below it is a detection failure.
    cfg["detection_floor"] = serde_json::json!(1.0);
    let path = dir.path().join("strict.json");
    fs::write(&path, cfg.to_string()).unwrap();
    let o = run(&[
        "attack",
        "--config",
        s(&path),
        "--kind",
        "double_spend",
        "--trials",
        "200",
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(code(&o), 1, "{}", String::from_utf8_lossy(&o.stdout));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["pass"], false);
    assert!((report["analytic_rate"].as_f64().unwrap() - 0.788131).abs() < 1e-6);
}
