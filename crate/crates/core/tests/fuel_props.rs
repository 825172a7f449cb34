use proptest::prelude::*;

use agentchain::happ::healthcare_dna;
use agentchain::sim::{
    attack_trials, double_spend_detection_probability, run_scenario, Action, AttackKind,
    FuelLedger, ScenarioConfig, SeedGrant,
};

fn binom(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// Exact-integer oracle: probability that k queries among n−1 peers hit at
/// least one of the g witnesses.
fn oracle(n: u64, g: u64, k: u64) -> f64 {
    let pool = n - 1;
    1.0 - binom(pool - g, k) as f64 / binom(pool, k) as f64
}

#[test]
fn analytic_rate_matches_integer_oracle() {
    assert_eq!(binom(41, 8), 95_548_245);
    assert_eq!(binom(49, 8), 450_978_066);
    for n in 2..60u64 {
        for g in 0..n {
            for k in 0..n {
                let a = double_spend_detection_probability(n as usize, g as usize, k as usize);
                assert!((a - oracle(n, g, k)).abs() < 1e-12, "n={n} g={g} k={k}");
            }
        }
    }
}

#[test]
fn small_network_detection_tracks_oracle() {
    let mut cfg = ScenarioConfig::new(77, 12);
    cfg.g = Some(3);
    cfg.k = Some(3);
    let report = attack_trials(&cfg, AttackKind::DoubleSpend, 2000).unwrap();
    let expected = oracle(12, 3, 3);
    assert_eq!(report.detected + report.missed, report.attempts);
    assert!(
        (report.detection_rate - expected).abs() <= 0.03,
        "{} vs {expected}",
        report.detection_rate
    );
}

fn credit_cfg(
    seed: u64,
    n: usize,
    limit: i64,
    transfers: Vec<(u64, usize, usize, i64)>,
) -> ScenarioConfig {
    let mut dna = healthcare_dna();
    dna.params.insert("credit_limit".into(), limit.to_string());
    let mut cfg = ScenarioConfig::new(seed, n);
    cfg.dna = Some(dna);
    cfg.ticks = 10;
    cfg.seed_grants = vec![
        SeedGrant {
            agent: 0,
            amount: 10,
        },
        SeedGrant {
            agent: n - 1,
            amount: 3,
        },
    ];
    cfg.script = transfers
        .into_iter()
        .filter(|(_, f, t, _)| f % n != t % n)
        .map(|(tick, from, to, amount)| Action::Transfer {
            tick,
            from: from % n,
            to: to % n,
            amount,
        })
        .collect();
    cfg.script.sort_by_key(Action::tick);
    cfg
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    /// Random honest transfers under a credit limit: the ledger rebuilt
    /// from every chain sums to the grants, and no balance dips below the
    /// limit.
    #[test]
    fn conservation_and_credit(
        seed in any::<u64>(),
        n in 4usize..10,
        limit in 0i64..8,
        transfers in proptest::collection::vec((0u64..10, 0usize..10, 0usize..10, 1i64..9), 0..30),
    ) {
        let sim = run_scenario(credit_cfg(seed, n, limit, transfers)).unwrap();
        let a = sim.assertions();
        prop_assert_eq!(a.conservation_violations, 0);
        prop_assert_eq!(a.credit_violations, 0);
        let ledger = FuelLedger::from_chains(sim.chains());
        prop_assert_eq!(ledger.total(), 13);
        for id in sim.agents() {
            prop_assert!(ledger.balance(id) >= -limit);
        }
    }
}

#[test]
fn over_limit_transfer_fails() {
    let sim = run_scenario(credit_cfg(
        1,
        4,
        2,
        vec![(1, 1, 2, 2), (2, 1, 2, 1), (3, 0, 1, 10)],
    ))
    .unwrap();
    let s = sim.summary();
    assert_eq!((s.transfers_accepted, s.transfers_failed), (2, 1));
    let ledger = FuelLedger::from_chains(sim.chains());
    assert_eq!(ledger.balance(&sim.agent(1)), 8);
    assert_eq!(ledger.balance(&sim.agent(2)), 2);
}
