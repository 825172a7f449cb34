use proptest::prelude::*;

use agentchain::bench::{
    compare_sweep, comparison_csv, eval_model, monotone_advantage, run_blockchain_baseline,
    run_holochain_count, BenchError, ComplexityModel, COMPARISON_COLUMNS,
};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// With no churn the agent-centric store count is m(1+r) + 2n exactly.
    #[test]
    fn holochain_store_formula(n in 4usize..40, m in 0u64..40, r in 1usize..5, seed in any::<u64>()) {
        prop_assume!(n >= r);
        let got = run_holochain_count(n, m, r, seed).unwrap();
        prop_assert_eq!(got.stores, m * (1 + r as u64) + 2 * n as u64);
        prop_assert_eq!(got.messages, m * r as u64);
    }

    /// Every baseline node ends with the same m-block replica.
    #[test]
    fn baseline_replicas_agree(n in 1usize..24, m in 0u64..30, seed in any::<u64>()) {
        let (chain, metrics) = run_blockchain_baseline(n, m, seed).unwrap();
        prop_assert!(chain.replicas_identical());
        prop_assert_eq!(chain.replica(0).len() as u64, m);
        prop_assert_eq!(metrics.stores, n as u64 * m);
        prop_assert_eq!(metrics.messages, m * (n as u64 - 1));
    }

    #[test]
    fn models_scale_as_documented(n in 2u64..100_000, m in 1u64..1000) {
        let b = eval_model(&ComplexityModel::blockchain(n, m));
        let h = eval_model(&ComplexityModel::holochain(n, m, 1.0));
        prop_assert_eq!(b, (n * n * m) as f64);
        prop_assert!((h - m as f64 * ((n as f64).log2() + 1.0)).abs() < 1e-9 * h);
    }
}

#[test]
fn too_few_nodes_rejected() {
    assert_eq!(
        run_holochain_count(3, 10, 4, 0).unwrap_err(),
        BenchError::TooFewNodes { n: 3, r: 4 }
    );
    assert_eq!(
        run_blockchain_baseline(0, 10, 0).unwrap_err(),
        BenchError::NoNodes
    );
    assert_eq!(
        compare_sweep(&[16, 8], 5, 4, 0).unwrap_err(),
        BenchError::UnsortedSweep
    );
}

#[test]
fn small_sweep_is_monotone_and_well_formed() {
    let rows = compare_sweep(&[4, 8, 16, 32], 20, 4, 1).unwrap();
    assert!(monotone_advantage(&rows));
    let csv = comparison_csv(&rows);
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(COMPARISON_COLUMNS));
    assert_eq!(lines.count(), 4);
    for r in &rows {
        assert_eq!(r.hc_stores, 20 * 5 + 2 * r.n as u64);
        assert_eq!(r.bc_stores, 20 * r.n as u64);
    }
}
