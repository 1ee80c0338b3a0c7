use proptest::prelude::*;

use qebd_core::design::{expand, expand_qebd};
use qebd_core::exact::{exact_moments, exact_sampler, pmf};
use qebd_core::gee::{fit_gee, fit_gglm, FitOptions};
use qebd_core::model::{n_pairs, CorrelationKind, ModelSpec, QebdParams};
use qebd_core::simlab::{bundled_config, run_replications, ScenarioConfig, BUNDLED_CONFIGS};

fn params(m: usize) -> impl Strategy<Value = QebdParams> {
    (prop::collection::vec(-1.5f64..1.5, m), prop::collection::vec(-1.0f64..1.0, n_pairs(m)))
        .prop_map(|(b, t)| QebdParams::new(b, t).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn gglm_matches_gee_independence(p in (2usize..=5).prop_flat_map(params), seed in 0u64..1000) {
        let panel = exact_sampler(&p, 400, seed).unwrap();
        let design = expand_qebd(&panel).unwrap();
        let a = fit_gglm(&design, &FitOptions::default()).unwrap();
        let b = fit_gee(&design, CorrelationKind::Independence, &FitOptions::default()).unwrap();
        prop_assume!(a.converged && b.converged);
        for (x, y) in a.estimates.values().iter().zip(b.estimates.values()) {
            prop_assert!((x - y).abs() < 1e-6);
        }
        let robust = b.robust_cov.unwrap();
        prop_assert!((&robust - robust.transpose()).amax() < 1e-10);
        prop_assert!(robust.clone().symmetric_eigen().eigenvalues.min() > -1e-10);
        prop_assert!(b.qic.unwrap().is_finite());
    }

    #[test]
    fn marginals_match_moments(p in (1usize..=6).prop_flat_map(params)) {
        let mom = exact_moments(&p).unwrap();
        let m = p.m();
        for j in 0..m {
            let marginal: f64 = (0..1usize << m)
                .filter(|c| c >> j & 1 == 1)
                .map(|c| pmf(&(0..m).map(|s| ((c >> s) & 1) as u8).collect::<Vec<_>>(), &p).unwrap())
                .sum();
            prop_assert!((marginal - mom.mean[j]).abs() < 1e-12);
        }
    }
}

#[test]
fn sampler_frequencies_follow_the_pmf() {
    let p = QebdParams::new(vec![-0.3, 0.4, 0.1], vec![0.8, -0.6, 0.2]).unwrap();
    let n = 200_000;
    let panel = exact_sampler(&p, n, 3).unwrap();
    let mut counts = [0usize; 8];
    for k in 0..n {
        counts[panel.pattern(k)] += 1;
    }
    for (c, &count) in counts.iter().enumerate() {
        let y: Vec<u8> = (0..3).map(|j| ((c >> j) & 1) as u8).collect();
        let prob = pmf(&y, &p).unwrap();
        let sd = (prob * (1.0 - prob) / n as f64).sqrt();
        assert!((count as f64 / n as f64 - prob).abs() < 5.0 * sd, "pattern {c}");
    }
}

#[test]
fn bundled_configs_round_trip() {
    for name in BUNDLED_CONFIGS {
        let cfg = bundled_config(name).unwrap();
        assert_eq!(ScenarioConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    }
}

#[test]
fn replication_accounting_and_worker_invariance() {
    let mut cfg = bundled_config("table1").unwrap();
    cfg.replicates = 12;
    let one = run_replications(&cfg, 1).unwrap();
    let many = run_replications(&cfg, 4).unwrap();
    assert_eq!(one.to_csv(), many.to_csv());
    for row in &one.rows {
        let divergent = (row.divergence_rate * 12.0).round() as usize;
        assert_eq!(row.used + divergent, 12);
    }
}

#[test]
fn unknown_keys_are_all_reported() {
    let mut doc: serde_json::Value = serde_json::from_str(&bundled_config("table2").unwrap().to_json()).unwrap();
    doc["alpha_level"] = 0.1.into();
    doc["truth"]["delta"] = serde_json::json!([1.0]);
    let err = ScenarioConfig::from_json(&doc.to_string()).unwrap_err().to_string();
    assert!(err.contains("alpha_level"), "{err}");
}

#[test]
fn stacked_design_dimensions() {
    let p = QebdParams::new(vec![0.0; 4], vec![0.0; 6]).unwrap();
    let panel = exact_sampler(&p, 10, 1).unwrap();
    let d = expand(&ModelSpec::qebd_full(4), &panel).unwrap();
    assert_eq!((d.n_rows(), d.n_cols()), (40, 10));
    for k in 0..10 {
        assert_eq!(d.cluster_rows(k), 4 * k..4 * k + 4);
    }
}
