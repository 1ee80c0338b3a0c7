use std::collections::HashSet;

use qebd_core::exact::exact_sampler;
use qebd_core::fixtures::carcinogenicity;
use qebd_core::model::{pairs, ModelSpec, QebdParams};
use qebd_core::selection::{backward_eliminate, SelectionOptions};

#[test]
fn warm_and_cold_start_agree() {
    let panel = carcinogenicity();
    let spec = ModelSpec::qebd_full(4);
    let warm = backward_eliminate(&spec, &panel, &HashSet::new(), &SelectionOptions::default()).unwrap();
    let cold = SelectionOptions { warm_start: false, ..SelectionOptions::default() };
    let cold = backward_eliminate(&spec, &panel, &HashSet::new(), &cold).unwrap();
    assert_eq!(warm.dropped(), cold.dropped());
    for (a, b) in warm.steps.iter().zip(&cold.steps) {
        assert!((a.qic_after - b.qic_after).abs() < 1e-6);
    }
    for (a, b) in warm.final_fit.estimates.values().iter().zip(cold.final_fit.estimates.values()) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn term_order_does_not_matter() {
    let panel = carcinogenicity();
    let mut reversed = pairs(4);
    reversed.reverse();
    let a = backward_eliminate(&ModelSpec::qebd_full(4), &panel, &HashSet::new(), &SelectionOptions::default()).unwrap();
    let b = backward_eliminate(&ModelSpec::Qebd { pairs: reversed }, &panel, &HashSet::new(), &SelectionOptions::default())
        .unwrap();
    assert_eq!(a.dropped(), b.dropped());
    assert!((a.final_qic() - b.final_qic()).abs() < 1e-9);
}

#[test]
fn protected_terms_survive() {
    let panel = carcinogenicity();
    let protect: HashSet<String> = ["MLA-ABS".to_string()].into();
    let trace = backward_eliminate(&ModelSpec::qebd_full(4), &panel, &protect, &SelectionOptions::default()).unwrap();
    assert!(trace.final_terms.iter().any(|t| t == "MLA-ABS"));
    assert!(trace.steps.iter().all(|s| s.dropped != "MLA-ABS"));
    let mut last = trace.initial_qic;
    for s in &trace.steps {
        assert!(s.qic_after < last);
        last = s.qic_after;
    }
}

#[test]
fn true_edge_is_retained() {
    let truth = QebdParams::new(vec![-0.5, 0.0, 0.3, -0.2], vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
    let spec = ModelSpec::qebd_full(4);
    let reps = 200;
    let kept = (0..reps)
        .filter(|&r| {
            let panel = exact_sampler(&truth, 2000, 5000 + r).unwrap();
            let trace = backward_eliminate(&spec, &panel, &HashSet::new(), &SelectionOptions::default()).unwrap();
            trace.final_terms.iter().any(|t| t == "Y1-Y2")
        })
        .count();
    assert!(kept as f64 >= 0.9 * reps as f64, "kept the true edge in {kept} of {reps}");
}
