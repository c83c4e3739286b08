use maxca_core::gradcheck::{check, negative_control, run_suite, SEEDS};

#[test]
fn every_operation_matches_finite_differences() {
    let reports = run_suite(&SEEDS).unwrap();
    let mut failed = Vec::new();
    for r in &reports {
        eprintln!(
            "{:<24} {:>10.3e} (tol {:.0e}, {} coords)",
            r.name, r.rel_err, r.tolerance, r.coordinates
        );
        if !r.passed() {
            failed.push(r.name.clone());
        }
    }
    assert!(failed.is_empty(), "failed: {failed:?}");
}

#[test]
fn wrong_backward_rule_fails() {
    assert!(!check(&negative_control(), &SEEDS).unwrap().passed());
}
