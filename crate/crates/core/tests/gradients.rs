//! Finite-difference checks for every differentiable operation.

use burstforge_core::gradcheck::suite::run_suite;

#[test]
fn every_case_within_tolerance() {
    let cases = run_suite().unwrap();
    assert!(cases.len() > 20);
    let mut failures = Vec::new();
    for c in &cases {
        println!(
            "{:<32} rtol {:e}: {} entries, worst ratio {:.3e} at {}",
            c.name, c.rtol, c.report.checked, c.report.worst_ratio, c.worst_name
        );
        if !c.report.passed() {
            failures.push(format!("{}: {:?} ({})", c.name, c.report, c.worst_name));
        }
    }
    assert!(failures.is_empty(), "{failures:#?}");
}
