mod common;

#[test]
fn analytic_gradients_match_finite_differences() {
    let checks = common::gradient_suite();
    for c in &checks {
        println!("{:<30} error {:.3e} (tolerance {:.0e}, max |grad| {:.3e})", c.name, c.error, c.tolerance, c.scale);
    }
    let failed: Vec<_> = checks.iter().filter(|c| !c.passed()).map(|c| c.name).collect();
    assert!(failed.is_empty(), "gradient mismatches: {failed:?}");
}
