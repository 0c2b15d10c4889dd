mod common;

use common::gradients::*;

fn assert_all(checks: Vec<(String, f64)>) {
    for (name, err) in checks {
        assert!(err <= FD_TOL, "{name}: relative error {err:e}");
    }
}

#[test]
fn adversarial_terms_both_forms() {
    assert_all(adversarial_checks());
}

#[test]
fn cycle_and_identity_terms() {
    assert_all(cycle_identity_checks());
}

#[test]
fn composite_objective_three_domains() {
    assert_all(composite_checks());
}

#[test]
fn small_generator_cycle_gradient() {
    assert_all(generator_checks());
}
