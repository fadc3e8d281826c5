mod common;

use common::criteria;

#[test]
fn gp_predictions_and_gradients_match_dense_reference() {
    let o = criteria::gp_vs_dense();
    assert!(o.pass, "{}", o.detail);
}

#[test]
fn expected_log_joint_matches_monte_carlo() {
    let o = criteria::quadrature_vs_mc(6, criteria::QUAD_SAMPLES);
    assert!(o.pass, "{}", o.detail);
}

#[test]
fn entropy_matches_analytic_and_finite_differences() {
    let o = criteria::entropy_checks();
    assert!(o.pass, "{}", o.detail);
}

#[test]
fn schedule_is_exact() {
    let o = criteria::schedule_exactness();
    assert!(o.pass, "{}", o.detail);
}

#[test]
fn reliability_is_exact() {
    let o = criteria::reliability_arithmetic(&[]);
    assert!(o.pass, "{}", o.detail);
}
