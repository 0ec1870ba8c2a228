//! Analytic gradients of every training objective against central finite
//! differences over the networks each objective is allowed to update.

mod common;

#[test]
fn hundred_configurations_match_finite_differences() {
    let failures = common::network_check(100);
    assert!(failures.is_empty(), "{}", failures.join("\n"));
}

#[test]
fn ipm_distances_match_finite_differences() {
    let failures = common::ipm_point_check(20, 5);
    assert!(failures.is_empty(), "{}", failures.join("\n"));
}
