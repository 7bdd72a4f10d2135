mod common;

use common::invariants::*;

#[test]
fn temporal_units_are_causal() {
    causality(10).unwrap();
}

#[test]
fn untrained_predictors_reduce_to_zero_velocity() {
    zero_velocity_reduction(10).unwrap();
}

#[test]
fn encoder_is_permutation_equivariant() {
    permutation_equivariance(10).unwrap();
}

#[test]
fn normalized_operators_have_unit_spectral_bound() {
    spectral_bound(25).unwrap();
}

#[test]
fn shorter_rollouts_are_prefixes() {
    autoregressive_prefix(5).unwrap();
}

#[test]
fn checkpoint_save_load_save_is_byte_identical() {
    checkpoint_round_trip(4).unwrap();
}

#[test]
fn power_iteration_oracle() {
    use hvis_core::autodiff::Tensor;
    // diag(3, -2) has spectral norm 3; a rotation has 1
    let d = Tensor::new(&[2, 2], vec![3.0, 0.0, 0.0, -2.0]).unwrap();
    assert!((spectral_norm(&d) - 3.0).abs() < 1e-9);
    let (c, s) = (0.6, 0.8);
    let r = Tensor::new(&[2, 2], vec![c, -s, s, c]).unwrap();
    assert!((spectral_norm(&r) - 1.0).abs() < 1e-9);
}
