mod common;

use anomaly_forge_core::synth::poisson_normal_clone;
use anomaly_forge_core::Tensor;

#[test]
fn random_clones_satisfy_the_discrete_poisson_equation() {
    for seed in 0..50 {
        let c = common::poisson_case(seed);
        assert!(c.residual <= 1e-6, "seed {seed} {:?}: residual {:e}", c.size, c.residual);
        assert!(c.outside_exact, "seed {seed}: pixels outside the interior changed");
        assert!(c.identity_error <= 1e-9, "seed {seed}: identity clone error {:e}", c.identity_error);
    }
}

#[test]
fn constant_patch_into_equal_constant_is_unchanged() {
    let dst = Tensor::full(vec![20, 24, 1], 0.4);
    let src = Tensor::full(vec![9, 7, 1], 0.4);
    let mask = Tensor::full(vec![9, 7], 1.0);
    let out = poisson_normal_clone(&src, &dst, &mask, (10, 12)).unwrap();
    for v in out.data() {
        assert!((v - 0.4).abs() < 1e-12);
    }
}

#[test]
fn region_leaving_the_destination_is_a_bounds_error() {
    let dst = Tensor::zeros(vec![16, 16, 1]);
    let src = Tensor::zeros(vec![8, 8, 1]);
    let mask = Tensor::full(vec![8, 8], 1.0);
    let err = poisson_normal_clone(&src, &dst, &mask, (2, 8)).unwrap_err();
    assert_eq!(err.kind(), "bounds");
}
