mod common;

use common::{matern, oracle_gp, squared_exp, ORACLE_X, ORACLE_Y};
use multitask_core::domain::CompositionGrid;
use multitask_core::inference::{gp_predict, GpHyper, GpModel, KernelKind};

fn hyper() -> GpHyper {
    GpHyper {
        length_scale: 10.0,
        signal_sd: 5.0,
        noise_sd: 0.1,
    }
}

fn max_abs(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn check(kind: KernelKind, kern: fn(f64, f64, f64) -> f64) {
    let grid = CompositionGrid::standard();
    let model = GpModel::new(kind, &ORACLE_X, &ORACLE_Y, hyper(), 1e-6).unwrap();
    assert_eq!(model.jitter(), 0.0, "well-conditioned system needs no jitter");
    let post = gp_predict(&model, &grid);
    let oracle = oracle_gp(kern, &ORACLE_X, &ORACLE_Y, 10.0, 5.0, 0.1, grid.points());
    assert!(max_abs(&post.mean, &oracle.mean) <= 1e-8);
    assert!(max_abs(&post.sd, &oracle.sd) <= 1e-8);
    assert!((model.log_marginal_likelihood() - oracle.lml).abs() <= 1e-8);
}

#[test]
fn matern_posterior_matches_dense_oracle() {
    check(KernelKind::Matern52, matern);
}

#[test]
fn rbf_posterior_matches_dense_oracle() {
    check(KernelKind::Rbf, squared_exp);
}

#[test]
fn oracle_self_check_single_point() {
    // One observation at zero with unit hyperparameters: -ln(2π)/2.
    let o = oracle_gp(matern, &[50.0], &[0.0], 1.0, 1.0, 0.0, &[50.0]);
    assert!((o.lml + 0.918_938_533_204_672_7).abs() < 1e-12);
    assert!(o.sd[0].abs() < 1e-12);
}
