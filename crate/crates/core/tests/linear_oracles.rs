mod common;

use nalgebra::{DMatrix, DVector};

use common::*;
use mud_core::experiments::{self, SweepConfig};
use mud_core::{least_squares, AffineMap, GaussianDensity, LinearGaussianProblem};

fn grid_argmin(f: impl Fn(&DVector<f64>) -> f64, lo: f64, hi: f64, step: f64) -> DVector<f64> {
    let n = ((hi - lo) / step).round() as usize;
    let mut best = (f64::INFINITY, DVector::zeros(2));
    for i in 0..=n {
        for j in 0..=n {
            let x = DVector::from_vec(vec![lo + i as f64 * step, lo + j as f64 * step]);
            let v = f(&x);
            if v < best.0 {
                best = (v, x);
            }
        }
    }
    best.1
}

#[test]
fn j_grid_minimum_is_the_mud_point() {
    let problem = experiments::reference_problem();
    let step = 0.005;
    let x = grid_argmin(|l| problem.objective_j(l).unwrap(), 0.0, 1.0, step);
    let mud = problem.mud_point().unwrap().estimate;
    assert!((x - &mud).amax() <= step, "grid {mud}");
}

#[test]
fn t_grid_minimum_is_the_map_point() {
    let problem = experiments::reference_problem();
    let step = 0.005;
    let x = grid_argmin(|l| problem.objective_t(l).unwrap(), 0.0, 1.0, step);
    let map = problem.map_point().unwrap().estimate;
    assert!((x - &map).amax() <= step);
}

#[test]
fn posterior_covariance_forms_agree() {
    let mut rng = rng(31);
    for _ in 0..30 {
        let (p, m) = random_dims(&mut rng, 12);
        let problem = random_problem(&mut rng, p, m, false);
        let woodbury = problem.posterior_covariance().unwrap();
        let direct = problem.posterior_covariance_direct().unwrap();
        assert!(rel_diff_mat(&woodbury, &direct) < 1e-9);
    }
}

#[test]
fn j_hessian_is_positive_definite_on_predictable_instances() {
    let mut rng = rng(32);
    for _ in 0..30 {
        let (p, m) = random_dims(&mut rng, 10);
        let problem = random_problem(&mut rng, p, m, true);
        let a = problem.map().matrix();
        let obs_inv = problem
            .observed()
            .covariance()
            .clone()
            .try_inverse()
            .unwrap();
        let hessian = problem.effective_regularization().unwrap() + a.transpose() * obs_inv * a;
        assert!(hessian.symmetric_eigenvalues().min() > 0.0);
    }
}

#[test]
fn least_squares_matches_normal_equations() {
    let mut rng = rng(33);
    let a = gaussian_matrix(&mut rng, 5, 9);
    let b = gaussian_vector(&mut rng, 5);
    let mu = gaussian_vector(&mut rng, 5);
    let map = AffineMap::new(a.clone(), b.clone()).unwrap();
    let x = least_squares(&map, &mu).unwrap();
    // Minimum-norm oracle for a wide full-row-rank matrix: Aᵀ (A Aᵀ)⁻¹ (μ − b).
    let oracle = a.transpose() * (&a * a.transpose()).try_inverse().unwrap() * (&mu - &b);
    assert!(rel_diff(&x, &oracle) < 1e-10);
    let residual = &a * &x + &b - &mu;
    assert!((a.transpose() * residual).amax() < 1e-9);
}

#[test]
fn rank_one_map_moves_along_one_direction() {
    let mut rng = rng(34);
    let p = 6;
    let u = gaussian_vector(&mut rng, 3);
    let v = gaussian_vector(&mut rng, p);
    let a = &u * v.transpose();
    let init_cov = random_spd(&mut rng, p, 0.5, 2.0);
    let problem = LinearGaussianProblem::new(
        AffineMap::linear(a).unwrap(),
        GaussianDensity::new(DVector::zeros(p), init_cov.clone()).unwrap(),
        GaussianDensity::isotropic(gaussian_vector(&mut rng, 3), 0.1).unwrap(),
    )
    .unwrap();
    let step = problem.mud_point().unwrap().estimate;
    let direction = &init_cov * &v;
    let cos = step.dot(&direction) / (step.norm() * direction.norm());
    assert!((cos.abs() - 1.0).abs() < 1e-10);
}

#[test]
fn full_rank_sweep_matches_full_dimension_sweep() {
    let cfg = SweepConfig {
        params: 30,
        steps: Some(vec![30]),
        ..SweepConfig::default()
    };
    let dim = experiments::experiment_dimension_sweep(&cfg).unwrap();
    let rank = experiments::experiment_rank_sweep(&cfg).unwrap();
    let a = DVector::from_vec(dim.estimates[0].estimate.clone());
    let b = DVector::from_vec(rank.estimates[0].estimate.clone());
    assert!(rel_diff(&a, &b) < 1e-8);
}

#[test]
fn rank_sweep_errors_do_not_grow() {
    let cfg = SweepConfig {
        params: 40,
        ..SweepConfig::default()
    };
    let report = experiments::experiment_rank_sweep(&cfg).unwrap();
    assert_eq!(report.summary["mud_monotonicity_violations"], 0);
    assert_eq!(report.summary["lsq_monotonicity_violations"], 0);
}

#[test]
fn identity_prior_dimension_sweep_tracks_least_squares() {
    let cfg = SweepConfig {
        params: 30,
        ..SweepConfig::default()
    };
    let report = experiments::experiment_dimension_sweep(&cfg).unwrap();
    assert!(
        report.summary["identity_prior_lsq_max_gap"]
            .as_f64()
            .unwrap()
            < 1e-8
    );
    let table = report.table("dimension_errors").unwrap();
    assert_eq!(table.rows.len(), 30 * (2 + 2 * cfg.alphas.len()));
}

#[test]
fn spd_fallback_handles_singular_predicted_covariance() {
    // Two identical rows: Σ_pred is singular, the pseudo-inverse path still
    // lands on the data.
    let a = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 0.0, 1.0, 2.0, 0.0]);
    let problem = LinearGaussianProblem::new(
        AffineMap::linear(a).unwrap(),
        GaussianDensity::standard(3),
        GaussianDensity::isotropic(DVector::from_vec(vec![1.0, 1.0]), 0.1).unwrap(),
    )
    .unwrap();
    let mud = problem.mud_point().unwrap();
    assert!(!mud.predictability.ok);
    assert!((problem.map().apply(&mud.estimate) - problem.observed().mean()).norm() < 1e-12);
    assert_eq!(problem.exact_expectation_r(), 0.0);
}
