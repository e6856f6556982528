//! Random instance generators shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use mud_core::{AffineMap, GaussianDensity, LinearGaussianProblem};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

pub fn gaussian_vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| StandardNormal.sample(rng))
}

/// `Q diag(d) Qᵀ` with `d ~ U[lo, hi]` and a random orthogonal `Q`.
pub fn random_spd(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> DMatrix<f64> {
    let q = gaussian_matrix(rng, n, n).qr().q();
    let d = DVector::from_fn(n, |_, _| rng.gen_range(lo..=hi));
    let m = &q * DMatrix::from_diagonal(&d) * q.transpose();
    (&m + m.transpose()) * 0.5
}

/// Random problem with `p` inputs and `m ≤ p` outputs. With `predictable`
/// the observed covariance is shrunk below the smallest predicted eigenvalue.
pub fn random_problem(
    rng: &mut ChaCha8Rng,
    p: usize,
    m: usize,
    predictable: bool,
) -> LinearGaussianProblem {
    let a = gaussian_matrix(rng, m, p);
    let b = gaussian_vector(rng, m);
    let init_cov = random_spd(rng, p, 0.5, 2.0);
    let init_mean = gaussian_vector(rng, p);
    let obs_mean = gaussian_vector(rng, m);
    let mut obs_cov = random_spd(rng, m, 0.5, 2.0);
    if predictable {
        let pred = &a * &init_cov * a.transpose();
        let lmin = pred.symmetric_eigenvalues().min();
        let lmax = obs_cov.symmetric_eigenvalues().max();
        obs_cov *= 0.5 * lmin / lmax;
    }
    LinearGaussianProblem::new(
        AffineMap::new(a, b).unwrap(),
        GaussianDensity::new(init_mean, init_cov).unwrap(),
        GaussianDensity::new(obs_mean, obs_cov).unwrap(),
    )
    .unwrap()
}

pub fn random_dims(rng: &mut ChaCha8Rng, max_p: usize) -> (usize, usize) {
    let p = rng.gen_range(1..=max_p);
    let m = rng.gen_range(1..=p);
    (p, m)
}

pub fn rel_diff_mat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

pub fn rel_diff(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}
