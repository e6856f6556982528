//! Closed-form estimators for affine maps with Gaussian initial and observed
//! densities.
//!
//! With `Q(λ) = Aλ + b`, `λ ~ N(λ₀, Σ_init)` and `q ~ N(μ_obs, Σ_obs)` the
//! predicted covariance is `Σ_pred = A Σ_init Aᵀ` and the maximal updated
//! density point is
//!
//! ```text
//! λ_mud = λ₀ + Σ_init Aᵀ Σ_pred⁻¹ (μ_obs − b − Aλ₀)
//! ```
//!
//! The module also carries the updated covariance, the effective
//! regularization `R = Σ_init⁻¹ − Aᵀ Σ_pred⁻¹ A`, the Tikhonov (`T`) and
//! data-consistent (`J`) objectives, the Bayesian MAP point and the
//! minimum-norm least-squares solution.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{MudError, Result};
use crate::linalg::{
    default_rank_tol, pseudo_inverse, symmetric_eigenvalues, AffineMap, GaussianDensity,
    SpdFactorization,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Method {
    #[serde(rename = "MUD")]
    Mud,
    #[serde(rename = "MUD-alt")]
    MudAlt,
    #[serde(rename = "MAP")]
    Map,
    #[serde(rename = "LSQ")]
    Lsq,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Mud => "MUD",
            Method::MudAlt => "MUD-alt",
            Method::Map => "MAP",
            Method::Lsq => "LSQ",
        })
    }
}

/// Outcome of comparing the spectra of `Σ_pred` and `Σ_obs`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Predictability {
    pub ok: bool,
    /// `λ_min(Σ_pred) − λ_max(Σ_obs)`.
    pub margin: f64,
}

#[derive(Debug, Clone)]
pub struct EstimateReport {
    pub estimate: DVector<f64>,
    /// Updated covariance for `MudAlt`, posterior covariance for `Map`.
    pub covariance: Option<DMatrix<f64>>,
    pub method: Method,
    pub predictability: Predictability,
}

/// Linear map with Gaussian initial and observed densities.
#[derive(Debug, Clone)]
pub struct LinearGaussianProblem {
    map: AffineMap,
    initial: GaussianDensity,
    observed: GaussianDensity,
    predicted_cov: DMatrix<f64>,
}

impl LinearGaussianProblem {
    pub fn new(
        map: AffineMap,
        initial: GaussianDensity,
        observed: GaussianDensity,
    ) -> Result<Self> {
        if initial.dim() != map.inputs() {
            return Err(MudError::DimensionMismatch {
                context: "initial density vs map inputs",
                expected: map.inputs(),
                found: initial.dim(),
            });
        }
        if observed.dim() != map.outputs() {
            return Err(MudError::DimensionMismatch {
                context: "observed density vs map outputs",
                expected: map.outputs(),
                found: observed.dim(),
            });
        }
        let a = map.matrix();
        let raw = a * initial.covariance() * a.transpose();
        let predicted_cov = (&raw + raw.transpose()) * 0.5;
        Ok(Self {
            map,
            initial,
            observed,
            predicted_cov,
        })
    }

    pub fn map(&self) -> &AffineMap {
        &self.map
    }

    pub fn initial(&self) -> &GaussianDensity {
        &self.initial
    }

    pub fn observed(&self) -> &GaussianDensity {
        &self.observed
    }

    /// Copy of the problem with `Σ_init` multiplied by `alpha`.
    pub fn with_scaled_initial(&self, alpha: f64) -> Self {
        Self::new(
            self.map.clone(),
            self.initial.scaled(alpha),
            self.observed.clone(),
        )
        .expect("scaling keeps dimensions")
    }

    /// `Σ_pred = A Σ_init Aᵀ`.
    pub fn predicted_covariance(&self) -> &DMatrix<f64> {
        &self.predicted_cov
    }

    pub fn check_predictability(&self) -> Predictability {
        let min_pred = symmetric_eigenvalues(&self.predicted_cov)
            .map(|e| e.min())
            .unwrap_or(f64::NAN);
        let max_obs = symmetric_eigenvalues(self.observed.covariance())
            .map(|e| e.max())
            .unwrap_or(f64::NAN);
        let margin = min_pred - max_obs;
        Predictability {
            ok: margin > 0.0,
            margin,
        }
    }

    /// `E(r)` with the exact Gaussian densities: `∫ π_obs = 1` when `Σ_pred` is
    /// nonsingular, and 0 when the predicted density lives on a subspace and
    /// cannot dominate `π_obs`.
    pub fn exact_expectation_r(&self) -> f64 {
        match self.predicted_factor() {
            Ok(f) if f.is_full_rank() => 1.0,
            _ => 0.0,
        }
    }

    /// `μ_obs − b − Aλ₀`.
    fn residual(&self) -> DVector<f64> {
        self.observed.mean() - self.map.apply(self.initial.mean())
    }

    fn predicted_factor(&self) -> Result<SpdFactorization> {
        SpdFactorization::new(&self.predicted_cov)
    }

    fn strict_predicted_factor(&self) -> Result<SpdFactorization> {
        let f = self.predicted_factor()?;
        if !f.is_full_rank() {
            return Err(MudError::Singular {
                what: "predicted covariance",
            });
        }
        Ok(f)
    }

    fn observed_factor(&self) -> Result<SpdFactorization> {
        let f = SpdFactorization::new(self.observed.covariance())?;
        if !f.is_full_rank() {
            return Err(MudError::Singular {
                what: "observed covariance",
            });
        }
        Ok(f)
    }

    fn initial_factor(&self) -> Result<SpdFactorization> {
        let f = SpdFactorization::new(self.initial.covariance())?;
        if !f.is_full_rank() {
            return Err(MudError::Singular {
                what: "initial covariance",
            });
        }
        Ok(f)
    }

    fn reject_overdetermined(&self) -> Result<()> {
        let (m, p) = (self.map.outputs(), self.map.inputs());
        if m > p && self.map.rank() == p {
            return Err(MudError::Overdetermined { rows: m, cols: p });
        }
        Ok(())
    }

    /// MUD point in the low-FLOP form. A rank-deficient `Σ_pred` is replaced
    /// by its pseudo-inverse; a failed predictability check only sets the flag
    /// on the report.
    pub fn mud_point(&self) -> Result<EstimateReport> {
        self.reject_overdetermined()?;
        let a = self.map.matrix();
        let weights = self.predicted_factor()?.solve_vec(&self.residual())?;
        let estimate = self.initial.mean() + self.initial.covariance() * (a.transpose() * weights);
        Ok(EstimateReport {
            estimate,
            covariance: None,
            method: Method::Mud,
            predictability: self.check_predictability(),
        })
    }

    /// MUD point through the updated covariance,
    /// `λ₀ + Σ_up Aᵀ Σ_obs⁻¹ (μ_obs − b − Aλ₀)`. Requires a positive
    /// predictability margin.
    pub fn mud_point_alt(&self) -> Result<EstimateReport> {
        self.reject_overdetermined()?;
        let predictability = self.check_predictability();
        if !predictability.ok {
            return Err(MudError::PredictabilityViolated {
                margin: predictability.margin,
            });
        }
        let obs = self.observed_factor()?;
        let updated = self.updated_covariance()?;
        let a = self.map.matrix();
        let estimate =
            self.initial.mean() + &updated * (a.transpose() * obs.solve_vec(&self.residual())?);
        Ok(EstimateReport {
            estimate,
            covariance: Some(updated),
            method: Method::MudAlt,
            predictability,
        })
    }

    /// `Σ_up = Σ_init − Σ_init Aᵀ Σ_pred⁻¹ [Σ_pred − Σ_obs] Σ_pred⁻¹ A Σ_init`.
    pub fn updated_covariance(&self) -> Result<DMatrix<f64>> {
        self.updated_covariance_with(self.strict_predicted_factor()?)
    }

    /// As [`updated_covariance`](Self::updated_covariance) but substituting
    /// the pseudo-inverse of a rank-deficient `Σ_pred`.
    pub fn updated_covariance_pinv(&self) -> Result<DMatrix<f64>> {
        self.updated_covariance_with(self.predicted_factor()?)
    }

    fn updated_covariance_with(&self, pred: SpdFactorization) -> Result<DMatrix<f64>> {
        let a = self.map.matrix();
        let init = self.initial.covariance();
        // G = Σ_pred⁻¹ A Σ_init
        let gain = pred.solve(&(a * init))?;
        let bracket = &self.predicted_cov - self.observed.covariance();
        let up = init - gain.transpose() * bracket * &gain;
        Ok((&up + up.transpose()) * 0.5)
    }

    /// `R = Σ_init⁻¹ − Aᵀ Σ_pred⁻¹ A`.
    pub fn effective_regularization(&self) -> Result<DMatrix<f64>> {
        let init_inv = self.initial_factor()?.inverse();
        let a = self.map.matrix();
        let r = init_inv - a.transpose() * self.strict_predicted_factor()?.solve(a)?;
        Ok((&r + r.transpose()) * 0.5)
    }

    fn check_param(&self, lambda: &DVector<f64>) -> Result<()> {
        if lambda.len() != self.map.inputs() {
            return Err(MudError::DimensionMismatch {
                context: "parameter vector",
                expected: self.map.inputs(),
                found: lambda.len(),
            });
        }
        Ok(())
    }

    /// `‖Q(λ) − μ_obs‖²` in the `Σ_obs⁻¹` norm.
    pub fn data_mismatch(&self, lambda: &DVector<f64>) -> Result<f64> {
        self.check_param(lambda)?;
        let r = self.map.apply(lambda) - self.observed.mean();
        Ok(r.dot(&self.observed_factor()?.solve_vec(&r)?))
    }

    /// Tikhonov functional `T(λ) = ‖Q(λ) − μ_obs‖²_{Σ_obs⁻¹} + ‖λ − λ₀‖²_{Σ_init⁻¹}`.
    pub fn objective_t(&self, lambda: &DVector<f64>) -> Result<f64> {
        let misfit = self.data_mismatch(lambda)?;
        let d = lambda - self.initial.mean();
        Ok(misfit + d.dot(&self.initial_factor()?.solve_vec(&d)?))
    }

    /// `J(λ) = T(λ) − ‖Q(λ) − Q(λ₀)‖²_{Σ_pred⁻¹}`.
    pub fn objective_j(&self, lambda: &DVector<f64>) -> Result<f64> {
        let t = self.objective_t(lambda)?;
        let dq = self.map.matrix() * (lambda - self.initial.mean());
        Ok(t - dq.dot(&self.strict_predicted_factor()?.solve_vec(&dq)?))
    }

    /// `J` written as data mismatch plus `‖λ − λ₀‖²_R`.
    pub fn objective_j_regularized(&self, lambda: &DVector<f64>) -> Result<f64> {
        let misfit = self.data_mismatch(lambda)?;
        let d = lambda - self.initial.mean();
        let r = self.effective_regularization()?;
        Ok(misfit + d.dot(&(r * &d)))
    }

    /// Posterior covariance `(Aᵀ Σ_obs⁻¹ A + Σ_init⁻¹)⁻¹` by direct inversion.
    pub fn posterior_covariance_direct(&self) -> Result<DMatrix<f64>> {
        let a = self.map.matrix();
        let precision =
            a.transpose() * self.observed_factor()?.solve(a)? + self.initial_factor()?.inverse();
        let f = SpdFactorization::new(&precision)?;
        if !f.is_full_rank() {
            return Err(MudError::Singular {
                what: "posterior precision",
            });
        }
        Ok(f.inverse())
    }

    /// Posterior covariance via Woodbury,
    // Σ_pred + Σ_obs is SPD whenever Σ_obs is, so no rank cutoff is applied
    // first. When Σ_obs is below the resolution of Σ_pred the sum is
    // numerically singular; the pseudo-inverse then gives the Σ_obs → 0 limit.
    fn innovation(&self) -> Result<SpdFactorization> {
        let sum = &self.predicted_cov + self.observed.covariance();
        let exact = SpdFactorization::with_tolerance(&sum, 0.0)?;
        if exact.is_full_rank() {
            return Ok(exact);
        }
        log::debug!("innovation covariance numerically singular; using pseudo-inverse");
        SpdFactorization::new(&sum)
    }

    /// `Σ_init − Σ_init Aᵀ (Σ_pred + Σ_obs)⁻¹ A Σ_init`.
    pub fn posterior_covariance(&self) -> Result<DMatrix<f64>> {
        self.initial_factor()?;
        let a = self.map.matrix();
        let init = self.initial.covariance();
        let innovation = self.innovation()?;
        let a_init = a * init;
        let post = init - a_init.transpose() * innovation.solve(&a_init)?;
        Ok((&post + post.transpose()) * 0.5)
    }

    /// MAP point with the initial density acting as the prior.
    ///
    /// The estimate is evaluated as `λ₀ + Σ_init Aᵀ (Σ_pred + Σ_obs)⁻¹ r`,
    /// which equals `λ₀ + Σ_post Aᵀ Σ_obs⁻¹ r` but stays accurate when
    /// `Σ_obs` is tiny.
    pub fn map_point(&self) -> Result<EstimateReport> {
        self.observed_factor()?;
        let posterior = self.posterior_covariance()?;
        let a = self.map.matrix();
        let innovation = self.innovation()?;
        let estimate = self.initial.mean()
            + self.initial.covariance()
                * (a.transpose() * innovation.solve_vec(&self.residual())?);
        Ok(EstimateReport {
            estimate,
            covariance: Some(posterior),
            method: Method::Map,
            predictability: self.check_predictability(),
        })
    }
}

/// Minimum-norm least-squares solution `A⁺(μ_obs − b)`.
pub fn least_squares(map: &AffineMap, observed_mean: &DVector<f64>) -> Result<DVector<f64>> {
    if observed_mean.len() != map.outputs() {
        return Err(MudError::DimensionMismatch {
            context: "least squares data",
            expected: map.outputs(),
            found: observed_mean.len(),
        });
    }
    let a = map.matrix();
    if a.is_empty() {
        return Ok(DVector::zeros(map.inputs()));
    }
    let pinv = pseudo_inverse(a, default_rank_tol(a.nrows(), a.ncols()))?;
    Ok(pinv * (observed_mean - map.bias()))
}

/// `‖estimate − reference‖₂ / ‖reference‖₂`.
pub fn relative_error(estimate: &DVector<f64>, reference: &DVector<f64>) -> f64 {
    (estimate - reference).norm() / reference.norm()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference_problem(obs_var: f64) -> LinearGaussianProblem {
        let map = AffineMap::linear(DMatrix::from_row_slice(1, 2, &[1.0, 1.0])).unwrap();
        let initial = GaussianDensity::new(
            DVector::from_vec(vec![0.25, 0.25]),
            DMatrix::from_row_slice(2, 2, &[1.0, -0.25, -0.25, 0.5]),
        )
        .unwrap();
        let observed = GaussianDensity::new(
            DVector::from_element(1, 1.0),
            DMatrix::from_element(1, 1, obs_var),
        )
        .unwrap();
        LinearGaussianProblem::new(map, initial, observed).unwrap()
    }

    fn scalar_problem(mu: f64) -> LinearGaussianProblem {
        LinearGaussianProblem::new(
            AffineMap::linear(DMatrix::identity(1, 1)).unwrap(),
            GaussianDensity::standard(1),
            GaussianDensity::new(DVector::from_element(1, mu), DMatrix::identity(1, 1)).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn predicted_covariance_hand_expansion() {
        let p = reference_problem(0.25);
        assert!((p.predicted_covariance()[(0, 0)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn predictability_margins() {
        let make = |pred: f64| {
            LinearGaussianProblem::new(
                AffineMap::linear(DMatrix::identity(2, 2) * pred.sqrt()).unwrap(),
                GaussianDensity::standard(2),
                GaussianDensity::standard(2),
            )
            .unwrap()
            .check_predictability()
        };
        let ok = make(4.0);
        assert!(ok.ok && (ok.margin - 3.0).abs() < 1e-12);
        let bad = make(0.5);
        assert!(!bad.ok && (bad.margin + 0.5).abs() < 1e-12);
    }

    #[test]
    fn reference_mud_point() {
        let p = reference_problem(0.25);
        let mud = p.mud_point().unwrap();
        assert!((mud.estimate[0] - 0.625).abs() < 1e-14);
        assert!((mud.estimate[1] - 0.375).abs() < 1e-14);
        assert!(mud.covariance.is_none());
        let alt = p.mud_point_alt().unwrap();
        assert!((alt.estimate - &mud.estimate).norm() < 1e-12);
        assert!(alt.covariance.is_some());
    }

    #[test]
    fn zero_residual_returns_initial_mean() {
        let p = reference_problem(0.25);
        let shifted = LinearGaussianProblem::new(
            p.map().clone(),
            p.initial().clone(),
            GaussianDensity::new(
                DVector::from_element(1, 0.5),
                DMatrix::from_element(1, 1, 0.25),
            )
            .unwrap(),
        )
        .unwrap();
        assert!((shifted.mud_point().unwrap().estimate - p.initial().mean()).norm() < 1e-15);
    }

    #[test]
    fn alt_rejects_unpredictable() {
        let p = reference_problem(2.0);
        assert!(matches!(
            p.mud_point_alt(),
            Err(MudError::PredictabilityViolated { .. })
        ));
        let mud = p.mud_point().unwrap();
        assert!(!mud.predictability.ok);
    }

    #[test]
    fn overdetermined_is_rejected() {
        let p = LinearGaussianProblem::new(
            AffineMap::linear(DMatrix::from_row_slice(2, 1, &[1.0, 2.0])).unwrap(),
            GaussianDensity::standard(1),
            GaussianDensity::standard(2),
        )
        .unwrap();
        assert!(matches!(
            p.mud_point(),
            Err(MudError::Overdetermined { rows: 2, cols: 1 })
        ));
    }

    #[test]
    fn updated_covariance_special_cases() {
        // Σ_obs = Σ_pred leaves Σ_init untouched.
        let p = reference_problem(1.0);
        assert!(
            (p.updated_covariance().unwrap() - p.initial().covariance())
                .abs()
                .max()
                < 1e-15
        );

        let sigma2 = 0.09;
        let q = LinearGaussianProblem::new(
            AffineMap::linear(DMatrix::identity(3, 3)).unwrap(),
            GaussianDensity::standard(3),
            GaussianDensity::isotropic(DVector::zeros(3), 0.3).unwrap(),
        )
        .unwrap();
        let up = q.updated_covariance().unwrap();
        assert!((up - DMatrix::identity(3, 3) * sigma2).abs().max() < 1e-14);
    }

    #[test]
    fn effective_regularization_cases() {
        let square = LinearGaussianProblem::new(
            AffineMap::linear(DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 1.0])).unwrap(),
            GaussianDensity::standard(2),
            GaussianDensity::standard(2),
        )
        .unwrap();
        assert!(square.effective_regularization().unwrap().abs().max() < 1e-12);

        let proj = LinearGaussianProblem::new(
            AffineMap::linear(DMatrix::from_row_slice(1, 2, &[1.0, 0.0])).unwrap(),
            GaussianDensity::standard(2),
            GaussianDensity::standard(1),
        )
        .unwrap();
        let r = proj.effective_regularization().unwrap();
        assert!(
            (r - DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, 1.0])))
                .abs()
                .max()
                < 1e-15
        );
    }

    #[test]
    fn scalar_objective_and_map() {
        let p = scalar_problem(1.0);
        let one = DVector::from_element(1, 1.0);
        assert!((p.objective_t(&one).unwrap() - 1.0).abs() < 1e-15);
        assert!(p.objective_t(&DVector::zeros(1)).unwrap() > 0.0);
        let map = p.map_point().unwrap();
        assert!((map.estimate[0] - 0.5).abs() < 1e-15);
        assert!((map.covariance.unwrap()[(0, 0)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn objectives_vanish_at_consistent_initial_mean() {
        let p = scalar_problem(0.0);
        let zero = DVector::zeros(1);
        assert_eq!(p.objective_t(&zero).unwrap(), 0.0);
        assert_eq!(p.objective_j(&zero).unwrap(), 0.0);
        assert_eq!(p.map_point().unwrap().estimate[0], 0.0);
    }

    #[test]
    fn reference_j_decreases_toward_mud() {
        let p = reference_problem(0.25);
        let j_mud = p
            .objective_j(&DVector::from_vec(vec![0.625, 0.375]))
            .unwrap();
        let j0 = p.objective_j(p.initial().mean()).unwrap();
        assert!(j_mud < j0);
    }

    #[test]
    fn least_squares_basics() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]);
        let b = DVector::from_vec(vec![1.0, -1.0]);
        let map = AffineMap::new(a.clone(), b.clone()).unwrap();
        let mu = DVector::from_vec(vec![3.0, 4.0]);
        let x = least_squares(&map, &mu).unwrap();
        let direct = a.try_inverse().unwrap() * (&mu - &b);
        assert!((x - direct).norm() < 1e-12);
        assert_eq!(least_squares(&map, &b).unwrap().norm(), 0.0);
    }

    #[test]
    fn relative_error_zero_for_exact() {
        let v = DVector::from_vec(vec![1.0, 2.0]);
        assert_eq!(relative_error(&v, &v), 0.0);
    }
}
