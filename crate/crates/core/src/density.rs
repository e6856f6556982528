//! Sample-based solution of the stochastic inverse problem.
//!
//! The updated density is evaluated on an ensemble drawn from the initial
//! density: `π_up(λ_k) = π_init(λ_k) · r_k` with the ratio
//! `r_k = π_obs(Q(λ_k)) / π_pred(Q(λ_k))`. The predicted density is usually a
//! Gaussian KDE of the pushed-forward samples. The sample mean of `r` is the
//! `E(r)` diagnostic, which sits near one when the update is trustworthy.

use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble::SampleEnsemble;
use crate::error::{MudError, Result};
use crate::linalg::GaussianPdf;
use crate::qoi::{build_residual_matrix, fit_pca, MeasurementData};

/// A probability density that can be evaluated pointwise.
pub trait Density: Send + Sync {
    fn dim(&self) -> usize;
    fn pdf(&self, x: &[f64]) -> f64;
}

impl Density for GaussianPdf {
    fn dim(&self) -> usize {
        GaussianPdf::dim(self)
    }

    fn pdf(&self, x: &[f64]) -> f64 {
        GaussianPdf::pdf(self, x)
    }
}

/// Evaluates `density` at every row of `points`. Rows are processed in
/// parallel; each value is computed independently so the output does not
/// depend on the thread count.
pub fn evaluate_rows(density: &dyn Density, points: &DMatrix<f64>) -> Vec<f64> {
    (0..points.nrows())
        .into_par_iter()
        .map(|k| {
            let row: Vec<f64> = points.row(k).iter().copied().collect();
            density.pdf(&row)
        })
        .collect()
}

/// Uniform density on an axis-aligned box.
#[derive(Debug, Clone)]
pub struct UniformBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
    value: f64,
}

impl UniformBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(MudError::DimensionMismatch {
                context: "uniform box bounds",
                expected: lower.len(),
                found: upper.len(),
            });
        }
        let mut volume = 1.0;
        for (lo, hi) in lower.iter().zip(&upper) {
            if !(lo.is_finite() && hi.is_finite()) || hi < lo {
                return Err(MudError::InvalidArgument(format!(
                    "invalid interval [{lo}, {hi}]"
                )));
            }
            volume *= hi - lo;
        }
        // A flat box (zero width somewhere) still gets a finite constant so
        // argmax over samples keeps working.
        let value = if volume > 0.0 { 1.0 / volume } else { 1.0 };
        Ok(Self {
            lower,
            upper,
            value,
        })
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }
}

impl Density for UniformBox {
    fn dim(&self) -> usize {
        self.lower.len()
    }

    fn pdf(&self, x: &[f64]) -> f64 {
        let inside = x
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi);
        if inside {
            self.value
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BandwidthRule {
    #[default]
    Scott,
    Silverman,
}

impl BandwidthRule {
    /// Scalar factor multiplying the per-dimension standard deviation.
    pub fn factor(self, n_eff: f64, dim: usize) -> f64 {
        let d = dim as f64;
        match self {
            BandwidthRule::Scott => n_eff.powf(-1.0 / (d + 4.0)),
            BandwidthRule::Silverman => (4.0 / (d + 2.0) / n_eff).powf(1.0 / (d + 4.0)),
        }
    }
}

impl FromStr for BandwidthRule {
    type Err = MudError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "scott" => Ok(BandwidthRule::Scott),
            "silverman" => Ok(BandwidthRule::Silverman),
            other => Err(MudError::InvalidArgument(format!(
                "unknown bandwidth rule '{other}'"
            ))),
        }
    }
}

impl std::fmt::Display for BandwidthRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BandwidthRule::Scott => "scott",
            BandwidthRule::Silverman => "silverman",
        })
    }
}

/// Relative floor applied to the bandwidth of a dimension with no spread.
pub const DEGENERATE_BANDWIDTH_FLOOR: f64 = 1e-8;

/// Gaussian product-kernel density estimate with a diagonal bandwidth.
#[derive(Debug, Clone)]
pub struct KdeModel {
    /// Support points, one row per sample.
    points: Vec<Vec<f64>>,
    /// Normalized weights summing to one.
    weights: Vec<f64>,
    bandwidth: Vec<f64>,
    rule: BandwidthRule,
    degenerate_dims: Vec<usize>,
    norm: f64,
}

/// Fits an unweighted KDE to the rows of `points`.
pub fn fit_kde(points: &DMatrix<f64>, rule: BandwidthRule) -> Result<KdeModel> {
    fit_kde_weighted(points, None, rule)
}

pub fn fit_kde_weighted(
    points: &DMatrix<f64>,
    weights: Option<&DVector<f64>>,
    rule: BandwidthRule,
) -> Result<KdeModel> {
    let (s, k) = points.shape();
    if s < 2 {
        return Err(MudError::InvalidArgument(format!(
            "KDE needs at least 2 samples, got {s}"
        )));
    }
    if k < 1 {
        return Err(MudError::InvalidArgument(
            "KDE needs at least one dimension".into(),
        ));
    }
    let w: Vec<f64> = match weights {
        Some(w) => {
            if w.len() != s {
                return Err(MudError::DimensionMismatch {
                    context: "KDE weights",
                    expected: s,
                    found: w.len(),
                });
            }
            let total: f64 = w.iter().sum();
            if w.iter().any(|v| !v.is_finite() || *v < 0.0) || !(total > 0.0) {
                return Err(MudError::InvalidArgument(
                    "KDE weights must be non-negative with positive sum".into(),
                ));
            }
            w.iter().map(|v| v / total).collect()
        }
        None => vec![1.0 / s as f64; s],
    };
    let sum_sq: f64 = w.iter().map(|v| v * v).sum();
    let n_eff = 1.0 / sum_sq;
    let factor = rule.factor(n_eff, k);

    let mut bandwidth = Vec::with_capacity(k);
    let mut degenerate_dims = Vec::new();
    for d in 0..k {
        let col = points.column(d);
        let mean: f64 = col.iter().zip(&w).map(|(x, wi)| x * wi).sum();
        let var: f64 = col
            .iter()
            .zip(&w)
            .map(|(x, wi)| wi * (x - mean).powi(2))
            .sum::<f64>()
            / (1.0 - sum_sq);
        let std = var.max(0.0).sqrt();
        let range = col.max() - col.min();
        if !range.is_finite() || !mean.is_finite() {
            return Err(MudError::InvalidArgument(format!(
                "non-finite KDE data in dimension {d}"
            )));
        }
        if std > 0.0 && std * factor > DEGENERATE_BANDWIDTH_FLOOR * range {
            bandwidth.push(std * factor);
        } else {
            let base = if range > 0.0 {
                range
            } else {
                mean.abs().max(1.0)
            };
            log::warn!("KDE dimension {d} has no spread; using floor bandwidth");
            degenerate_dims.push(d);
            bandwidth.push(DEGENERATE_BANDWIDTH_FLOOR * base);
        }
    }

    let norm = bandwidth
        .iter()
        .map(|h| 1.0 / (h * (2.0 * std::f64::consts::PI).sqrt()))
        .product();
    Ok(KdeModel {
        points: (0..s)
            .map(|i| points.row(i).iter().copied().collect())
            .collect(),
        weights: w,
        bandwidth,
        rule,
        degenerate_dims,
        norm,
    })
}

impl KdeModel {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn bandwidth(&self) -> &[f64] {
        &self.bandwidth
    }

    /// Diagonal bandwidth matrix `diag(h_d²)` used as the kernel covariance.
    pub fn bandwidth_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_iterator(
            self.bandwidth.len(),
            self.bandwidth.iter().map(|h| h * h),
        ))
    }

    pub fn rule(&self) -> BandwidthRule {
        self.rule
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    /// Dimensions where the floor bandwidth was used.
    pub fn degenerate_dims(&self) -> &[usize] {
        &self.degenerate_dims
    }

    /// Weighted mean of the support points.
    pub fn mean(&self) -> Vec<f64> {
        let k = self.bandwidth.len();
        let mut mean = vec![0.0; k];
        for (p, w) in self.points.iter().zip(&self.weights) {
            for d in 0..k {
                mean[d] += w * p[d];
            }
        }
        mean
    }

    /// Covariance of the fitted mixture: weighted sample covariance plus the
    /// kernel covariance.
    pub fn covariance(&self) -> DMatrix<f64> {
        let k = self.bandwidth.len();
        let mean = self.mean();
        let mut cov = self.bandwidth_matrix();
        for (p, w) in self.points.iter().zip(&self.weights) {
            for a in 0..k {
                for b in 0..k {
                    cov[(a, b)] += w * (p[a] - mean[a]) * (p[b] - mean[b]);
                }
            }
        }
        cov
    }
}

impl Density for KdeModel {
    fn dim(&self) -> usize {
        self.bandwidth.len()
    }

    fn pdf(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.bandwidth.len());
        let mut total = 0.0;
        for (p, w) in self.points.iter().zip(&self.weights) {
            let mut q = 0.0;
            for ((xi, pi), h) in x.iter().zip(p).zip(&self.bandwidth) {
                let z = (xi - pi) / h;
                q += z * z;
            }
            total += w * (-0.5 * q).exp();
        }
        total * self.norm
    }
}

/// KDE of the ensemble's model outputs, honouring ensemble weights.
pub fn predicted_density(ensemble: &SampleEnsemble, rule: BandwidthRule) -> Result<KdeModel> {
    if ensemble.qoi_dim() > 5 {
        log::warn!(
            "predicted density over {} outputs; KDE accuracy degrades quickly with dimension",
            ensemble.qoi_dim()
        );
    }
    fit_kde_weighted(ensemble.qoi(), ensemble.weights(), rule)
}

#[derive(Debug, Clone)]
pub struct UpdateResult {
    /// `π_obs(Q(λ_k)) / π_pred(Q(λ_k))`, zero where the predicted density vanished.
    pub ratios: Vec<f64>,
    /// `π_init(λ_k) · r_k`.
    pub updated: Vec<f64>,
    /// Weighted sample mean of the ratios.
    pub e_r: f64,
    pub mud_index: usize,
    pub mud_point: DVector<f64>,
    /// Samples whose predicted density was zero or non-finite.
    pub violations: usize,
}

impl UpdateResult {
    /// Mean of the model outputs under the updated density, i.e. the
    /// ratio-weighted ensemble mean of `Q(λ_k)`.
    pub fn pushforward_mean(&self, ensemble: &SampleEnsemble) -> Vec<f64> {
        let base = |k: usize| ensemble.weights().map_or(1.0, |w| w[k]);
        let mut total = 0.0;
        let mut mean = vec![0.0; ensemble.qoi_dim()];
        for (k, r) in self.ratios.iter().enumerate() {
            let wk = base(k) * r;
            total += wk;
            for (d, m) in mean.iter_mut().enumerate() {
                *m += wk * ensemble.qoi()[(k, d)];
            }
        }
        mean.iter().map(|m| m / total).collect()
    }
}

/// Evaluates the updated density on the ensemble and picks the sample that
/// maximizes it.
pub fn update(
    ensemble: &SampleEnsemble,
    observed: &dyn Density,
    predicted: &dyn Density,
) -> Result<UpdateResult> {
    for (what, dim) in [
        ("observed density", observed.dim()),
        ("predicted density", predicted.dim()),
    ] {
        if dim != ensemble.qoi_dim() {
            return Err(MudError::DimensionMismatch {
                context: what,
                expected: ensemble.qoi_dim(),
                found: dim,
            });
        }
    }
    let obs = evaluate_rows(observed, ensemble.qoi());
    let pred = evaluate_rows(predicted, ensemble.qoi());
    let init = evaluate_rows(ensemble.initial().as_ref(), ensemble.params());

    let mut violations = 0;
    let ratios: Vec<f64> = obs
        .iter()
        .zip(&pred)
        .map(|(&o, &p)| {
            if p > 0.0 && p.is_finite() {
                o / p
            } else {
                violations += 1;
                0.0
            }
        })
        .collect();
    if ratios.iter().all(|&r| r == 0.0) {
        return Err(MudError::TotalPredictabilityFailure);
    }
    if violations > 0 {
        log::warn!("{violations} samples have zero predicted density");
    }
    let updated: Vec<f64> = init.iter().zip(&ratios).map(|(i, r)| i * r).collect();

    let e_r = match ensemble.weights() {
        Some(w) => {
            ratios
                .iter()
                .zip(w.iter())
                .map(|(r, wk)| r * wk)
                .sum::<f64>()
                / w.sum()
        }
        None => ratios.iter().sum::<f64>() / ratios.len() as f64,
    };

    let mut mud_index = 0;
    for (k, v) in updated.iter().enumerate() {
        if *v > updated[mud_index] {
            mud_index = k;
        }
    }
    let mud_point = ensemble.params().row(mud_index).transpose();
    Ok(UpdateResult {
        ratios,
        updated,
        e_r,
        mud_index,
        mud_point,
        violations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Verdict {
    Ok,
    Suspect,
}

/// Acceptance interval for `E(r)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DiagnosticBand {
    pub lo: f64,
    pub hi: f64,
}

impl Default for DiagnosticBand {
    fn default() -> Self {
        Self { lo: 0.9, hi: 1.1 }
    }
}

impl DiagnosticBand {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo <= 1.0 && hi >= 1.0) {
            return Err(MudError::InvalidArgument(format!(
                "diagnostic band [{lo}, {hi}] must contain 1"
            )));
        }
        Ok(Self { lo, hi })
    }

    pub fn verdict(&self, e_r: f64) -> Verdict {
        if e_r >= self.lo && e_r <= self.hi {
            Verdict::Ok
        } else {
            Verdict::Suspect
        }
    }
}

impl FromStr for DiagnosticBand {
    type Err = MudError;

    fn from_str(s: &str) -> Result<Self> {
        let (lo, hi) = s
            .split_once(',')
            .ok_or_else(|| MudError::InvalidArgument(format!("expected LO,HI, got '{s}'")))?;
        let parse = |v: &str| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| MudError::InvalidArgument(format!("bad band value '{v}'")))
        };
        Self::new(parse(lo)?, parse(hi)?)
    }
}

pub fn expectation_r(result: &UpdateResult, band: &DiagnosticBand) -> (f64, Verdict) {
    (result.e_r, band.verdict(result.e_r))
}

/// Local tensor-grid search around `start` for a higher updated density.
///
/// `map` evaluates the model outputs at a parameter. Returns the best point
/// and its updated density value; `start` is returned when nothing beats it.
pub fn refine_mud_point(
    start: &[f64],
    half_width: &[f64],
    points_per_dim: usize,
    map: &(dyn Fn(&[f64]) -> Vec<f64> + Sync),
    initial: &dyn Density,
    observed: &dyn Density,
    predicted: &dyn Density,
) -> Result<(Vec<f64>, f64)> {
    let p = start.len();
    if half_width.len() != p {
        return Err(MudError::DimensionMismatch {
            context: "refinement half widths",
            expected: p,
            found: half_width.len(),
        });
    }
    if points_per_dim < 2 {
        return Err(MudError::InvalidArgument(
            "refinement needs at least 2 points per dimension".into(),
        ));
    }
    let total = (points_per_dim as f64).powi(p as i32);
    if total > 1e6 {
        return Err(MudError::InvalidArgument(format!(
            "refinement grid of {total} points is too large"
        )));
    }
    let value = |x: &[f64]| {
        let q = map(x);
        let pred = predicted.pdf(&q);
        if pred > 0.0 && pred.is_finite() {
            initial.pdf(x) * observed.pdf(&q) / pred
        } else {
            0.0
        }
    };
    let n = total as usize;
    let candidates: Vec<(Vec<f64>, f64)> = (0..n)
        .into_par_iter()
        .map(|mut idx| {
            let x: Vec<f64> = (0..p)
                .map(|d| {
                    let i = idx % points_per_dim;
                    idx /= points_per_dim;
                    let t = i as f64 / (points_per_dim - 1) as f64;
                    start[d] - half_width[d] + 2.0 * half_width[d] * t
                })
                .collect();
            let v = value(&x);
            (x, v)
        })
        .collect();
    let mut best = (start.to_vec(), value(start));
    for (x, v) in candidates {
        if v > best.1 {
            best = (x, v);
        }
    }
    Ok(best)
}

/// One row of the component-count comparison.
#[derive(Debug, Clone, Serialize)]
pub struct ComponentTrial {
    pub components: usize,
    pub e_r: f64,
    pub verdict: Verdict,
    pub mud_index: usize,
}

#[derive(Debug, Clone)]
pub struct PcaSelection {
    pub chosen: usize,
    pub trials: Vec<ComponentTrial>,
    /// Update performed with the chosen component count.
    pub result: UpdateResult,
    /// The ensemble re-expressed in the chosen PCA coordinates.
    pub reduced: SampleEnsemble,
    pub pca: crate::qoi::PcaMap,
}

/// Runs the full update for each candidate number of principal components,
/// with a standard normal observed density on the PCA outputs.
///
/// The chosen count is the largest candidate whose `E(r)` lies in `band`;
/// when none does, the candidate with `E(r)` closest to one.
pub fn select_pca_components(
    ensemble: &SampleEnsemble,
    data: &MeasurementData,
    candidates: &[usize],
    band: &DiagnosticBand,
    rule: BandwidthRule,
) -> Result<PcaSelection> {
    if candidates.is_empty() {
        return Err(MudError::InvalidArgument(
            "no candidate component counts".into(),
        ));
    }
    let residuals = build_residual_matrix(ensemble, data)?;
    let max_count = *candidates.iter().max().expect("non-empty");
    let full = fit_pca(&residuals, 1.0, max_count)?;

    let mut trials = Vec::with_capacity(candidates.len());
    let mut runs = Vec::with_capacity(candidates.len());
    for &count in candidates {
        let pca = full.with_components(count)?;
        let reduced = ensemble.with_qoi(pca.apply_batch(residuals.values())?)?;
        let predicted = predicted_density(&reduced, rule)?;
        let observed = crate::linalg::GaussianDensity::standard(count).evaluator()?;
        let result = update(&reduced, &observed, &predicted)?;
        let (e_r, verdict) = expectation_r(&result, band);
        trials.push(ComponentTrial {
            components: count,
            e_r,
            verdict,
            mud_index: result.mud_index,
        });
        runs.push((pca, reduced, result));
    }

    let in_band = trials
        .iter()
        .enumerate()
        .filter(|(_, t)| t.verdict == Verdict::Ok)
        .max_by_key(|(_, t)| t.components)
        .map(|(i, _)| i);
    let pick = in_band.unwrap_or_else(|| {
        trials
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1.e_r - 1.0).abs().total_cmp(&(b.1.e_r - 1.0).abs()))
            .map(|(i, _)| i)
            .expect("non-empty")
    });
    let chosen = trials[pick].components;
    let (pca, reduced, result) = runs.swap_remove(pick);
    Ok(PcaSelection {
        chosen,
        trials,
        result,
        reduced,
        pca,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    use crate::linalg::GaussianDensity;

    fn brute_force_kde(points: &DMatrix<f64>, h: &[f64], x: &[f64]) -> f64 {
        let s = points.nrows();
        let mut total = 0.0;
        for i in 0..s {
            let mut kernel = 1.0;
            for d in 0..x.len() {
                let z = (x[d] - points[(i, d)]) / h[d];
                kernel *= (-0.5 * z * z).exp() / (h[d] * (2.0 * std::f64::consts::PI).sqrt());
            }
            total += kernel;
        }
        total / s as f64
    }

    #[test]
    fn kde_matches_kernel_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts = DMatrix::from_fn(200, 2, |_, _| StandardNormal.sample(&mut rng));
        let kde = fit_kde(&pts, BandwidthRule::Scott).unwrap();
        for _ in 0..100 {
            let x: Vec<f64> = (0..2).map(|_| StandardNormal.sample(&mut rng)).collect();
            let a = kde.pdf(&x);
            let b = brute_force_kde(&pts, kde.bandwidth(), &x);
            assert!((a - b).abs() <= 1e-12 * b.max(1.0));
        }
    }

    #[test]
    fn scott_and_silverman_factors() {
        let pts = DMatrix::from_column_slice(4, 1, &[0.0, 1.0, 2.0, 3.0]);
        let std = (5.0f64 / 3.0).sqrt();
        let scott = fit_kde(&pts, BandwidthRule::Scott).unwrap();
        assert!((scott.bandwidth()[0] - std * 4f64.powf(-0.2)).abs() < 1e-14);
        let silverman = fit_kde(&pts, BandwidthRule::Silverman).unwrap();
        assert!((silverman.bandwidth()[0] - std * (4.0 / 3.0 / 4.0f64).powf(0.2)).abs() < 1e-14);
    }

    #[test]
    fn kde_unimodal_around_tight_cluster() {
        let pts = DMatrix::from_column_slice(
            5,
            1,
            &[1.0, 1.0 + 1e-3, 1.0 - 1e-3, 1.0 + 2e-3, 1.0 - 2e-3],
        );
        let kde = fit_kde(&pts, BandwidthRule::Scott).unwrap();
        let mut prev = kde.pdf(&[1.0]);
        for i in 1..20 {
            let v = kde.pdf(&[1.0 + i as f64 * 1e-3]);
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn kde_rejects_small_input() {
        assert!(fit_kde(&DMatrix::zeros(1, 1), BandwidthRule::Scott).is_err());
        assert!(fit_kde(&DMatrix::zeros(3, 0), BandwidthRule::Scott).is_err());
    }

    #[test]
    fn constant_outputs_use_floor_bandwidth() {
        let params = DMatrix::from_column_slice(4, 1, &[0.0, 0.2, 0.4, 0.6]);
        let qoi = DMatrix::from_element(4, 1, 3.0);
        let ens = SampleEnsemble::with_bounding_box(params, qoi).unwrap();
        let kde = predicted_density(&ens, BandwidthRule::Scott).unwrap();
        assert_eq!(kde.degenerate_dims(), &[0]);
        assert!((kde.bandwidth()[0] - 3e-8).abs() < 1e-20);
    }

    #[test]
    fn concentrated_weights_move_the_peak() {
        let params = DMatrix::from_column_slice(5, 1, &[0.0, 1.0, 2.0, 3.0, 4.0]);
        let qoi = params.clone();
        let weights = DVector::from_vec(vec![0.0, 0.0, 0.0, 1.0, 0.0]);
        let ens = SampleEnsemble::with_bounding_box(params, qoi)
            .unwrap()
            .with_weights(weights)
            .unwrap();
        let kde = predicted_density(&ens, BandwidthRule::Scott).unwrap();
        let peak = kde.pdf(&[3.0]);
        assert!(peak > kde.pdf(&[2.9]) && peak > kde.pdf(&[3.1]));
    }

    #[test]
    fn identity_update_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let params = DMatrix::from_fn(300, 1, |_, _| StandardNormal.sample(&mut rng));
        let qoi = params.map(|v| 2.0 * v + 1.0);
        let init = GaussianDensity::standard(1).evaluator().unwrap();
        let ens = SampleEnsemble::new(params.clone(), qoi, Arc::new(init.clone())).unwrap();
        let kde = predicted_density(&ens, BandwidthRule::Scott).unwrap();
        let res = update(&ens, &kde, &kde).unwrap();
        assert!(res.ratios.iter().all(|&r| r == 1.0));
        assert_eq!(res.e_r, 1.0);
        let init_vals = evaluate_rows(&init, &params);
        let best = (0..300)
            .max_by(|&a, &b| init_vals[a].total_cmp(&init_vals[b]))
            .unwrap();
        assert_eq!(res.mud_index, best);
        assert_eq!(
            expectation_r(&res, &DiagnosticBand::default()),
            (1.0, Verdict::Ok)
        );
    }

    #[test]
    fn zero_predicted_density_counts_violations() {
        let params = DMatrix::from_column_slice(3, 1, &[0.0, 0.5, 1.0]);
        let qoi = DMatrix::from_column_slice(3, 1, &[0.0, 0.5, 5.0]);
        let ens = SampleEnsemble::with_bounding_box(params, qoi).unwrap();
        let predicted = UniformBox::new(vec![-1.0], vec![1.0]).unwrap();
        let observed = GaussianDensity::standard(1).evaluator().unwrap();
        let res = update(&ens, &observed, &predicted).unwrap();
        assert_eq!(res.violations, 1);
        assert_eq!(res.ratios[2], 0.0);

        let far = DMatrix::from_column_slice(3, 1, &[5.0, 6.0, 7.0]);
        let ens = ens.with_qoi(far).unwrap();
        assert!(matches!(
            update(&ens, &observed, &predicted),
            Err(MudError::TotalPredictabilityFailure)
        ));
    }

    #[test]
    fn band_parsing_and_verdicts() {
        let band: DiagnosticBand = "0.8,1.25".parse().unwrap();
        assert_eq!(band.verdict(0.81), Verdict::Ok);
        assert_eq!(band.verdict(1.3), Verdict::Suspect);
        assert!("1.2,1.5".parse::<DiagnosticBand>().is_err());
        assert!("nope".parse::<DiagnosticBand>().is_err());
    }

    #[test]
    fn refinement_moves_toward_the_mode() {
        let init = UniformBox::new(vec![-2.0], vec![2.0]).unwrap();
        let observed = GaussianDensity::isotropic(DVector::from_element(1, 0.3), 0.1)
            .unwrap()
            .evaluator()
            .unwrap();
        let predicted = UniformBox::new(vec![-5.0], vec![5.0]).unwrap();
        let map = |x: &[f64]| vec![x[0]];
        let (best, _) =
            refine_mud_point(&[0.25], &[0.1], 101, &map, &init, &observed, &predicted).unwrap();
        assert!((best[0] - 0.3).abs() < 1e-12);
    }
}
