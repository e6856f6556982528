//! Data-constructed quantity-of-interest maps.
//!
//! * mean error (ME) and weighted mean error (WME) maps for repeated
//!   measurements from `m` devices,
//! * the exact affine form of the WME map for linear measurements,
//! * PCA maps built from the Z-scored residual matrix of an ensemble.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::ensemble::SampleEnsemble;
use crate::error::{MudError, Result};
use crate::linalg::{default_rank_tol, svd, symmetric_eigenvalues, AffineMap};

/// Slack added to the unit threshold when searching for the minimum data count.
pub const PREDICTABILITY_SLACK: f64 = 1e-9;

/// Repeated noisy observations from one measurement device.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceData {
    pub label: String,
    pub values: Vec<f64>,
    pub sigma: f64,
}

/// Observations grouped by device, `d_{j,i}` with noise level `σ_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementData {
    devices: Vec<DeviceData>,
}

/// Position of a datum in the flattened ordering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DataIndex {
    pub device: usize,
    pub repeat: usize,
}

impl MeasurementData {
    pub fn new(devices: Vec<DeviceData>) -> Result<Self> {
        if devices.is_empty() {
            return Err(MudError::InvalidArgument(
                "measurement data has no devices".into(),
            ));
        }
        for d in &devices {
            if d.values.is_empty() {
                return Err(MudError::InvalidArgument(format!(
                    "device '{}' has no data",
                    d.label
                )));
            }
            if !(d.sigma > 0.0) || !d.sigma.is_finite() {
                return Err(MudError::InvalidArgument(format!(
                    "device '{}' has non-positive noise level {}",
                    d.label, d.sigma
                )));
            }
            if d.values.iter().any(|v| !v.is_finite()) {
                return Err(MudError::InvalidArgument(format!(
                    "device '{}' has non-finite data",
                    d.label
                )));
            }
        }
        Ok(Self { devices })
    }

    /// One datum per device, labelled by position.
    pub fn single(values: &[f64], sigmas: &[f64]) -> Result<Self> {
        if values.len() != sigmas.len() {
            return Err(MudError::DimensionMismatch {
                context: "data vs noise levels",
                expected: values.len(),
                found: sigmas.len(),
            });
        }
        Self::new(
            values
                .iter()
                .zip(sigmas)
                .enumerate()
                .map(|(j, (&v, &s))| DeviceData {
                    label: j.to_string(),
                    values: vec![v],
                    sigma: s,
                })
                .collect(),
        )
    }

    pub fn devices(&self) -> &[DeviceData] {
        &self.devices
    }

    pub fn device_count(&self) -> usize {
        self.devices.len()
    }

    pub fn counts(&self) -> Vec<usize> {
        self.devices.iter().map(|d| d.values.len()).collect()
    }

    pub fn sigmas(&self) -> Vec<f64> {
        self.devices.iter().map(|d| d.sigma).collect()
    }

    /// Total number of data `n = Σ_j N_j`.
    pub fn total(&self) -> usize {
        self.devices.iter().map(|d| d.values.len()).sum()
    }

    /// Device-major enumeration of the data.
    pub fn ordering(&self) -> Vec<DataIndex> {
        self.devices
            .iter()
            .enumerate()
            .flat_map(|(device, d)| {
                (0..d.values.len()).map(move |repeat| DataIndex { device, repeat })
            })
            .collect()
    }

    /// `(value, sigma)` pairs in [`ordering`](Self::ordering) order.
    pub fn flattened(&self) -> Vec<(f64, f64)> {
        self.devices
            .iter()
            .flat_map(|d| d.values.iter().map(move |&v| (v, d.sigma)))
            .collect()
    }

    fn check_outputs(&self, outputs: &[f64]) -> Result<()> {
        if outputs.len() != self.devices.len() {
            return Err(MudError::DimensionMismatch {
                context: "model outputs per device",
                expected: self.devices.len(),
                found: outputs.len(),
            });
        }
        Ok(())
    }
}

/// Mean error map: `(1/N_j) Σ_i (M_j(λ) − d_{j,i})`.
pub fn q_me(data: &MeasurementData, outputs: &[f64]) -> Result<DVector<f64>> {
    data.check_outputs(outputs)?;
    Ok(DVector::from_iterator(
        outputs.len(),
        data.devices
            .iter()
            .zip(outputs)
            .map(|(d, &m)| d.values.iter().map(|v| m - v).sum::<f64>() / d.values.len() as f64),
    ))
}

/// Weighted mean error map: `(1/√N_j) Σ_i (M_j(λ) − d_{j,i}) / σ_j`.
pub fn q_wme(data: &MeasurementData, outputs: &[f64]) -> Result<DVector<f64>> {
    data.check_outputs(outputs)?;
    Ok(DVector::from_iterator(
        outputs.len(),
        data.devices.iter().zip(outputs).map(|(d, &m)| {
            d.values.iter().map(|v| (m - v) / d.sigma).sum::<f64>() / (d.values.len() as f64).sqrt()
        }),
    ))
}

/// Linear measurement functionals `M_j`, one per row.
#[derive(Debug, Clone)]
pub struct LinearMeasurementSet {
    rows: DMatrix<f64>,
    rank: usize,
}

impl LinearMeasurementSet {
    pub fn new(rows: DMatrix<f64>) -> Result<Self> {
        if rows.is_empty() {
            return Err(MudError::EmptyMatrix);
        }
        let rank = svd(&rows)?.rank(default_rank_tol(rows.nrows(), rows.ncols()));
        Ok(Self { rows, rank })
    }

    pub fn rows(&self) -> &DMatrix<f64> {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.nrows() == 0
    }

    pub fn param_dim(&self) -> usize {
        self.rows.ncols()
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn is_independent(&self) -> bool {
        self.rank == self.rows.nrows()
    }

    /// WME matrix `A(N)` with row `j` equal to `(√N_j / σ_j) M_j`.
    pub fn wme_matrix(&self, counts: &[usize], sigmas: &[f64]) -> Result<DMatrix<f64>> {
        for (what, len) in [
            ("data counts", counts.len()),
            ("noise levels", sigmas.len()),
        ] {
            if len != self.len() {
                return Err(MudError::DimensionMismatch {
                    context: what,
                    expected: self.len(),
                    found: len,
                });
            }
        }
        let mut a = self.rows.clone();
        for (j, mut row) in a.row_iter_mut().enumerate() {
            row *= (counts[j] as f64).sqrt() / sigmas[j];
        }
        Ok(a)
    }
}

/// Affine form `Q_WME(λ) = A(N)λ + b(N)` of the WME map for linear
/// measurements. A rank-deficient set is accepted with a warning; the rank is
/// carried by the returned map.
pub fn assemble_wme_affine(
    measurements: &LinearMeasurementSet,
    data: &MeasurementData,
) -> Result<AffineMap> {
    if data.device_count() != measurements.len() {
        return Err(MudError::DimensionMismatch {
            context: "devices vs measurement functionals",
            expected: measurements.len(),
            found: data.device_count(),
        });
    }
    if !measurements.is_independent() {
        log::warn!(
            "measurement set is rank deficient ({} of {})",
            measurements.rank(),
            measurements.len()
        );
    }
    let a = measurements.wme_matrix(&data.counts(), &data.sigmas())?;
    let b = DVector::from_iterator(
        data.device_count(),
        data.devices().iter().map(|d| {
            -d.values.iter().map(|v| v / d.sigma).sum::<f64>() / (d.values.len() as f64).sqrt()
        }),
    );
    AffineMap::new(a, b)
}

/// Predicted variance of one WME component, `(N/σ²) M Σ_init Mᵀ`.
pub fn wme_predicted_variance(
    measurement: &DVector<f64>,
    initial_cov: &DMatrix<f64>,
    count: usize,
    sigma: f64,
) -> Result<f64> {
    if initial_cov.nrows() != measurement.len() || !initial_cov.is_square() {
        return Err(MudError::DimensionMismatch {
            context: "measurement vs initial covariance",
            expected: measurement.len(),
            found: initial_cov.nrows(),
        });
    }
    if !(sigma > 0.0) {
        return Err(MudError::InvalidArgument(format!(
            "noise level must be positive, got {sigma}"
        )));
    }
    Ok(count as f64 / (sigma * sigma) * measurement.dot(&(initial_cov * measurement)))
}

/// Smallest per-device data counts making every eigenvalue of
/// `A(N) Σ_init A(N)ᵀ` exceed one.
///
/// Counts share one integer scale `k` with `N_j = ⌈k σ_j² / min σ²⌉`, so the
/// devices are equally informative per datum. `k` is found by doubling and
/// then bisection.
pub fn min_data_for_predictability(
    measurements: &LinearMeasurementSet,
    initial_cov: &DMatrix<f64>,
    sigmas: &[f64],
) -> Result<Vec<usize>> {
    if !measurements.is_independent() {
        return Err(MudError::RankDeficient {
            rank: measurements.rank(),
            rows: measurements.len(),
        });
    }
    if initial_cov.nrows() != measurements.param_dim() {
        return Err(MudError::DimensionMismatch {
            context: "initial covariance",
            expected: measurements.param_dim(),
            found: initial_cov.nrows(),
        });
    }
    if sigmas.iter().any(|s| !(*s > 0.0)) {
        return Err(MudError::InvalidArgument(
            "noise levels must be positive".into(),
        ));
    }
    let smin = sigmas.iter().copied().fold(f64::INFINITY, f64::min);
    let base: Vec<f64> = sigmas.iter().map(|s| (s / smin).powi(2)).collect();
    let counts_at = |k: u64| -> Vec<usize> {
        base.iter()
            .map(|b| (k as f64 * b).ceil() as usize)
            .collect()
    };
    let satisfied = |k: u64| -> Result<bool> {
        let a = measurements.wme_matrix(&counts_at(k), sigmas)?;
        let pred = &a * initial_cov * a.transpose();
        Ok(symmetric_eigenvalues(&pred)?.min() > 1.0 + PREDICTABILITY_SLACK)
    };

    let mut hi: u64 = 1;
    while !satisfied(hi)? {
        if hi > 1 << 52 {
            return Err(MudError::InvalidArgument(
                "predicted covariance does not grow with the data count".into(),
            ));
        }
        hi *= 2;
    }
    let mut lo = hi / 2; // unsatisfied, or 0
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if satisfied(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(counts_at(hi))
}

/// Z-scored residuals `X_{k,i} = (M_{k,i} − d_i) / σ_i`, one row per sample.
#[derive(Debug, Clone)]
pub struct ResidualMatrix {
    values: DMatrix<f64>,
    ordering: Vec<DataIndex>,
}

impl ResidualMatrix {
    /// Wraps a precomputed residual matrix; columns are labelled as single
    /// repeats of consecutive devices.
    pub fn from_values(values: DMatrix<f64>) -> Result<Self> {
        for j in 0..values.ncols() {
            for i in 0..values.nrows() {
                if !values[(i, j)].is_finite() {
                    return Err(MudError::NonFinite { row: i, col: j });
                }
            }
        }
        let ordering = (0..values.ncols())
            .map(|device| DataIndex { device, repeat: 0 })
            .collect();
        Ok(Self { values, ordering })
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn ordering(&self) -> &[DataIndex] {
        &self.ordering
    }

    pub fn samples(&self) -> usize {
        self.values.nrows()
    }

    pub fn data_len(&self) -> usize {
        self.values.ncols()
    }
}

/// Builds the residual matrix from ensemble outputs laid out in the data's
/// device-major order.
pub fn build_residual_matrix(
    ensemble: &SampleEnsemble,
    data: &MeasurementData,
) -> Result<ResidualMatrix> {
    let flat = data.flattened();
    if ensemble.qoi_dim() != flat.len() {
        return Err(MudError::DimensionMismatch {
            context: "ensemble outputs vs data points",
            expected: flat.len(),
            found: ensemble.qoi_dim(),
        });
    }
    let outputs = ensemble.qoi();
    let values = DMatrix::from_fn(ensemble.len(), flat.len(), |k, i| {
        let (d, sigma) = flat[i];
        (outputs[(k, i)] - d) / sigma
    });
    Ok(ResidualMatrix {
        values,
        ordering: data.ordering(),
    })
}

/// Z-scored residual row for a single model evaluation.
pub fn residual_row(outputs: &[f64], data: &MeasurementData) -> Result<DVector<f64>> {
    let flat = data.flattened();
    if outputs.len() != flat.len() {
        return Err(MudError::DimensionMismatch {
            context: "model outputs vs data points",
            expected: flat.len(),
            found: outputs.len(),
        });
    }
    Ok(DVector::from_iterator(
        flat.len(),
        outputs.iter().zip(&flat).map(|(m, (d, s))| (m - d) / s),
    ))
}

/// Principal components of a residual matrix.
///
/// Components are fitted on the column-centred matrix; [`apply`](Self::apply)
/// projects raw (un-centred) residual rows.
#[derive(Debug, Clone, Serialize)]
pub struct PcaMap {
    /// All available right singular vectors as columns, `n × min(s, n)`.
    #[serde(skip)]
    basis: DMatrix<f64>,
    explained_variance: Vec<f64>,
    n_components: usize,
    column_means: Vec<f64>,
    centered: bool,
}

fn fix_sign(v: &mut DMatrix<f64>, col: usize) {
    let mut best = 0.0f64;
    for x in v.column(col).iter() {
        if x.abs() > best.abs() {
            best = *x;
        }
    }
    if best < 0.0 {
        v.column_mut(col).neg_mut();
    }
}

/// Fits principal components, keeping the smallest number whose cumulative
/// explained variance reaches `variance_threshold`, capped at
/// `max_components`.
pub fn fit_pca(
    x: &ResidualMatrix,
    variance_threshold: f64,
    max_components: usize,
) -> Result<PcaMap> {
    let (s, n) = x.values.shape();
    if s < 2 {
        return Err(MudError::InvalidArgument(format!(
            "PCA needs at least 2 samples, got {s}"
        )));
    }
    if !(variance_threshold > 0.0 && variance_threshold <= 1.0) {
        return Err(MudError::InvalidArgument(format!(
            "variance threshold must lie in (0, 1], got {variance_threshold}"
        )));
    }
    if max_components == 0 || max_components > s.min(n) {
        return Err(MudError::InvalidArgument(format!(
            "cannot extract {max_components} components from {s} samples of {n} data"
        )));
    }
    let column_means: Vec<f64> = (0..n).map(|j| x.values.column(j).mean()).collect();
    let mut centered = x.values.clone();
    for (j, mut col) in centered.column_iter_mut().enumerate() {
        col.add_scalar_mut(-column_means[j]);
    }
    let dec = svd(&centered)?;
    let mut basis = dec.v;
    for c in 0..basis.ncols() {
        fix_sign(&mut basis, c);
    }
    let explained_variance: Vec<f64> = dec
        .singular_values
        .iter()
        .map(|sv| sv * sv / (s as f64 - 1.0))
        .collect();
    let total: f64 = explained_variance.iter().sum();

    let mut n_components = max_components;
    if total > 0.0 {
        let mut cumulative = 0.0;
        for (i, v) in explained_variance.iter().enumerate() {
            cumulative += v / total;
            if cumulative >= variance_threshold - 1e-12 {
                n_components = (i + 1).min(max_components);
                break;
            }
        }
    } else {
        log::warn!("residual matrix has no variance; keeping a single component");
        n_components = 1;
    }
    Ok(PcaMap {
        basis,
        explained_variance,
        n_components,
        column_means,
        centered: true,
    })
}

impl PcaMap {
    pub fn n_components(&self) -> usize {
        self.n_components
    }

    pub fn data_len(&self) -> usize {
        self.basis.nrows()
    }

    /// Retained components as columns, `n × n_components`.
    pub fn components(&self) -> DMatrix<f64> {
        self.basis.columns(0, self.n_components).into_owned()
    }

    /// Variance captured by every fitted direction, descending.
    pub fn explained_variance(&self) -> &[f64] {
        &self.explained_variance
    }

    pub fn explained_variance_ratio(&self) -> Vec<f64> {
        let total: f64 = self.explained_variance.iter().sum();
        self.explained_variance
            .iter()
            .map(|v| if total > 0.0 { v / total } else { 0.0 })
            .collect()
    }

    /// Column means removed before fitting.
    pub fn column_means(&self) -> &[f64] {
        &self.column_means
    }

    pub fn is_centered(&self) -> bool {
        self.centered
    }

    /// Same fit keeping exactly `count` components.
    pub fn with_components(&self, count: usize) -> Result<Self> {
        if count == 0 || count > self.basis.ncols() {
            return Err(MudError::InvalidArgument(format!(
                "requested {count} components, {} available",
                self.basis.ncols()
            )));
        }
        let mut out = self.clone();
        out.n_components = count;
        Ok(out)
    }

    /// `Q_PCA` for one residual row: inner products with each component.
    pub fn apply(&self, residual_row: &DVector<f64>) -> Result<DVector<f64>> {
        if residual_row.len() != self.data_len() {
            return Err(MudError::DimensionMismatch {
                context: "residual row",
                expected: self.data_len(),
                found: residual_row.len(),
            });
        }
        Ok(self.components().transpose() * residual_row)
    }

    /// `X P` restricted to the retained components.
    pub fn apply_batch(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.data_len() {
            return Err(MudError::DimensionMismatch {
                context: "residual matrix columns",
                expected: self.data_len(),
                found: x.ncols(),
            });
        }
        Ok(x * self.components())
    }
}

/// Convenience wrapper for [`PcaMap::apply`].
pub fn q_pca(pca: &PcaMap, residual_row: &DVector<f64>) -> Result<DVector<f64>> {
    pca.apply(residual_row)
}
