//! Dense linear-algebra primitives shared by the solvers.
//!
//! Everything here works on `nalgebra` dynamic matrices. Rank decisions use a
//! tolerance relative to the largest singular value (or eigenvalue), with
//! [`default_rank_tol`] as the crate-wide policy.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{MudError, Result};

/// Relative asymmetry above which a matrix is rejected instead of symmetrized.
pub const SYMMETRY_TOL: f64 = 1e-8;

/// Default relative rank tolerance: `1e-12 * max(rows, cols)`.
pub fn default_rank_tol(rows: usize, cols: usize) -> f64 {
    1e-12 * rows.max(cols).max(1) as f64
}

/// `‖M − Mᵀ‖_F / ‖M‖_F`, zero for the zero matrix.
pub fn relative_asymmetry(m: &DMatrix<f64>) -> f64 {
    let norm = m.norm();
    if norm == 0.0 {
        return 0.0;
    }
    (m - m.transpose()).norm() / norm
}

/// Returns `(M + Mᵀ)/2`, or an error when `M` is square but asymmetric beyond
/// [`SYMMETRY_TOL`].
pub fn symmetrize(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(MudError::DimensionMismatch {
            context: "symmetric matrix",
            expected: m.nrows(),
            found: m.ncols(),
        });
    }
    let asymmetry = relative_asymmetry(m);
    if asymmetry > SYMMETRY_TOL {
        return Err(MudError::NotSymmetric { asymmetry });
    }
    Ok((m + m.transpose()) * 0.5)
}

fn check_finite(m: &DMatrix<f64>) -> Result<()> {
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            if !m[(i, j)].is_finite() {
                return Err(MudError::NonFinite { row: i, col: j });
            }
        }
    }
    Ok(())
}

/// Thin singular value decomposition `M = U diag(s) Vᵀ` with `s` descending.
#[derive(Debug, Clone)]
pub struct Svd {
    /// Left singular vectors, `rows × k`.
    pub u: DMatrix<f64>,
    /// Singular values, non-negative and descending, length `k = min(rows, cols)`.
    pub singular_values: DVector<f64>,
    /// Right singular vectors as columns, `cols × k`.
    pub v: DMatrix<f64>,
}

impl Svd {
    /// Number of singular values above `rel_tol * s_max`.
    pub fn rank(&self, rel_tol: f64) -> usize {
        let smax = self.singular_values.iter().copied().fold(0.0, f64::max);
        if smax == 0.0 {
            return 0;
        }
        self.singular_values
            .iter()
            .filter(|&&s| s > rel_tol * smax)
            .count()
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.u * DMatrix::from_diagonal(&self.singular_values) * self.v.transpose()
    }
}

/// Singular value decomposition with singular values sorted descending.
pub fn svd(m: &DMatrix<f64>) -> Result<Svd> {
    check_finite(m)?;
    let k = m.nrows().min(m.ncols());
    if k == 0 {
        return Ok(Svd {
            u: DMatrix::zeros(m.nrows(), 0),
            singular_values: DVector::zeros(0),
            v: DMatrix::zeros(m.ncols(), 0),
        });
    }
    let raw = m.clone().svd(true, true);
    let u = raw.u.expect("left vectors requested");
    let v_t = raw.v_t.expect("right vectors requested");
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| raw.singular_values[b].total_cmp(&raw.singular_values[a]));

    let mut su = DMatrix::zeros(m.nrows(), k);
    let mut sv = DMatrix::zeros(m.ncols(), k);
    let mut s = DVector::zeros(k);
    for (dst, &src) in order.iter().enumerate() {
        su.set_column(dst, &u.column(src));
        sv.set_column(dst, &v_t.row(src).transpose());
        s[dst] = raw.singular_values[src].max(0.0);
    }
    Ok(Svd {
        u: su,
        singular_values: s,
        v: sv,
    })
}

/// Moore–Penrose pseudo-inverse. Singular values at or below
/// `rank_tol * s_max` are treated as zero.
pub fn pseudo_inverse(m: &DMatrix<f64>, rank_tol: f64) -> Result<DMatrix<f64>> {
    if m.is_empty() {
        return Err(MudError::EmptyMatrix);
    }
    if !(rank_tol > 0.0) {
        return Err(MudError::InvalidArgument(format!(
            "rank tolerance must be positive, got {rank_tol}"
        )));
    }
    let dec = svd(m)?;
    let smax = dec.singular_values.iter().copied().fold(0.0, f64::max);
    let mut out = DMatrix::zeros(m.ncols(), m.nrows());
    if smax == 0.0 {
        return Ok(out);
    }
    for (i, &s) in dec.singular_values.iter().enumerate() {
        if s > rank_tol * smax {
            out += dec.v.column(i) * dec.u.column(i).transpose() / s;
        }
    }
    Ok(out)
}

/// Eigen-decomposition of a symmetric matrix with eigenvalues ascending.
pub fn symmetric_eigen(m: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let sym = symmetrize(m)?;
    check_finite(&sym)?;
    let n = sym.nrows();
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok((values, vectors))
}

/// Ascending eigenvalues of a symmetric matrix.
pub fn symmetric_eigenvalues(m: &DMatrix<f64>) -> Result<DVector<f64>> {
    let sym = symmetrize(m)?;
    check_finite(&sym)?;
    let mut values: Vec<f64> = sym.symmetric_eigenvalues().iter().copied().collect();
    values.sort_by(f64::total_cmp);
    Ok(DVector::from_vec(values))
}

#[derive(Debug, Clone)]
enum Factor {
    Cholesky(Cholesky<f64, Dyn>),
    /// Pseudo-inverse route: `M⁺ = V diag(1/λ) Vᵀ` over retained eigenpairs.
    Spectral {
        vectors: DMatrix<f64>,
        inv_values: DVector<f64>,
        rank: usize,
    },
}

/// Factorization of a symmetric positive-semidefinite matrix.
///
/// Full-rank inputs use Cholesky. When the Cholesky pivots fall under the rank
/// tolerance, or Cholesky fails outright, the factorization falls back to a
/// truncated eigen-decomposition, so `solve` applies the pseudo-inverse.
#[derive(Debug, Clone)]
pub struct SpdFactorization {
    source: DMatrix<f64>,
    factor: Factor,
    tolerance: f64,
}

impl SpdFactorization {
    pub fn new(m: &DMatrix<f64>) -> Result<Self> {
        Self::with_tolerance(m, default_rank_tol(m.nrows(), m.ncols()))
    }

    pub fn with_tolerance(m: &DMatrix<f64>, tolerance: f64) -> Result<Self> {
        if m.is_empty() {
            return Err(MudError::EmptyMatrix);
        }
        let source = symmetrize(m)?;
        check_finite(&source)?;
        let scale = source.diagonal().iter().copied().fold(0.0, f64::max);

        if scale > 0.0 {
            if let Some(chol) = Cholesky::new(source.clone()) {
                let min_pivot = chol
                    .l_dirty()
                    .diagonal()
                    .iter()
                    .copied()
                    .fold(f64::INFINITY, f64::min);
                if min_pivot * min_pivot > tolerance * scale {
                    return Ok(Self {
                        source,
                        factor: Factor::Cholesky(chol),
                        tolerance,
                    });
                }
            }
        }

        let (values, vectors) = symmetric_eigen(&source)?;
        let lmax = values.iter().copied().fold(0.0, f64::max);
        let lmin = values.iter().copied().fold(f64::INFINITY, f64::min);
        if lmin < -SYMMETRY_TOL * lmax.max(f64::MIN_POSITIVE) {
            return Err(MudError::NotPositiveSemidefinite {
                min_eigenvalue: lmin,
            });
        }
        let cutoff = tolerance * lmax;
        let inv_values = values.map(|v| {
            if lmax > 0.0 && v > cutoff {
                1.0 / v
            } else {
                0.0
            }
        });
        let rank = inv_values.iter().filter(|&&v| v != 0.0).count();
        Ok(Self {
            source,
            factor: Factor::Spectral {
                vectors,
                inv_values,
                rank,
            },
            tolerance,
        })
    }

    pub fn source(&self) -> &DMatrix<f64> {
        &self.source
    }

    pub fn tolerance(&self) -> f64 {
        self.tolerance
    }

    pub fn dim(&self) -> usize {
        self.source.nrows()
    }

    pub fn is_full_rank(&self) -> bool {
        self.rank() == self.dim()
    }

    pub fn rank(&self) -> usize {
        match &self.factor {
            Factor::Cholesky(_) => self.dim(),
            Factor::Spectral { rank, .. } => *rank,
        }
    }

    /// Lower-triangular factor when the Cholesky path was taken.
    pub fn cholesky_factor(&self) -> Option<DMatrix<f64>> {
        match &self.factor {
            Factor::Cholesky(c) => Some(c.l()),
            Factor::Spectral { .. } => None,
        }
    }

    /// Applies `M⁻¹` (or `M⁺` on the rank-deficient path) to `rhs`.
    pub fn solve(&self, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if rhs.nrows() != self.dim() {
            return Err(MudError::DimensionMismatch {
                context: "spd_solve right-hand side",
                expected: self.dim(),
                found: rhs.nrows(),
            });
        }
        Ok(match &self.factor {
            Factor::Cholesky(c) => c.solve(rhs),
            Factor::Spectral {
                vectors,
                inv_values,
                ..
            } => {
                let mut proj = vectors.transpose() * rhs;
                for (i, mut row) in proj.row_iter_mut().enumerate() {
                    row *= inv_values[i];
                }
                vectors * proj
            }
        })
    }

    pub fn solve_vec(&self, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        let m = self.solve(&DMatrix::from_column_slice(rhs.len(), 1, rhs.as_slice()))?;
        Ok(m.column(0).into_owned())
    }

    /// `M⁻¹`, or `M⁺` when rank deficient.
    pub fn inverse(&self) -> DMatrix<f64> {
        let inv = self
            .solve(&DMatrix::identity(self.dim(), self.dim()))
            .expect("identity has matching rows");
        (&inv + inv.transpose()) * 0.5
    }
}

/// Solves `M x = rhs` for symmetric PSD `M`, routing through the
/// pseudo-inverse when `M` is rank deficient.
pub fn spd_solve(m: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if rhs.nrows() != m.nrows() {
        return Err(MudError::DimensionMismatch {
            context: "spd_solve right-hand side",
            expected: m.nrows(),
            found: rhs.nrows(),
        });
    }
    SpdFactorization::new(m)?.solve(rhs)
}

pub fn spd_solve_vec(m: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    if rhs.len() != m.nrows() {
        return Err(MudError::DimensionMismatch {
            context: "spd_solve right-hand side",
            expected: m.nrows(),
            found: rhs.len(),
        });
    }
    SpdFactorization::new(m)?.solve_vec(rhs)
}

/// Multivariate normal density parameters.
#[derive(Debug, Clone)]
pub struct GaussianDensity {
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
}

impl GaussianDensity {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        if covariance.nrows() != mean.len() {
            return Err(MudError::DimensionMismatch {
                context: "Gaussian covariance",
                expected: mean.len(),
                found: covariance.nrows(),
            });
        }
        let covariance = symmetrize(&covariance)?;
        check_finite(&covariance)?;
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(MudError::InvalidArgument("non-finite mean".into()));
        }
        if !covariance.is_empty() {
            let eig = symmetric_eigenvalues(&covariance)?;
            let lmax = eig.max();
            let lmin = eig.min();
            if lmin < -1e-12 * lmax.abs().max(f64::MIN_POSITIVE) {
                return Err(MudError::NotPositiveSemidefinite {
                    min_eigenvalue: lmin,
                });
            }
        }
        Ok(Self { mean, covariance })
    }

    /// `N(mean, σ² I)`.
    pub fn isotropic(mean: DVector<f64>, std: f64) -> Result<Self> {
        let n = mean.len();
        Self::new(mean, DMatrix::identity(n, n) * (std * std))
    }

    pub fn standard(dim: usize) -> Self {
        Self {
            mean: DVector::zeros(dim),
            covariance: DMatrix::identity(dim, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    /// Same mean, covariance multiplied by `alpha`.
    pub fn scaled(&self, alpha: f64) -> Self {
        Self {
            mean: self.mean.clone(),
            covariance: &self.covariance * alpha,
        }
    }

    /// Frozen evaluator for repeated density queries. Fails when the
    /// covariance is singular.
    pub fn evaluator(&self) -> Result<GaussianPdf> {
        let chol = Cholesky::new(self.covariance.clone()).ok_or(MudError::Singular {
            what: "Gaussian covariance",
        })?;
        let log_det: f64 = chol.l_dirty().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
        let k = self.dim() as f64;
        Ok(GaussianPdf {
            mean: self.mean.clone(),
            chol,
            log_norm: -0.5 * (k * (2.0 * std::f64::consts::PI).ln() + log_det),
        })
    }
}

/// Gaussian density with a cached Cholesky factor.
#[derive(Debug, Clone)]
pub struct GaussianPdf {
    mean: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
    log_norm: f64,
}

impl GaussianPdf {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn log_pdf(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim());
        let diff =
            DVector::from_iterator(x.len(), x.iter().zip(self.mean.iter()).map(|(a, b)| a - b));
        let z = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&diff)
            .expect("non-singular factor");
        self.log_norm - 0.5 * z.norm_squared()
    }

    pub fn pdf(&self, x: &[f64]) -> f64 {
        self.log_pdf(x).exp()
    }
}

/// Affine map `Q(λ) = Aλ + b`.
#[derive(Debug, Clone)]
pub struct AffineMap {
    matrix: DMatrix<f64>,
    bias: DVector<f64>,
    rank: usize,
}

impl AffineMap {
    pub fn new(matrix: DMatrix<f64>, bias: DVector<f64>) -> Result<Self> {
        if bias.len() != matrix.nrows() {
            return Err(MudError::DimensionMismatch {
                context: "affine map bias",
                expected: matrix.nrows(),
                found: bias.len(),
            });
        }
        if bias.iter().any(|v| !v.is_finite()) {
            return Err(MudError::InvalidArgument("non-finite bias".into()));
        }
        let rank = svd(&matrix)?.rank(default_rank_tol(matrix.nrows(), matrix.ncols()));
        Ok(Self { matrix, bias, rank })
    }

    pub fn linear(matrix: DMatrix<f64>) -> Result<Self> {
        let m = matrix.nrows();
        Self::new(matrix, DVector::zeros(m))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn bias(&self) -> &DVector<f64> {
        &self.bias
    }

    /// Output dimension `m`.
    pub fn outputs(&self) -> usize {
        self.matrix.nrows()
    }

    /// Input dimension `p`.
    pub fn inputs(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn apply(&self, lambda: &DVector<f64>) -> DVector<f64> {
        &self.matrix * lambda + &self.bias
    }
}
