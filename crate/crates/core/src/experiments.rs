//! Reproducible experiments and report-producing drivers.
//!
//! Every experiment takes an explicit seed and draws all randomness from a
//! `ChaCha8Rng`, so identical configurations produce identical reports.

use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;
use serde_json::json;

use crate::density::{
    evaluate_rows, fit_kde_weighted, predicted_density, select_pca_components, update,
    BandwidthRule, Density, DiagnosticBand, UniformBox,
};
use crate::ensemble::SampleEnsemble;
use crate::error::{MudError, Result};
use crate::linalg::{svd, symmetric_eigenvalues, AffineMap, GaussianDensity};
use crate::linear::{least_squares, relative_error, LinearGaussianProblem, Method};
use crate::qoi::{
    assemble_wme_affine, build_residual_matrix, fit_pca, DeviceData, LinearMeasurementSet,
    MeasurementData,
};
use crate::report::{fmt_f64, EstimateEntry, RunReport, Spectrum, Table};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    // Row-major draw order so the sequence does not depend on storage layout.
    let mut m = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            m[(i, j)] = StandardNormal.sample(rng);
        }
    }
    m
}

fn normal_vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(rng)))
}

fn descending(v: &DVector<f64>) -> Vec<f64> {
    let mut out: Vec<f64> = v.iter().copied().collect();
    out.sort_by(|a, b| b.total_cmp(a));
    out
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn elapsed_ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

/// The two-parameter, one-output fixture: `A = [1 1]`, `λ₀ = (0.25, 0.25)`,
/// `Σ_init = [[1, −0.25], [−0.25, 0.5]]`, `μ_obs = 1`, `Σ_obs = 0.25`.
pub fn reference_problem() -> LinearGaussianProblem {
    let map = AffineMap::linear(DMatrix::from_row_slice(1, 2, &[1.0, 1.0])).expect("valid map");
    let initial = GaussianDensity::new(
        DVector::from_vec(vec![0.25, 0.25]),
        DMatrix::from_row_slice(2, 2, &[1.0, -0.25, -0.25, 0.5]),
    )
    .expect("valid covariance");
    let observed = GaussianDensity::new(
        DVector::from_element(1, 1.0),
        DMatrix::from_element(1, 1, 0.25),
    )
    .expect("valid covariance");
    LinearGaussianProblem::new(map, initial, observed).expect("consistent dimensions")
}

pub const DEFAULT_ALPHAS: [f64; 4] = [0.001, 0.01, 0.1, 10.0];

/// Solves one linear-Gaussian problem with every estimator.
///
/// MUD and MAP are repeated with `Σ_init` scaled by each `alpha`; the MUD
/// point is expected not to move.
pub fn run_linear_gaussian(
    problem: &LinearGaussianProblem,
    alphas: &[f64],
    reference: Option<&DVector<f64>>,
    band: &DiagnosticBand,
) -> Result<RunReport> {
    let start = Instant::now();
    let p = problem.map().inputs();
    let mut report = RunReport::new(
        "solve-linear",
        None,
        json!({
            "inputs": p,
            "outputs": problem.map().outputs(),
            "alphas": alphas,
            "reference": reference.map(|r| r.iter().copied().collect::<Vec<_>>()),
        }),
    );
    let mut columns = vec!["method", "alpha", "relative_error"];
    let names: Vec<String> = (1..=p).map(|i| format!("lam_{i}")).collect();
    columns.extend(names.iter().map(String::as_str));
    let mut table = Table::new("estimates", &columns);
    let mut push_row = |entry: &EstimateEntry| {
        let mut row = vec![
            entry.method.to_string(),
            entry.alpha.map(fmt_f64).unwrap_or_default(),
            entry.relative_error.map(fmt_f64).unwrap_or_default(),
        ];
        row.extend(entry.estimate.iter().map(|v| fmt_f64(*v)));
        table.push(row);
    };

    let predictability = problem.check_predictability();
    report.add_diagnostic(Some("exact".into()), problem.exact_expectation_r(), band);
    report.set("predictable", predictability.ok);
    report.set("predictability_margin", predictability.margin);

    let overdetermined = problem.map().outputs() > p && problem.map().rank() == p;
    if !overdetermined {
        let mud = problem.mud_point()?;
        let entry = EstimateEntry::new(Method::Mud, &mud.estimate, reference);
        push_row(&entry);
        report.estimates.push(entry);
        let consistency = (problem.map().apply(&mud.estimate) - problem.observed().mean()).norm();
        report.set("mud_data_residual", consistency);

        if predictability.ok {
            let alt = problem.mud_point_alt()?;
            let entry = EstimateEntry::new(Method::MudAlt, &alt.estimate, reference);
            push_row(&entry);
            report.estimates.push(entry);
            if let Some(cov) = &alt.covariance {
                report.spectra.push(Spectrum {
                    label: "updated_covariance".into(),
                    values: descending(&symmetric_eigenvalues(cov)?),
                });
            }
        }

        let mut spread: f64 = 0.0;
        for &alpha in alphas {
            let scaled = problem.with_scaled_initial(alpha);
            let mud_a = scaled.mud_point()?;
            spread = spread
                .max((&mud_a.estimate - &mud.estimate).norm() / mud.estimate.norm().max(1e-300));
            let entry =
                EstimateEntry::new(Method::Mud, &mud_a.estimate, reference).with_alpha(alpha);
            push_row(&entry);
            report.estimates.push(entry);
        }
        report.set("mud_alpha_spread", spread);
    } else {
        report.set(
            "mud_skipped",
            "over-determined map; MUD closed form needs outputs <= inputs",
        );
    }

    for &alpha in std::iter::once(&1.0).chain(alphas) {
        let scaled = problem.with_scaled_initial(alpha);
        let map = scaled.map_point()?;
        let entry = EstimateEntry::new(Method::Map, &map.estimate, reference).with_alpha(alpha);
        push_row(&entry);
        report.estimates.push(entry);
    }

    let lsq = least_squares(problem.map(), problem.observed().mean())?;
    let entry = EstimateEntry::new(Method::Lsq, &lsq, reference);
    push_row(&entry);
    report.estimates.push(entry);

    report.spectra.push(Spectrum {
        label: "predicted_covariance".into(),
        values: descending(&symmetric_eigenvalues(problem.predicted_covariance())?),
    });
    report.spectra.push(Spectrum {
        label: "observed_covariance".into(),
        values: descending(&symmetric_eigenvalues(problem.observed().covariance())?),
    });
    report.tables.push(table);
    report.timing_ms = elapsed_ms(start);
    Ok(report)
}

/// Draws `samples` parameters from the problem's initial density and pushes
/// them through the map. The initial density of the returned ensemble is the
/// analytic Gaussian.
pub fn sample_linear_gaussian(
    problem: &LinearGaussianProblem,
    samples: usize,
    seed: u64,
) -> Result<SampleEnsemble> {
    let mut rng = rng(seed);
    let init = problem.initial();
    let p = init.dim();
    let chol = nalgebra::Cholesky::new(init.covariance().clone()).ok_or(MudError::Singular {
        what: "initial covariance",
    })?;
    let l = chol.l();
    let mut params = DMatrix::zeros(samples, p);
    for k in 0..samples {
        let z = normal_vector(&mut rng, p);
        let x = init.mean() + &l * z;
        params.set_row(k, &x.transpose());
    }
    let a = problem.map().matrix();
    let mut qoi = &params * a.transpose();
    for (j, mut col) in qoi.column_iter_mut().enumerate() {
        col.add_scalar_mut(problem.map().bias()[j]);
    }
    SampleEnsemble::new(params, qoi, Arc::new(init.evaluator()?))
}

/// Analytic predicted density `N(Aλ₀ + b, Σ_pred)`.
pub fn analytic_predicted(problem: &LinearGaussianProblem) -> Result<GaussianDensity> {
    GaussianDensity::new(
        problem.map().apply(problem.initial().mean()),
        problem.predicted_covariance().clone(),
    )
}

/// Sample-based `E(r)` with the exact predicted and observed densities.
pub fn monte_carlo_expectation_r(
    problem: &LinearGaussianProblem,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    let ensemble = sample_linear_gaussian(problem, samples, seed)?;
    let predicted = analytic_predicted(problem)?.evaluator()?;
    let observed = problem.observed().evaluator()?;
    Ok(update(&ensemble, &observed, &predicted)?.e_r)
}

/// Uniform samples on `[-1, 1]` pushed through `λ ↦ λ⁵`, updated against
/// `N(obs_mean, obs_std²)` with a KDE predicted density.
pub fn lambda5_update(
    seed: u64,
    samples: usize,
    obs_mean: f64,
    obs_std: f64,
    rule: BandwidthRule,
) -> Result<(SampleEnsemble, crate::density::UpdateResult)> {
    let mut rng = rng(seed);
    let params =
        DMatrix::from_iterator(samples, 1, (0..samples).map(|_| rng.gen_range(-1.0..=1.0)));
    lambda5_update_with(params, obs_mean, obs_std, rule)
}

fn lambda5_update_with(
    params: DMatrix<f64>,
    obs_mean: f64,
    obs_std: f64,
    rule: BandwidthRule,
) -> Result<(SampleEnsemble, crate::density::UpdateResult)> {
    let qoi = params.map(|l| l.powi(5));
    let initial = UniformBox::new(vec![-1.0], vec![1.0])?;
    let ensemble = SampleEnsemble::new(params, qoi, Arc::new(initial))?;
    let predicted = predicted_density(&ensemble, rule)?;
    let observed =
        GaussianDensity::isotropic(DVector::from_element(1, obs_mean), obs_std)?.evaluator()?;
    let result = update(&ensemble, &observed, &predicted)?;
    Ok((ensemble, result))
}

#[derive(Debug, Clone, Serialize)]
pub struct IllustrativeConfig {
    pub seed: u64,
    pub data_counts: Vec<usize>,
    pub samples: usize,
    pub true_qoi: f64,
    pub noise_std: f64,
    pub bandwidth: BandwidthRule,
    pub band: DiagnosticBand,
}

impl Default for IllustrativeConfig {
    fn default() -> Self {
        Self {
            seed: 21,
            data_counts: vec![5, 10, 20],
            samples: 1000,
            true_qoi: 0.25,
            noise_std: 0.1,
            bandwidth: BandwidthRule::Scott,
            band: DiagnosticBand::default(),
        }
    }
}

/// `λ⁵` example: for each data count, the observed density is centred on the
/// sample mean of noisy data with the noise standard deviation kept fixed.
pub fn experiment_illustrative(cfg: &IllustrativeConfig) -> Result<RunReport> {
    let start = Instant::now();
    let mut report = RunReport::new(
        "experiment-illustrative",
        Some(cfg.seed),
        serde_json::to_value(cfg)?,
    );
    let mut rng = rng(cfg.seed);
    let params = DMatrix::from_iterator(
        cfg.samples,
        1,
        (0..cfg.samples).map(|_| rng.gen_range(-1.0..=1.0)),
    );
    let truth = DVector::from_element(1, cfg.true_qoi.powf(0.2));
    report.set("true_parameter", truth[0]);

    let mut summary = Table::new(
        "illustrative_summary",
        &[
            "data_count",
            "observed_mean",
            "mud",
            "e_r",
            "pushforward_mean",
        ],
    );
    let mut param_curves = Table::new(
        "illustrative_parameter_densities",
        &["data_count", "lambda", "initial", "updated"],
    );
    let mut qoi_curves = Table::new(
        "illustrative_qoi_densities",
        &[
            "data_count",
            "q",
            "predicted",
            "observed",
            "pushforward_updated",
        ],
    );

    for &n in &cfg.data_counts {
        let data: Vec<f64> = (0..n)
            .map(|_| cfg.true_qoi + cfg.noise_std * gauss(&mut rng))
            .collect();
        let obs_mean = data.iter().sum::<f64>() / n as f64;
        let (ensemble, result) =
            lambda5_update_with(params.clone(), obs_mean, cfg.noise_std, cfg.bandwidth)?;
        let push_mean = result.pushforward_mean(&ensemble)[0];
        let label = format!("N={n}");
        report.estimates.push(
            EstimateEntry::new(Method::Mud, &result.mud_point, Some(&truth))
                .with_label(label.clone()),
        );
        report.add_diagnostic(Some(label), result.e_r, &cfg.band);
        summary.push(vec![
            n.to_string(),
            fmt_f64(obs_mean),
            fmt_f64(result.mud_point[0]),
            fmt_f64(result.e_r),
            fmt_f64(push_mean),
        ]);

        let predicted = predicted_density(&ensemble, cfg.bandwidth)?;
        let observed =
            GaussianDensity::isotropic(DVector::from_element(1, obs_mean), cfg.noise_std)?
                .evaluator()?;
        let updated_push = fit_kde_weighted(
            ensemble.qoi(),
            Some(&DVector::from_vec(result.ratios.clone())),
            cfg.bandwidth,
        )?;
        for i in 0..=200 {
            let x = -1.0 + 2.0 * i as f64 / 200.0;
            let q = x.powi(5);
            let pred = predicted.pdf(&[q]);
            let up = if pred > 0.0 {
                0.5 * observed.pdf(&[q]) / pred
            } else {
                0.0
            };
            param_curves.push(vec![n.to_string(), fmt_f64(x), fmt_f64(0.5), fmt_f64(up)]);
            qoi_curves.push(vec![
                n.to_string(),
                fmt_f64(x),
                fmt_f64(predicted.pdf(&[x])),
                fmt_f64(observed.pdf(&[x])),
                fmt_f64(updated_push.pdf(&[x])),
            ]);
        }
    }
    report.tables.extend([summary, param_curves, qoi_curves]);
    report.timing_ms = elapsed_ms(start);
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectralConfig {
    pub seed: u64,
    pub params: usize,
    pub measurements: usize,
    pub sigma: f64,
    pub data_counts: Vec<usize>,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        Self {
            seed: 21,
            params: 20,
            measurements: 5,
            sigma: 0.1,
            data_counts: vec![10, 100, 1000, 10000],
        }
    }
}

/// Updated-covariance spectrum of a WME map built from a random measurement
/// operator, for increasing numbers of repeated measurements.
///
/// The initial density is `N(0, I)`; with `Σ_obs = I` for the WME outputs the
/// uninformed eigenvalues stay at one and the informed ones shrink like
/// `σ² / N`.
pub fn experiment_spectral_decay(cfg: &SpectralConfig) -> Result<RunReport> {
    let start = Instant::now();
    let mut report = RunReport::new(
        "experiment-spectral",
        Some(cfg.seed),
        serde_json::to_value(cfg)?,
    );
    let (p, m) = (cfg.params, cfg.measurements);
    if m == 0 || m > p {
        return Err(MudError::InvalidArgument(format!(
            "need 0 < measurements <= params, got {m} and {p}"
        )));
    }
    let mut rng = rng(cfg.seed);
    let operator = normal_matrix(&mut rng, m, p);
    let truth = normal_vector(&mut rng, p);
    let measurements = LinearMeasurementSet::new(operator.clone())?;
    let initial = GaussianDensity::standard(p);
    let clean = &operator * &truth;

    let mut table = Table::new(
        "spectral_eigenvalues",
        &["data_count", "index", "eigenvalue"],
    );
    let mut spectra: Vec<Vec<f64>> = Vec::new();
    for &n in &cfg.data_counts {
        let devices = (0..m)
            .map(|j| DeviceData {
                label: format!("M{}", j + 1),
                values: (0..n)
                    .map(|_| clean[j] + cfg.sigma * gauss(&mut rng))
                    .collect(),
                sigma: cfg.sigma,
            })
            .collect();
        let data = MeasurementData::new(devices)?;
        let map = assemble_wme_affine(&measurements, &data)?;
        let problem =
            LinearGaussianProblem::new(map, initial.clone(), GaussianDensity::standard(m))?;
        let eig = descending(&symmetric_eigenvalues(&problem.updated_covariance()?)?);
        for (i, v) in eig.iter().enumerate() {
            table.push(vec![n.to_string(), (i + 1).to_string(), fmt_f64(*v)]);
        }
        let mud = problem.mud_point()?;
        report.estimates.push(
            EstimateEntry::new(Method::Mud, &mud.estimate, Some(&truth))
                .with_label(format!("N={n}")),
        );
        report.add_diagnostic(
            Some(format!("N={n}")),
            problem.exact_expectation_r(),
            &DiagnosticBand::default(),
        );
        report.spectra.push(Spectrum {
            label: format!("N={n}"),
            values: eig.clone(),
        });
        spectra.push(eig);
    }

    // Σ_init = I, so each uninformed eigenvalue should stay at 1.
    let uninformed = p - m;
    let max_dev = spectra
        .iter()
        .flat_map(|s| s[..uninformed].iter().map(|v| (v - 1.0).abs()))
        .fold(0.0, f64::max);
    let stable = spectra
        .iter()
        .map(|s| {
            s[..uninformed]
                .iter()
                .filter(|v| (*v - 1.0).abs() <= 0.1)
                .count()
        })
        .min()
        .unwrap_or(0);
    let mut ratios: Vec<f64> = Vec::new();
    let mut step_medians = Vec::new();
    for w in spectra.windows(2) {
        let mut step: Vec<f64> = (uninformed..p).map(|i| w[0][i] / w[1][i]).collect();
        ratios.extend(step.iter().copied());
        step_medians.push(median(&mut step));
    }
    report.set("uninformed_count", uninformed);
    report.set("stable_uninformed_count", stable);
    report.set("uninformed_max_relative_deviation", max_dev);
    report.set("informed_step_median_ratios", step_medians);
    report.set("informed_median_ratio", median(&mut ratios));
    report.tables.push(table);
    report.timing_ms = elapsed_ms(start);
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepConfig {
    pub seed: u64,
    pub params: usize,
    pub alphas: Vec<f64>,
    /// Standard deviation of the observed density; data are noiseless.
    pub obs_std: f64,
    /// Output dimensions (dimension sweep) or ranks (rank sweep); `None`
    /// means `1..=params`.
    pub steps: Option<Vec<usize>>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            seed: 21,
            params: 100,
            alphas: DEFAULT_ALPHAS.to_vec(),
            obs_std: 1e-8,
            steps: None,
        }
    }
}

/// Random reference operator, bias, truth and initial covariance shared by
/// both sweeps.
#[derive(Debug, Clone)]
pub struct SweepReference {
    pub matrix: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub truth: DVector<f64>,
    /// Diagonal initial covariance, entries from `U[0.5, 1.5]` sorted descending.
    pub initial_cov: DMatrix<f64>,
}

impl SweepReference {
    pub fn generate(seed: u64, p: usize) -> Self {
        let mut rng = rng(seed);
        let matrix = normal_matrix(&mut rng, p, p);
        let bias = normal_vector(&mut rng, p);
        let truth = normal_vector(&mut rng, p);
        let mut diag: Vec<f64> = (0..p).map(|_| rng.gen_range(0.5..1.5)).collect();
        diag.sort_by(|a, b| b.total_cmp(a));
        Self {
            matrix,
            bias,
            truth,
            initial_cov: DMatrix::from_diagonal(&DVector::from_vec(diag)),
        }
    }

    fn problem(
        &self,
        a: DMatrix<f64>,
        b: DVector<f64>,
        initial_cov: DMatrix<f64>,
        obs_std: f64,
    ) -> Result<LinearGaussianProblem> {
        let observed_mean = &a * &self.truth + &b;
        let p = a.ncols();
        LinearGaussianProblem::new(
            AffineMap::new(a, b)?,
            GaussianDensity::new(DVector::zeros(p), initial_cov)?,
            GaussianDensity::isotropic(observed_mean, obs_std)?,
        )
    }
}

struct SweepStep {
    errors: Vec<(Method, Option<f64>, f64)>,
    mud_alpha_spread: f64,
    e_r: f64,
    mud: DVector<f64>,
}

fn solve_sweep_step(
    reference: &SweepReference,
    a: DMatrix<f64>,
    b: DVector<f64>,
    cfg: &SweepConfig,
) -> Result<SweepStep> {
    let truth = &reference.truth;
    let base = reference.problem(
        a.clone(),
        b.clone(),
        reference.initial_cov.clone(),
        cfg.obs_std,
    )?;
    let mut errors = Vec::new();
    let mud = base.mud_point()?.estimate;
    errors.push((Method::Mud, None, relative_error(&mud, truth)));
    let mut spread: f64 = 0.0;
    for &alpha in &cfg.alphas {
        let scaled = base.with_scaled_initial(alpha);
        let mud_a = scaled.mud_point()?.estimate;
        spread = spread.max((&mud_a - &mud).norm() / mud.norm().max(1e-300));
        errors.push((Method::Mud, Some(alpha), relative_error(&mud_a, truth)));
        let map_a = scaled.map_point()?.estimate;
        errors.push((Method::Map, Some(alpha), relative_error(&map_a, truth)));
    }
    let lsq = least_squares(base.map(), base.observed().mean())?;
    errors.push((Method::Lsq, None, relative_error(&lsq, truth)));
    Ok(SweepStep {
        errors,
        mud_alpha_spread: spread,
        e_r: base.exact_expectation_r(),
        mud,
    })
}

fn sweep_steps(cfg: &SweepConfig) -> Vec<usize> {
    cfg.steps
        .clone()
        .unwrap_or_else(|| (1..=cfg.params).collect())
}

fn record_sweep(table: &mut Table, step: usize, result: &SweepStep) {
    for (method, alpha, err) in &result.errors {
        table.push(vec![
            step.to_string(),
            method.to_string(),
            alpha.map(fmt_f64).unwrap_or_default(),
            fmt_f64(*err),
        ]);
    }
}

fn endpoint_summary(
    report: &mut RunReport,
    label: String,
    result: &SweepStep,
    truth: &DVector<f64>,
) {
    report
        .estimates
        .push(EstimateEntry::new(Method::Mud, &result.mud, Some(truth)).with_label(label.clone()));
    report.add_diagnostic(Some(label), result.e_r, &DiagnosticBand::default());
    let worst = result.errors.iter().map(|e| e.2).fold(0.0, f64::max);
    report.set("endpoint_max_relative_error", worst);
    report.set(
        "endpoint_errors",
        result
            .errors
            .iter()
            .map(|(m, a, e)| json!({"method": m, "alpha": a, "relative_error": e}))
            .collect::<Vec<_>>(),
    );
}

/// Errors of MUD, MAP and least squares as rows of the reference operator are
/// added one at a time.
pub fn experiment_dimension_sweep(cfg: &SweepConfig) -> Result<RunReport> {
    let start = Instant::now();
    let mut report = RunReport::new(
        "experiment-dimension",
        Some(cfg.seed),
        serde_json::to_value(cfg)?,
    );
    let reference = SweepReference::generate(cfg.seed, cfg.params);
    let steps = sweep_steps(cfg);
    let mut table = Table::new(
        "dimension_errors",
        &["m", "method", "alpha", "relative_error"],
    );
    let mut max_spread: f64 = 0.0;
    let mut identity_gap: f64 = 0.0;
    let mut last = None;
    for &m in &steps {
        if m == 0 || m > cfg.params {
            return Err(MudError::InvalidArgument(format!(
                "output dimension {m} outside 1..={}",
                cfg.params
            )));
        }
        let a = reference.matrix.rows(0, m).into_owned();
        let b = reference.bias.rows(0, m).into_owned();
        let result = solve_sweep_step(&reference, a.clone(), b.clone(), cfg)?;
        max_spread = max_spread.max(result.mud_alpha_spread);

        // Σ_init = αI: MUD coincides with the minimum-norm least-squares point.
        let iso =
            reference.problem(a, b, DMatrix::identity(cfg.params, cfg.params), cfg.obs_std)?;
        let mud_iso = iso.mud_point()?.estimate;
        let lsq = least_squares(iso.map(), iso.observed().mean())?;
        identity_gap = identity_gap.max((&mud_iso - &lsq).norm() / (1.0 + lsq.norm()));

        record_sweep(&mut table, m, &result);
        last = Some(result);
    }
    if let (Some(result), Some(m)) = (&last, steps.last()) {
        endpoint_summary(&mut report, format!("m={m}"), result, &reference.truth);
    }
    report.set("mud_alpha_max_spread", max_spread);
    report.set("identity_prior_lsq_max_gap", identity_gap);
    report.tables.push(table);
    report.timing_ms = elapsed_ms(start);
    Ok(report)
}

/// Errors as the rank of a square operator grows, with `A = Σ_{i≤r} u_i s_i v_iᵀ`
/// built from the SVD of the reference matrix.
pub fn experiment_rank_sweep(cfg: &SweepConfig) -> Result<RunReport> {
    let start = Instant::now();
    let mut report = RunReport::new(
        "experiment-rank",
        Some(cfg.seed),
        serde_json::to_value(cfg)?,
    );
    let reference = SweepReference::generate(cfg.seed, cfg.params);
    let dec = svd(&reference.matrix)?;
    let steps = sweep_steps(cfg);
    let mut table = Table::new(
        "rank_errors",
        &["rank", "method", "alpha", "relative_error"],
    );
    let mut max_spread: f64 = 0.0;
    let mut last = None;
    let mut mud_curve = Vec::new();
    let mut lsq_curve = Vec::new();

    let mut a = DMatrix::zeros(cfg.params, cfg.params);
    let mut built = 0;
    for &r in &steps {
        if r == 0 || r > cfg.params || r < built {
            return Err(MudError::InvalidArgument(format!(
                "ranks must be increasing within 1..={}, got {r}",
                cfg.params
            )));
        }
        while built < r {
            a += dec.u.column(built) * dec.singular_values[built] * dec.v.column(built).transpose();
            built += 1;
        }
        let result = solve_sweep_step(&reference, a.clone(), reference.bias.clone(), cfg)?;
        max_spread = max_spread.max(result.mud_alpha_spread);
        mud_curve.push(result.errors[0].2);
        lsq_curve.push(result.errors.last().expect("lsq entry").2);
        record_sweep(&mut table, r, &result);
        last = Some(result);
    }
    if let (Some(result), Some(r)) = (&last, steps.last()) {
        endpoint_summary(&mut report, format!("rank={r}"), result, &reference.truth);
    }
    let violations = |curve: &[f64]| curve.windows(2).filter(|w| w[1] > 1.2 * w[0]).count();
    report.set("mud_monotonicity_violations", violations(&mud_curve));
    report.set("lsq_monotonicity_violations", violations(&lsq_curve));
    report.set("mud_alpha_max_spread", max_spread);
    report.tables.push(table);
    report.timing_ms = elapsed_ms(start);
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct PcaPipelineConfig {
    pub candidates: Vec<usize>,
    pub variance_threshold: f64,
    pub bandwidth: BandwidthRule,
    pub band: DiagnosticBand,
    pub grid_points: usize,
}

impl Default for PcaPipelineConfig {
    fn default() -> Self {
        Self {
            candidates: Vec::new(),
            variance_threshold: 0.95,
            bandwidth: BandwidthRule::Scott,
            band: DiagnosticBand::default(),
            grid_points: 101,
        }
    }
}

/// Residual matrix, PCA fit, component selection by `E(r)` and the final
/// update. An empty candidate list means `1..=p`.
pub fn run_pca_pipeline(
    ensemble: &SampleEnsemble,
    data: &MeasurementData,
    cfg: &PcaPipelineConfig,
    reference: Option<&DVector<f64>>,
) -> Result<RunReport> {
    let start = Instant::now();
    let mut report = RunReport::new("pca", None, serde_json::to_value(cfg)?);
    let residuals = build_residual_matrix(ensemble, data)?;
    let limit = ensemble.len().min(residuals.data_len());
    let max_components = ensemble.param_dim().min(limit);
    let fitted = fit_pca(&residuals, cfg.variance_threshold, max_components)?;
    report.set("threshold_components", fitted.n_components());
    report.spectra.push(Spectrum {
        label: "explained_variance_ratio".into(),
        values: fitted.explained_variance_ratio(),
    });
    let mut spectrum = Table::new(
        "explained_variance",
        &["component", "variance", "ratio", "cumulative"],
    );
    let mut cumulative = 0.0;
    for (i, (v, r)) in fitted
        .explained_variance()
        .iter()
        .zip(fitted.explained_variance_ratio())
        .enumerate()
    {
        cumulative += r;
        spectrum.push(vec![
            (i + 1).to_string(),
            fmt_f64(*v),
            fmt_f64(r),
            fmt_f64(cumulative),
        ]);
    }

    let candidates: Vec<usize> = if cfg.candidates.is_empty() {
        (1..=max_components).collect()
    } else {
        cfg.candidates.clone()
    };
    let selection = select_pca_components(ensemble, data, &candidates, &cfg.band, cfg.bandwidth)?;
    let mut trials = Table::new("component_selection", &["components", "e_r", "verdict"]);
    for t in &selection.trials {
        trials.push(vec![
            t.components.to_string(),
            fmt_f64(t.e_r),
            format!("{:?}", t.verdict).to_uppercase(),
        ]);
    }
    report.set("chosen_components", selection.chosen);
    report.set("trials", &selection.trials);
    report.set("mud_index", selection.result.mud_index);
    report.estimates.push(EstimateEntry::new(
        Method::Mud,
        &selection.result.mud_point,
        reference,
    ));
    report.add_diagnostic(
        Some(format!("components={}", selection.chosen)),
        selection.result.e_r,
        &cfg.band,
    );

    let marginals = marginal_curves(
        ensemble,
        &selection.result.ratios,
        cfg.bandwidth,
        cfg.grid_points,
    )?;
    report.tables.extend([spectrum, trials, marginals]);
    report.timing_ms = elapsed_ms(start);
    Ok(report)
}

/// Per-parameter initial and updated marginal KDE curves on a uniform grid
/// over the sample range.
pub fn marginal_curves(
    ensemble: &SampleEnsemble,
    ratios: &[f64],
    rule: BandwidthRule,
    grid_points: usize,
) -> Result<Table> {
    let mut table = Table::new("marginals", &["parameter", "lambda", "initial", "updated"]);
    let grid_points = grid_points.max(2);
    let weights = DVector::from_iterator(
        ratios.len(),
        ratios
            .iter()
            .enumerate()
            .map(|(k, r)| r * ensemble.weights().map_or(1.0, |w| w[k])),
    );
    for j in 0..ensemble.param_dim() {
        let col = ensemble.params().column(j).into_owned();
        let pts = DMatrix::from_column_slice(col.len(), 1, col.as_slice());
        let initial = fit_kde_weighted(&pts, ensemble.weights(), rule)?;
        let updated = fit_kde_weighted(&pts, Some(&weights), rule)?;
        let (lo, hi) = (col.min(), col.max());
        let grid = DMatrix::from_iterator(
            grid_points,
            1,
            (0..grid_points).map(|i| lo + (hi - lo) * i as f64 / (grid_points - 1) as f64),
        );
        let init_vals = evaluate_rows(&initial, &grid);
        let up_vals = evaluate_rows(&updated, &grid);
        for i in 0..grid_points {
            table.push(vec![
                format!("lam_{}", j + 1),
                fmt_f64(grid[(i, 0)]),
                fmt_f64(init_vals[i]),
                fmt_f64(up_vals[i]),
            ]);
        }
    }
    Ok(table)
}

/// Which parameters influence the synthetic PCA surrogate's outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Observability {
    Both,
    FirstOnly,
}

/// Synthetic two-parameter time series `M(λ; t) = λ₁ sin(πt) + λ₂ cos(πt)`
/// (second term dropped for [`Observability::FirstOnly`]) on `points` times in
/// `[0, 1]`, with uniform samples on `[0, 1]²` and one datum per time.
///
/// Data are `M(λ†; t) + noise·ξ`; `sigma` is the standard deviation recorded
/// with the data and used for Z-scoring.
pub fn pca_surrogate(
    seed: u64,
    kind: Observability,
    samples: usize,
    points: usize,
    sigma: f64,
    noise: f64,
    truth: [f64; 2],
) -> Result<(SampleEnsemble, MeasurementData)> {
    let mut rng = rng(seed);
    let times: Vec<f64> = (0..points)
        .map(|i| i as f64 / (points.max(2) - 1) as f64)
        .collect();
    let model = |l1: f64, l2: f64, t: f64| {
        let base = l1 * (std::f64::consts::PI * t).sin();
        match kind {
            Observability::Both => base + l2 * (std::f64::consts::PI * t).cos(),
            Observability::FirstOnly => base,
        }
    };
    let mut params = DMatrix::zeros(samples, 2);
    for k in 0..samples {
        params[(k, 0)] = rng.gen_range(0.0..1.0);
        params[(k, 1)] = rng.gen_range(0.0..1.0);
    }
    let outputs = DMatrix::from_fn(samples, points, |k, i| {
        model(params[(k, 0)], params[(k, 1)], times[i])
    });
    let devices = times
        .iter()
        .enumerate()
        .map(|(i, &t)| DeviceData {
            label: format!("t{i}"),
            values: vec![model(truth[0], truth[1], t) + noise * gauss(&mut rng)],
            sigma,
        })
        .collect();
    let data = MeasurementData::new(devices)?;
    let initial = UniformBox::new(vec![0.0, 0.0], vec![1.0, 1.0])?;
    let ensemble = SampleEnsemble::new(params, outputs, Arc::new(initial))?;
    Ok((ensemble, data))
}

/// Nearest-neighbour distance of every sample, brute force.
pub fn nearest_neighbor_distances(points: &DMatrix<f64>) -> Vec<f64> {
    let s = points.nrows();
    (0..s)
        .map(|i| {
            (0..s)
                .filter(|&j| j != i)
                .map(|j| (points.row(i) - points.row(j)).norm())
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

/// Empirical quantile with linear interpolation.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_and_quantile() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(quantile(&[0.0, 10.0], 0.5), 5.0);
    }

    #[test]
    fn sweep_reference_is_seeded() {
        let a = SweepReference::generate(3, 5);
        let b = SweepReference::generate(3, 5);
        assert_eq!(a.matrix, b.matrix);
        let diag = a.initial_cov.diagonal();
        assert!(diag.iter().all(|&d| (0.5..1.5).contains(&d)));
        assert!(diag.as_slice().windows(2).all(|w| w[0] >= w[1]));
    }
}
