//! `mud` — command-line front end.
//!
//! Every subcommand writes `report.json` plus plot-ready CSV tables into the
//! output directory and prints a one-line summary per estimate.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;

use mud_core::density::{predicted_density, update};
use mud_core::experiments::{
    self, IllustrativeConfig, PcaPipelineConfig, SpectralConfig, SweepConfig, DEFAULT_ALPHAS,
};
use mud_core::io::{self, EnsembleFormat, GaussianSpec, LinearProblemSpec, MeasurementSetSpec};
use mud_core::linear::LinearGaussianProblem;
use mud_core::qoi::{assemble_wme_affine, min_data_for_predictability};
use mud_core::report::{fmt_f64, EstimateEntry, Table};
use mud_core::{BandwidthRule, DiagnosticBand, GaussianDensity, Method, MudError, RunReport};

const THREADS_ENV: &str = "MUD_EST_THREADS";

/// Exit status when `--strict` is set and a diagnostic is SUSPECT.
const EXIT_SUSPECT: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "mud", version, about = "Maximal updated density estimation")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Global {
    /// Seed for every random draw.
    #[arg(long, global = true, default_value_t = 21)]
    seed: u64,
    /// Output directory for report.json and CSV tables.
    #[arg(long, global = true, default_value = "mud-out")]
    out: PathBuf,
    /// Ensemble file format; inferred from the extension when omitted.
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// Exit with status 3 when any E(r) verdict is SUSPECT.
    #[arg(long, global = true)]
    strict: bool,
    /// Acceptance band for E(r), as LO,HI.
    #[arg(long, global = true, default_value = "0.9,1.1", value_parser = parse_band)]
    diag_band: DiagnosticBand,
    #[arg(long, global = true, value_enum, default_value_t = Bandwidth::Scott)]
    bandwidth: Bandwidth,
    /// Cumulative explained-variance threshold for PCA.
    #[arg(long, global = true, default_value_t = 0.95)]
    variance_threshold: f64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Bandwidth {
    Scott,
    Silverman,
}

impl From<Bandwidth> for BandwidthRule {
    fn from(b: Bandwidth) -> Self {
        match b {
            Bandwidth::Scott => BandwidthRule::Scott,
            Bandwidth::Silverman => BandwidthRule::Silverman,
        }
    }
}

fn parse_band(s: &str) -> Result<DiagnosticBand, String> {
    s.parse().map_err(|e: MudError| e.to_string())
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Closed-form MUD, MAP and least-squares solutions of a linear-Gaussian problem.
    SolveLinear {
        /// JSON problem file (`A`, `b`, `initial_mean`, `initial_cov`,
        /// `observed_mean`, `observed_cov`, optional `reference`, `alphas`).
        /// Without it the built-in two-parameter fixture is solved.
        #[arg(long)]
        problem: Option<PathBuf>,
        /// Comma-separated scalings of the initial covariance.
        #[arg(long, value_delimiter = ',')]
        alphas: Option<Vec<f64>>,
        /// Also estimate E(r) from this many samples of the initial density.
        #[arg(long, default_value_t = 0)]
        mc_samples: usize,
    },
    /// Sample-based update of an ensemble against a Gaussian observed density.
    SolveDensity {
        #[arg(long)]
        ensemble: PathBuf,
        /// Observed density as JSON `{mean, covariance}`.
        #[arg(long)]
        observed: PathBuf,
        /// Gaussian initial density as JSON; defaults to uniform on the
        /// bounding box of the samples.
        #[arg(long)]
        initial: Option<PathBuf>,
    },
    /// Linear WME map from repeated measurements, solved in closed form.
    Wme {
        /// JSON `{rows}`: one linear measurement functional per device.
        #[arg(long)]
        measurements: PathBuf,
        /// CSV with columns device,index,value,sigma.
        #[arg(long)]
        data: PathBuf,
        /// Initial density as JSON `{mean, covariance}`.
        #[arg(long)]
        initial: PathBuf,
        #[arg(long, value_delimiter = ',')]
        alphas: Option<Vec<f64>>,
    },
    /// PCA map from Z-scored residuals with E(r)-driven component selection.
    Pca {
        #[arg(long)]
        ensemble: PathBuf,
        /// CSV with columns device,index,value,sigma.
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated candidate component counts; default 1..=p.
        #[arg(long, value_delimiter = ',')]
        components: Option<Vec<usize>>,
    },
    /// Built-in reproducible experiments.
    Experiment {
        #[command(subcommand)]
        which: Experiment,
    },
}

#[derive(Subcommand, Debug)]
enum Experiment {
    /// λ⁵ map on [-1, 1] with observed densities built from N noisy data.
    Illustrative {
        #[arg(long, value_delimiter = ',', default_value = "5,10,20")]
        data_counts: Vec<usize>,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
    },
    /// Updated-covariance spectrum of a random WME map.
    Spectral {
        #[arg(long, default_value_t = 20)]
        params: usize,
        #[arg(long, default_value_t = 5)]
        measurements: usize,
        #[arg(long, default_value_t = 0.1)]
        sigma: f64,
        #[arg(long, value_delimiter = ',', default_value = "10,100,1000,10000")]
        data_counts: Vec<usize>,
    },
    /// Errors as output dimensions are added to a square random operator.
    Dimension(SweepArgs),
    /// Errors as the rank of a square random operator grows.
    Rank(SweepArgs),
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long, default_value_t = 100)]
    params: usize,
    #[arg(long, value_delimiter = ',')]
    alphas: Option<Vec<f64>>,
    /// Standard deviation of the observed density (data are noiseless).
    #[arg(long, default_value_t = 1e-8)]
    obs_std: f64,
    /// Comma-separated dimensions or ranks; default 1..=params.
    #[arg(long, value_delimiter = ',')]
    steps: Option<Vec<usize>>,
}

impl SweepArgs {
    fn config(&self, seed: u64) -> SweepConfig {
        SweepConfig {
            seed,
            params: self.params,
            alphas: self
                .alphas
                .clone()
                .unwrap_or_else(|| DEFAULT_ALPHAS.to_vec()),
            obs_std: self.obs_std,
            steps: self.steps.clone(),
        }
    }
}

fn configure_threads() {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return;
    };
    match raw.trim().parse::<usize>() {
        Ok(n) if n > 0 => {
            if let Err(e) = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
            {
                log::warn!("could not size thread pool: {e}");
            }
        }
        _ => log::warn!("ignoring {THREADS_ENV}={raw:?}; expected a positive integer"),
    }
}

fn ensemble_format(global: &Global, path: &Path) -> EnsembleFormat {
    match global.format {
        Some(Format::Csv) => EnsembleFormat::Csv,
        Some(Format::Json) => EnsembleFormat::Json,
        None => EnsembleFormat::from_path(path),
    }
}

fn solve_linear(
    g: &Global,
    problem: Option<&Path>,
    alphas: Option<Vec<f64>>,
    mc_samples: usize,
) -> mud_core::Result<RunReport> {
    let (problem, spec_alphas, reference) = match problem {
        Some(path) => {
            let spec = LinearProblemSpec::load(path)?;
            (
                spec.to_problem()?,
                spec.alphas.clone(),
                spec.reference.clone().map(DVector::from_vec),
            )
        }
        None => (experiments::reference_problem(), None, None),
    };
    let alphas = alphas
        .or(spec_alphas)
        .unwrap_or_else(|| DEFAULT_ALPHAS.to_vec());
    let mut report =
        experiments::run_linear_gaussian(&problem, &alphas, reference.as_ref(), &g.diag_band)?;
    report.seed = Some(g.seed);
    if mc_samples > 0 {
        let e_r = experiments::monte_carlo_expectation_r(&problem, mc_samples, g.seed)?;
        report.add_diagnostic(
            Some(format!("monte-carlo s={mc_samples}")),
            e_r,
            &g.diag_band,
        );
    }
    Ok(report)
}

fn solve_density(
    g: &Global,
    ensemble_path: &Path,
    observed: &Path,
    initial: Option<&Path>,
) -> mud_core::Result<RunReport> {
    let start = std::time::Instant::now();
    let mut ensemble = io::ingest_ensemble(ensemble_path, ensemble_format(g, ensemble_path))?;
    if let Some(path) = initial {
        let density = GaussianSpec::load(path)?.to_density()?;
        ensemble = io::with_initial(&ensemble, Arc::new(density.evaluator()?))?;
    }
    let observed = GaussianSpec::load(observed)?.to_density()?;
    let rule: BandwidthRule = g.bandwidth.into();
    let predicted = predicted_density(&ensemble, rule)?;
    let result = update(&ensemble, &observed.evaluator()?, &predicted)?;

    let mut report = RunReport::new(
        "solve-density",
        Some(g.seed),
        serde_json::json!({
            "ensemble": ensemble_path,
            "samples": ensemble.len(),
            "bandwidth": rule,
            "initial": if initial.is_some() { "gaussian" } else { "bounding-box uniform" },
        }),
    );
    report
        .estimates
        .push(EstimateEntry::new(Method::Mud, &result.mud_point, None));
    report.add_diagnostic(None, result.e_r, &g.diag_band);
    report.set("mud_index", result.mud_index);
    report.set("violations", result.violations);
    report.set("pushforward_mean", result.pushforward_mean(&ensemble));
    report.set("observed_mean", observed.mean().as_slice());
    report.set("bandwidth", predicted.bandwidth());

    let mut samples = Table::new("samples", &["index", "ratio", "updated"]);
    for (k, (r, u)) in result.ratios.iter().zip(&result.updated).enumerate() {
        samples.push(vec![k.to_string(), fmt_f64(*r), fmt_f64(*u)]);
    }
    let marginals = experiments::marginal_curves(&ensemble, &result.ratios, rule, 101)?;
    report.tables.extend([samples, marginals]);
    report.timing_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(report)
}

fn wme(
    g: &Global,
    measurements: &Path,
    data: &Path,
    initial: &Path,
    alphas: Option<Vec<f64>>,
) -> mud_core::Result<RunReport> {
    let set = MeasurementSetSpec::load(measurements)?.to_set()?;
    let data = io::ingest_measurements(data)?;
    let initial = GaussianSpec::load(initial)?.to_density()?;
    let map = assemble_wme_affine(&set, &data)?;
    let m = map.outputs();
    let problem = LinearGaussianProblem::new(map, initial.clone(), GaussianDensity::standard(m))?;
    let alphas = alphas.unwrap_or_else(|| DEFAULT_ALPHAS.to_vec());
    let mut report = experiments::run_linear_gaussian(&problem, &alphas, None, &g.diag_band)?;
    report.kind = "wme".into();
    report.seed = Some(g.seed);
    report.set("data_counts", data.counts());
    report.set("sigmas", data.sigmas());
    match min_data_for_predictability(&set, initial.covariance(), &data.sigmas()) {
        Ok(n) => report.set("min_data_for_predictability", n),
        Err(e) => report.set("min_data_for_predictability", e.to_string()),
    }
    let mut wme_map = Table::new("wme_map", &["row", "bias"]);
    let b = problem.map().bias();
    for j in 0..m {
        wme_map.push(vec![(j + 1).to_string(), fmt_f64(b[j])]);
    }
    report.tables.push(wme_map);
    Ok(report)
}

fn pca(
    g: &Global,
    ensemble_path: &Path,
    data: &Path,
    components: Option<Vec<usize>>,
) -> mud_core::Result<RunReport> {
    let ensemble = io::ingest_ensemble(ensemble_path, ensemble_format(g, ensemble_path))?;
    let data = io::ingest_measurements(data)?;
    let cfg = PcaPipelineConfig {
        candidates: components.unwrap_or_default(),
        variance_threshold: g.variance_threshold,
        bandwidth: g.bandwidth.into(),
        band: g.diag_band,
        ..PcaPipelineConfig::default()
    };
    let mut report = experiments::run_pca_pipeline(&ensemble, &data, &cfg, None)?;
    report.seed = Some(g.seed);
    Ok(report)
}

fn experiment(g: &Global, which: &Experiment) -> mud_core::Result<RunReport> {
    match which {
        Experiment::Illustrative {
            data_counts,
            samples,
        } => experiments::experiment_illustrative(&IllustrativeConfig {
            seed: g.seed,
            data_counts: data_counts.clone(),
            samples: *samples,
            bandwidth: g.bandwidth.into(),
            band: g.diag_band,
            ..IllustrativeConfig::default()
        }),
        Experiment::Spectral {
            params,
            measurements,
            sigma,
            data_counts,
        } => experiments::experiment_spectral_decay(&SpectralConfig {
            seed: g.seed,
            params: *params,
            measurements: *measurements,
            sigma: *sigma,
            data_counts: data_counts.clone(),
        }),
        Experiment::Dimension(args) => {
            experiments::experiment_dimension_sweep(&args.config(g.seed))
        }
        Experiment::Rank(args) => experiments::experiment_rank_sweep(&args.config(g.seed)),
    }
}

fn print_summary(report: &RunReport) {
    for e in &report.estimates {
        let est: Vec<String> = e
            .estimate
            .iter()
            .take(6)
            .map(|v| format!("{v:.6}"))
            .collect();
        let more = if e.estimate.len() > 6 { ", ..." } else { "" };
        let mut line = format!("{:<8}", e.method.to_string());
        if let Some(label) = &e.label {
            line.push_str(&format!(" {label}"));
        }
        if let Some(alpha) = e.alpha {
            line.push_str(&format!(" alpha={alpha}"));
        }
        line.push_str(&format!(" [{}{more}]", est.join(", ")));
        if let Some(err) = e.relative_error {
            line.push_str(&format!(" rel_err={err:.3e}"));
        }
        println!("{line}");
    }
    for d in &report.diagnostics {
        let label = d
            .label
            .as_deref()
            .map(|l| format!(" ({l})"))
            .unwrap_or_default();
        println!("E(r){label} = {:.4} {:?}", d.e_r, d.verdict);
    }
}

fn run(cli: &Cli) -> mud_core::Result<RunReport> {
    let g = &cli.global;
    if !(g.variance_threshold > 0.0 && g.variance_threshold <= 1.0) {
        return Err(MudError::InvalidArgument(format!(
            "--variance-threshold must be in (0, 1], got {}",
            g.variance_threshold
        )));
    }
    match &cli.command {
        Command::SolveLinear {
            problem,
            alphas,
            mc_samples,
        } => solve_linear(g, problem.as_deref(), alphas.clone(), *mc_samples),
        Command::SolveDensity {
            ensemble,
            observed,
            initial,
        } => solve_density(g, ensemble, observed, initial.as_deref()),
        Command::Wme {
            measurements,
            data,
            initial,
            alphas,
        } => wme(g, measurements, data, initial, alphas.clone()),
        Command::Pca {
            ensemble,
            data,
            components,
        } => pca(g, ensemble, data, components.clone()),
        Command::Experiment { which } => experiment(g, which),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    configure_threads();

    let report = match run(&cli) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    };
    if let Err(e) = report.write(&cli.global.out) {
        eprintln!("error: writing {}: {e}", cli.global.out.display());
        return ExitCode::FAILURE;
    }
    print_summary(&report);
    println!("wrote {}", cli.global.out.display());
    if cli.global.strict && report.is_suspect() {
        eprintln!(
            "E(r) outside {:?}; failing because --strict is set",
            cli.global.diag_band
        );
        return ExitCode::from(EXIT_SUSPECT);
    }
    ExitCode::SUCCESS
}
