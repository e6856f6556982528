//! File formats: sample ensembles (CSV/JSON), measurement data (CSV) and JSON
//! problem descriptions.
//!
//! Ensemble CSV files carry a header row; parameter columns are prefixed
//! `lam_`, output columns `q_`, and an optional `weight` column holds sample
//! weights. Measurement data files have the columns `device,index,value,sigma`.

use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::density::Density;
use crate::ensemble::SampleEnsemble;
use crate::error::{MudError, Result};
use crate::linalg::{AffineMap, GaussianDensity};
use crate::linear::LinearGaussianProblem;
use crate::qoi::{DeviceData, LinearMeasurementSet, MeasurementData};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnsembleFormat {
    Csv,
    Json,
}

impl EnsembleFormat {
    /// Guesses the format from the file extension, defaulting to CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("json") => EnsembleFormat::Json,
            _ => EnsembleFormat::Csv,
        }
    }
}

impl FromStr for EnsembleFormat {
    type Err = MudError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(EnsembleFormat::Csv),
            "json" => Ok(EnsembleFormat::Json),
            other => Err(MudError::InvalidArgument(format!(
                "unknown format '{other}'"
            ))),
        }
    }
}

fn ingest_err(path: &Path, message: impl Into<String>) -> MudError {
    MudError::Ingest {
        path: path.display().to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct EnsembleJson {
    params: Vec<Vec<f64>>,
    qoi: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    weights: Option<Vec<f64>>,
}

fn rows_to_matrix(path: &Path, what: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let cols = rows.first().map_or(0, |r| r.len());
    for (i, r) in rows.iter().enumerate() {
        if r.len() != cols {
            return Err(ingest_err(
                path,
                format!(
                    "{what} row {} has {} entries, expected {cols}",
                    i + 1,
                    r.len()
                ),
            ));
        }
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

/// Reads a sample ensemble. The initial density is taken as uniform over the
/// bounding box of the parameter samples unless replaced by the caller.
pub fn ingest_ensemble(path: &Path, format: EnsembleFormat) -> Result<SampleEnsemble> {
    let (params, qoi, weights) = match format {
        EnsembleFormat::Csv => read_ensemble_csv(path)?,
        EnsembleFormat::Json => read_ensemble_json(path)?,
    };
    if params.nrows() == 0 {
        return Err(ingest_err(path, "no samples"));
    }
    if params.ncols() == 0 || qoi.ncols() == 0 {
        return Err(ingest_err(
            path,
            "need at least one parameter and one output column",
        ));
    }
    log::info!(
        "{}: {} samples, {} parameters, {} outputs",
        path.display(),
        params.nrows(),
        params.ncols(),
        qoi.ncols()
    );
    let ensemble = SampleEnsemble::with_bounding_box(params, qoi)?;
    match weights {
        Some(w) => ensemble.with_weights(w),
        None => Ok(ensemble),
    }
}

/// Swaps the initial density of an ingested ensemble.
pub fn with_initial(
    ensemble: &SampleEnsemble,
    initial: Arc<dyn Density>,
) -> Result<SampleEnsemble> {
    let out = SampleEnsemble::new(ensemble.params().clone(), ensemble.qoi().clone(), initial)?;
    match ensemble.weights() {
        Some(w) => out.with_weights(w.clone()),
        None => Ok(out),
    }
}

type RawEnsemble = (DMatrix<f64>, DMatrix<f64>, Option<DVector<f64>>);

fn read_ensemble_csv(path: &Path) -> Result<RawEnsemble> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    let mut param_cols = Vec::new();
    let mut qoi_cols = Vec::new();
    let mut weight_col = None;
    for (i, h) in headers.iter().enumerate() {
        if h.starts_with("lam_") {
            param_cols.push(i);
        } else if h.starts_with("q_") {
            qoi_cols.push(i);
        } else if h == "weight" {
            weight_col = Some(i);
        } else {
            return Err(ingest_err(path, format!("unrecognised column '{h}'")));
        }
    }

    let mut params = Vec::new();
    let mut qoi = Vec::new();
    let mut weights = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| ingest_err(path, e.to_string()))?;
        let mut values = Vec::with_capacity(record.len());
        for (col, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                ingest_err(
                    path,
                    format!(
                        "row {}, column '{}': cannot parse '{field}'",
                        row + 1,
                        &headers[col]
                    ),
                )
            })?;
            if !v.is_finite() {
                return Err(ingest_err(
                    path,
                    format!(
                        "row {}, column '{}': non-finite value",
                        row + 1,
                        &headers[col]
                    ),
                ));
            }
            values.push(v);
        }
        params.push(param_cols.iter().map(|&c| values[c]).collect::<Vec<_>>());
        qoi.push(qoi_cols.iter().map(|&c| values[c]).collect::<Vec<_>>());
        if let Some(c) = weight_col {
            weights.push(values[c]);
        }
    }
    let s = params.len();
    let params = DMatrix::from_fn(s, param_cols.len(), |i, j| params[i][j]);
    let qoi = DMatrix::from_fn(s, qoi_cols.len(), |i, j| qoi[i][j]);
    let weights = weight_col.map(|_| DVector::from_vec(weights));
    Ok((params, qoi, weights))
}

fn read_ensemble_json(path: &Path) -> Result<RawEnsemble> {
    let text = fs::read_to_string(path)?;
    let raw: EnsembleJson =
        serde_json::from_str(&text).map_err(|e| ingest_err(path, e.to_string()))?;
    if raw.params.len() != raw.qoi.len() {
        return Err(ingest_err(
            path,
            format!(
                "{} parameter rows but {} output rows",
                raw.params.len(),
                raw.qoi.len()
            ),
        ));
    }
    let params = rows_to_matrix(path, "params", &raw.params)?;
    let qoi = rows_to_matrix(path, "qoi", &raw.qoi)?;
    Ok((params, qoi, raw.weights.map(DVector::from_vec)))
}

/// Writes an ensemble so that [`ingest_ensemble`] reproduces it exactly.
pub fn emit_ensemble(ensemble: &SampleEnsemble, path: &Path, format: EnsembleFormat) -> Result<()> {
    let (p, m) = (ensemble.param_dim(), ensemble.qoi_dim());
    match format {
        EnsembleFormat::Csv => {
            let mut w = csv::Writer::from_path(path)?;
            let mut header: Vec<String> = (1..=p).map(|i| format!("lam_{i}")).collect();
            header.extend((1..=m).map(|i| format!("q_{i}")));
            if ensemble.weights().is_some() {
                header.push("weight".into());
            }
            w.write_record(&header)?;
            for k in 0..ensemble.len() {
                let mut rec: Vec<String> = ensemble
                    .param_row(k)
                    .iter()
                    .map(|v| format!("{v}"))
                    .collect();
                rec.extend(ensemble.qoi_row(k).iter().map(|v| format!("{v}")));
                if let Some(wts) = ensemble.weights() {
                    rec.push(format!("{}", wts[k]));
                }
                w.write_record(&rec)?;
            }
            w.flush()?;
        }
        EnsembleFormat::Json => {
            let raw = EnsembleJson {
                params: (0..ensemble.len()).map(|k| ensemble.param_row(k)).collect(),
                qoi: (0..ensemble.len()).map(|k| ensemble.qoi_row(k)).collect(),
                weights: ensemble.weights().map(|w| w.iter().copied().collect()),
            };
            fs::write(path, serde_json::to_string(&raw)?)?;
        }
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
struct DataRecord {
    device: String,
    index: i64,
    value: f64,
    sigma: f64,
}

/// Reads `device,index,value,sigma` rows. Devices keep their order of first
/// appearance; repeats are sorted by `index`. The noise level must be constant
/// within a device.
pub fn ingest_measurements(path: &Path) -> Result<MeasurementData> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut devices: Vec<(String, f64, Vec<(i64, f64)>)> = Vec::new();
    for (row, rec) in reader.deserialize::<DataRecord>().enumerate() {
        let rec = rec.map_err(|e| ingest_err(path, e.to_string()))?;
        if !rec.value.is_finite() || !rec.sigma.is_finite() {
            return Err(ingest_err(
                path,
                format!("row {}: non-finite value or sigma", row + 1),
            ));
        }
        match devices.iter_mut().find(|d| d.0 == rec.device) {
            Some(d) => {
                if d.1 != rec.sigma {
                    return Err(ingest_err(
                        path,
                        format!(
                            "row {}: device '{}' changes sigma from {} to {}",
                            row + 1,
                            rec.device,
                            d.1,
                            rec.sigma
                        ),
                    ));
                }
                d.2.push((rec.index, rec.value));
            }
            None => devices.push((rec.device, rec.sigma, vec![(rec.index, rec.value)])),
        }
    }
    let mut out = Vec::with_capacity(devices.len());
    for (label, sigma, mut values) in devices {
        values.sort_by_key(|v| v.0);
        if values.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(ingest_err(
                path,
                format!("device '{label}' repeats an index"),
            ));
        }
        out.push(DeviceData {
            label,
            values: values.into_iter().map(|v| v.1).collect(),
            sigma,
        });
    }
    MeasurementData::new(out).map_err(|e| ingest_err(path, e.to_string()))
}

/// Writes measurement data in the `device,index,value,sigma` layout.
pub fn emit_measurements(data: &MeasurementData, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["device", "index", "value", "sigma"])?;
    for d in data.devices() {
        for (i, v) in d.values.iter().enumerate() {
            w.write_record([
                d.label.clone(),
                i.to_string(),
                format!("{v}"),
                format!("{}", d.sigma),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn matrix_from_rows(what: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let cols = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != cols) {
        return Err(MudError::InvalidArgument(format!("ragged rows in {what}")));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

/// Mean and covariance of a Gaussian in JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GaussianSpec {
    pub mean: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
}

impl GaussianSpec {
    pub fn to_density(&self) -> Result<GaussianDensity> {
        GaussianDensity::new(
            DVector::from_vec(self.mean.clone()),
            matrix_from_rows("covariance", &self.covariance)?,
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| ingest_err(path, e.to_string()))
    }
}

/// JSON description of a linear-Gaussian problem.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearProblemSpec {
    #[serde(rename = "A")]
    pub matrix: Vec<Vec<f64>>,
    #[serde(default)]
    pub b: Option<Vec<f64>>,
    pub initial_mean: Vec<f64>,
    pub initial_cov: Vec<Vec<f64>>,
    pub observed_mean: Vec<f64>,
    pub observed_cov: Vec<Vec<f64>>,
    /// Reference parameter for relative errors.
    #[serde(default)]
    pub reference: Option<Vec<f64>>,
    /// Scalings of the initial covariance used for MAP/MUD comparisons.
    #[serde(default)]
    pub alphas: Option<Vec<f64>>,
}

impl LinearProblemSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| ingest_err(path, e.to_string()))
    }

    pub fn to_problem(&self) -> Result<LinearGaussianProblem> {
        let a = matrix_from_rows("A", &self.matrix)?;
        let b = match &self.b {
            Some(b) => DVector::from_vec(b.clone()),
            None => DVector::zeros(a.nrows()),
        };
        let initial = GaussianDensity::new(
            DVector::from_vec(self.initial_mean.clone()),
            matrix_from_rows("initial_cov", &self.initial_cov)?,
        )?;
        let observed = GaussianDensity::new(
            DVector::from_vec(self.observed_mean.clone()),
            matrix_from_rows("observed_cov", &self.observed_cov)?,
        )?;
        LinearGaussianProblem::new(AffineMap::new(a, b)?, initial, observed)
    }
}

/// JSON list of linear measurement functionals, one row per device.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeasurementSetSpec {
    pub rows: Vec<Vec<f64>>,
}

impl MeasurementSetSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| ingest_err(path, e.to_string()))
    }

    pub fn to_set(&self) -> Result<LinearMeasurementSet> {
        LinearMeasurementSet::new(matrix_from_rows("rows", &self.rows)?)
    }
}
