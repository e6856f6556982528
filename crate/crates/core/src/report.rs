//! Run reports and plot-ready tables.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::Serialize;
use serde_json::Value;

use crate::density::{DiagnosticBand, Verdict};
use crate::error::Result;
use crate::linear::Method;

pub const SCHEMA_VERSION: &str = "1";

#[derive(Debug, Clone, Serialize)]
pub struct EstimateEntry {
    pub method: Method,
    /// Label distinguishing repeated runs, e.g. `"m=10"` or `"N=5"`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    pub estimate: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub relative_error: Option<f64>,
}

impl EstimateEntry {
    pub fn new(method: Method, estimate: &DVector<f64>, reference: Option<&DVector<f64>>) -> Self {
        Self {
            method,
            label: None,
            alpha: None,
            estimate: estimate.iter().copied().collect(),
            relative_error: reference.map(|r| crate::linear::relative_error(estimate, r)),
        }
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = Some(alpha);
        self
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DiagnosticEntry {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub e_r: f64,
    pub verdict: Verdict,
    pub band: DiagnosticBand,
}

#[derive(Debug, Clone, Serialize)]
pub struct Spectrum {
    pub label: String,
    pub values: Vec<f64>,
}

/// Tabular output written as one CSV file.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: impl Into<String>, columns: &[&str]) -> Self {
        Self {
            name: name.into(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    /// Writes `<dir>/<name>.csv` with a leading `schema_version` column.
    pub fn write_csv(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(format!("{}.csv", self.name));
        let mut w = csv::Writer::from_path(&path)?;
        let mut header = vec!["schema_version".to_string()];
        header.extend(self.columns.iter().cloned());
        w.write_record(&header)?;
        for row in &self.rows {
            let mut rec = vec![SCHEMA_VERSION.to_string()];
            rec.extend(row.iter().cloned());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(path)
    }
}

/// Everything a run produces. `timing_ms` is the only field that varies
/// between identical invocations.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub schema_version: &'static str,
    pub kind: String,
    pub seed: Option<u64>,
    pub config: Value,
    pub estimates: Vec<EstimateEntry>,
    pub diagnostics: Vec<DiagnosticEntry>,
    pub spectra: Vec<Spectrum>,
    pub summary: BTreeMap<String, Value>,
    pub timing_ms: f64,
    #[serde(skip)]
    pub tables: Vec<Table>,
}

impl RunReport {
    pub fn new(kind: impl Into<String>, seed: Option<u64>, config: Value) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            kind: kind.into(),
            seed,
            config,
            estimates: Vec::new(),
            diagnostics: Vec::new(),
            spectra: Vec::new(),
            summary: BTreeMap::new(),
            timing_ms: 0.0,
            tables: Vec::new(),
        }
    }

    pub fn add_diagnostic(&mut self, label: Option<String>, e_r: f64, band: &DiagnosticBand) {
        self.diagnostics.push(DiagnosticEntry {
            label,
            e_r,
            verdict: band.verdict(e_r),
            band: *band,
        });
    }

    pub fn set(&mut self, key: &str, value: impl Serialize) {
        self.summary.insert(
            key.to_string(),
            serde_json::to_value(value).expect("serializable summary value"),
        );
    }

    /// True when any diagnostic is `SUSPECT`.
    pub fn is_suspect(&self) -> bool {
        self.diagnostics
            .iter()
            .any(|d| d.verdict == Verdict::Suspect)
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    /// JSON payload with the timing field zeroed, for reproducibility checks.
    pub fn deterministic_json(&self) -> String {
        let mut copy = self.clone();
        copy.timing_ms = 0.0;
        serde_json::to_string_pretty(&copy).expect("report serializes")
    }

    /// Writes `report.json` and every table into `dir`.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let report_path = dir.join("report.json");
        fs::write(&report_path, serde_json::to_string_pretty(self)?)?;
        let mut written = vec![report_path];
        for t in &self.tables {
            written.push(t.write_csv(dir)?);
        }
        Ok(written)
    }
}

/// Shortest round-tripping decimal form.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}
