use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::density::{Density, UniformBox};
use crate::error::{MudError, Result};

/// Parameter samples drawn from the initial density together with their
/// model outputs.
#[derive(Clone)]
pub struct SampleEnsemble {
    params: DMatrix<f64>,
    qoi: DMatrix<f64>,
    initial: Arc<dyn Density>,
    weights: Option<DVector<f64>>,
}

impl std::fmt::Debug for SampleEnsemble {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SampleEnsemble")
            .field("samples", &self.len())
            .field("params", &self.param_dim())
            .field("qoi", &self.qoi_dim())
            .field("weighted", &self.weights.is_some())
            .finish()
    }
}

fn check_finite(m: &DMatrix<f64>, what: &str) -> Result<()> {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if !m[(i, j)].is_finite() {
                return Err(MudError::InvalidArgument(format!(
                    "non-finite {what} value at row {i}, column {j}"
                )));
            }
        }
    }
    Ok(())
}

impl SampleEnsemble {
    pub fn new(params: DMatrix<f64>, qoi: DMatrix<f64>, initial: Arc<dyn Density>) -> Result<Self> {
        if params.nrows() != qoi.nrows() {
            return Err(MudError::DimensionMismatch {
                context: "ensemble rows",
                expected: params.nrows(),
                found: qoi.nrows(),
            });
        }
        if initial.dim() != params.ncols() {
            return Err(MudError::DimensionMismatch {
                context: "initial density dimension",
                expected: params.ncols(),
                found: initial.dim(),
            });
        }
        check_finite(&params, "parameter")?;
        check_finite(&qoi, "qoi")?;
        Ok(Self {
            params,
            qoi,
            initial,
            weights: None,
        })
    }

    /// Ensemble whose initial density is uniform over the bounding box of the
    /// parameter samples.
    pub fn with_bounding_box(params: DMatrix<f64>, qoi: DMatrix<f64>) -> Result<Self> {
        let p = params.ncols();
        let lower: Vec<f64> = (0..p).map(|j| params.column(j).min()).collect();
        let upper: Vec<f64> = (0..p).map(|j| params.column(j).max()).collect();
        let initial = UniformBox::new(lower, upper)?;
        Self::new(params, qoi, Arc::new(initial))
    }

    pub fn with_weights(mut self, weights: DVector<f64>) -> Result<Self> {
        if weights.len() != self.len() {
            return Err(MudError::DimensionMismatch {
                context: "ensemble weights",
                expected: self.len(),
                found: weights.len(),
            });
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(MudError::InvalidArgument(
                "weights must be finite and non-negative".into(),
            ));
        }
        if weights.iter().all(|&w| w == 0.0) {
            return Err(MudError::InvalidArgument("weights are all zero".into()));
        }
        self.weights = Some(weights);
        Ok(self)
    }

    /// Same samples and weights with a different output matrix.
    pub fn with_qoi(&self, qoi: DMatrix<f64>) -> Result<Self> {
        let mut out = Self::new(self.params.clone(), qoi, self.initial.clone())?;
        out.weights = self.weights.clone();
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.params.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn param_dim(&self) -> usize {
        self.params.ncols()
    }

    pub fn qoi_dim(&self) -> usize {
        self.qoi.ncols()
    }

    pub fn params(&self) -> &DMatrix<f64> {
        &self.params
    }

    pub fn qoi(&self) -> &DMatrix<f64> {
        &self.qoi
    }

    pub fn initial(&self) -> &Arc<dyn Density> {
        &self.initial
    }

    pub fn weights(&self) -> Option<&DVector<f64>> {
        self.weights.as_ref()
    }

    pub fn param_row(&self, k: usize) -> Vec<f64> {
        self.params.row(k).iter().copied().collect()
    }

    pub fn qoi_row(&self, k: usize) -> Vec<f64> {
        self.qoi.row(k).iter().copied().collect()
    }
}
