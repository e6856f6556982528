//! Maximal updated density (MUD) estimation for data-consistent inversion.
//!
//! The crate is organised by layer:
//!
//! * [`linalg`]: dense SPD solves, pseudo-inverse, SVD, Gaussian and affine
//!   building blocks.
//! * [`linear`]: closed-form MUD, MAP and least-squares estimators for
//!   linear-Gaussian problems.
//! * [`qoi`]: data-constructed maps (mean error, weighted mean error, PCA).
//! * [`density`]: KDE-based updates, the `E(r)` diagnostic and sample-argmax
//!   MUD points for arbitrary maps.
//! * [`experiments`], [`io`] and [`report`]: ingestion, report emission and the
//!   bundled reproducible experiments used by the `mud` CLI.

pub mod density;
pub mod ensemble;
pub mod error;
pub mod experiments;
pub mod io;
pub mod linalg;
pub mod linear;
pub mod qoi;
pub mod report;

pub use density::{
    expectation_r, fit_kde, predicted_density, select_pca_components, update, BandwidthRule,
    Density, DiagnosticBand, KdeModel, UniformBox, UpdateResult, Verdict,
};
pub use ensemble::SampleEnsemble;
pub use error::{MudError, Result};
pub use linalg::{AffineMap, GaussianDensity, SpdFactorization};
pub use linear::{least_squares, EstimateReport, LinearGaussianProblem, Method, Predictability};
pub use qoi::{MeasurementData, PcaMap, ResidualMatrix};
pub use report::RunReport;
