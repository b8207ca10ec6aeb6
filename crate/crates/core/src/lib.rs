//! Estimation of power-system sensitivity matrices (line flows versus bus
//! injections) from measurement windows.
//!
//! * [`ptdf`] computes the model-based DC sensitivity matrix of a network.
//! * [`estimators`] holds the batch solvers: box-constrained least squares
//!   and proximal-gradient solvers for nuclear-norm regularized, robust
//!   (sparse outliers) and robust-with-missing-data problems.
//! * [`online`] tracks a time-varying sensitivity matrix over a sliding
//!   window with one proximal-gradient step per measurement.
//! * [`synth`] generates measurement streams with ground truth.
//! * [`io`] reads and writes the file formats used by the CLI.
//!
//! The numerical core is generic over [`Scalar`] (`f32` or `f64`); the
//! synthesizer and file formats are `f64`.

// Range checks are written as `!(x >= 0)` so that NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub use nalgebra;

pub mod error;
pub mod estimators;
pub mod io;
pub mod metrics;
pub mod model;
pub mod online;
pub mod prox;
pub mod ptdf;
pub mod scalar;
pub mod synth;

pub use error::{Error, Result};
pub use estimators::{
    batch_estimate, batch_estimate_from, least_squares_estimate, lipschitz_constant, sweep_regularization,
    BatchEstimate, LeastSquaresEstimate, ObjectiveTrace, Variant,
};
pub use model::{
    forward_model, validate_window, Branch, EstimatorConfig, MeasurementWindow, Network, NuclearProxMode,
    OutlierMatrix, SensitivityMatrix, StepSize, WindowDiagnostics,
};
pub use online::{run_stream, OnlineConfig, OnlineState, RunReport};
pub use prox::StackedIterate;
pub use ptdf::compute_dc_ptdf;
pub use scalar::Scalar;
pub use synth::{generate_stream, MeasurementStream, ScenarioSpec, StreamSource, TruthLog};

/// Double-precision sensitivity matrix.
pub type Sensitivity64 = SensitivityMatrix<f64>;
/// Double-precision measurement window.
pub type Window64 = MeasurementWindow<f64>;
/// Double-precision estimator configuration.
pub type Config64 = EstimatorConfig<f64>;
/// Double-precision online configuration.
pub type OnlineConfig64 = OnlineConfig<f64>;
/// Single-precision sensitivity matrix.
pub type Sensitivity32 = SensitivityMatrix<f32>;
/// Single-precision measurement window.
pub type Window32 = MeasurementWindow<f32>;
