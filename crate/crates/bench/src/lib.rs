//! Simulation design, evaluation metrics and the replicate benchmark.

pub mod benchmark;
pub mod error;
pub mod metrics;
pub mod simulate;

pub use benchmark::{decile_ratio, fit_method, order_profile, run_benchmark, BenchReport, CellSummary, Method, RunRecord};
pub use error::{BenchError, Result};
pub use metrics::{cv_mad, cv_mspe, cv_prediction_error, mad, rmse_coef, rmse_signal, CvReport};
pub use simulate::{gen_dataset, gen_raw, PredictorType, SimSpec, SimTruth};
