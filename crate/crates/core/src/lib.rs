//! Partitioned empirical Bayes ECM for sparse linear regression.
//!
//! Two variants are provided: a sequential one-at-a-time sweep with a
//! parameter-expanded coordinate update, and an all-at-once update in which
//! every coordinate is solved against the previous iteration. Both alternate
//! with an empirical-Bayes E-step built on a two-groups model of the
//! coefficient t-statistics.
//!
//! The numerical core is generic over [`Real`] (`f32` or `f64`).

pub mod data;
pub mod driver;
pub mod error;
pub mod estep;
pub mod lasso;
pub mod mstep;
pub mod postvar;
pub mod scalar;
pub mod special;

pub use data::{
    prepare_dataset, AaoInit, Centering, Dataset, FitConfig, FitResult, ProbeState, UpdateOrder, Variant, WMoments,
};
pub use driver::{fit, fit_all_at_once, fit_one_at_a_time, predict, predict_with, ConvergenceRecord};
pub use error::{ProbeError, Result};
pub use scalar::Real;

pub type Dataset64 = Dataset<f64>;
pub type FitResult64 = FitResult<f64>;
pub type ProbeState64 = ProbeState<f64>;
pub type WMoments64 = WMoments<f64>;

pub type Dataset32 = Dataset<f32>;
pub type FitResult32 = FitResult<f32>;
pub type ProbeState32 = ProbeState<f32>;
pub type WMoments32 = WMoments<f32>;
