//! Estimation and prediction error summaries, and K-fold CV with per-fold
//! refits.

use ndarray::{Array1, ArrayView1, ArrayView2};
use probe_core::lasso::fold_assignment;
use probe_core::Dataset;
use serde::{Deserialize, Serialize};

use crate::error::{BenchError, Result};
use crate::simulate::SimTruth;

fn root_mean_square(errors: impl Iterator<Item = f64>) -> f64 {
    let (mut s, mut k) = (0.0, 0usize);
    for e in errors {
        s += e * e;
        k += 1;
    }
    if k == 0 {
        0.0
    } else {
        (s / k as f64).sqrt()
    }
}

/// Median; the mean of the two middle values for even lengths. NaN on empty input.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let h = v.len() / 2;
    if v.len() % 2 == 1 {
        v[h]
    } else {
        0.5 * (v[h - 1] + v[h])
    }
}

/// Median absolute error.
pub fn mad(errors: ArrayView1<f64>) -> f64 {
    let abs: Vec<f64> = errors.iter().map(|e| e.abs()).collect();
    median(&abs)
}

/// `√mean_i (Xᵢ·estimate − signalᵢ)²`; `x` is the centered design the
/// truth's signal was built on.
pub fn rmse_signal(estimate: ArrayView1<f64>, truth: &SimTruth, x: ArrayView2<f64>) -> f64 {
    let fitted = x.dot(&estimate);
    root_mean_square(fitted.iter().zip(&truth.signal).map(|(f, s)| f - s))
}

/// `√mean_m (estimateₘ − γₘβₘ)²`
pub fn rmse_coef(estimate: ArrayView1<f64>, truth: &SimTruth) -> f64 {
    let coef = truth.coef();
    root_mean_square(estimate.iter().zip(&coef).map(|(e, c)| e - c))
}

/// Median absolute coefficient error against `γ∘β`.
pub fn mad_coef(estimate: ArrayView1<f64>, truth: &SimTruth) -> f64 {
    mad((&estimate - &truth.coef()).view())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldError {
    pub fold: usize,
    pub n_test: usize,
    pub mspe: f64,
    pub mad: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub folds: Vec<FoldError>,
    /// Mean of the per-fold MSPEs.
    pub mspe: f64,
    /// Mean of the per-fold median absolute prediction errors.
    pub mad: f64,
}

/// K-fold prediction error. `fit` receives each training set (re-centered)
/// and returns raw-scale coefficients; held-out predictions are
/// `ȳ_train + (x − x̄_train)·β̂`.
pub fn cv_prediction_error<F>(data: &Dataset<f64>, folds: usize, seed: u64, fit: F) -> Result<CvReport>
where
    F: Fn(&Dataset<f64>) -> Result<Array1<f64>>,
{
    let n = data.n();
    if folds < 2 || folds > n {
        return Err(BenchError::Folds(format!("need 2 ≤ folds ≤ n, got folds = {folds}, n = {n}")));
    }
    let labels = fold_assignment(n, folds, seed);
    let mut out = Vec::with_capacity(folds);
    for k in 0..folds {
        let test: Vec<usize> = (0..n).filter(|&i| labels[i] == k).collect();
        let train: Vec<usize> = (0..n).filter(|&i| labels[i] != k).collect();
        if test.len() < 2 || train.len() < 2 {
            return Err(BenchError::Folds(format!(
                "fold {k} has {} test and {} training rows",
                test.len(),
                train.len()
            )));
        }
        let train_data = data.subset_rows(&train)?;
        let beta = fit(&train_data)?;
        let c = train_data.centering();
        let (y_test, x_test) = data.raw_rows(&test);
        let offset = c.y_mean - c.x_means.dot(&beta);
        let err = &y_test - &x_test.dot(&beta).mapv(|v| v + offset);
        out.push(FoldError {
            fold: k,
            n_test: test.len(),
            mspe: err.mapv(|e| e * e).mean().unwrap_or(f64::NAN),
            mad: mad(err.view()),
        });
    }
    let mspe = out.iter().map(|f| f.mspe).sum::<f64>() / folds as f64;
    let mad = out.iter().map(|f| f.mad).sum::<f64>() / folds as f64;
    Ok(CvReport { folds: out, mspe, mad })
}

/// CV mean squared prediction error.
pub fn cv_mspe<F>(data: &Dataset<f64>, folds: usize, seed: u64, fit: F) -> Result<f64>
where
    F: Fn(&Dataset<f64>) -> Result<Array1<f64>>,
{
    Ok(cv_prediction_error(data, folds, seed, fit)?.mspe)
}

/// CV median absolute prediction error, averaged over folds.
pub fn cv_mad<F>(data: &Dataset<f64>, folds: usize, seed: u64, fit: F) -> Result<f64>
where
    F: Fn(&Dataset<f64>) -> Result<Array1<f64>>,
{
    Ok(cv_prediction_error(data, folds, seed, fit)?.mad)
}
