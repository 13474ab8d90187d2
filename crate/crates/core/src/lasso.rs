//! Cross-validated lasso by cyclic coordinate descent, plus ridge and
//! adaptive-lasso baselines.
//!
//! Everything is fit on standardized predictors (population sd, so that
//! `x̃ₘᵀx̃ₘ = n`) and reported on the original predictor scale.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, ShapeBuilder, Zip};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{Dataset, FitConfig};
use crate::error::{ProbeError, Result};
use crate::scalar::Real;

#[derive(Debug, Clone)]
pub struct LassoFit<T> {
    /// Strictly decreasing.
    pub lambda_path: Array1<T>,
    /// `M × L`, original scale.
    pub coef_path: Array2<T>,
    pub best_index: usize,
    pub best_lambda: T,
    pub best_coefs: Array1<T>,
    pub cv_mse: Array1<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoOptions {
    pub n_lambda: usize,
    pub min_ratio: f64,
    pub folds: usize,
    pub seed: u64,
    /// Stop a λ once the largest standardized coefficient change is below this.
    pub tol: f64,
    pub max_passes: usize,
}

impl Default for LassoOptions {
    fn default() -> Self {
        LassoOptions {
            n_lambda: 100,
            min_ratio: 1e-3,
            folds: 10,
            seed: 0,
            tol: 1e-7,
            max_passes: 100_000,
        }
    }
}

impl LassoOptions {
    pub fn from_config(cfg: &FitConfig) -> Self {
        LassoOptions {
            n_lambda: cfg.lasso_n_lambda,
            min_ratio: cfg.lasso_min_ratio,
            folds: cfg.cv_folds,
            seed: cfg.seed,
            ..Default::default()
        }
    }
}

/// Centered, standardized copy of (a subset of) the data.
#[derive(Debug, Clone)]
pub struct Standardized<T> {
    pub y: Array1<T>,
    pub x: Array2<T>,
    pub y_mean: T,
    pub x_means: Array1<T>,
    /// Population sd per column; zero marks a constant column.
    pub sd: Array1<T>,
}

impl<T: Real> Standardized<T> {
    pub fn from_raw(raw_y: ArrayView1<T>, raw_x: ArrayView2<T>) -> Self {
        let (n, m) = raw_x.dim();
        let nf = T::of_usize(n);
        let y_mean = raw_y.sum() / nf;
        let y = raw_y.mapv(|v| v - y_mean);
        let mut x = Array2::zeros((n, m).f());
        x.assign(&raw_x);
        let mut x_means = Array1::zeros(m);
        let mut sd = Array1::zeros(m);
        for (j, mut col) in x.columns_mut().into_iter().enumerate() {
            let mean = col.sum() / nf;
            col.mapv_inplace(|v| v - mean);
            let var = col.dot(&col) / nf;
            x_means[j] = mean;
            if var > T::of(1e-24) {
                let s = var.sqrt();
                col.mapv_inplace(|v| v / s);
                sd[j] = s;
            } else {
                col.fill(T::zero());
            }
        }
        Standardized { y, x, y_mean, x_means, sd }
    }

    pub fn from_dataset(data: &Dataset<T>) -> Self {
        let rows: Vec<usize> = (0..data.n()).collect();
        Self::from_rows(data, &rows)
    }

    pub fn from_rows(data: &Dataset<T>, rows: &[usize]) -> Self {
        let (y, x) = data.raw_rows(rows);
        Self::from_raw(y.view(), x.view())
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// Standardized coefficients back to the original predictor scale.
    pub fn unscale(&self, b: ArrayView1<T>) -> Array1<T> {
        Zip::from(b)
            .and(&self.sd)
            .map_collect(|&b, &s| if s > T::zero() { b / s } else { T::zero() })
    }
}

#[inline]
fn soft_threshold<T: Real>(z: T, g: T) -> T {
    if z > g {
        z - g
    } else if z < -g {
        z + g
    } else {
        T::zero()
    }
}

/// Penalty factors with constant columns excluded from the active set.
fn effective_weights<T: Real>(st: &Standardized<T>, weights: Option<ArrayView1<T>>) -> Array1<T> {
    let m = st.sd.len();
    let mut w = match weights {
        Some(w) => w.to_owned(),
        None => Array1::from_elem(m, T::one()),
    };
    Zip::from(&mut w).and(&st.sd).for_each(|w, &s| {
        if !(s > T::zero()) {
            *w = T::infinity();
        }
    });
    w
}

/// Smallest λ at which every coefficient is zero.
pub fn lambda_max<T: Real>(st: &Standardized<T>, weights: ArrayView1<T>) -> T {
    let nf = T::of_usize(st.n());
    let mut best = T::zero();
    for (j, col) in st.x.columns().into_iter().enumerate() {
        let w = weights[j];
        if w > T::zero() && w.is_finite() {
            best = best.max(col.dot(&st.y).abs() / (nf * w));
        }
    }
    best
}

pub fn lambda_grid<T: Real>(lmax: T, n_lambda: usize, min_ratio: f64) -> Array1<T> {
    let lo = min_ratio.ln();
    Array1::from_shape_fn(n_lambda, |k| {
        let frac = k as f64 / (n_lambda - 1) as f64;
        lmax * T::of((lo * frac).exp())
    })
}

/// One coordinate-descent pass over `coords`; returns the largest change.
fn cd_pass<T: Real>(
    st: &Standardized<T>,
    xx: &[T],
    weights: ArrayView1<T>,
    lambda: T,
    coords: &[usize],
    beta: &mut Array1<T>,
    resid: &mut Array1<T>,
) -> T {
    let nf = T::of_usize(st.n());
    let mut max_delta = T::zero();
    for &j in coords {
        let w = weights[j];
        if !w.is_finite() {
            continue;
        }
        let col = st.x.column(j);
        let old = beta[j];
        let z = col.dot(resid) / nf + xx[j] * old;
        let new = soft_threshold(z, lambda * w) / xx[j];
        if new != old {
            resid.scaled_add(old - new, &col);
            beta[j] = new;
            max_delta = max_delta.max((new - old).abs());
        }
    }
    max_delta
}

/// Feature-sign refinement of the nonzero set. With signs fixed the
/// objective is a quadratic minimized by `G_AA β_A = X_Aᵀy/n − λ w_A∘sign(β_A)`;
/// step toward that point, stopping where the first coefficient reaches
/// zero and dropping it, until the signs are consistent. The objective never
/// increases. Returns false when the Gram block is not positive definite.
fn active_refine<T: Real>(
    st: &Standardized<T>,
    weights: ArrayView1<T>,
    lambda: T,
    beta: &mut Array1<T>,
    resid: &mut Array1<T>,
) -> bool {
    let nf = T::of_usize(st.n());
    let mut live: Vec<usize> = (0..beta.len()).filter(|&j| beta[j] != T::zero()).collect();
    while !live.is_empty() {
        if live.len() >= st.n() {
            return false;
        }
        let xa = st.x.select(Axis(1), &live);
        let mut g = xa.t().dot(&xa).mapv(|v| v / nf);
        let rhs = Array1::from_iter(live.iter().enumerate().map(|(i, &j)| {
            xa.column(i).dot(&st.y) / nf - lambda * weights[j] * beta[j].signum()
        }));
        if !cholesky_in_place(&mut g) {
            return false;
        }
        let target = cholesky_solve(&g, rhs.view());
        // first zero crossing along beta → target
        let mut step = T::one();
        let mut blocking = None;
        for (i, &j) in live.iter().enumerate() {
            if !(target[i] * beta[j] > T::zero()) {
                let s = beta[j] / (beta[j] - target[i]);
                if s < step {
                    step = s;
                    blocking = Some(i);
                }
            }
        }
        for (i, &j) in live.iter().enumerate() {
            beta[j] = beta[j] + step * (target[i] - beta[j]);
        }
        match blocking {
            None => break,
            Some(i) => {
                beta[live[i]] = T::zero();
                live.retain(|&j| beta[j] != T::zero());
            }
        }
    }
    *resid = st.y.clone();
    for &j in &live {
        resid.scaled_add(-beta[j], &st.x.column(j));
    }
    true
}

/// Standardized-scale coefficients along `lambdas` (warm-started), `M × L`.
pub fn cd_path<T: Real>(
    st: &Standardized<T>,
    weights: ArrayView1<T>,
    lambdas: &[T],
    tol: T,
    max_passes: usize,
) -> Array2<T> {
    let m = st.x.ncols();
    let nf = T::of_usize(st.n());
    let xx: Vec<T> = st
        .x
        .columns()
        .into_iter()
        .map(|c| {
            let v = c.dot(&c) / nf;
            if v > T::zero() {
                v
            } else {
                T::one()
            }
        })
        .collect();
    // coefficient changes are judged on the unit-variance y scale
    let y_sd = (st.y.dot(&st.y) / nf).sqrt();
    let tol = if y_sd > T::zero() { tol * y_sd } else { tol };
    let all: Vec<usize> = (0..m).collect();
    let mut beta = Array1::zeros(m);
    let mut resid = st.y.clone();
    let mut out = Array2::zeros((m, lambdas.len()));
    for (l, &lam) in lambdas.iter().enumerate() {
        let mut passes = 0;
        loop {
            let delta = cd_pass(st, &xx, weights, lam, &all, &mut beta, &mut resid);
            passes += 1;
            if delta < tol || passes >= max_passes {
                break;
            }
            // Cyclic passes crawl on strongly correlated columns, so the
            // nonzero set is solved directly and the next full pass checks
            // the rest.
            if active_refine(st, weights, lam, &mut beta, &mut resid) {
                passes += 1;
                if passes >= max_passes {
                    break;
                }
                continue;
            }
            let active: Vec<usize> = (0..m).filter(|&j| beta[j] != T::zero()).collect();
            loop {
                let d = cd_pass(st, &xx, weights, lam, &active, &mut beta, &mut resid);
                passes += 1;
                if d < tol || passes >= max_passes {
                    break;
                }
            }
        }
        out.column_mut(l).assign(&beta);
    }
    out
}

/// Fold label for each row: position in a seeded shuffle, modulo `folds`.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold = vec![0; n];
    for (pos, &i) in perm.iter().enumerate() {
        fold[i] = pos % folds;
    }
    fold
}

fn split(fold: &[usize], k: usize) -> (Vec<usize>, Vec<usize>) {
    let train = (0..fold.len()).filter(|&i| fold[i] != k).collect();
    let test = (0..fold.len()).filter(|&i| fold[i] == k).collect();
    (train, test)
}

/// Held-out squared error of original-scale coefficients fit on `train`.
fn holdout_sse<T: Real>(data: &Dataset<T>, train: &Standardized<T>, test: &[usize], coefs: ArrayView1<T>) -> T {
    let (y, x) = data.raw_rows(test);
    let mut sse = T::zero();
    for (i, row) in x.rows().into_iter().enumerate() {
        let mut pred = train.y_mean;
        for j in 0..row.len() {
            pred += (row[j] - train.x_means[j]) * coefs[j];
        }
        let e = y[i] - pred;
        sse += e * e;
    }
    sse
}

fn check_folds(n: usize, folds: usize) -> Result<()> {
    if folds < 2 || folds > n {
        return Err(ProbeError::InvalidParameter(format!(
            "need 2 <= folds <= n, got folds = {folds}, n = {n}"
        )));
    }
    Ok(())
}

pub fn lasso_path<T: Real>(data: &Dataset<T>, opts: &LassoOptions) -> Result<LassoFit<T>> {
    weighted_lasso_path(data, None, opts)
}

/// Lasso path with per-coordinate penalty factors and K-fold CV over λ.
pub fn weighted_lasso_path<T: Real>(
    data: &Dataset<T>,
    weights: Option<ArrayView1<T>>,
    opts: &LassoOptions,
) -> Result<LassoFit<T>> {
    let n = data.n();
    check_folds(n, opts.folds)?;
    if opts.n_lambda < 2 || !(opts.min_ratio > 0.0 && opts.min_ratio < 1.0) {
        return Err(ProbeError::InvalidParameter("lambda path settings".into()));
    }
    if let Some(w) = weights {
        if w.len() != data.m_count() || w.iter().any(|v| v.is_nan() || *v < T::zero()) {
            return Err(ProbeError::InvalidParameter("penalty factors".into()));
        }
    }
    let tol = T::of(opts.tol);
    let full = Standardized::from_dataset(data);
    let w_full = effective_weights(&full, weights);
    let lmax = lambda_max(&full, w_full.view());
    let lmax = if lmax > T::zero() { lmax } else { T::of(1e-12) };
    let lambdas = lambda_grid(lmax, opts.n_lambda, opts.min_ratio);
    let lam_slice = lambdas.as_slice().expect("contiguous");

    let std_path = cd_path(&full, w_full.view(), lam_slice, tol, opts.max_passes);
    let mut coef_path = Array2::zeros(std_path.raw_dim());
    for (l, col) in std_path.columns().into_iter().enumerate() {
        coef_path.column_mut(l).assign(&full.unscale(col));
    }

    let fold = fold_assignment(n, opts.folds, opts.seed);
    let per_fold: Vec<Array1<T>> = (0..opts.folds)
        .into_par_iter()
        .map(|k| {
            let (train, test) = split(&fold, k);
            let st = Standardized::from_rows(data, &train);
            let w = effective_weights(&st, weights);
            let path = cd_path(&st, w.view(), lam_slice, tol, opts.max_passes);
            Array1::from_shape_fn(lam_slice.len(), |l| {
                let coefs = st.unscale(path.column(l));
                holdout_sse(data, &st, &test, coefs.view()) / T::of_usize(test.len())
            })
        })
        .collect();
    let mut cv_mse = Array1::zeros(lam_slice.len());
    for f in &per_fold {
        cv_mse += f;
    }
    cv_mse /= T::of_usize(opts.folds);
    if cv_mse.iter().any(|v| !v.is_finite()) {
        return Err(ProbeError::NonFinite("lasso cross-validation error".into()));
    }

    // first minimum, i.e. the largest λ among ties
    let mut best_index = 0;
    for l in 1..cv_mse.len() {
        if cv_mse[l] < cv_mse[best_index] {
            best_index = l;
        }
    }
    Ok(LassoFit {
        best_lambda: lambdas[best_index],
        best_coefs: coef_path.column(best_index).to_owned(),
        best_index,
        lambda_path: lambdas,
        coef_path,
        cv_mse,
    })
}

/// Indices by descending `|coef|`, ties by ascending index.
pub fn ordering_from_coefs<T: Real>(coefs: ArrayView1<T>) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..coefs.len()).collect();
    idx.sort_by(|&a, &b| {
        coefs[b]
            .abs()
            .partial_cmp(&coefs[a].abs())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx
}

/// In-place Cholesky of a symmetric positive definite matrix; lower factor.
fn cholesky_in_place<T: Real>(a: &mut Array2<T>) -> bool {
    let n = a.nrows();
    for j in 0..n {
        let mut d = a[[j, j]];
        for k in 0..j {
            d -= a[[j, k]] * a[[j, k]];
        }
        if !(d > T::zero()) {
            return false;
        }
        let d = d.sqrt();
        a[[j, j]] = d;
        for i in j + 1..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= a[[i, k]] * a[[j, k]];
            }
            a[[i, j]] = s / d;
        }
    }
    true
}

fn cholesky_solve<T: Real>(l: &Array2<T>, b: ArrayView1<T>) -> Array1<T> {
    let n = l.nrows();
    let mut z = b.to_owned();
    for i in 0..n {
        let mut s = z[i];
        for k in 0..i {
            s -= l[[i, k]] * z[k];
        }
        z[i] = s / l[[i, i]];
    }
    for i in (0..n).rev() {
        let mut s = z[i];
        for k in i + 1..n {
            s -= l[[k, i]] * z[k];
        }
        z[i] = s / l[[i, i]];
    }
    z
}

/// Solve `(K + shift·I) a = b`, adding diagonal jitter if the factorization fails.
fn spd_solve<T: Real>(k: &Array2<T>, shift: T, b: ArrayView1<T>) -> Result<Array1<T>> {
    let n = k.nrows();
    let mean_diag = (0..n).fold(T::zero(), |acc, i| acc + k[[i, i]]) / T::of_usize(n);
    let mut jitter = T::zero();
    for _ in 0..8 {
        let mut a = k.clone();
        for i in 0..n {
            a[[i, i]] += shift + jitter;
        }
        if cholesky_in_place(&mut a) {
            return Ok(cholesky_solve(&a, b));
        }
        jitter = if jitter == T::zero() {
            T::of(1e-8) * mean_diag.max(T::one())
        } else {
            jitter * T::of(10.0)
        };
    }
    Err(ProbeError::InvalidParameter("ridge system is not positive definite".into()))
}

fn gram_rows<T: Real>(x: ArrayView2<T>) -> Array2<T> {
    x.dot(&x.t())
}

/// Standardized-scale ridge coefficients for
/// `(1/2n)‖y − X̃β‖² + (λ/2)‖β‖²`, via the `n × n` dual system.
fn ridge_dual<T: Real>(st: &Standardized<T>, gram: &Array2<T>, lambda: T) -> Result<Array1<T>> {
    let nf = T::of_usize(st.n());
    let a = spd_solve(gram, nf * lambda, st.y.view())?;
    Ok(st.x.t().dot(&a))
}

#[derive(Debug, Clone)]
pub struct RidgeFit<T> {
    pub lambda: T,
    /// Original scale.
    pub coefs: Array1<T>,
    /// Standardized scale.
    pub std_coefs: Array1<T>,
    pub cv_mse: Array1<T>,
}

pub fn default_ridge_grid<T: Real>() -> Vec<T> {
    (0..20).map(|k| T::of(10f64.powf(-3.0 + 6.0 * k as f64 / 19.0))).collect()
}

/// Ridge at a single λ, original scale.
pub fn ridge_solve<T: Real>(data: &Dataset<T>, lambda: T) -> Result<Array1<T>> {
    let st = Standardized::from_dataset(data);
    let gram = gram_rows(st.x.view());
    Ok(st.unscale(ridge_dual(&st, &gram, lambda)?.view()))
}

pub fn ridge_fit<T: Real>(data: &Dataset<T>, lambda_grid: &[T], folds: usize, seed: u64) -> Result<RidgeFit<T>> {
    let n = data.n();
    check_folds(n, folds)?;
    if lambda_grid.is_empty() || lambda_grid.iter().any(|l| !(*l > T::zero())) {
        return Err(ProbeError::InvalidParameter("ridge lambda grid".into()));
    }
    let fold = fold_assignment(n, folds, seed);
    let per_fold: Vec<Result<Array1<T>>> = (0..folds)
        .into_par_iter()
        .map(|k| {
            let (train, test) = split(&fold, k);
            let st = Standardized::from_rows(data, &train);
            let gram = gram_rows(st.x.view());
            let mut errs = Array1::zeros(lambda_grid.len());
            for (l, &lam) in lambda_grid.iter().enumerate() {
                let b = st.unscale(ridge_dual(&st, &gram, lam)?.view());
                errs[l] = holdout_sse(data, &st, &test, b.view()) / T::of_usize(test.len());
            }
            Ok(errs)
        })
        .collect();
    let mut cv_mse = Array1::zeros(lambda_grid.len());
    for f in per_fold {
        cv_mse += &f?;
    }
    cv_mse /= T::of_usize(folds);
    let mut best = 0;
    for l in 1..lambda_grid.len() {
        if cv_mse[l] < cv_mse[best] {
            best = l;
        }
    }
    let st = Standardized::from_dataset(data);
    let gram = gram_rows(st.x.view());
    let std_coefs = ridge_dual(&st, &gram, lambda_grid[best])?;
    Ok(RidgeFit {
        lambda: lambda_grid[best],
        coefs: st.unscale(std_coefs.view()),
        std_coefs,
        cv_mse,
    })
}

/// One-step adaptive lasso: penalty factors `1/|β̃_ridge|` on the standardized scale.
pub fn adaptive_lasso<T: Real>(data: &Dataset<T>, opts: &LassoOptions) -> Result<LassoFit<T>> {
    let ridge = ridge_fit(data, &default_ridge_grid::<T>(), opts.folds, opts.seed)?;
    let cap = T::of(1e10);
    let w = ridge.std_coefs.mapv(|b| {
        let inv = b.abs().recip();
        if inv.is_finite() {
            inv.min(cap)
        } else {
            cap
        }
    });
    let mean = w.sum() / T::of_usize(w.len());
    let w = w.mapv(|v| v / mean);
    weighted_lasso_path(data, Some(w.view()), opts)
}

/// `(X̃ᵀX̃, X̃ᵀy)`, for checking against primal solves.
#[doc(hidden)]
pub fn standardized_gram<T: Real>(st: &Standardized<T>) -> (Array2<T>, Array1<T>) {
    (st.x.t().dot(&st.x), st.x.t().dot(&st.y))
}

#[doc(hidden)]
pub fn solve_spd<T: Real>(a: &Array2<T>, b: ArrayView1<T>) -> Result<Array1<T>> {
    spd_solve(a, T::zero(), b)
}
