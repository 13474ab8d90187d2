//! Core data types shared by the solvers: the centered dataset, the
//! latent-predictor moments, the iteration state and the fit configuration.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ShapeBuilder, Zip};

use crate::driver::ConvergenceRecord;
use crate::error::{ProbeError, Result};
use crate::scalar::Real;

/// Column and outcome means removed at ingestion, kept for prediction on the
/// raw scale.
#[derive(Debug, Clone, PartialEq)]
pub struct Centering<T> {
    pub y_mean: T,
    pub x_means: Array1<T>,
}

/// Centered outcome and predictors with cached column norms.
///
/// `x` is stored column-major so that `x.column(m)` is contiguous.
#[derive(Debug, Clone)]
pub struct Dataset<T> {
    y: Array1<T>,
    x: Array2<T>,
    col_sq_norms: Array1<T>,
    centering: Centering<T>,
}

impl<T: Real> Dataset<T> {
    pub fn y(&self) -> ArrayView1<'_, T> {
        self.y.view()
    }

    pub fn x(&self) -> ArrayView2<'_, T> {
        self.x.view()
    }

    pub fn col(&self, m: usize) -> ArrayView1<'_, T> {
        self.x.column(m)
    }

    pub fn col_sq_norms(&self) -> ArrayView1<'_, T> {
        self.col_sq_norms.view()
    }

    pub fn centering(&self) -> &Centering<T> {
        &self.centering
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn m_count(&self) -> usize {
        self.x.ncols()
    }

    /// Sample variance of the outcome, `YᵀY/(n−1)`.
    pub fn y_sample_var(&self) -> T {
        self.y.dot(&self.y) / T::of_usize(self.n() - 1)
    }

    /// Sub-dataset on the given rows, re-centered from the raw values.
    pub fn subset_rows(&self, rows: &[usize]) -> Result<Dataset<T>> {
        let (y, x) = self.raw_rows(rows);
        prepare_dataset(y.view(), x.view())
    }

    /// Raw (un-centered) outcome and predictors for the given rows.
    pub fn raw_rows(&self, rows: &[usize]) -> (Array1<T>, Array2<T>) {
        let m = self.m_count();
        let y = Array1::from_iter(rows.iter().map(|&i| self.y[i] + self.centering.y_mean));
        let mut x = Array2::zeros((rows.len(), m).f());
        for j in 0..m {
            let mean = self.centering.x_means[j];
            let src = self.x.column(j);
            for (r, &i) in rows.iter().enumerate() {
                x[[r, j]] = src[i] + mean;
            }
        }
        (y, x)
    }

    /// Copy with the predictor columns permuted: column `k` of the result is
    /// column `perm[k]` of `self`.
    pub fn permute_columns(&self, perm: &[usize]) -> Dataset<T> {
        assert_eq!(perm.len(), self.m_count());
        let mut x = Array2::zeros((self.n(), self.m_count()).f());
        for (k, &src) in perm.iter().enumerate() {
            x.column_mut(k).assign(&self.x.column(src));
        }
        Dataset {
            y: self.y.clone(),
            x,
            col_sq_norms: Array1::from_iter(perm.iter().map(|&j| self.col_sq_norms[j])),
            centering: Centering {
                y_mean: self.centering.y_mean,
                x_means: Array1::from_iter(perm.iter().map(|&j| self.centering.x_means[j])),
            },
        }
    }
}

/// Center `raw_y` and every column of `raw_x`, cache `XₘᵀXₘ`, and reject
/// constant columns.
pub fn prepare_dataset<T: Real>(raw_y: ArrayView1<T>, raw_x: ArrayView2<T>) -> Result<Dataset<T>> {
    let (n, m) = raw_x.dim();
    if raw_y.len() != n {
        return Err(ProbeError::DimensionMismatch(format!(
            "y has {} entries but x has {} rows",
            raw_y.len(),
            n
        )));
    }
    if n < 2 {
        return Err(ProbeError::TooFewObservations { needed: 2, got: n });
    }
    if m == 0 {
        return Err(ProbeError::DimensionMismatch("x has no columns".into()));
    }
    if raw_y.iter().any(|v| !v.is_finite()) {
        return Err(ProbeError::NonFinite("y".into()));
    }
    if let Some(((i, j), _)) = raw_x.indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(ProbeError::NonFinite(format!("x[{i}, {j}]")));
    }

    let nf = T::of_usize(n);
    let y_mean = raw_y.sum() / nf;
    let y = raw_y.mapv(|v| v - y_mean);

    let mut x = Array2::zeros((n, m).f());
    x.assign(&raw_x);
    let mut x_means = Array1::zeros(m);
    let mut col_sq_norms = Array1::zeros(m);
    let floor = T::of(1e-12) * nf;
    for (j, mut col) in x.columns_mut().into_iter().enumerate() {
        let mean = col.sum() / nf;
        col.mapv_inplace(|v| v - mean);
        let ss = col.dot(&col);
        if ss < floor {
            return Err(ProbeError::ConstantColumn { index: j });
        }
        x_means[j] = mean;
        col_sq_norms[j] = ss;
    }

    Ok(Dataset {
        y,
        x,
        col_sq_norms,
        centering: Centering { y_mean, x_means },
    })
}

/// First moment `W` and variance `V` of the latent linear predictor `X(γ∘β)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WMoments<T> {
    pub w: Array1<T>,
    pub v: Array1<T>,
}

impl<T: Real> WMoments<T> {
    pub fn zeros(n: usize) -> Self {
        Self {
            w: Array1::zeros(n),
            v: Array1::zeros(n),
        }
    }

    /// `1ᵀW²`, the summed second moment.
    pub fn second_moment_sum(&self) -> T {
        Zip::from(&self.w)
            .and(&self.v)
            .fold(T::zero(), |acc, &w, &v| acc + v + w * w)
    }
}

/// Elementwise second moment `W² = V + W∘W`.
pub fn reconstruct_w2<T: Real>(moments: &WMoments<T>) -> Array1<T> {
    Zip::from(&moments.w)
        .and(&moments.v)
        .map_collect(|&w, &v| v + w * w)
}

/// Parameter snapshot between iterations.
#[derive(Debug, Clone)]
pub struct ProbeState<T> {
    pub beta: Array1<T>,
    pub p: Array1<T>,
    pub s2: Array1<T>,
    pub sigma2: T,
    pub alpha: T,
    pub t: usize,
    pub moments: WMoments<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    OneAtATime,
    AllAtOnce,
}

/// Coordinate order for the one-at-a-time sweeps.
#[derive(Debug, Clone, PartialEq)]
pub enum UpdateOrder {
    /// Descending |lasso coefficient|, ties by column index.
    Lasso,
    /// Uniformly random permutation drawn from the fit seed.
    Random,
    /// Caller-supplied permutation of `0..M`.
    Given(Vec<usize>),
}

/// Starting point of the all-at-once iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AaoInit {
    /// `β = 0`, `p = 0`.
    Zero,
    /// `β = b·1`, `p = 1`, with `b > 0`.
    Constant(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub variant: Variant,
    /// Convergence quantile ε: stop once CC < χ²₁ quantile at ε.
    pub epsilon: f64,
    /// Learning rate is `(t+1)^(-lr_exponent)`.
    pub lr_exponent: f64,
    pub storey_lambda: f64,
    pub bandwidth_multiplier: f64,
    pub max_iter: usize,
    pub seed: u64,
    pub cv_folds: usize,
    pub update_order: UpdateOrder,
    pub aao_init: AaoInit,
    /// `b` used by the all-at-once restart after an all-zero `p`.
    pub restart_b: f64,
    pub lasso_n_lambda: usize,
    pub lasso_min_ratio: f64,
}

impl FitConfig {
    pub fn all_at_once() -> Self {
        Self {
            variant: Variant::AllAtOnce,
            epsilon: 1e-3,
            lr_exponent: 1.0,
            storey_lambda: 0.1,
            bandwidth_multiplier: 5.0,
            max_iter: 1000,
            seed: 0,
            cv_folds: 10,
            update_order: UpdateOrder::Lasso,
            aao_init: AaoInit::Zero,
            restart_b: 1.0,
            lasso_n_lambda: 100,
            lasso_min_ratio: 1e-3,
        }
    }

    pub fn one_at_a_time() -> Self {
        Self {
            variant: Variant::OneAtATime,
            epsilon: 1e-1,
            lr_exponent: 0.5,
            ..Self::all_at_once()
        }
    }

    pub fn for_variant(variant: Variant) -> Self {
        match variant {
            Variant::OneAtATime => Self::one_at_a_time(),
            Variant::AllAtOnce => Self::all_at_once(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let open_unit = |v: f64| v > 0.0 && v < 1.0;
        let bad = |what: &str, v: &dyn std::fmt::Display| {
            Err(ProbeError::InvalidParameter(format!("{what} = {v}")))
        };
        if !open_unit(self.epsilon) {
            return bad("epsilon", &self.epsilon);
        }
        if !(self.lr_exponent > 0.0) {
            return bad("lr_exponent", &self.lr_exponent);
        }
        if !open_unit(self.storey_lambda) {
            return bad("storey_lambda", &self.storey_lambda);
        }
        if !(self.bandwidth_multiplier > 0.0) {
            return bad("bandwidth_multiplier", &self.bandwidth_multiplier);
        }
        if self.max_iter == 0 {
            return bad("max_iter", &self.max_iter);
        }
        if self.cv_folds < 2 {
            return bad("cv_folds", &self.cv_folds);
        }
        if let AaoInit::Constant(b) = self.aao_init {
            if !(b > 0.0) {
                return bad("aao_init b", &b);
            }
        }
        if !(self.restart_b > 0.0) {
            return bad("restart_b", &self.restart_b);
        }
        if self.lasso_n_lambda < 2 || !open_unit(self.lasso_min_ratio) {
            return bad("lasso path", &format!("{}/{}", self.lasso_n_lambda, self.lasso_min_ratio));
        }
        Ok(())
    }
}

impl Default for FitConfig {
    fn default() -> Self {
        Self::all_at_once()
    }
}

/// MAP estimates and the posterior summaries derived from them.
#[derive(Debug, Clone)]
pub struct FitResult<T> {
    pub variant: Variant,
    pub beta_map: Array1<T>,
    pub p_map: Array1<T>,
    /// `p̃∘β̃`, the expected coefficient.
    pub beta_bar: Array1<T>,
    /// Approximate posterior variances of the coefficients.
    pub s2: Array1<T>,
    pub sigma2_map: T,
    /// Reduction applied to the all-at-once coefficients; 1 for one-at-a-time.
    pub alpha: T,
    /// Inverse-gamma posterior shape for σ², `n/2`.
    pub ig_a: T,
    /// Inverse-gamma posterior scale for σ².
    pub ig_b: T,
    pub iterations: usize,
    pub converged: bool,
    /// The fit ended with every inclusion probability at zero.
    pub null_model: bool,
    pub restarts: usize,
    /// Coordinate update order (one-at-a-time); identity for all-at-once.
    pub order: Vec<usize>,
    pub trace: Vec<ConvergenceRecord<T>>,
    pub centering: Centering<T>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn centers_two_points() {
        let d = prepare_dataset(array![1.0, 3.0].view(), array![[2.0], [4.0]].view()).unwrap();
        assert_eq!(d.y(), array![-1.0, 1.0]);
        assert_eq!(d.col(0), array![-1.0, 1.0]);
        assert_eq!(d.col_sq_norms()[0], 2.0);
        assert_eq!(d.centering().y_mean, 2.0);
        assert_eq!(d.centering().x_means[0], 3.0);
    }

    #[test]
    fn centered_input_is_unchanged() {
        let y = array![-1.5, 0.5, 1.0];
        let x = array![[1.0, -2.0], [0.0, 1.0], [-1.0, 1.0]];
        let d = prepare_dataset(y.view(), x.view()).unwrap();
        assert_eq!(d.y(), y);
        assert_eq!(d.x(), x);
        let again = prepare_dataset(d.y(), d.x()).unwrap();
        assert_eq!(again.x(), d.x());
        assert_eq!(again.y(), d.y());
    }

    #[test]
    fn rejects_constant_column() {
        let err = prepare_dataset(
            array![1.0, 2.0, 4.0].view(),
            array![[1.0, 5.0], [2.0, 5.0], [0.0, 5.0]].view(),
        )
        .unwrap_err();
        assert_eq!(err, ProbeError::ConstantColumn { index: 1 });
        assert!(err.to_string().contains("constant column"));
    }

    #[test]
    fn rejects_bad_shapes_and_values() {
        let x = array![[1.0], [2.0]];
        assert!(matches!(
            prepare_dataset(array![1.0, 2.0, 3.0].view(), x.view()),
            Err(ProbeError::DimensionMismatch(_))
        ));
        assert!(matches!(
            prepare_dataset(array![1.0].view(), array![[1.0]].view()),
            Err(ProbeError::TooFewObservations { .. })
        ));
        assert!(matches!(
            prepare_dataset(array![1.0, f64::NAN].view(), x.view()),
            Err(ProbeError::NonFinite(_))
        ));
        assert!(matches!(
            prepare_dataset(array![1.0, 2.0].view(), array![[1.0], [f64::INFINITY]].view()),
            Err(ProbeError::NonFinite(_))
        ));
    }

    #[test]
    fn w2_reconstruction() {
        let zero = WMoments::<f64>::zeros(2);
        assert_eq!(reconstruct_w2(&zero), array![0.0, 0.0]);
        let m = WMoments {
            w: array![1.0, 2.0],
            v: array![0.5, 0.0],
        };
        assert_eq!(reconstruct_w2(&m), array![1.5, 4.0]);
        assert_eq!(m.second_moment_sum(), 5.5);
    }

    #[test]
    fn subset_recenters_from_raw() {
        let y = array![1.0, 2.0, 4.0, 7.0];
        let x = array![[1.0], [3.0], [2.0], [6.0]];
        let d = prepare_dataset(y.view(), x.view()).unwrap();
        let s = d.subset_rows(&[0, 3]).unwrap();
        assert_eq!(s.y(), array![-3.0, 3.0]);
        assert_eq!(s.col(0), array![-2.5, 2.5]);
    }

    #[test]
    fn config_defaults() {
        let a = FitConfig::all_at_once();
        assert_eq!((a.epsilon, a.lr_exponent), (1e-3, 1.0));
        let o = FitConfig::one_at_a_time();
        assert_eq!((o.epsilon, o.lr_exponent), (1e-1, 0.5));
        assert_eq!((o.storey_lambda, o.bandwidth_multiplier), (0.1, 5.0));
        assert_eq!((o.max_iter, o.cv_folds), (1000, 10));
        assert!(a.validate().is_ok() && o.validate().is_ok());
        let bad = FitConfig {
            epsilon: 1.0,
            ..FitConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
