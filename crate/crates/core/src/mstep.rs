//! Closed-form PX-CM-step kernels.
//!
//! For coordinate `m` the expanded model is `Y = W₋ + Xₘγₘβₘ + αW₊ + ε`,
//! where `W₋` collects the coordinates already updated in this sweep and `W₊`
//! the ones still pending. Maximizing the expected log-posterior over
//! `(βₘ, α)` is a 2×2 linear solve; the pending coefficients are then scaled by
//! `α` and the partitioned moments are moved one coordinate along.

use ndarray::{Array1, ArrayView1, Zip};

use crate::data::{Dataset, WMoments};
use crate::error::{ProbeError, Result};
use crate::postvar::PostVarInput;
use crate::scalar::Real;

/// Below this inclusion probability the `p → 0` limit of the solve is used.
pub const P_LIMIT: f64 = 1e-10;
/// `1ᵀW₊²` below this means no pending signal and no expansion parameter.
pub const W2_FLOOR: f64 = 1e-12;
/// Relative determinant guard for the 2×2 system.
pub const DET_GUARD: f64 = 1e-12;
pub const SIGMA2_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Degenerate {
    Regular,
    /// `p → 0` limit.
    PLimit,
    /// No pending signal: simple regression on the residual, `α = 1`.
    NoExpansion,
    /// Determinant guard tripped: simple regression for `β`, `α` from `W₊` alone.
    Singular,
}

#[derive(Debug, Clone, Copy)]
pub struct CoordSolveInput<'a, T> {
    pub x_col: ArrayView1<'a, T>,
    /// `Y − W₋`
    pub y_resid: ArrayView1<'a, T>,
    pub w_plus: ArrayView1<'a, T>,
    /// `1ᵀW₊²`
    pub w_plus2_sum: T,
    pub p_m: T,
    pub x_sq_norm: T,
}

/// Inner products the coordinate solve depends on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoordStats<T> {
    /// `XᵀX`
    pub xx: T,
    /// `XᵀW₊`
    pub xw: T,
    /// `1ᵀW₊²`
    pub ww2: T,
    /// `XᵀYᵣ`
    pub xy: T,
    /// `W₊ᵀYᵣ`
    pub wy: T,
    pub p: T,
}

impl<T: Real> CoordSolveInput<'_, T> {
    pub fn stats(&self) -> CoordStats<T> {
        CoordStats {
            xx: self.x_sq_norm,
            xw: self.x_col.dot(&self.w_plus),
            ww2: self.w_plus2_sum,
            xy: self.x_col.dot(&self.y_resid),
            wy: self.w_plus.dot(&self.y_resid),
            p: self.p_m,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoordSolveOutput<T> {
    pub beta_m: T,
    pub alpha: T,
    pub degenerate: Degenerate,
}

/// Solve `[XᵀX, XᵀW₊; p·W₊ᵀX, 1ᵀW₊²]·(β, α)ᵀ = (XᵀYᵣ, W₊ᵀYᵣ)ᵀ`.
pub fn solve_px_stats<T: Real>(s: &CoordStats<T>) -> Result<CoordSolveOutput<T>> {
    let finite = [s.xx, s.xw, s.ww2, s.xy, s.wy, s.p].iter().all(|v| v.is_finite());
    if !finite {
        return Err(ProbeError::NonFinite("coordinate solve input".into()));
    }
    if !(s.xx > T::zero()) {
        return Err(ProbeError::InvalidParameter("x_sq_norm must be positive".into()));
    }
    if s.ww2 < T::of(W2_FLOOR) {
        return Ok(CoordSolveOutput {
            beta_m: s.xy / s.xx,
            alpha: T::one(),
            degenerate: Degenerate::NoExpansion,
        });
    }
    if s.p < T::of(P_LIMIT) {
        let alpha = s.wy / s.ww2;
        return Ok(CoordSolveOutput {
            beta_m: (s.xy - alpha * s.xw) / s.xx,
            alpha,
            degenerate: Degenerate::PLimit,
        });
    }
    let det = s.xx * s.ww2 - s.p * s.xw * s.xw;
    if det.abs() < T::of(DET_GUARD) * s.xx * s.ww2 {
        return Ok(CoordSolveOutput {
            beta_m: s.xy / s.xx,
            alpha: s.wy / s.ww2,
            degenerate: Degenerate::Singular,
        });
    }
    Ok(CoordSolveOutput {
        beta_m: (s.ww2 * s.xy - s.xw * s.wy) / det,
        alpha: (s.xx * s.wy - s.p * s.xw * s.xy) / det,
        degenerate: Degenerate::Regular,
    })
}

pub fn solve_coordinate_px<T: Real>(input: &CoordSolveInput<'_, T>) -> Result<CoordSolveOutput<T>> {
    solve_px_stats(&input.stats())
}

/// Expected-Q contribution of `(βₘ, α)`, larger is better:
/// `−E‖Yᵣ − Xₘγₘβₘ − αW₊‖² + ‖Yᵣ‖²`.
pub fn q_value_stats<T: Real>(beta_m: T, alpha: T, s: &CoordStats<T>) -> T {
    let two = T::of(2.0);
    let loss = -two * s.p * beta_m * s.xy - two * alpha * s.wy
        + two * s.p * beta_m * alpha * s.xw
        + s.p * beta_m * beta_m * s.xx
        + alpha * alpha * s.ww2;
    -loss
}

pub fn q_function_value<T: Real>(beta_m: T, alpha: T, input: &CoordSolveInput<'_, T>) -> T {
    q_value_stats(beta_m, alpha, &input.stats())
}

/// σ² after the last coordinate of a one-at-a-time sweep:
/// `E‖Y − W₋ − X_Mγ_Mβ_M‖² / (n−1)`, floored.
pub fn update_sigma2_oaat<T: Real>(
    y: ArrayView1<T>,
    w_minus: &WMoments<T>,
    x_last: ArrayView1<T>,
    beta_last: T,
    p_last: T,
) -> T {
    let n = y.len();
    let two = T::of(2.0);
    let yy = y.dot(&y);
    let yw = y.dot(&w_minus.w);
    let xy = x_last.dot(&y);
    let xw = x_last.dot(&w_minus.w);
    let xx = x_last.dot(&x_last);
    let expected = yy - two * yw + w_minus.second_moment_sum() - two * p_last * beta_last * (xy - xw)
        + p_last * beta_last * beta_last * xx;
    (expected / T::of_usize(n - 1)).max(T::of(SIGMA2_FLOOR))
}

/// `α = WᵀY / 1ᵀW²`, or 1 when the denominator vanishes.
pub fn update_alpha_aao<T: Real>(y: ArrayView1<T>, moments: &WMoments<T>) -> T {
    let denom = moments.second_moment_sum();
    if denom < T::of(W2_FLOOR) {
        T::one()
    } else {
        moments.w.dot(&y) / denom
    }
}

/// `(YᵀY − 2αYᵀW + α²·1ᵀW²) / (n−1)`, floored.
pub fn update_sigma2_aao<T: Real>(y: ArrayView1<T>, moments: &WMoments<T>, alpha: T, n: usize) -> T {
    let two_bp = y.dot(&y) - T::of(2.0) * alpha * y.dot(&moments.w) + alpha * alpha * moments.second_moment_sum();
    (two_bp / T::of_usize(n - 1)).max(T::of(SIGMA2_FLOOR))
}

/// State of one one-at-a-time PX-CM sweep.
///
/// Pending coefficients are not rescaled eagerly: their effective value is
/// `scale · start_beta[k]`, where `scale` is the product of the expansion
/// parameters seen so far in the sweep.
#[derive(Debug, Clone)]
pub struct Sweep<'a, T> {
    data: &'a Dataset<T>,
    order: &'a [usize],
    p: ArrayView1<'a, T>,
    start_beta: ArrayView1<'a, T>,
    beta_hat: Array1<T>,
    scale: T,
    pos: usize,
    w_minus: Array1<T>,
    v_minus: Array1<T>,
    w_plus: Array1<T>,
    v_plus: Array1<T>,
    y_resid: Array1<T>,
    v_tol: T,
    recomputes: usize,
}

impl<'a, T: Real> Sweep<'a, T> {
    /// Start a sweep from full-sum moments consistent with `(beta, p)`.
    pub fn new(
        data: &'a Dataset<T>,
        order: &'a [usize],
        beta: ArrayView1<'a, T>,
        p: ArrayView1<'a, T>,
        moments: &WMoments<T>,
    ) -> Self {
        let m = data.m_count();
        assert_eq!(order.len(), m, "order must be a permutation of all coordinates");
        let n = data.n();
        let v_scale = moments.v.iter().fold(T::zero(), |a, &b| a.max(b.abs()));
        let mut sweep = Sweep {
            data,
            order,
            p,
            start_beta: beta,
            beta_hat: beta.to_owned(),
            scale: T::one(),
            pos: 0,
            w_minus: Array1::zeros(n),
            v_minus: Array1::zeros(n),
            w_plus: moments.w.clone(),
            v_plus: moments.v.clone(),
            y_resid: data.y().to_owned(),
            v_tol: T::of(1e-12) * (T::one() + v_scale),
            recomputes: 0,
        };
        let first = order[0];
        sweep.remove_from_plus(first, T::one(), beta[first]);
        if m == 1 {
            sweep.w_plus.fill(T::zero());
            sweep.v_plus.fill(T::zero());
        }
        sweep
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn is_done(&self) -> bool {
        self.pos == self.order.len()
    }

    pub fn is_last(&self) -> bool {
        self.pos + 1 == self.order.len()
    }

    /// Coordinate being updated at the current position.
    pub fn current(&self) -> usize {
        self.order[self.pos]
    }

    pub fn recomputes(&self) -> usize {
        self.recomputes
    }

    /// Current value of coefficient `k` after all remaps so far.
    pub fn effective_beta(&self, k: usize) -> T {
        let finalized = self.order[..self.pos].contains(&k);
        if finalized {
            self.beta_hat[k]
        } else {
            self.scale * self.start_beta[k]
        }
    }

    pub fn effective_betas(&self) -> Array1<T> {
        let mut out = self.start_beta.mapv(|b| self.scale * b);
        for &k in &self.order[..self.pos] {
            out[k] = self.beta_hat[k];
        }
        out
    }

    pub fn minus_moments(&self) -> WMoments<T> {
        WMoments {
            w: self.w_minus.clone(),
            v: self.v_minus.clone(),
        }
    }

    pub fn plus_moments(&self) -> WMoments<T> {
        WMoments {
            w: self.w_plus.clone(),
            v: self.v_plus.clone(),
        }
    }

    fn w_plus2_sum(&self) -> T {
        Zip::from(&self.w_plus)
            .and(&self.v_plus)
            .fold(T::zero(), |acc, &w, &v| acc + v + w * w)
    }

    pub fn coord_input(&self) -> CoordSolveInput<'_, T> {
        let k = self.current();
        CoordSolveInput {
            x_col: self.data.col(k),
            y_resid: self.y_resid.view(),
            w_plus: self.w_plus.view(),
            w_plus2_sum: self.w_plus2_sum(),
            p_m: self.p[k],
            x_sq_norm: self.data.col_sq_norms()[k],
        }
    }

    pub fn postvar_input(&self, sigma2: T, beta_m: T) -> PostVarInput<'_, T> {
        let k = self.current();
        PostVarInput {
            x_col: self.data.col(k),
            y_resid: self.y_resid.view(),
            w_plus: self.w_plus.view(),
            w_plus2_sum: self.w_plus2_sum(),
            v_plus: self.v_plus.view(),
            v_minus: self.v_minus.view(),
            p_m: self.p[k],
            sigma2,
            beta_m,
            x_sq_norm: self.data.col_sq_norms()[k],
        }
    }

    // W₊ ← αW₊ − Xₖpₖβₖ, V₊ ← α²V₊ − Xₖ²βₖ²pₖ(1−pₖ)
    fn remove_from_plus(&mut self, k: usize, alpha: T, beta_k: T) {
        let pk = self.p[k];
        let mean = pk * beta_k;
        let var = beta_k * beta_k * pk * (T::one() - pk);
        let a2 = alpha * alpha;
        let tol = self.v_tol;
        let mut drift = false;
        Zip::from(&mut self.w_plus)
            .and(&mut self.v_plus)
            .and(self.data.col(k))
            .for_each(|w, v, &x| {
                *w = alpha * *w - x * mean;
                let nv = a2 * *v - x * x * var;
                if nv < T::zero() {
                    if nv < -tol {
                        drift = true;
                    }
                    *v = T::zero();
                } else {
                    *v = nv;
                }
            });
        if drift {
            self.recompute_plus();
        }
    }

    /// Rebuild the pending partition from scratch (positions after `pos`).
    pub fn recompute_plus(&mut self) {
        self.recomputes += 1;
        self.w_plus.fill(T::zero());
        self.v_plus.fill(T::zero());
        for &k in &self.order[self.pos + 1..] {
            let b = self.scale * self.start_beta[k];
            let pk = self.p[k];
            let mean = pk * b;
            let var = b * b * pk * (T::one() - pk);
            Zip::from(&mut self.w_plus)
                .and(&mut self.v_plus)
                .and(self.data.col(k))
                .for_each(|w, v, &x| {
                    *w += x * mean;
                    *v += x * x * var;
                });
        }
    }

    /// Fix the current coordinate at `out.beta_m`, scale pending coefficients
    /// by `out.alpha`, and move the partitions on to the next coordinate.
    pub fn remap_and_advance(&mut self, out: &CoordSolveOutput<T>) {
        assert!(!self.is_done(), "sweep already complete");
        let k = self.current();
        let b = out.beta_m;
        self.beta_hat[k] = b;
        let pk = self.p[k];
        let mean = pk * b;
        let var = b * b * pk * (T::one() - pk);
        Zip::from(&mut self.w_minus)
            .and(&mut self.v_minus)
            .and(&mut self.y_resid)
            .and(self.data.col(k))
            .for_each(|w, v, r, &x| {
                *w += x * mean;
                *v += x * x * var;
                *r -= x * mean;
            });

        self.pos += 1;
        if self.is_done() {
            return;
        }
        self.scale *= out.alpha;
        if self.is_last() {
            // nothing pending after the final coordinate
            self.w_plus.fill(T::zero());
            self.v_plus.fill(T::zero());
        } else {
            let next = self.order[self.pos];
            let b_next = self.scale * self.start_beta[next];
            self.remove_from_plus(next, out.alpha, b_next);
        }
    }

    /// Finalized coefficients; only meaningful once the sweep is done.
    pub fn into_beta(self) -> Array1<T> {
        self.beta_hat
    }
}
