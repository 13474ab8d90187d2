//! Approximate posterior variance of one coefficient.
//!
//! The complete-data variance comes from the 2×2 information matrix of
//! `(βₘ, α)`; selection uncertainty in the other coordinates is added through a
//! first-order expansion of `β̂ₘ` in the realized partitions `W₊` and `W₋`.

use ndarray::{Array1, ArrayView1, Zip};

use crate::scalar::Real;

#[derive(Debug, Clone, Copy)]
pub struct PostVarInput<'a, T> {
    pub x_col: ArrayView1<'a, T>,
    /// `Y − W₋`
    pub y_resid: ArrayView1<'a, T>,
    pub w_plus: ArrayView1<'a, T>,
    /// `1ᵀW₊²`, including the pending variances.
    pub w_plus2_sum: T,
    pub v_plus: ArrayView1<'a, T>,
    pub v_minus: ArrayView1<'a, T>,
    pub p_m: T,
    pub sigma2: T,
    pub beta_m: T,
    pub x_sq_norm: T,
}

const GUARD: f64 = 1e-12;

/// `(σ²·1ᵀW₊²) / (XᵀX·1ᵀW₊² − (XᵀW₊)²)`, or `σ²/XᵀX` when the system degenerates.
pub fn complete_data_var<T: Real>(input: &PostVarInput<'_, T>) -> T {
    let c = input.x_col.dot(&input.w_plus);
    cdv_from_stats(input.sigma2, input.x_sq_norm, c, input.w_plus2_sum)
}

pub(crate) fn cdv_from_stats<T: Real>(sigma2: T, xx: T, xw: T, ww2: T) -> T {
    let simple = sigma2 / xx;
    if ww2 < T::of(GUARD) {
        return simple;
    }
    let det = xx * ww2 - xw * xw;
    if !(det > T::of(GUARD) * xx * ww2) {
        return simple;
    }
    sigma2 * ww2 / det
}

/// Sensitivities of `β̂ₘ` to `W₊ᵢ` and to `W₋ᵢ`, the latter up to sign.
pub fn taylor_sensitivities<T: Real>(input: &PostVarInput<'_, T>) -> (Array1<T>, Array1<T>) {
    let n = input.x_col.len();
    let a = input.x_sq_norm;
    let c = input.x_col.dot(&input.w_plus);
    let r1 = input.x_col.dot(&input.y_resid);
    let r2 = input.w_plus.dot(&input.y_resid);
    let ww = input.w_plus.dot(&input.w_plus);
    let d = input.w_plus2_sum;
    let p = input.p_m;
    let h_big = a * ww - p * c * c;
    if !(h_big.abs() > T::of(GUARD) * a * ww) {
        return (Array1::zeros(n), Array1::zeros(n));
    }
    let two = T::of(2.0);
    let inv = h_big.recip();
    let beta = input.beta_m;
    let mut b_plus = Array1::zeros(n);
    let mut b_minus = Array1::zeros(n);
    Zip::from(&mut b_plus)
        .and(&mut b_minus)
        .and(input.x_col)
        .and(input.w_plus)
        .and(input.y_resid)
        .for_each(|bp, bm, &x, &w, &yr| {
            let h = two * (w * a - p * x * c);
            *bp = inv * (two * w * r1 - yr * c - x * r2 - h * beta);
            *bm = inv * (x * d - w * c);
        });
    (b_plus, b_minus)
}

/// `S² = complete_data_var + Σ b₊ᵢ²V₊ᵢ + Σ b₋ᵢ²V₋ᵢ`, floored at `1e-12·σ²/XᵀX`.
pub fn posterior_variance<T: Real>(input: &PostVarInput<'_, T>) -> T {
    let base = complete_data_var(input);
    let (bp, bm) = taylor_sensitivities(input);
    let plus = Zip::from(&bp).and(input.v_plus).fold(T::zero(), |acc, &b, &v| acc + b * b * v);
    let minus = Zip::from(&bm).and(input.v_minus).fold(T::zero(), |acc, &b, &v| acc + b * b * v);
    let floor = T::of(GUARD) * input.sigma2 / input.x_sq_norm;
    (base + plus + minus).max(floor)
}
