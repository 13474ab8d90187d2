//! Standard normal and χ²₁ helpers used by the E-step and the stopping rule.
//!
//! These work in `f64` regardless of the estimator scalar type.

use std::f64::consts::FRAC_1_SQRT_2;

use crate::error::{ProbeError, Result};

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[inline]
pub fn normal_pdf(z: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * z * z).exp()
}

/// Φ(z) through the complementary error function, accurate in both tails.
#[inline]
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z * FRAC_1_SQRT_2)
}

/// Upper tail 1 − Φ(z) without cancellation.
#[inline]
pub fn normal_sf(z: f64) -> f64 {
    0.5 * libm::erfc(z * FRAC_1_SQRT_2)
}

/// Two-sided normal p-value `2{1 − Φ(|t|)}`.
#[inline]
pub fn two_sided_p(t: f64) -> f64 {
    (2.0 * normal_sf(t.abs())).min(1.0)
}

// Acklam's rational approximation, relative error < 1.2e-9 before refinement.
const A: [f64; 6] = [
    -3.969683028665376e+01,
    2.209460984245205e+02,
    -2.759285104469687e+02,
    1.383577518672690e+02,
    -3.066479806614716e+01,
    2.506628277459239e+00,
];
const B: [f64; 5] = [
    -5.447609879822406e+01,
    1.615858368580409e+02,
    -1.556989798598866e+02,
    6.680131188771972e+01,
    -1.328068155288572e+01,
];
const C: [f64; 6] = [
    -7.784894002430293e-03,
    -3.223964580411365e-01,
    -2.400758277161838e+00,
    -2.549732539343734e+00,
    4.374664141464968e+00,
    2.938163982698783e+00,
];
const D: [f64; 4] = [
    7.784695709041462e-03,
    3.224671290700398e-01,
    2.445134137142996e+00,
    3.754408661907416e+00,
];
const P_LOW: f64 = 0.02425;

fn acklam(q: f64) -> f64 {
    if q < P_LOW {
        let r = (-2.0 * q.ln()).sqrt();
        (((((C[0] * r + C[1]) * r + C[2]) * r + C[3]) * r + C[4]) * r + C[5])
            / ((((D[0] * r + D[1]) * r + D[2]) * r + D[3]) * r + 1.0)
    } else if q <= 1.0 - P_LOW {
        let s = q - 0.5;
        let r = s * s;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * s
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -acklam(1.0 - q)
    }
}

/// Φ⁻¹(q) for q in (0, 1): rational approximation plus one Newton step.
pub fn inverse_normal_cdf(q: f64) -> Result<f64> {
    if !(q > 0.0 && q < 1.0) {
        return Err(ProbeError::InvalidParameter(format!(
            "normal quantile requires 0 < q < 1, got {q}"
        )));
    }
    let x = acklam(q);
    // Newton on Φ(x) − q, using whichever tail keeps the residual accurate.
    let resid = if x <= 0.0 {
        normal_cdf(x) - q
    } else {
        (1.0 - q) - normal_sf(x)
    };
    let step = resid / normal_pdf(x);
    Ok(if step.is_finite() { x - step } else { x })
}

/// ε-quantile of χ²₁, via `χ²₁,ε = {Φ⁻¹((1+ε)/2)}²`.
pub fn chisq1_quantile(eps: f64) -> Result<f64> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(ProbeError::InvalidParameter(format!(
            "chi-square quantile requires 0 < eps < 1, got {eps}"
        )));
    }
    let z = inverse_normal_cdf(0.5 + 0.5 * eps)?;
    Ok(z * z)
}
