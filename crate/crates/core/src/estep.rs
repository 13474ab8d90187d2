//! Empirical-Bayes E-step: test statistics, Storey's null proportion, a
//! Gaussian KDE of the statistics, local-FDR inclusion probabilities and the
//! latent-predictor moments.

use std::cmp::Ordering;

use ndarray::{Array1, ArrayView1, ArrayView2, Zip};

use crate::data::WMoments;
use crate::error::{ProbeError, Result};
use crate::scalar::Real;
use crate::special::{normal_pdf, two_sided_p};

/// Above this many statistics the KDE switches to the binned approximation;
/// past the bin count the pairwise sum dominates an all-at-once iteration.
pub const KDE_EXACT_MAX: usize = KDE_BINS;
pub const KDE_BINS: usize = 1024;

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[derive(Debug, Clone)]
pub struct EStepFit<T> {
    pub t_stats: Array1<T>,
    pub p_values: Array1<T>,
    pub pi0_hat: T,
    pub bandwidth: T,
    pub f_hat: Array1<T>,
    pub p: Array1<T>,
}

/// `T_m = β_m / √s2_m`.
pub fn compute_tstats<T: Real>(beta: ArrayView1<T>, s2: ArrayView1<T>) -> Result<Array1<T>> {
    if beta.len() != s2.len() {
        return Err(ProbeError::DimensionMismatch(format!(
            "beta has {} entries, s2 has {}",
            beta.len(),
            s2.len()
        )));
    }
    if let Some(m) = s2.iter().position(|&v| !(v > T::zero()) || !v.is_finite()) {
        return Err(ProbeError::InvalidParameter(format!(
            "posterior variance s2[{m}] = {} is not positive",
            s2[m]
        )));
    }
    Ok(Zip::from(&beta).and(&s2).map_collect(|&b, &v| b / v.sqrt()))
}

pub fn p_values<T: Real>(t_stats: ArrayView1<T>) -> Array1<T> {
    t_stats.mapv(|t| T::of(two_sided_p(t.f64())))
}

/// Storey's estimate `#{P ≥ λ} / {M(1−λ)}`, clamped to `[1/M, 1]`.
pub fn storey_pi0<T: Real>(p_values: ArrayView1<T>, lambda: T) -> T {
    let m = p_values.len();
    if m == 0 {
        return T::one();
    }
    let mf = T::of_usize(m);
    let count = p_values.iter().filter(|&&p| p >= lambda).count();
    let raw = T::of_usize(count) / (mf * (T::one() - lambda));
    raw.max(T::one() / mf).min(T::one())
}

fn sorted<T: Real>(x: ArrayView1<T>) -> Vec<T> {
    let mut v = x.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    v
}

/// Linear-interpolation quantile of sorted data (R's type 7).
fn quantile_sorted<T: Real>(sorted: &[T], q: f64) -> T {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = T::of(h - lo as f64);
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// `multiplier · 0.9 · min(sd, IQR/1.34) · M^(−1/5)`.
pub fn silverman_bandwidth<T: Real>(t_stats: ArrayView1<T>, multiplier: T) -> T {
    let m = t_stats.len();
    let mf = T::of_usize(m);
    let shrink = T::of(0.9) * mf.powf(T::of(-0.2)) * multiplier;
    if m < 2 {
        return shrink * T::of(1e-3);
    }
    let mean = t_stats.sum() / mf;
    let var = t_stats.iter().map(|&t| (t - mean) * (t - mean)).sum::<T>() / T::of_usize(m - 1);
    let sd = var.sqrt();
    let s = sorted(t_stats);
    let iqr = quantile_sorted(&s, 0.75) - quantile_sorted(&s, 0.25);
    let spread = sd.min(iqr / T::of(1.34));
    if spread > T::zero() {
        shrink * spread
    } else {
        shrink * sd.max(T::of(1e-3))
    }
}

/// Gaussian KDE `(Mh)⁻¹ Σ_j φ((T − T_j)/h)` evaluated at every `T_k`,
/// self-term included. Exact below [`KDE_EXACT_MAX`] points, binned above.
pub fn kde_marginal<T: Real>(t_stats: ArrayView1<T>, h: T) -> Array1<T> {
    if t_stats.len() > KDE_EXACT_MAX {
        kde_binned(t_stats, h, KDE_BINS)
    } else {
        kde_exact(t_stats, h)
    }
}

/// Exact O(M²) evaluation. Each pair is evaluated once and credited to both
/// ends; the accumulation order is fixed.
pub fn kde_exact<T: Real>(t_stats: ArrayView1<T>, h: T) -> Array1<T> {
    let m = t_stats.len();
    let t = t_stats.to_vec();
    let half_inv_h2 = T::of(0.5) / (h * h);
    let mut acc = vec![T::zero(); m];
    for k in 0..m {
        let tk = t[k];
        let mut own = T::one();
        for (j, &tj) in t.iter().enumerate().skip(k + 1) {
            let d = tk - tj;
            let e = (-(d * d) * half_inv_h2).exp();
            own += e;
            acc[j] += e;
        }
        acc[k] += own;
    }
    let norm = T::of(FRAC_1_SQRT_2PI) / (T::of_usize(m) * h);
    Array1::from_iter(acc.into_iter().map(|s| s * norm))
}

/// Linear binning onto `bins` grid points spanning the data ±4h, discrete
/// convolution with the kernel, and linear interpolation back to the data.
pub fn kde_binned<T: Real>(t_stats: ArrayView1<T>, h: T, bins: usize) -> Array1<T> {
    let m = t_stats.len();
    let lo = t_stats.iter().fold(T::infinity(), |a, &b| a.min(b)) - T::of(4.0) * h;
    let hi = t_stats.iter().fold(T::neg_infinity(), |a, &b| a.max(b)) + T::of(4.0) * h;
    let delta = (hi - lo) / T::of_usize(bins - 1);
    let pos = |t: T| -> (usize, T) {
        let g = (t - lo) / delta;
        let i = g.floor().to_usize().unwrap_or(0).min(bins - 2);
        (i, g - T::of_usize(i))
    };

    let mut counts = vec![T::zero(); bins];
    for &t in t_stats.iter() {
        let (i, frac) = pos(t);
        counts[i] += T::one() - frac;
        counts[i + 1] += frac;
    }

    let half = T::of(0.5);
    let kernel: Vec<T> = (0..bins)
        .map(|k| {
            let u = T::of_usize(k) * delta / h;
            (-(u * u) * half).exp()
        })
        .collect();
    let mut grid = vec![T::zero(); bins];
    for (g, out) in grid.iter_mut().enumerate() {
        let mut s = T::zero();
        for (b, &c) in counts.iter().enumerate() {
            if c != T::zero() {
                s += c * kernel[g.abs_diff(b)];
            }
        }
        *out = s;
    }

    let norm = T::of(FRAC_1_SQRT_2PI) / (T::of_usize(m) * h);
    t_stats.mapv(|t| {
        let (i, frac) = pos(t);
        ((T::one() - frac) * grid[i] + frac * grid[i + 1]) * norm
    })
}

/// Inclusion probabilities `1 − π̂₀ φ(T)/f̂(T)` clamped to `[0, 1]`, then made
/// non-decreasing in |T|.
pub fn local_fdr_probs<T: Real>(t_stats: ArrayView1<T>, pi0: T, f_hat: ArrayView1<T>) -> Array1<T> {
    let raw = Zip::from(&t_stats).and(&f_hat).map_collect(|&t, &f| {
        let null = pi0 * T::of(normal_pdf(t.f64()));
        let p = T::one() - null / f;
        if p.is_nan() {
            T::zero()
        } else {
            p.max(T::zero()).min(T::one())
        }
    });
    enforce_monotone(t_stats, raw.view())
}

/// Running maximum of `raw` in ascending |T| order; tied |T| share a value.
pub fn enforce_monotone<T: Real>(t_stats: ArrayView1<T>, raw: ArrayView1<T>) -> Array1<T> {
    let m = t_stats.len();
    let mut idx: Vec<usize> = (0..m).collect();
    idx.sort_by(|&a, &b| {
        t_stats[a]
            .abs()
            .partial_cmp(&t_stats[b].abs())
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut out = Array1::zeros(m);
    let mut running = T::zero();
    let mut start = 0;
    while start < m {
        let key = t_stats[idx[start]].abs();
        let mut end = start + 1;
        while end < m && t_stats[idx[end]].abs() == key {
            end += 1;
        }
        for &i in &idx[start..end] {
            running = running.max(raw[i]);
        }
        for &i in &idx[start..end] {
            out[i] = running;
        }
        start = end;
    }
    out
}

/// `W = X(β∘p)` and `V_i = Σ_m X_im² β_m² p_m (1−p_m)`.
pub fn compute_w_moments<T: Real>(x: ArrayView2<T>, beta: ArrayView1<T>, p: ArrayView1<T>) -> WMoments<T> {
    let (n, m) = x.dim();
    assert_eq!(beta.len(), m, "beta length");
    assert_eq!(p.len(), m, "p length");
    let mut moments = WMoments::zeros(n);
    for j in 0..m {
        let (b, pj) = (beta[j], p[j]);
        let mean = b * pj;
        let var = b * b * pj * (T::one() - pj);
        if mean == T::zero() && var == T::zero() {
            continue;
        }
        Zip::from(&mut moments.w)
            .and(&mut moments.v)
            .and(x.column(j))
            .for_each(|w, v, &xi| {
                *w += xi * mean;
                *v += xi * xi * var;
            });
    }
    moments
}

/// Full E-step (a): statistics, null proportion, KDE and inclusion probabilities.
pub fn estep<T: Real>(
    beta: ArrayView1<T>,
    s2: ArrayView1<T>,
    storey_lambda: T,
    bandwidth_multiplier: T,
) -> Result<EStepFit<T>> {
    let t_stats = compute_tstats(beta, s2)?;
    if let Some(m) = t_stats.iter().position(|t| !t.is_finite()) {
        return Err(ProbeError::NonFinite(format!("test statistic {m}")));
    }
    let p_values = p_values(t_stats.view());
    let pi0_hat = storey_pi0(p_values.view(), storey_lambda);
    let bandwidth = silverman_bandwidth(t_stats.view(), bandwidth_multiplier);
    let f_hat = kde_marginal(t_stats.view(), bandwidth);
    let p = local_fdr_probs(t_stats.view(), pi0_hat, f_hat.view());
    Ok(EStepFit {
        t_stats,
        p_values,
        pi0_hat,
        bandwidth,
        f_hat,
        p,
    })
}
