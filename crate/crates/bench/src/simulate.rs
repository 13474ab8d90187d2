//! Spatially structured simulation design: Gaussian random fields on a
//! square grid drive both the sparsity pattern and the predictors.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ShapeBuilder};
use probe_core::{prepare_dataset, Dataset, ProbeError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{BenchError, Result};

/// Dense factorization is used for the fields, so the grid is capped.
pub const MAX_DENSE_M: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictorType {
    Continuous,
    Binary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSpec {
    /// Number of predictors; must be a perfect square.
    pub m_total: usize,
    /// Fraction of active predictors, `M₁ = round(π·M)`.
    pub pi_frac: f64,
    /// Coefficients are `U(0, 2η)`.
    pub eta: f64,
    pub snr: f64,
    pub predictor_type: PredictorType,
    pub n: usize,
    pub s0_gamma: f64,
    pub s0_x: f64,
    /// Variance of the per-row shift `aᵢ`.
    pub a_var: f64,
    pub seed: u64,
}

impl SimSpec {
    pub fn new(m_total: usize, m1: usize, eta: f64, snr: f64, predictor_type: PredictorType) -> Self {
        SimSpec {
            m_total,
            pi_frac: m1 as f64 / m_total as f64,
            eta,
            snr,
            predictor_type,
            n: 400,
            s0_gamma: 20.0,
            s0_x: 10.0,
            a_var: 0.75,
            seed: 0,
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        SimSpec { seed, ..self.clone() }
    }

    pub fn grid_side(&self) -> usize {
        (self.m_total as f64).sqrt().round() as usize
    }

    pub fn m1(&self) -> usize {
        (self.pi_frac * self.m_total as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let side = self.grid_side();
        let bad = |msg: String| Err(BenchError::Spec(msg));
        if side * side != self.m_total || self.m_total == 0 {
            return bad(format!("m_total = {} is not a perfect square", self.m_total));
        }
        if self.m_total > MAX_DENSE_M {
            return bad(format!("m_total = {} exceeds the dense limit {MAX_DENSE_M}", self.m_total));
        }
        if !(self.pi_frac > 0.0 && self.pi_frac < 1.0) || self.m1() == 0 {
            return bad(format!("pi_frac = {} gives no active predictors", self.pi_frac));
        }
        if !(self.eta > 0.0 && self.snr > 0.0 && self.s0_gamma > 0.0 && self.s0_x > 0.0 && self.a_var >= 0.0) {
            return bad("eta, snr, s0 and a_var must be positive".into());
        }
        if self.n < 3 {
            return bad(format!("n = {} is too small", self.n));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTruth {
    pub gamma: Vec<bool>,
    /// Drawn for every coordinate; only entries with `gamma` set enter the model.
    pub beta: Array1<f64>,
    pub sigma2: f64,
    /// `X(γ∘β)` on the centered predictors.
    pub signal: Array1<f64>,
}

impl SimTruth {
    /// `γ∘β`
    pub fn coef(&self) -> Array1<f64> {
        Array1::from_iter(self.beta.iter().zip(&self.gamma).map(|(&b, &g)| if g { b } else { 0.0 }))
    }
}

/// `exp(−‖(d − d′)/s₀‖²)` over integer grid coordinates, index `m = row·side + col`.
pub fn grid_covariance(side: usize, s0: f64) -> Array2<f64> {
    let m = side * side;
    Array2::from_shape_fn((m, m), |(a, b)| {
        let (ra, ca) = ((a / side) as f64, (a % side) as f64);
        let (rb, cb) = ((b / side) as f64, (b % side) as f64);
        let d2 = ((ra - rb) / s0).powi(2) + ((ca - cb) / s0).powi(2);
        (-d2).exp()
    })
}

type FactorCache = Mutex<HashMap<(usize, u64), Arc<Array2<f64>>>>;

fn cache() -> &'static FactorCache {
    static CACHE: OnceLock<FactorCache> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Lower Cholesky factor of the jittered grid covariance, built once per
/// `(side, s0)`.
pub fn grf_factor(side: usize, s0: f64) -> Result<Arc<Array2<f64>>> {
    let key = (side, s0.to_bits());
    if let Some(f) = cache().lock().expect("factor cache").get(&key) {
        return Ok(f.clone());
    }
    let factor = Arc::new(factorize(side, s0)?);
    let mut guard = cache().lock().expect("factor cache");
    Ok(guard.entry(key).or_insert(factor).clone())
}

fn factorize(side: usize, s0: f64) -> Result<Array2<f64>> {
    let m = side * side;
    if m > MAX_DENSE_M {
        return Err(BenchError::Spec(format!("grid of {m} points exceeds the dense limit")));
    }
    let cov = grid_covariance(side, s0);
    let mut jitter = 1e-8;
    while jitter <= 1e-4 * (1.0 + 1e-9) {
        let mat = DMatrix::from_fn(m, m, |i, j| cov[[i, j]] + if i == j { jitter } else { 0.0 });
        if let Some(ch) = mat.cholesky() {
            let l = ch.l();
            return Ok(Array2::from_shape_fn((m, m), |(i, j)| l[(i, j)]));
        }
        jitter *= 10.0;
    }
    Err(BenchError::Core(ProbeError::InvalidParameter(format!(
        "grid covariance (side {side}, s0 {s0}) not positive definite after jitter 1e-4"
    ))))
}

fn normals(rng: &mut impl Rng, len: usize) -> Array1<f64> {
    Array1::from_iter((0..len).map(|_| -> f64 { StandardNormal.sample(rng) }))
}

pub fn grf_sample(side: usize, s0: f64, rng: &mut impl Rng) -> Result<Array1<f64>> {
    let l = grf_factor(side, s0)?;
    Ok(l.dot(&normals(rng, side * side)))
}

/// Active set: the `M₁` smallest values of one field, ties by index.
pub fn gen_gamma(spec: &SimSpec, rng: &mut impl Rng) -> Result<Vec<bool>> {
    let field = grf_sample(spec.grid_side(), spec.s0_gamma, rng)?;
    let mut idx: Vec<usize> = (0..field.len()).collect();
    idx.sort_by(|&a, &b| field[a].total_cmp(&field[b]).then(a.cmp(&b)));
    let mut gamma = vec![false; field.len()];
    for &k in &idx[..spec.m1()] {
        gamma[k] = true;
    }
    Ok(gamma)
}

/// `n` independent field rows, each shifted by its own `aᵢ ~ N(0, a_var)`.
pub fn gen_x(spec: &SimSpec, rng: &mut impl Rng) -> Result<Array2<f64>> {
    let m = spec.m_total;
    let l = grf_factor(spec.grid_side(), spec.s0_x)?;
    let z = Array2::from_shape_fn((spec.n, m), |_| -> f64 { StandardNormal.sample(rng) });
    let shift = normals(rng, spec.n).mapv(|v| v * spec.a_var.sqrt());
    let mut x = z.dot(&l.t());
    for (mut row, &a) in x.rows_mut().into_iter().zip(&shift) {
        row.mapv_inplace(|v| v + a);
    }
    if spec.predictor_type == PredictorType::Binary {
        x.mapv_inplace(|v| if v < 0.0 { 1.0 } else { 0.0 });
    }
    let mut out = Array2::zeros((spec.n, m).f());
    out.assign(&x);
    Ok(out)
}

fn sample_var(v: &Array1<f64>) -> f64 {
    let mean = v.mean().unwrap_or(0.0);
    v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0)
}

/// One replicate: raw predictors and outcome, plus the truth.
pub fn gen_raw(spec: &SimSpec) -> Result<(Array1<f64>, Array2<f64>, SimTruth)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let gamma = gen_gamma(spec, &mut rng)?;
    let x = gen_x(spec, &mut rng)?;
    let beta = Array1::from_iter((0..spec.m_total).map(|_| rng.random_range(0.0..2.0 * spec.eta)));
    let truth_coef = Array1::from_iter(beta.iter().zip(&gamma).map(|(&b, &g)| if g { b } else { 0.0 }));

    let mut xc = x.clone();
    for mut col in xc.columns_mut() {
        let mean = col.mean().unwrap_or(0.0);
        col.mapv_inplace(|v| v - mean);
    }
    let signal = xc.dot(&truth_coef);
    let var = sample_var(&signal);
    if !(var > 0.0) {
        return Err(BenchError::Spec("simulated signal has zero variance".into()));
    }
    let sigma2 = var / spec.snr;
    let noise = normals(&mut rng, spec.n).mapv(|v| v * sigma2.sqrt());
    let y = &signal + &noise;
    Ok((y, x, SimTruth { gamma, beta, sigma2, signal }))
}

pub fn gen_dataset(spec: &SimSpec) -> Result<(Dataset<f64>, SimTruth)> {
    let (y, x, truth) = gen_raw(spec)?;
    let data = prepare_dataset(y.view(), x.view())?;
    Ok((data, truth))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_diagonal_and_symmetry() {
        let c = grid_covariance(5, 2.0);
        for i in 0..25 {
            assert_eq!(c[[i, i]], 1.0);
            for j in 0..25 {
                assert_eq!(c[[i, j]], c[[j, i]]);
            }
        }
        // neighbours one step apart along a row
        assert!((c[[0, 1]] - (-0.25f64).exp()).abs() < 1e-15);
        assert!((c[[0, 6]] - (-0.5f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn tiny_length_scale_is_white_noise() {
        let c = grid_covariance(4, 1e-3);
        for i in 0..16 {
            for j in 0..16 {
                assert_eq!(c[[i, j]], if i == j { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn factor_is_cached() {
        let a = grf_factor(6, 3.0).unwrap();
        let b = grf_factor(6, 3.0).unwrap();
        assert!(Arc::ptr_eq(&a, &b));
    }

    #[test]
    fn gamma_count_is_exact() {
        let spec = SimSpec::new(100, 7, 0.5, 1.0, PredictorType::Continuous);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            let g = gen_gamma(&spec, &mut rng).unwrap();
            assert_eq!(g.iter().filter(|&&v| v).count(), 7);
        }
    }

    #[test]
    fn spec_validation() {
        let ok = SimSpec::new(400, 20, 0.8, 2.0, PredictorType::Continuous);
        assert!(ok.validate().is_ok());
        assert_eq!(ok.m1(), 20);
        assert!(SimSpec { m_total: 401, ..ok.clone() }.validate().is_err());
        assert!(SimSpec { pi_frac: 0.0, ..ok.clone() }.validate().is_err());
        assert!(SimSpec { m_total: 4225, ..ok.clone() }.validate().is_err());
    }
}
