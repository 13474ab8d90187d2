//! The outer ECM loops for both variants, with damping, the stopping rule,
//! the all-at-once restart and final-estimate assembly.

use ndarray::{Array1, ArrayView1, ArrayView2, Zip};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{AaoInit, Centering, Dataset, FitConfig, FitResult, ProbeState, UpdateOrder, Variant, WMoments};
use crate::error::{ProbeError, Result};
use crate::estep::{compute_w_moments, estep};
use crate::lasso::{lasso_path, ordering_from_coefs, LassoOptions};
use crate::mstep::{solve_coordinate_px, solve_px_stats, update_alpha_aao, update_sigma2_aao, update_sigma2_oaat, CoordStats, Sweep};
use crate::postvar::{cdv_from_stats, posterior_variance};
use crate::scalar::Real;
use crate::special::chisq1_quantile;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceRecord<T> {
    pub t: usize,
    pub cc: T,
    pub sigma2: T,
    pub sum_p: T,
    /// Learning rate used for the update that produced iteration `t`.
    pub q: T,
}

/// `(t+1)^(-exponent)`.
pub fn learning_rate(t: usize, exponent: f64) -> f64 {
    ((t + 1) as f64).powf(-exponent)
}

/// Convex combination for β, precision-weighted combination for S².
pub fn damp<T: Real>(
    prev_beta: ArrayView1<T>,
    new_beta: ArrayView1<T>,
    prev_s2: ArrayView1<T>,
    new_s2: ArrayView1<T>,
    q: T,
) -> (Array1<T>, Array1<T>) {
    let keep = T::one() - q;
    let beta = Zip::from(prev_beta)
        .and(new_beta)
        .map_collect(|&b0, &b1| keep * b0 + q * b1);
    let s2 = Zip::from(prev_s2)
        .and(new_s2)
        .map_collect(|&s0, &s1| (keep / s0 + q / s1).recip());
    (beta, s2)
}

/// `log(n)·maxᵢ (W_curr − W_prev)² / max(V_prev, v_floor)`.
pub fn convergence_stat<T: Real>(
    w_curr: ArrayView1<T>,
    w_prev: ArrayView1<T>,
    v_prev: ArrayView1<T>,
    n: usize,
    v_floor: T,
) -> T {
    let worst = Zip::from(w_curr)
        .and(w_prev)
        .and(v_prev)
        .fold(T::zero(), |acc, &a, &b, &v| {
            let d = a - b;
            acc.max(d * d / v.max(v_floor))
        });
    T::of_usize(n).ln() * worst
}

pub fn fit<T: Real>(data: &Dataset<T>, config: &FitConfig) -> Result<FitResult<T>> {
    match config.variant {
        Variant::OneAtATime => fit_one_at_a_time(data, config),
        Variant::AllAtOnce => fit_all_at_once(data, config),
    }
}

fn check_state<T: Real>(iteration: usize, beta: &Array1<T>, s2: &Array1<T>, sigma2: T) -> Result<()> {
    if let Some(m) = beta.iter().position(|b| !b.is_finite()) {
        return Err(ProbeError::Diverged { iteration, coordinate: Some(m), what: "beta".into() });
    }
    if let Some(m) = s2.iter().position(|s| !(s.is_finite() && *s > T::zero())) {
        return Err(ProbeError::Diverged { iteration, coordinate: Some(m), what: "posterior variance".into() });
    }
    if !(sigma2.is_finite() && sigma2 > T::zero()) {
        return Err(ProbeError::Diverged { iteration, coordinate: None, what: "sigma2".into() });
    }
    Ok(())
}

fn resolve_order(config: &FitConfig, lasso_coefs: ArrayView1<'_, impl Real>) -> Result<Vec<usize>> {
    let m = lasso_coefs.len();
    Ok(match &config.update_order {
        UpdateOrder::Lasso => ordering_from_coefs(lasso_coefs),
        UpdateOrder::Random => {
            let mut order: Vec<usize> = (0..m).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed));
            order
        }
        UpdateOrder::Given(order) => {
            let mut seen = vec![false; m];
            if order.len() != m || order.iter().any(|&k| k >= m || std::mem::replace(&mut seen[k], true)) {
                return Err(ProbeError::InvalidParameter("update order must be a permutation of 0..M".into()));
            }
            order.clone()
        }
    })
}

struct LoopOutcome<T> {
    state: ProbeState<T>,
    trace: Vec<ConvergenceRecord<T>>,
    converged: bool,
    all_null: bool,
}

/// E-step, moment refresh and convergence bookkeeping shared by both variants.
#[allow(clippy::too_many_arguments)]
fn close_iteration<T: Real>(
    data: &Dataset<T>,
    config: &FitConfig,
    state: &mut ProbeState<T>,
    beta: Array1<T>,
    s2: Array1<T>,
    sigma2: T,
    q: T,
    v_floor: T,
    trace: &mut Vec<ConvergenceRecord<T>>,
) -> Result<T> {
    let t = state.t + 1;
    check_state(t, &beta, &s2, sigma2)?;
    let e = estep(beta.view(), s2.view(), T::of(config.storey_lambda), T::of(config.bandwidth_multiplier))
        .map_err(|err| ProbeError::Diverged { iteration: t, coordinate: None, what: err.to_string() })?;
    let moments = compute_w_moments(data.x(), beta.view(), e.p.view());
    let cc = convergence_stat(moments.w.view(), state.moments.w.view(), state.moments.v.view(), data.n(), v_floor);
    trace.push(ConvergenceRecord { t, cc, sigma2, sum_p: e.p.sum(), q });
    *state = ProbeState { beta, p: e.p, s2, sigma2, alpha: state.alpha, t, moments };
    Ok(cc)
}

fn max_is_zero<T: Real>(p: &Array1<T>) -> bool {
    p.iter().all(|&v| v <= T::zero())
}

/// Lasso-initialized sequential PX-ECM.
pub fn fit_one_at_a_time<T: Real>(data: &Dataset<T>, config: &FitConfig) -> Result<FitResult<T>> {
    config.validate()?;
    let m = data.m_count();
    let threshold = T::of(chisq1_quantile(config.epsilon)?);
    let v_floor = T::of(1e-10) * data.y_sample_var();

    let lasso = lasso_path(data, &LassoOptions::from_config(config))?;
    let order = resolve_order(config, lasso.best_coefs.view())?;
    let beta0 = lasso.best_coefs.clone();
    let p0 = Array1::ones(m);
    let moments = compute_w_moments(data.x(), beta0.view(), p0.view());
    let mut state = ProbeState {
        beta: beta0,
        p: p0,
        s2: Array1::zeros(m),
        sigma2: data.y_sample_var(),
        alpha: T::one(),
        t: 0,
        moments,
    };
    let mut trace = Vec::new();
    let mut converged = false;
    let mut all_null = false;

    while state.t < config.max_iter {
        let t_next = state.t + 1;
        let mut s2_hat = Array1::zeros(m);
        let mut sigma2_new = state.sigma2;
        let mut sweep = Sweep::new(data, &order, state.beta.view(), state.p.view(), &state.moments);
        while !sweep.is_done() {
            let k = sweep.current();
            let out = solve_coordinate_px(&sweep.coord_input()).map_err(|err| ProbeError::Diverged {
                iteration: t_next,
                coordinate: Some(k),
                what: err.to_string(),
            })?;
            if !(out.beta_m.is_finite() && out.alpha.is_finite()) {
                return Err(ProbeError::Diverged { iteration: t_next, coordinate: Some(k), what: "coordinate solve".into() });
            }
            s2_hat[k] = posterior_variance(&sweep.postvar_input(state.sigma2, out.beta_m));
            if sweep.is_last() {
                sigma2_new = update_sigma2_oaat(data.y(), &sweep.minus_moments(), data.col(k), out.beta_m, state.p[k]);
            }
            sweep.remap_and_advance(&out);
        }
        let beta_hat = sweep.into_beta();

        // no previous S² exists before the first sweep, so it is taken as is
        let (beta, s2, q) = if state.t == 0 {
            (beta_hat, s2_hat, T::one())
        } else {
            let q = T::of(learning_rate(t_next, config.lr_exponent));
            let (b, s) = damp(state.beta.view(), beta_hat.view(), state.s2.view(), s2_hat.view(), q);
            (b, s, q)
        };
        let cc = close_iteration(data, config, &mut state, beta, s2, sigma2_new, q, v_floor, &mut trace)?;
        if max_is_zero(&state.p) {
            all_null = true;
            converged = true;
            break;
        }
        if cc < threshold {
            converged = true;
            break;
        }
    }
    let outcome = LoopOutcome { state, trace, converged, all_null };
    Ok(finish(data, Variant::OneAtATime, outcome, 0, order))
}

fn aao_start<T: Real>(data: &Dataset<T>, init: AaoInit) -> ProbeState<T> {
    let m = data.m_count();
    let (beta, p) = match init {
        AaoInit::Zero => (Array1::zeros(m), Array1::zeros(m)),
        AaoInit::Constant(b) => (Array1::from_elem(m, T::of(b)), Array1::ones(m)),
    };
    let moments = compute_w_moments(data.x(), beta.view(), p.view());
    ProbeState {
        beta,
        p,
        s2: Array1::zeros(m),
        sigma2: data.y_sample_var(),
        alpha: T::one(),
        t: 0,
        moments,
    }
}

/// One all-at-once M-step: every coordinate solved against the leave-one-out
/// moments of the current state, with `p = 1` in the 2×2 system.
pub fn aao_mstep<T: Real>(data: &Dataset<T>, state: &ProbeState<T>, xty: ArrayView1<T>) -> Result<(Array1<T>, Array1<T>)> {
    let mom = &state.moments;
    let y = data.y();
    let wy = mom.w.dot(&y);
    let ww = mom.w.dot(&mom.w);
    let vsum = mom.v.sum();
    let two = T::of(2.0);
    let sigma2 = state.sigma2;
    let iteration = state.t + 1;
    let solved: Vec<Result<(T, T)>> = (0..data.m_count())
        .into_par_iter()
        .map(|k| {
            let col = data.col(k);
            let a = data.col_sq_norms()[k];
            let (b, p) = (state.beta[k], state.p[k]);
            let pb = p * b;
            let xw = col.dot(&mom.w);
            let c = xw - pb * a;
            let d = (vsum - b * b * p * (T::one() - p) * a + ww - two * pb * xw + pb * pb * a).max(T::zero());
            let r2 = wy - pb * xty[k];
            let stats = CoordStats { xx: a, xw: c, ww2: d, xy: xty[k], wy: r2, p: T::one() };
            let out = solve_px_stats(&stats).map_err(|err| ProbeError::Diverged {
                iteration,
                coordinate: Some(k),
                what: err.to_string(),
            })?;
            if !out.beta_m.is_finite() {
                return Err(ProbeError::Diverged { iteration, coordinate: Some(k), what: "coordinate solve".into() });
            }
            Ok((out.beta_m, cdv_from_stats(sigma2, a, c, d)))
        })
        .collect();
    let mut beta = Array1::zeros(data.m_count());
    let mut s2 = Array1::zeros(data.m_count());
    for (k, r) in solved.into_iter().enumerate() {
        let (b, s) = r?;
        beta[k] = b;
        s2[k] = s;
    }
    Ok((beta, s2))
}

fn run_all_at_once<T: Real>(data: &Dataset<T>, config: &FitConfig, init: AaoInit) -> Result<LoopOutcome<T>> {
    let threshold = T::of(chisq1_quantile(config.epsilon)?);
    let v_floor = T::of(1e-10) * data.y_sample_var();
    let xty = data.x().t().dot(&data.y());
    let mut state = aao_start(data, init);
    let mut trace = Vec::new();
    let mut converged = false;
    let mut all_null = false;
    while state.t < config.max_iter {
        let (beta_hat, s2_hat) = aao_mstep(data, &state, xty.view())?;
        let alpha = update_alpha_aao(data.y(), &state.moments);
        let sigma2 = update_sigma2_aao(data.y(), &state.moments, alpha, data.n());
        state.alpha = alpha;
        let (beta, s2, q) = if state.t == 0 {
            (beta_hat, s2_hat, T::one())
        } else {
            let q = T::of(learning_rate(state.t + 1, config.lr_exponent));
            let (b, s) = damp(state.beta.view(), beta_hat.view(), state.s2.view(), s2_hat.view(), q);
            (b, s, q)
        };
        let cc = close_iteration(data, config, &mut state, beta, s2, sigma2, q, v_floor, &mut trace)?;
        if max_is_zero(&state.p) {
            all_null = true;
            break;
        }
        if cc < threshold {
            converged = true;
            break;
        }
    }
    Ok(LoopOutcome { state, trace, converged, all_null })
}

/// Simultaneous-update PROBE with at most one restart after an all-zero `p`.
pub fn fit_all_at_once<T: Real>(data: &Dataset<T>, config: &FitConfig) -> Result<FitResult<T>> {
    config.validate()?;
    let identity: Vec<usize> = (0..data.m_count()).collect();
    let first = run_all_at_once(data, config, config.aao_init)?;
    if !first.all_null {
        return Ok(finish(data, Variant::AllAtOnce, first, 0, identity));
    }
    if config.aao_init == AaoInit::Zero {
        let second = run_all_at_once(data, config, AaoInit::Constant(config.restart_b))?;
        if !second.all_null {
            return Ok(finish(data, Variant::AllAtOnce, second, 1, identity));
        }
        return Ok(null_result(data, Variant::AllAtOnce, second, 1, identity));
    }
    Ok(null_result(data, Variant::AllAtOnce, first, 0, identity))
}

fn finish<T: Real>(data: &Dataset<T>, variant: Variant, out: LoopOutcome<T>, restarts: usize, order: Vec<usize>) -> FitResult<T> {
    if out.all_null {
        return null_result(data, variant, out, restarts, order);
    }
    let mut state = out.state;
    let alpha = match variant {
        Variant::AllAtOnce => reduce_all_at_once(&mut state, data),
        Variant::OneAtATime => T::one(),
    };
    let mut r = finalize(&state, data, out.trace);
    r.alpha = alpha;
    r.variant = variant;
    r.converged = out.converged;
    r.restarts = restarts;
    r.order = order;
    r
}

fn null_result<T: Real>(data: &Dataset<T>, variant: Variant, out: LoopOutcome<T>, restarts: usize, order: Vec<usize>) -> FitResult<T> {
    let m = data.m_count();
    let yy = data.y().dot(&data.y());
    FitResult {
        variant,
        beta_map: out.state.beta,
        p_map: Array1::zeros(m),
        beta_bar: Array1::zeros(m),
        s2: out.state.s2,
        sigma2_map: data.y_sample_var(),
        alpha: T::one(),
        ig_a: T::of_usize(data.n()) / T::of(2.0),
        ig_b: yy,
        iterations: out.state.t,
        converged: true,
        null_model: true,
        restarts,
        order,
        trace: out.trace,
        centering: data.centering().clone(),
    }
}

/// Map the expanded all-at-once state back to the model scale. Every
/// coordinate was fit as though it came first, so the summed predictor
/// over-counts shared signal; `α = WᵀY / 1ᵀW²` rescales β, W and V together.
fn reduce_all_at_once<T: Real>(state: &mut ProbeState<T>, data: &Dataset<T>) -> T {
    let alpha = update_alpha_aao(data.y(), &state.moments);
    if !alpha.is_finite() {
        return T::one();
    }
    state.beta.mapv_inplace(|b| b * alpha);
    state.moments.w.mapv_inplace(|w| w * alpha);
    state.moments.v.mapv_inplace(|v| v * alpha * alpha);
    alpha
}

/// Assemble MAP summaries from a terminal state. `converged` is left false
/// and `order` empty for the caller to fill in.
pub fn finalize<T: Real>(state: &ProbeState<T>, data: &Dataset<T>, trace: Vec<ConvergenceRecord<T>>) -> FitResult<T> {
    let y = data.y();
    let mom: &WMoments<T> = &state.moments;
    let ig_b = y.dot(&y) - T::of(2.0) * y.dot(&mom.w) + mom.second_moment_sum();
    let null_model = max_is_zero(&state.p);
    FitResult {
        variant: Variant::AllAtOnce,
        beta_bar: &state.p * &state.beta,
        beta_map: state.beta.clone(),
        p_map: state.p.clone(),
        s2: state.s2.clone(),
        sigma2_map: state.sigma2,
        alpha: T::one(),
        ig_a: T::of_usize(data.n()) / T::of(2.0),
        ig_b,
        iterations: state.t,
        converged: false,
        null_model,
        restarts: 0,
        order: Vec::new(),
        trace,
        centering: data.centering().clone(),
    }
}

/// `ŷ = ȳ + (x_new − x̄)·β̄` on the raw scale.
pub fn predict<T: Real>(result: &FitResult<T>, x_new: ArrayView2<T>) -> Result<Array1<T>> {
    predict_with(&result.centering, result.beta_bar.view(), x_new)
}

/// [`predict`] from a stored centering and expected coefficient.
pub fn predict_with<T: Real>(centering: &Centering<T>, beta_bar: ArrayView1<T>, x_new: ArrayView2<T>) -> Result<Array1<T>> {
    let m = beta_bar.len();
    if x_new.ncols() != m || centering.x_means.len() != m {
        return Err(ProbeError::DimensionMismatch(format!(
            "model has {m} predictors, new data has {} columns",
            x_new.ncols()
        )));
    }
    let offset = centering.y_mean - centering.x_means.dot(&beta_bar);
    Ok(x_new.dot(&beta_bar).mapv(|v| v + offset))
}
