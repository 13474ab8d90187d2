//! Replicate grid over simulation settings and methods, aggregated into
//! per-cell summaries with RMSE ratios against all-at-once PROBE.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use ndarray::Array1;
use probe_core::lasso::{adaptive_lasso, default_ridge_grid, lasso_path, ridge_fit, LassoOptions};
use probe_core::{fit, Dataset, FitConfig, UpdateOrder};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{BenchError, Result};
use crate::metrics::{mad_coef, rmse_coef, rmse_signal};
use crate::simulate::{gen_dataset, PredictorType, SimSpec, SimTruth};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ProbeAao,
    ProbeOaat,
    Lasso,
    Alasso,
    Ridge,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::ProbeAao, Method::ProbeOaat, Method::Lasso, Method::Alasso, Method::Ridge];

    pub fn name(self) -> &'static str {
        match self {
            Method::ProbeAao => "probe_aao",
            Method::ProbeOaat => "probe_oaat",
            Method::Lasso => "lasso",
            Method::Alasso => "alasso",
            Method::Ridge => "ridge",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown method '{s}' (expected one of probe_aao, probe_oaat, lasso, alasso, ridge)"))
    }
}

/// Coefficients on the raw predictor scale plus inclusion indicators.
#[derive(Debug, Clone)]
pub struct MethodFit {
    pub coef: Array1<f64>,
    /// `p̃` for PROBE, `I(|β̂| > 0)` for the penalized fits.
    pub p_hat: Array1<f64>,
    pub converged: bool,
}

fn nonzero_indicator(b: &Array1<f64>) -> Array1<f64> {
    b.mapv(|v| if v != 0.0 { 1.0 } else { 0.0 })
}

pub fn fit_method(method: Method, data: &Dataset<f64>, seed: u64) -> Result<MethodFit> {
    let lasso_opts = LassoOptions { seed, ..LassoOptions::default() };
    match method {
        Method::ProbeAao | Method::ProbeOaat => {
            let cfg = if method == Method::ProbeAao { FitConfig::all_at_once() } else { FitConfig::one_at_a_time() };
            let r = fit(data, &FitConfig { seed, ..cfg })?;
            Ok(MethodFit { coef: r.beta_bar, p_hat: r.p_map, converged: r.converged })
        }
        Method::Lasso | Method::Alasso => {
            let l = if method == Method::Lasso { lasso_path(data, &lasso_opts)? } else { adaptive_lasso(data, &lasso_opts)? };
            let p_hat = nonzero_indicator(&l.best_coefs);
            Ok(MethodFit { coef: l.best_coefs, p_hat, converged: true })
        }
        Method::Ridge => {
            let r = ridge_fit(data, &default_ridge_grid::<f64>(), lasso_opts.folds, seed)?;
            let p_hat = nonzero_indicator(&r.coefs);
            Ok(MethodFit { coef: r.coefs, p_hat, converged: true })
        }
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for one (setting, replicate) cell, decorrelated from its neighbours.
pub fn replicate_seed(base: u64, setting: usize, replicate: usize) -> u64 {
    splitmix(base ^ splitmix(((setting as u64) << 32) ^ replicate as u64))
}

/// One (setting, replicate, method) outcome. Metrics are absent when the
/// fit failed; `error` then carries the message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub setting: usize,
    pub replicate: usize,
    pub method: Method,
    pub seed: u64,
    pub ok: bool,
    pub error: Option<String>,
    pub converged: Option<bool>,
    pub rmse_signal: Option<f64>,
    pub rmse_coef: Option<f64>,
    pub mad: Option<f64>,
    /// `Σ p̂`
    pub m1_hat: Option<f64>,
    /// `Σ_{γ=1} p̂`
    pub m1_hat_true: Option<f64>,
    pub wall_time_s: Option<f64>,
}

fn evaluate(setting: usize, replicate: usize, seed: u64, method: Method, data: &Dataset<f64>, truth: &SimTruth) -> RunRecord {
    let start = Instant::now();
    let fitted = fit_method(method, data, seed);
    let elapsed = start.elapsed().as_secs_f64();
    let mut rec = RunRecord {
        setting,
        replicate,
        method,
        seed,
        ok: false,
        error: None,
        converged: None,
        rmse_signal: None,
        rmse_coef: None,
        mad: None,
        m1_hat: None,
        m1_hat_true: None,
        wall_time_s: None,
    };
    match fitted {
        Ok(f) => {
            let m1_true: f64 = f.p_hat.iter().zip(&truth.gamma).filter(|(_, &g)| g).map(|(p, _)| p).sum();
            rec.ok = true;
            rec.converged = Some(f.converged);
            rec.rmse_signal = Some(rmse_signal(f.coef.view(), truth, data.x()));
            rec.rmse_coef = Some(rmse_coef(f.coef.view(), truth));
            rec.mad = Some(mad_coef(f.coef.view(), truth));
            rec.m1_hat = Some(f.p_hat.sum());
            rec.m1_hat_true = Some(m1_true);
            rec.wall_time_s = Some(elapsed);
        }
        Err(e) => rec.error = Some(e.to_string()),
    }
    rec
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl Stat {
    fn of(values: &[f64]) -> Option<Stat> {
        if values.is_empty() {
            return None;
        }
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Some(Stat { mean, min, max })
    }
}

/// Aggregate over the replicates of one (setting, method) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub setting: usize,
    pub method: Method,
    pub n_ok: usize,
    pub n_failed: usize,
    pub n_converged: usize,
    pub rmse_signal: Option<Stat>,
    pub rmse_coef: Option<Stat>,
    pub mad: Option<Stat>,
    pub m1_hat: Option<Stat>,
    pub m1_hat_true: Option<Stat>,
    pub wall_time_s: Option<Stat>,
    /// `√mean MSE(probe_aao) / √mean MSE(method)` of the signal, over
    /// replicates where both fits succeeded.
    pub rrmse_signal: Option<f64>,
    pub rrmse_coef: Option<f64>,
}

/// Root of the mean squared RMSE of `a` over that of `b`, paired by replicate.
fn paired_rrmse(a: &[&RunRecord], b: &[&RunRecord], get: fn(&RunRecord) -> Option<f64>) -> Option<f64> {
    let (mut sa, mut sb, mut k) = (0.0, 0.0, 0usize);
    for ra in a {
        let Some(rb) = b.iter().find(|r| r.replicate == ra.replicate) else { continue };
        if let (Some(x), Some(y)) = (get(ra), get(rb)) {
            sa += x * x;
            sb += y * y;
            k += 1;
        }
    }
    (k > 0 && sb > 0.0).then(|| (sa / sb).sqrt())
}

/// `rrmse(A vs B)` from cell summaries' records; exposed for the
/// antisymmetry property.
pub fn rrmse(a: &[RunRecord], b: &[RunRecord], coef: bool) -> Option<f64> {
    let ra: Vec<&RunRecord> = a.iter().collect();
    let rb: Vec<&RunRecord> = b.iter().collect();
    let get: fn(&RunRecord) -> Option<f64> = if coef { |r| r.rmse_coef } else { |r| r.rmse_signal };
    paired_rrmse(&ra, &rb, get)
}

/// Mean `p` at each update-order position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderPoint {
    pub position: usize,
    pub mean_p: f64,
    pub method: Method,
}

/// Mean `p` of the first tenth of positions over the last tenth.
pub fn decile_ratio(profile: &[OrderPoint], method: Method) -> Option<f64> {
    let mut p: Vec<&OrderPoint> = profile.iter().filter(|o| o.method == method).collect();
    p.sort_by_key(|o| o.position);
    let d = p.len() / 10;
    if d == 0 {
        return None;
    }
    let head = p[..d].iter().map(|o| o.mean_p).sum::<f64>() / d as f64;
    let tail = p[p.len() - d..].iter().map(|o| o.mean_p).sum::<f64>() / d as f64;
    (tail > 0.0).then(|| head / tail)
}

/// Average `p` by update position under a random coordinate order. Each
/// replicate draws fresh data and a fresh order; the all-at-once fit is read
/// off in the same order.
pub fn order_profile(spec: &SimSpec, replicates: usize, seed: u64) -> Result<Vec<OrderPoint>> {
    let m = spec.m_total;
    let per_rep: Vec<Result<(Vec<f64>, Vec<f64>)>> = (0..replicates)
        .into_par_iter()
        .map(|rep| {
            let s = replicate_seed(seed, usize::MAX, rep);
            let (data, _) = gen_dataset(&spec.with_seed(s))?;
            let mut order: Vec<usize> = (0..m).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(splitmix(s)));
            let oaat = fit(
                &data,
                &FitConfig { seed: s, update_order: UpdateOrder::Given(order.clone()), ..FitConfig::one_at_a_time() },
            )?;
            let aao = fit(&data, &FitConfig { seed: s, ..FitConfig::all_at_once() })?;
            Ok((
                order.iter().map(|&j| oaat.p_map[j]).collect(),
                order.iter().map(|&j| aao.p_map[j]).collect(),
            ))
        })
        .collect();
    let mut sum_oaat = vec![0.0; m];
    let mut sum_aao = vec![0.0; m];
    for r in per_rep {
        let (a, b) = r?;
        for k in 0..m {
            sum_oaat[k] += a[k];
            sum_aao[k] += b[k];
        }
    }
    let reps = replicates.max(1) as f64;
    let mut out = Vec::with_capacity(2 * m);
    for (method, sums) in [(Method::ProbeOaat, &sum_oaat), (Method::ProbeAao, &sum_aao)] {
        out.extend(sums.iter().enumerate().map(|(k, s)| OrderPoint { position: k + 1, mean_p: s / reps, method }));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub settings: Vec<SimSpec>,
    pub methods: Vec<Method>,
    pub replicates: usize,
    pub seed: u64,
    /// In (setting, replicate, method) order.
    pub records: Vec<RunRecord>,
    /// In (setting, method) order.
    pub cells: Vec<CellSummary>,
    /// Update-order profile on the first continuous setting, when both
    /// PROBE variants are requested.
    pub order_profile: Option<Vec<OrderPoint>>,
}

impl BenchReport {
    pub fn cell(&self, setting: usize, method: Method) -> Option<&CellSummary> {
        self.cells.iter().find(|c| c.setting == setting && c.method == method)
    }

    pub fn failures(&self) -> impl Iterator<Item = &RunRecord> {
        self.records.iter().filter(|r| !r.ok)
    }

    /// Writes `<stem>_records.csv`, `<stem>_cells.csv`, `<stem>.json` and,
    /// when present, `<stem>_order.csv` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut w = csv::Writer::from_path(dir.join(format!("{stem}_records.csv")))?;
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join(format!("{stem}_cells.csv")))?;
        w.write_record([
            "setting", "method", "n_ok", "n_failed", "n_converged", "rmse_signal_mean", "rmse_signal_min",
            "rmse_signal_max", "rmse_coef_mean", "rmse_coef_min", "rmse_coef_max", "mad_mean", "m1_hat_mean",
            "m1_hat_true_mean", "wall_time_s_mean", "rrmse_signal", "rrmse_coef",
        ])?;
        let f = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for c in &self.cells {
            let s = |st: Option<Stat>, pick: fn(Stat) -> f64| f(st.map(pick));
            w.write_record([
                c.setting.to_string(),
                c.method.to_string(),
                c.n_ok.to_string(),
                c.n_failed.to_string(),
                c.n_converged.to_string(),
                s(c.rmse_signal, |t| t.mean),
                s(c.rmse_signal, |t| t.min),
                s(c.rmse_signal, |t| t.max),
                s(c.rmse_coef, |t| t.mean),
                s(c.rmse_coef, |t| t.min),
                s(c.rmse_coef, |t| t.max),
                s(c.mad, |t| t.mean),
                s(c.m1_hat, |t| t.mean),
                s(c.m1_hat_true, |t| t.mean),
                s(c.wall_time_s, |t| t.mean),
                f(c.rrmse_signal),
                f(c.rrmse_coef),
            ])?;
        }
        w.flush()?;

        if let Some(profile) = &self.order_profile {
            let mut w = csv::Writer::from_path(dir.join(format!("{stem}_order.csv")))?;
            for p in profile {
                w.serialize(p)?;
            }
            w.flush()?;
        }

        let json = std::fs::File::create(dir.join(format!("{stem}.json")))?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(json), self)?;
        Ok(())
    }
}

fn summarize(setting: usize, method: Method, records: &[RunRecord], methods: &[Method]) -> CellSummary {
    let mine: Vec<&RunRecord> = records.iter().filter(|r| r.setting == setting && r.method == method).collect();
    let ok: Vec<&RunRecord> = mine.iter().copied().filter(|r| r.ok).collect();
    let collect = |get: fn(&RunRecord) -> Option<f64>| Stat::of(&ok.iter().filter_map(|r| get(r)).collect::<Vec<_>>());
    let (rrmse_signal, rrmse_coef) = if methods.contains(&Method::ProbeAao) {
        let base: Vec<&RunRecord> =
            records.iter().filter(|r| r.setting == setting && r.method == Method::ProbeAao).collect();
        (paired_rrmse(&base, &mine, |r| r.rmse_signal), paired_rrmse(&base, &mine, |r| r.rmse_coef))
    } else {
        (None, None)
    };
    CellSummary {
        setting,
        method,
        n_ok: ok.len(),
        n_failed: mine.len() - ok.len(),
        n_converged: ok.iter().filter(|r| r.converged == Some(true)).count(),
        rmse_signal: collect(|r| r.rmse_signal),
        rmse_coef: collect(|r| r.rmse_coef),
        mad: collect(|r| r.mad),
        m1_hat: collect(|r| r.m1_hat),
        m1_hat_true: collect(|r| r.m1_hat_true),
        wall_time_s: collect(|r| r.wall_time_s),
        rrmse_signal,
        rrmse_coef,
    }
}

/// Run every method on `replicates` fresh draws of every setting. A failed
/// data draw or fit becomes a record with `ok = false`; nothing is dropped.
pub fn run_benchmark(settings: &[SimSpec], methods: &[Method], replicates: usize, seed: u64) -> Result<BenchReport> {
    if methods.is_empty() || replicates == 0 {
        return Err(BenchError::Spec("need at least one method and one replicate".into()));
    }
    for s in settings {
        s.validate()?;
    }
    let jobs: Vec<(usize, usize)> =
        (0..settings.len()).flat_map(|s| (0..replicates).map(move |r| (s, r))).collect();
    let per_job: Vec<Vec<RunRecord>> = jobs
        .par_iter()
        .map(|&(s, rep)| {
            let rs = replicate_seed(seed, s, rep);
            match gen_dataset(&settings[s].with_seed(rs)) {
                Ok((data, truth)) => methods.iter().map(|&m| evaluate(s, rep, rs, m, &data, &truth)).collect(),
                Err(e) => methods
                    .iter()
                    .map(|&m| RunRecord {
                        setting: s,
                        replicate: rep,
                        method: m,
                        seed: rs,
                        ok: false,
                        error: Some(format!("simulation: {e}")),
                        converged: None,
                        rmse_signal: None,
                        rmse_coef: None,
                        mad: None,
                        m1_hat: None,
                        m1_hat_true: None,
                        wall_time_s: None,
                    })
                    .collect(),
            }
        })
        .collect();
    let records: Vec<RunRecord> = per_job.into_iter().flatten().collect();

    let cells = (0..settings.len())
        .flat_map(|s| methods.iter().map(move |&m| (s, m)))
        .map(|(s, m)| summarize(s, m, &records, methods))
        .collect();

    let order_profile = if methods.contains(&Method::ProbeAao) && methods.contains(&Method::ProbeOaat) {
        settings
            .iter()
            .find(|s| s.predictor_type == PredictorType::Continuous)
            .map(|s| order_profile(s, replicates, seed))
            .transpose()?
    } else {
        None
    };

    Ok(BenchReport {
        settings: settings.to_vec(),
        methods: methods.to_vec(),
        replicates,
        seed,
        records,
        cells,
        order_profile,
    })
}
