use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use ndarray::Array1;
use probe_bench::{cv_prediction_error, fit_method, gen_raw, run_benchmark, Method, PredictorType, SimSpec};
use probe_core::{fit as fit_model, predict_with, prepare_dataset, AaoInit, Centering, FitConfig, UpdateOrder, Variant};
use serde::{Deserialize, Serialize};

use crate::io::{read_table, write_columns, write_json};
use crate::{BenchArgs, CvArgs, FitArgs, OrderArg, PredictArgs, PredictorArg, SimArgs, Status, VariantArg};

/// The JSON document written by `fit` and read back by `predict`.
#[derive(Debug, Serialize, Deserialize)]
pub struct FitDoc {
    pub variant: String,
    pub beta_bar: Vec<f64>,
    pub p_map: Vec<f64>,
    pub beta_map: Vec<f64>,
    pub sigma2_map: f64,
    pub ig_a: f64,
    pub ig_b: f64,
    pub iterations: usize,
    pub converged: bool,
    pub trace_path: String,
    pub alpha: f64,
    pub s2: Vec<f64>,
    pub null_model: bool,
    pub restarts: usize,
    pub y_mean: f64,
    pub x_means: Vec<f64>,
    pub predictors: Vec<String>,
}

fn variant_name(v: Variant) -> &'static str {
    match v {
        Variant::AllAtOnce => "aao",
        Variant::OneAtATime => "oaat",
    }
}

fn fit_config(a: &FitArgs, seed: u64) -> Result<FitConfig> {
    let variant = match a.variant {
        VariantArg::Aao => Variant::AllAtOnce,
        VariantArg::Oaat => Variant::OneAtATime,
    };
    let mut cfg = FitConfig { seed, ..FitConfig::for_variant(variant) };
    if let Some(v) = a.max_iter {
        cfg.max_iter = v;
    }
    if let Some(v) = a.epsilon {
        cfg.epsilon = v;
    }
    if let Some(v) = a.lr_exponent {
        cfg.lr_exponent = v;
    }
    if let Some(v) = a.storey_lambda {
        cfg.storey_lambda = v;
    }
    if let Some(v) = a.bandwidth_multiplier {
        cfg.bandwidth_multiplier = v;
    }
    if let Some(v) = a.folds {
        cfg.cv_folds = v;
    }
    if let Some(o) = a.order {
        cfg.update_order = match o {
            OrderArg::Lasso => UpdateOrder::Lasso,
            OrderArg::Random => UpdateOrder::Random,
        };
    }
    if let Some(b) = a.init_b {
        cfg.aao_init = AaoInit::Constant(b);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn default_trace_path(output: &Path) -> PathBuf {
    let mut name = output.file_stem().unwrap_or_default().to_os_string();
    name.push(".trace.csv");
    output.with_file_name(name)
}

pub fn fit(a: &FitArgs, seed: u64) -> Result<Status> {
    let cfg = fit_config(a, seed)?;
    let table = read_table(&a.input)?;
    let (y, x) = table.split_response(&a.response, &a.input)?;
    let data = prepare_dataset(y.view(), x.view()).with_context(|| format!("{}", a.input.display()))?;
    let r = fit_model(&data, &cfg)?;

    let trace_path = a.trace.clone().unwrap_or_else(|| default_trace_path(&a.output));
    let col = |f: fn(&probe_core::ConvergenceRecord<f64>) -> f64| Array1::from_iter(r.trace.iter().map(f));
    let (t, cc, s2, sp, q) = (
        col(|r| r.t as f64),
        col(|r| r.cc),
        col(|r| r.sigma2),
        col(|r| r.sum_p),
        col(|r| r.q),
    );
    write_columns(
        &trace_path,
        &[("t", t.view()), ("cc", cc.view()), ("sigma2", s2.view()), ("sum_p", sp.view()), ("q", q.view())],
    )?;

    let predictors = table.headers.iter().filter(|h| **h != a.response).cloned().collect();
    let doc = FitDoc {
        variant: variant_name(r.variant).into(),
        beta_bar: r.beta_bar.to_vec(),
        p_map: r.p_map.to_vec(),
        beta_map: r.beta_map.to_vec(),
        sigma2_map: r.sigma2_map,
        ig_a: r.ig_a,
        ig_b: r.ig_b,
        iterations: r.iterations,
        converged: r.converged,
        trace_path: trace_path.display().to_string(),
        alpha: r.alpha,
        s2: r.s2.to_vec(),
        null_model: r.null_model,
        restarts: r.restarts,
        y_mean: r.centering.y_mean,
        x_means: r.centering.x_means.to_vec(),
        predictors,
    };
    write_json(&a.output, &doc)?;
    eprintln!(
        "{}: {} iterations, converged = {}, sum p = {:.3}",
        doc.variant,
        r.iterations,
        r.converged,
        r.p_map.sum()
    );
    Ok(if r.converged { Status::Done } else { Status::NotConverged })
}

pub fn predict(a: &PredictArgs) -> Result<Status> {
    let text = std::fs::read_to_string(&a.fit).with_context(|| format!("cannot read {}", a.fit.display()))?;
    let doc: FitDoc = serde_json::from_str(&text).with_context(|| format!("{}: not a fit document", a.fit.display()))?;
    let x = read_table(&a.input)?.predictors(&a.response);
    let centering = Centering { y_mean: doc.y_mean, x_means: Array1::from(doc.x_means) };
    let beta_bar = Array1::from(doc.beta_bar);
    let yhat = predict_with(&centering, beta_bar.view(), x.view())?;
    write_columns(&a.output, &[("prediction", yhat.view())])?;
    Ok(Status::Done)
}

fn predictor_type(p: PredictorArg) -> PredictorType {
    match p {
        PredictorArg::Continuous => PredictorType::Continuous,
        PredictorArg::Binary => PredictorType::Binary,
    }
}

pub fn simulate(a: &SimArgs, seed: u64) -> Result<Status> {
    let spec = SimSpec {
        n: a.n,
        s0_gamma: a.s0_gamma,
        s0_x: a.s0_x,
        ..SimSpec::new(a.m, a.m1, a.eta, a.snr, predictor_type(a.predictors))
    }
    .with_seed(seed);
    let (y, x, truth) = gen_raw(&spec)?;
    std::fs::create_dir_all(&a.output_dir).with_context(|| format!("cannot create {}", a.output_dir.display()))?;

    let names: Vec<String> = (1..=a.m).map(|j| format!("x{j}")).collect();
    let mut columns = vec![("y", y.view())];
    columns.extend(names.iter().map(|n| n.as_str()).zip(x.columns()));
    write_columns(&a.output_dir.join("data.csv"), &columns)?;

    let index = Array1::from_iter((1..=a.m).map(|j| j as f64));
    let gamma = Array1::from_iter(truth.gamma.iter().map(|&g| if g { 1.0 } else { 0.0 }));
    let sigma2 = Array1::from_elem(a.m, truth.sigma2);
    write_columns(
        &a.output_dir.join("truth.csv"),
        &[("m", index.view()), ("gamma", gamma.view()), ("beta", truth.beta.view()), ("sigma2", sigma2.view())],
    )?;
    Ok(Status::Done)
}

fn parse_methods(names: &[String]) -> Result<Vec<Method>> {
    names.iter().map(|s| s.trim().parse::<Method>().map_err(|e| anyhow!(e))).collect()
}

pub fn bench(a: &BenchArgs, seed: u64) -> Result<Status> {
    let methods = parse_methods(&a.methods)?;
    let mut settings = Vec::new();
    for &m in &a.m {
        for &pi in &a.pi {
            for &eta in &a.eta {
                for &snr in &a.snr {
                    for &p in &a.predictors {
                        let base = SimSpec::new(m, 1, eta, snr, predictor_type(p));
                        settings.push(SimSpec { pi_frac: pi, n: a.n, ..base });
                    }
                }
            }
        }
    }
    let report = run_benchmark(&settings, &methods, a.replicates, seed)?;
    report.write(&a.output_dir, &a.stem)?;
    let failed: Vec<_> = report.failures().collect();
    for r in &failed {
        eprintln!(
            "failed: setting {}, replicate {}, {}: {}",
            r.setting,
            r.replicate,
            r.method,
            r.error.as_deref().unwrap_or("")
        );
    }
    if !failed.is_empty() {
        bail!("{} of {} runs failed (reported in the output)", failed.len(), report.records.len());
    }
    Ok(Status::Done)
}

#[derive(Serialize)]
struct CvDoc<'a> {
    method: String,
    folds: usize,
    seed: u64,
    mspe: f64,
    mad: f64,
    per_fold: &'a [probe_bench::metrics::FoldError],
}

pub fn cv(a: &CvArgs, seed: u64) -> Result<Status> {
    let method: Method = a.method.trim().parse().map_err(|e: String| anyhow!(e))?;
    let table = read_table(&a.input)?;
    let (y, x) = table.split_response(&a.response, &a.input)?;
    let data = prepare_dataset(y.view(), x.view())?;
    let report = cv_prediction_error(&data, a.folds, seed, |d| Ok(fit_method(method, d, seed)?.coef))?;
    write_json(
        &a.output,
        &CvDoc {
            method: method.to_string(),
            folds: a.folds,
            seed,
            mspe: report.mspe,
            mad: report.mad,
            per_fold: &report.folds,
        },
    )?;
    Ok(Status::Done)
}
