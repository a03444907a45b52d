use std::path::Path;

use faer::Mat;
use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::config::{ExperimentConfig, MetricSpace, SystemConfig};
use super::container::{read_snapshots, write_snapshots};
use super::generate::{rng, STREAM_FORECAST};
use super::report::{read_json, write_csv, write_json};
use super::train::{load_basis, load_operators, rom_integrator};
use super::{split_ranges, Layout};
use crate::error::{Error, Result};
use crate::metrics::{aggregate_vpt, nrmse, relative_l2, series_sigma, vpt, VptSummary};
use crate::opinf::simulate_rom;
use crate::reduction::{reconstruct, ReducedBasis};
use crate::snapshot::SnapshotMatrix;

/// One forecast as listed in `forecasts.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRecord {
    pub index: usize,
    pub run: usize,
    pub start_column: usize,
    pub start_time: f64,
    /// Samples actually produced (the full horizon unless the ROM failed).
    pub samples: usize,
    pub failure_time: Option<f64>,
    pub reason: Option<String>,
}

/// `n` distinct start columns in `test` such that `horizon_samples` columns
/// fit before the end of the window, drawn uniformly with a seeded RNG and
/// returned in draw order.
pub fn sample_forecast_starts(
    test: std::ops::Range<usize>,
    horizon_samples: usize,
    n: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    let room = (test.len() + 1).saturating_sub(horizon_samples);
    if room < n {
        return Err(Error::config(format!(
            "test window of {} samples holds only {room} starts for a {horizon_samples}-sample horizon, {n} requested",
            test.len()
        )));
    }
    let mut g = rng(seed, STREAM_FORECAST);
    Ok(sample(&mut g, room, n).into_iter().map(|i| test.start + i).collect())
}

fn starts_for_run(cfg: &ExperimentConfig, run: usize, k: usize) -> Result<Vec<usize>> {
    let split = split_ranges(k, &cfg.splits)?;
    let h = cfg.horizon_samples()?;
    match cfg.system {
        SystemConfig::Ks(_) => sample_forecast_starts(split.test, h, cfg.n_initial_conditions, cfg.run_seed(run)),
        _ => {
            if split.test.len() < h {
                return Err(Error::config(format!(
                    "test window of {} samples is shorter than the {h}-sample horizon",
                    split.test.len()
                )));
            }
            Ok(vec![split.test.start])
        }
    }
}

/// Integrates the ROM from every forecast start; failures are recorded,
/// not fatal. Writes `forecast_FFF.opnf` (latent) and `forecasts.json`.
pub fn cmd_forecast(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<ForecastRecord>> {
    cfg.validate()?;
    let layout = Layout::new(out)?;
    let horizon = (cfg.horizon_samples()? - 1) as f64 * cfg.system.dt();
    let mut records = Vec::new();
    for run in 0..cfg.runs() {
        let (ops, bound) = load_operators(&layout.operators(run))?;
        let latent = read_snapshots(&layout.latent(run))?.1;
        let spec = rom_integrator(cfg, bound);
        let starts = starts_for_run(cfg, run, latent.ncols())?;
        let base = records.len();
        let run_records: Vec<ForecastRecord> = starts
            .par_iter()
            .enumerate()
            .map(|(i, &start)| {
                let index = base + i;
                let q0 = latent.column(start);
                let (pred, failure) = match simulate_rom(&ops.model, q0, horizon, &spec) {
                    Ok(p) => (p.into_data(), None),
                    Err(Error::Integration(f)) => {
                        let f = *f;
                        (f.partial.into_data(), Some((f.last_valid_time, f.reason)))
                    }
                    Err(e) => (Mat::from_fn(q0.len(), 1, |i, _| q0[i]), Some((0.0, e.to_string()))),
                };
                let pred = SnapshotMatrix::new(pred, latent.time(start), latent.dt())?;
                let rec = ForecastRecord {
                    index,
                    run,
                    start_column: start,
                    start_time: latent.time(start),
                    samples: pred.ncols(),
                    failure_time: failure.as_ref().map(|f| f.0),
                    reason: failure.map(|f| f.1),
                };
                write_snapshots(
                    &layout.forecast(index),
                    "forecast",
                    cfg.system.tag(),
                    &pred,
                    serde_json::to_value(&rec)?,
                )?;
                Ok(rec)
            })
            .collect::<Result<_>>()?;
        records.extend(run_records);
    }
    write_json(&layout.forecasts(), &json!({ "forecasts": records }))?;
    Ok(records)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastOutcome {
    pub index: usize,
    pub run: usize,
    pub start_time: f64,
    pub vpt: f64,
    /// Relative L2 error in the metric space over the produced samples.
    pub relative_l2: f64,
    pub failure_time: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub system: String,
    pub metric_space: MetricSpace,
    pub vpt_epsilon: f64,
    pub lyapunov_exponent: f64,
    pub forecast_horizon: f64,
    pub summary: VptSummary,
    /// Index of the forecast with the largest VPT (first one on ties).
    pub best_forecast: usize,
    pub forecasts: Vec<ForecastOutcome>,
}

struct RunTruth {
    /// Reference in the metric space, all columns.
    truth: SnapshotMatrix,
    sigma: Vec<f64>,
    basis: Option<ReducedBasis>,
}

fn run_truth(cfg: &ExperimentConfig, layout: &Layout, run: usize) -> Result<RunTruth> {
    let basis = load_basis(&layout.basis(run))?;
    let identity = basis.singular_values.is_empty() && !basis.centered;
    let truth = match (cfg.metric_space, identity) {
        (MetricSpace::Latent, _) | (MetricSpace::Full, true) => {
            read_snapshots(&layout.latent(run))?.1
        }
        (MetricSpace::Full, false) => read_snapshots(&layout.snapshots(run))?.1,
    };
    let split = split_ranges(truth.ncols(), &cfg.splits)?;
    let test = truth.data().subcols(split.test.start, split.test.len()).to_owned();
    let sigma = series_sigma(&test);
    let basis = (cfg.metric_space == MetricSpace::Full && !identity).then_some(basis);
    Ok(RunTruth { truth, sigma, basis })
}

/// NRMSE series, VPT per forecast, aggregate statistics and the mean ± σ
/// envelope. σ per series comes from the test window of the run.
pub fn cmd_evaluate(cfg: &ExperimentConfig, out: &Path) -> Result<EvaluationReport> {
    cfg.validate()?;
    let layout = Layout::new(out)?;
    #[derive(Deserialize)]
    struct Index {
        forecasts: Vec<ForecastRecord>,
    }
    let index: Index = read_json(&layout.forecasts())?;
    if index.forecasts.is_empty() {
        return Err(Error::config("no forecasts to evaluate"));
    }
    let h = cfg.horizon_samples()?;
    let dt = cfg.system.dt();
    let times: Vec<f64> = (0..h).map(|j| j as f64 * dt).collect();
    let lam = cfg.lyapunov_exponent;

    let mut series: Vec<Vec<f64>> = Vec::with_capacity(index.forecasts.len());
    let mut outcomes = Vec::with_capacity(index.forecasts.len());
    let mut current: Option<(usize, RunTruth)> = None;
    for rec in &index.forecasts {
        if current.as_ref().is_none_or(|(r, _)| *r != rec.run) {
            current = Some((rec.run, run_truth(cfg, &layout, rec.run)?));
        }
        let rt = &current.as_ref().unwrap().1;
        let pred = read_snapshots(&layout.forecast(rec.index))?.1;
        if (pred.dt() - dt).abs() > 1e-12 * dt || (pred.t0() - rt.truth.time(rec.start_column)).abs() > 1e-9 * dt.max(1.0) {
            return Err(Error::config(format!(
                "forecast {} is not on the reference time grid",
                rec.index
            )));
        }
        let pred = match &rt.basis {
            Some(b) => reconstruct(b, &pred)?,
            None => pred,
        };
        let got = pred.ncols().min(h);
        if rec.start_column + h > rt.truth.ncols() {
            return Err(Error::config(format!("forecast {} runs past the reference record", rec.index)));
        }
        let truth = rt.truth.data().subcols(rec.start_column, got).to_owned();
        let pred_m = pred.data().subcols(0, got).to_owned();
        let mut s = nrmse(&truth, &pred_m, &rt.sigma, &times[..got], lam)?;
        s.extend_diverged(&times[got..]);
        outcomes.push(ForecastOutcome {
            index: rec.index,
            run: rec.run,
            start_time: rec.start_time,
            vpt: vpt(&s, cfg.vpt_epsilon),
            relative_l2: relative_l2(&truth, &pred_m)?,
            failure_time: rec.failure_time,
        });
        series.push(s.values);
    }

    let vpts: Vec<f64> = outcomes.iter().map(|o| o.vpt).collect();
    let summary = aggregate_vpt(&vpts)?;
    let best_forecast = outcomes
        .iter()
        .fold(None::<&ForecastOutcome>, |b, o| match b {
            Some(b) if b.vpt >= o.vpt => Some(b),
            _ => Some(o),
        })
        .map(|o| o.index)
        .unwrap_or(0);

    let mut header = vec!["time".to_string(), "lyapunov_time".to_string()];
    header.extend(outcomes.iter().map(|o| format!("forecast_{:03}", o.index)));
    let rows: Vec<Vec<f64>> = (0..h)
        .map(|j| {
            let mut row = vec![times[j], times[j] * lam];
            row.extend(series.iter().map(|s| s[j]));
            row
        })
        .collect();
    write_csv(&layout.nrmse(), &header, &rows)?;

    let envelope: Vec<Vec<f64>> = (0..h)
        .map(|j| {
            let vals: Vec<f64> = series.iter().map(|s| s[j]).filter(|v| v.is_finite()).collect();
            let n = vals.len() as f64;
            let (mean, std) = if vals.is_empty() {
                (f64::NAN, f64::NAN)
            } else {
                let mean = vals.iter().sum::<f64>() / n;
                (mean, (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt())
            };
            vec![times[j], times[j] * lam, mean, std, mean - std, mean + std, n]
        })
        .collect();
    write_csv(
        &layout.envelope(),
        &["time", "lyapunov_time", "mean", "std", "lower", "upper", "n_finite"].map(String::from),
        &envelope,
    )?;

    let vrows: Vec<Vec<f64>> = outcomes
        .iter()
        .map(|o| {
            vec![
                o.index as f64,
                o.run as f64,
                o.start_time,
                o.vpt,
                o.relative_l2,
                o.failure_time.unwrap_or(f64::NAN),
            ]
        })
        .collect();
    write_csv(
        &layout.vpt(),
        &["forecast", "run", "start_time", "vpt", "relative_l2", "failure_time"].map(String::from),
        &vrows,
    )?;

    let report = EvaluationReport {
        system: cfg.system.tag().to_string(),
        metric_space: cfg.metric_space,
        vpt_epsilon: cfg.vpt_epsilon,
        lyapunov_exponent: lam,
        forecast_horizon: cfg.forecast_horizon,
        summary,
        best_forecast,
        forecasts: outcomes,
    };
    write_json(&layout.report(), &report)?;
    Ok(report)
}
