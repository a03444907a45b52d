use std::path::Path;

use faer::Mat;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::config::{whole_steps, ExperimentConfig, SystemConfig};
use super::container::{read_snapshots, write_snapshots};
use super::forecast::{EvaluationReport, ForecastRecord};
use super::report::{read_json, write_csv, write_json};
use super::train::{load_basis, load_operators, rom_integrator};
use super::Layout;
use crate::error::{Error, Result};
use crate::metrics::relative_l2;
use crate::opinf::simulate_rom;
use crate::reduction::{reconstruct, ReducedBasis};
use crate::snapshot::SnapshotMatrix;
use crate::spectral::{KsConfig, KsSolver};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartReport {
    pub forecast: usize,
    pub forecast_start_time: f64,
    /// Pick time after the forecast start, seconds.
    pub t_pick: f64,
    pub duration: f64,
    /// Reference solver restarted from the stored truth at the pick time,
    /// against the stored continuation.
    pub truth_restart_relative_l2: f64,
    pub truth_restart_samples: usize,
    /// Reference solver restarted from the reconstructed ROM state, against
    /// the ROM's own continuation.
    pub opinf_vs_restart_relative_l2: f64,
    pub max_abs_error: f64,
    pub mean_abs_error: f64,
    pub restart_failure: Option<String>,
    pub rom_failure: Option<String>,
}

/// Runs the reference KS solver from `field` for `steps` steps. A blow-up
/// ends the trajectory early and is returned alongside the samples so far.
pub fn ks_continuation(cfg: &KsConfig, field: &[f64], steps: usize) -> Result<(SnapshotMatrix, Option<String>)> {
    let mut solver = KsSolver::new(cfg, field)?;
    let mut cols = vec![solver.field()];
    let mut failure = None;
    for _ in 0..steps {
        if let Err(e) = solver.step() {
            failure = Some(e.to_string());
            break;
        }
        cols.push(solver.field());
    }
    Ok((SnapshotMatrix::from_columns(&cols, 0.0, cfg.dt)?, failure))
}

fn abs_diff(a: &Mat<f64>, b: &Mat<f64>) -> Mat<f64> {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| (a[(i, j)] - b[(i, j)]).abs())
}

/// Restart consistency check for a KS forecast.
///
/// Picks the ROM state `t_pick` seconds into the forecast, reconstructs it,
/// restarts the reference solver from it for `duration` seconds and compares
/// with the ROM continuation. The same restart from the stored truth state
/// measures the solver's own reproducibility.
pub fn cmd_restart_check(cfg: &ExperimentConfig, out: &Path) -> Result<RestartReport> {
    cfg.validate()?;
    let SystemConfig::Ks(ks) = &cfg.system else {
        return Err(Error::config("restart-check needs the KS system"));
    };
    let layout = Layout::new(out)?;
    let index = match cfg.restart.forecast {
        Some(i) => i,
        None => match read_json::<EvaluationReport>(&layout.report()) {
            Ok(r) => r.best_forecast,
            Err(_) => 0,
        },
    };
    let (pred_meta, pred) = read_snapshots(&layout.forecast(index))?;
    let rec: ForecastRecord = serde_json::from_value(pred_meta.extra)?;
    let basis: ReducedBasis = load_basis(&layout.basis(rec.run))?;
    let (ops, bound) = load_operators(&layout.operators(rec.run))?;
    let snaps = read_snapshots(&layout.snapshots(rec.run))?.1;

    let dt = ks.dt;
    let t_pick = cfg.restart.t_pick_lyapunov / cfg.lyapunov_exponent;
    let p = (t_pick / dt).round() as usize;
    if p >= pred.ncols() {
        return Err(Error::config(format!(
            "pick time {t_pick} s is beyond the {} produced samples of forecast {index}",
            pred.ncols()
        )));
    }
    let steps = whole_steps(cfg.restart.duration, dt)?;
    let duration = steps as f64 * dt;

    // ROM continuation and the restarted reference from the same state
    let q_pick = pred.column(p).to_vec();
    let (rom_cont, rom_failure) = match simulate_rom(&ops.model, &q_pick, duration, &rom_integrator(cfg, bound)) {
        Ok(s) => (s, None),
        Err(Error::Integration(f)) => {
            let f = *f;
            (f.partial, Some(f.reason))
        }
        Err(e) => return Err(e),
    };
    let rom_full = reconstruct(&basis, &rom_cont)?;
    let field = rom_full.column(0).to_vec();
    let (restarted, restart_failure) = ks_continuation(ks, &field, steps)?;
    let n_cmp = restarted.ncols().min(rom_full.ncols());
    let a = rom_full.data().subcols(0, n_cmp).to_owned();
    let b = restarted.data().subcols(0, n_cmp).to_owned();
    let err = abs_diff(&a, &b);
    let n_err = (err.nrows() * err.ncols()).max(1) as f64;
    let (mut max_abs, mut sum_abs) = (0.0f64, 0.0);
    for j in 0..err.ncols() {
        for v in err.col_as_slice(j) {
            max_abs = max_abs.max(*v);
            sum_abs += v;
        }
    }

    // truth restart: same pick time on the stored reference trajectory
    let c = rec.start_column + p;
    let avail = (snaps.ncols() - c).min(steps + 1);
    let (truth_restart, _) = ks_continuation(ks, snaps.column(c), avail - 1)?;
    let m = truth_restart.ncols().min(avail);
    let truth_rel = relative_l2(
        &snaps.data().subcols(c, m).to_owned(),
        &truth_restart.data().subcols(0, m).to_owned(),
    )?;

    let t0 = rec.start_time + p as f64 * dt;
    let tag = cfg.system.tag();
    for (which, data) in [("opinf", a.clone()), ("reference", b.clone()), ("error", err)] {
        write_snapshots(
            &layout.restart_field(which),
            "restart",
            tag,
            &SnapshotMatrix::new(data, t0, dt)?,
            json!({ "forecast": index, "field": which }),
        )?;
    }
    let g = cfg.restart.gridpoints;
    let n = ks.n_grid;
    let points: Vec<usize> = (0..g).map(|i| i * n / g).collect();
    let xs = ks.grid();
    let mut header = vec!["time".to_string()];
    for &i in &points {
        header.push(format!("x{:.4}_opinf", xs[i]));
        header.push(format!("x{:.4}_restarted", xs[i]));
    }
    let rows: Vec<Vec<f64>> = (0..n_cmp)
        .map(|j| {
            let mut row = vec![t0 + j as f64 * dt];
            for &i in &points {
                row.push(a[(i, j)]);
                row.push(b[(i, j)]);
            }
            row
        })
        .collect();
    write_csv(&layout.restart_gridpoints(), &header, &rows)?;

    let report = RestartReport {
        forecast: index,
        forecast_start_time: rec.start_time,
        t_pick: p as f64 * dt,
        duration,
        truth_restart_relative_l2: truth_rel,
        truth_restart_samples: m,
        opinf_vs_restart_relative_l2: relative_l2(&b, &a).unwrap_or(f64::NAN),
        max_abs_error: max_abs,
        mean_abs_error: sum_abs / n_err,
        restart_failure,
        rom_failure,
    };
    write_json(&layout.restart_report(), &report)?;
    Ok(report)
}
