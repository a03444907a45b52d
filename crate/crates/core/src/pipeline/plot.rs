use std::path::{Path, PathBuf};

use faer::Mat;

use super::config::{ExperimentConfig, SystemConfig};
use super::container::read_snapshots;
use super::forecast::EvaluationReport;
use super::report::{column, read_csv, read_json};
use super::svg::{bar_chart, Band, Heatmap, Line, LinePlot, PALETTE};
use super::train::load_basis;
use super::{split_ranges, Layout};
use crate::error::{Error, Result};
use crate::metrics::{nrse_field, series_sigma};
use crate::reduction::reconstruct;

fn save(path: PathBuf, svg: String, written: &mut Vec<PathBuf>) -> Result<()> {
    std::fs::write(&path, svg).map_err(|e| Error::io(&path, e))?;
    written.push(path);
    Ok(())
}

/// Renders every figure whose report files exist. The evaluation report is
/// required; restart and explained-variance figures are drawn when present.
pub fn cmd_plot(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let layout = Layout::new(out)?;
    let report: EvaluationReport = read_json(&layout.report())
        .map_err(|e| Error::config(format!("plot needs an evaluation report ({e})")))?;
    let mut written = Vec::new();
    let eps_label = format!("ε = {}", report.vpt_epsilon);

    let (h, rows) = read_csv(&layout.envelope())?;
    let lt = column(&h, &rows, "lyapunov_time")?;
    let mean = column(&h, &rows, "mean")?;
    let plot = LinePlot {
        title: format!("NRMSE over {} forecasts", report.forecasts.len()),
        x_label: "t Λ₁".into(),
        y_label: "NRMSE".into(),
        lines: vec![Line {
            label: "mean".into(),
            xs: lt.clone(),
            ys: mean,
            color: PALETTE[0].into(),
            dashed: false,
        }],
        bands: vec![Band {
            xs: lt,
            lower: column(&h, &rows, "lower")?,
            upper: column(&h, &rows, "upper")?,
            color: PALETTE[0].into(),
        }],
        thresholds: vec![(report.vpt_epsilon, eps_label.clone())],
        y_range: None,
    };
    save(layout.figure("nrmse_envelope"), plot.render()?, &mut written)?;

    let vpts: Vec<f64> = report.forecasts.iter().map(|f| f.vpt).collect();
    let s = report.summary;
    save(
        layout.figure("vpt"),
        bar_chart(
            &format!("VPT: min {:.2}, max {:.2}, mean {:.2}, σ {:.2}", s.min, s.max, s.mean, s.std),
            "forecast",
            "VPT (Lyapunov times)",
            &vpts,
            Some((s.mean, "mean".into())),
        )?,
        &mut written,
    )?;

    let ev = layout.explained_variance(0);
    if ev.exists() {
        let (h, rows) = read_csv(&ev)?;
        let plot = LinePlot {
            title: "Cumulative explained variance".into(),
            x_label: "modes".into(),
            y_label: "ratio".into(),
            lines: vec![Line {
                label: "PCA".into(),
                xs: column(&h, &rows, "mode")?,
                ys: column(&h, &rows, "cumulative_explained_variance")?,
                color: PALETTE[0].into(),
                dashed: false,
            }],
            ..Default::default()
        };
        save(layout.figure("explained_variance"), plot.render()?, &mut written)?;
    }

    best_forecast_figures(cfg, &layout, &report, &mut written)?;

    let rg = layout.restart_gridpoints();
    if rg.exists() {
        let (h, rows) = read_csv(&rg)?;
        let t = column(&h, &rows, "time")?;
        let mut lines = Vec::new();
        for (k, name) in h.iter().skip(1).enumerate() {
            lines.push(Line {
                label: name.clone(),
                xs: t.clone(),
                ys: rows.iter().map(|r| r[k + 1]).collect(),
                color: PALETTE[(k / 2) % PALETTE.len()].into(),
                dashed: k % 2 == 1,
            });
        }
        let plot = LinePlot {
            title: "Restart: ROM (solid) vs restarted reference (dashed)".into(),
            x_label: "t".into(),
            y_label: "u".into(),
            lines,
            ..Default::default()
        };
        save(layout.figure("restart_gridpoints"), plot.render()?, &mut written)?;
        let err = read_snapshots(&layout.restart_field("error"))?.1;
        let x_len = match &cfg.system {
            SystemConfig::Ks(k) => k.domain_length,
            _ => err.nrows() as f64,
        };
        let hm = Heatmap {
            title: "Restart: |ROM - restarted reference|".into(),
            x_label: "t".into(),
            y_label: "x".into(),
            colorbar_label: "abs error".into(),
            x_range: (err.t0(), err.t_final()),
            y_range: (0.0, x_len),
            values: err.data(),
        };
        save(layout.figure("restart_error"), hm.render()?, &mut written)?;
    }
    Ok(written)
}

/// Truth, prediction and NRSE contours plus the leading latent modes for the
/// forecast with the largest VPT.
fn best_forecast_figures(
    cfg: &ExperimentConfig,
    layout: &Layout,
    report: &EvaluationReport,
    written: &mut Vec<PathBuf>,
) -> Result<()> {
    let best = report
        .forecasts
        .iter()
        .find(|f| f.index == report.best_forecast)
        .ok_or_else(|| Error::config("best forecast missing from the report"))?;
    let pred = read_snapshots(&layout.forecast(best.index))?.1;
    let latent = read_snapshots(&layout.latent(best.run))?.1;
    let snaps = read_snapshots(&layout.snapshots(best.run))?.1;
    let basis = load_basis(&layout.basis(best.run))?;
    let start = ((pred.t0() - latent.t0()) / latent.dt()).round() as usize;
    let len = pred.ncols();
    let lam = cfg.lyapunov_exponent;

    let modes = latent.nrows().min(3);
    let t: Vec<f64> = (0..len).map(|j| j as f64 * pred.dt() * lam).collect();
    let mut lines = Vec::new();
    for i in 0..modes {
        lines.push(Line {
            label: format!("mode {} truth", i + 1),
            xs: t.clone(),
            ys: (0..len).map(|j| latent.data()[(i, start + j)]).collect(),
            color: PALETTE[i].into(),
            dashed: false,
        });
        lines.push(Line {
            label: format!("mode {} ROM", i + 1),
            xs: t.clone(),
            ys: (0..len).map(|j| pred.data()[(i, j)]).collect(),
            color: PALETTE[i].into(),
            dashed: true,
        });
    }
    let plot = LinePlot {
        title: format!("Leading latent modes, forecast {}", best.index),
        x_label: "t Λ₁".into(),
        y_label: "q".into(),
        lines,
        ..Default::default()
    };
    save(layout.figure("modes"), plot.render()?, written)?;

    let full_pred = reconstruct(&basis, &pred)?;
    let truth = snaps.data().subcols(start, len).to_owned();
    let split = split_ranges(snaps.ncols(), &cfg.splits)?;
    let sigma = series_sigma(&snaps.data().subcols(split.test.start, split.test.len()).to_owned());
    let nrse = nrse_field(&truth, full_pred.data(), &sigma)?;
    let y_len = match &cfg.system {
        SystemConfig::Ks(k) => k.domain_length,
        _ => snaps.nrows() as f64,
    };
    let x_range = (0.0, (len.max(2) - 1) as f64 * pred.dt() * lam);
    let fields: [(&str, &str, &str, Mat<f64>); 3] = [
        ("contour_truth", "Reference", "state", truth),
        ("contour_prediction", "ROM forecast", "state", full_pred.into_data()),
        ("contour_nrse", "NRSE", "NRSE", nrse),
    ];
    for (name, title, bar, values) in fields {
        let hm = Heatmap {
            title: format!("{title}, forecast {}", best.index),
            x_label: "t Λ₁".into(),
            y_label: "x".into(),
            colorbar_label: bar.into(),
            x_range,
            y_range: (0.0, y_len),
            values: &values,
        };
        save(layout.figure(name), hm.render()?, written)?;
    }
    Ok(())
}
