use std::path::Path;

use faer::Mat;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::config::{whole_steps, DerivativeSource, ExperimentConfig, ReductionConfig, SolverConfig, SystemConfig};
use super::container::{payload_hash, read_snapshots, write_snapshots, ContainerMeta, SnapshotContainer};
use super::report::{write_csv, write_json};
use super::{split_ranges, Layout};
use crate::dynamics::{lorenz63_rhs, lorenz96_rhs_into};
use crate::error::{Error, Result};
use crate::integrate::IntegratorSpec;
use crate::opinf::{
    estimate_derivatives, exact_derivatives, fit_pseudoinverse, gram_accumulate, grid_search_bounded, pack_operators,
    unpack_operators, DataMatrixDims, GridScore, RegularizerSpec, RomOperators, SolverPath, ValidationSet,
};
use crate::reduction::{explained_variance, fit_pca, project, projection_error, RankTarget, ReducedBasis};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReduceReport {
    pub run: usize,
    pub n: usize,
    pub r: usize,
    pub centered: bool,
    /// Cumulative explained variance at `r` (1 without reduction).
    pub explained_variance: f64,
    pub fit_columns: [usize; 2],
    /// Relative Frobenius projection error on the columns after the fit window.
    pub holdout_projection_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub run: usize,
    pub r: usize,
    pub d: usize,
    pub solver: SolverPath,
    pub regularizer: Option<RegularizerSpec>,
    pub residual: f64,
    pub train_columns: [usize; 2],
    pub training_hash: String,
    pub candidates: usize,
    pub failed_candidates: usize,
}

/// Basis file: `n x (r + 1)` payload, the last column is the mean.
pub fn load_basis(path: &Path) -> Result<ReducedBasis> {
    let c = SnapshotContainer::read(path)?;
    let [n, w] = c.meta.shape;
    if w == 0 {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: "basis payload has no mean column".into(),
        });
    }
    let r = w - 1;
    let at = |i: usize, j: usize| c.payload[i * w + j];
    let singular_values: Vec<f64> = serde_json::from_value(c.meta.extra["singular_values"].clone()).unwrap_or_default();
    Ok(ReducedBasis {
        basis: Mat::from_fn(n, r, at),
        mean: (0..n).map(|i| at(i, r)).collect(),
        singular_values,
        centered: c.meta.extra["centered"].as_bool().unwrap_or(false),
    })
}

fn basis_container(basis: &ReducedBasis, system: &str, extra: serde_json::Value) -> Result<SnapshotContainer> {
    let (n, r) = (basis.n(), basis.r());
    let mut payload = Vec::with_capacity(n * (r + 1));
    for i in 0..n {
        payload.extend((0..r).map(|j| basis.basis[(i, j)]));
        payload.push(basis.mean[i]);
    }
    Ok(SnapshotContainer::new("basis", system, [n, r + 1], 0.0, 1.0, payload)?.with_extra(extra))
}

fn reduce_run(cfg: &ExperimentConfig, layout: &Layout, run: usize) -> Result<ReduceReport> {
    let (_, snaps) = read_snapshots(&layout.snapshots(run))?;
    let split = split_ranges(snaps.ncols(), &cfg.splits)?;
    let tag = cfg.system.tag();
    let (basis, latent, ev, holdout) = match cfg.reduction {
        ReductionConfig::None => (ReducedBasis::identity(snaps.nrows()), snaps.clone(), 1.0, 0.0),
        ReductionConfig::Pca { rank, energy, centered } => {
            let target = match (rank, energy) {
                (Some(r), _) => RankTarget::Fixed(r),
                (None, Some(t)) => RankTarget::Energy(t),
                _ => return Err(Error::config("PCA needs rank or energy")),
            };
            let fit = snaps.slice_columns(split.train.start, split.train.end)?;
            let basis = fit_pca(&fit, target, centered)?;
            drop(fit);
            let cum = explained_variance(&basis)?;
            let rows: Vec<Vec<f64>> = cum.iter().enumerate().map(|(i, c)| vec![(i + 1) as f64, *c]).collect();
            write_csv(
                &layout.explained_variance(run),
                &["mode".into(), "cumulative_explained_variance".into()],
                &rows,
            )?;
            let rest = snaps.slice_columns(split.train.end, snaps.ncols())?;
            let holdout = projection_error(&rest, &basis)?;
            let latent = project(&basis, &snaps)?;
            (basis.clone(), latent, cum[basis.r() - 1], holdout)
        }
    };
    let report = ReduceReport {
        run,
        n: basis.n(),
        r: basis.r(),
        centered: basis.centered,
        explained_variance: ev,
        fit_columns: [split.train.start, split.train.end],
        holdout_projection_error: holdout,
    };
    basis_container(
        &basis,
        tag,
        json!({
            "run": run,
            "centered": basis.centered,
            "singular_values": basis.singular_values,
        }),
    )?
    .write(&layout.basis(run))?;
    write_snapshots(&layout.latent(run), "latent", tag, &latent, json!({ "run": run, "r": basis.r() }))?;
    write_json(&layout.reduce_report(run), &report)?;
    Ok(report)
}

/// Fits the basis on the training window and writes basis, latent
/// trajectory, explained-variance table and holdout error per run.
pub fn cmd_reduce(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<ReduceReport>> {
    cfg.validate()?;
    let layout = Layout::new(out)?;
    // sequential: one KS record already takes a few hundred MB
    (0..cfg.runs()).map(|run| reduce_run(cfg, &layout, run)).collect()
}

fn max_abs(m: &Mat<f64>) -> f64 {
    (0..m.ncols())
        .flat_map(|j| m.col_as_slice(j).iter())
        .fold(0.0f64, |a, v| a.max(v.abs()))
}

/// ROM integrator: the configured method on the snapshot grid, with the
/// divergence bound scaled from the training data.
pub(crate) fn rom_integrator(cfg: &ExperimentConfig, training_max_abs: f64) -> IntegratorSpec {
    let mut spec = cfg.integrator;
    spec.dt_output = cfg.system.dt();
    spec.state_bound = (cfg.rom_state_bound_factor > 0.0 && training_max_abs > 0.0)
        .then(|| cfg.rom_state_bound_factor * training_max_abs);
    spec
}

fn train_run(cfg: &ExperimentConfig, layout: &Layout, run: usize) -> Result<TrainReport> {
    let (latent_c, latent) = read_snapshots(&layout.latent(run))?;
    let split = split_ranges(latent.ncols(), &cfg.splits)?;
    let train = latent.data().subcols(split.train.start, split.train.len()).to_owned();
    let training_hash = payload_hash(&latent.slice_columns(split.train.start, split.train.end)?.to_row_major());
    let rhat = match cfg.derivatives {
        DerivativeSource::FiniteDifference => estimate_derivatives(&train, latent.dt())?,
        DerivativeSource::Exact => match &cfg.system {
            SystemConfig::Lorenz96(s) => {
                let model = s.model();
                exact_derivatives(&train, |x, dx| lorenz96_rhs_into(x, &model, dx))
            }
            SystemConfig::Synthetic(s) => exact_derivatives(&train, |x, dx| {
                dx.copy_from_slice(&lorenz63_rhs(x, s.sigma, s.rho, s.beta).expect("three components"))
            }),
            SystemConfig::Ks(_) => return Err(Error::config("exact derivatives are not available for KS")),
        },
    };
    let bound = max_abs(&train);
    let (ops, table) = match &cfg.solver {
        SolverConfig::Pseudoinverse => (fit_pseudoinverse(&train, None, &rhat, cfg.memory_budget())?, Vec::new()),
        SolverConfig::Regularized {
            grid,
            validation_horizon,
        } => {
            let ne = gram_accumulate(&train, None, &rhat, cfg.gram_batch, cfg.memory_budget())?;
            drop(rhat);
            let h = whole_steps(validation_horizon.unwrap_or(cfg.forecast_horizon), latent.dt())? + 1;
            let h = h.min(split.validation.len());
            let validation = ValidationSet {
                reference: latent.data().subcols(split.validation.start, h).to_owned(),
                dt: latent.dt(),
            };
            let res = grid_search_bounded(&ne, &validation, grid, &rom_integrator(cfg, bound), cfg.memory_budget())?;
            (res.operators, res.table)
        }
    };
    if !table.is_empty() {
        write_grid_table(&layout.grid_scores(run), &table)?;
    }
    let dims = DataMatrixDims {
        r: ops.model.r(),
        m: ops.model.m(),
        k: split.train.len(),
    };
    let report = TrainReport {
        run,
        r: dims.r,
        d: dims.d(),
        solver: ops.solver,
        regularizer: ops.regularizer,
        residual: ops.residual,
        train_columns: [split.train.start, split.train.end],
        training_hash,
        candidates: table.len(),
        failed_candidates: table.iter().filter(|s| s.score.is_none()).count(),
    };
    operators_container(&ops, cfg.system.tag(), &latent_c, &report, bound)?.write(&layout.operators(run))?;
    write_json(&layout.train_report(run), &report)?;
    Ok(report)
}

fn write_grid_table(path: &Path, table: &[GridScore]) -> Result<()> {
    let rows: Vec<Vec<f64>> = table
        .iter()
        .map(|s| {
            vec![
                s.log10_lambda2,
                s.log10_lambda3,
                s.score.unwrap_or(f64::INFINITY),
                s.failure_time.unwrap_or(f64::NAN),
            ]
        })
        .collect();
    write_csv(
        path,
        &["log10_lambda2".into(), "log10_lambda3".into(), "mean_nrmse".into(), "failure_time".into()],
        &rows,
    )
}

/// Operators file: `O^T` (`d x r`) with dims, λ, solver path, residual and
/// the hash of the training window in the metadata.
fn operators_container(
    ops: &RomOperators,
    system: &str,
    latent: &ContainerMeta,
    report: &TrainReport,
    training_max_abs: f64,
) -> Result<SnapshotContainer> {
    let ot = pack_operators(&ops.model);
    let (d, r) = (ot.nrows(), ot.ncols());
    let mut payload = Vec::with_capacity(d * r);
    for i in 0..d {
        payload.extend((0..r).map(|j| ot[(i, j)]));
    }
    Ok(SnapshotContainer::new("operators", system, [d, r], latent.t0, latent.dt, payload)?.with_extra(json!({
        "run": report.run,
        "r": ops.model.r(),
        "m": ops.model.m(),
        "d": d,
        "solver": ops.solver,
        "regularizer": ops.regularizer,
        "residual": ops.residual,
        "train_columns": report.train_columns,
        "training_hash": report.training_hash,
        "training_max_abs": training_max_abs,
    })))
}

/// Operators plus the largest training magnitude stored next to them.
pub fn load_operators(path: &Path) -> Result<(RomOperators, f64)> {
    let c = SnapshotContainer::read(path)?;
    let bad = |reason: &str| Error::Format {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    let e = &c.meta.extra;
    let r = e["r"].as_u64().ok_or_else(|| bad("missing r"))? as usize;
    let m = e["m"].as_u64().ok_or_else(|| bad("missing m"))? as usize;
    let [d, cols] = c.meta.shape;
    let dims = DataMatrixDims { r, m, k: 0 };
    if cols != r || d != dims.d() {
        return Err(bad("operator shape does not match r and m"));
    }
    let ot = Mat::from_fn(d, r, |i, j| c.payload[i * r + j]);
    let model = unpack_operators(ot.as_ref(), &dims)?;
    let solver: SolverPath = serde_json::from_value(e["solver"].clone()).map_err(|_| bad("missing solver"))?;
    let regularizer: Option<RegularizerSpec> = serde_json::from_value(e["regularizer"].clone()).unwrap_or(None);
    Ok((
        RomOperators {
            model,
            regularizer,
            solver,
            residual: e["residual"].as_f64().unwrap_or(f64::NAN),
        },
        e["training_max_abs"].as_f64().unwrap_or(0.0),
    ))
}

/// Derivatives, normal equations or data matrix, solve, and the operators
/// file for every run.
pub fn cmd_train(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<TrainReport>> {
    cfg.validate()?;
    let layout = Layout::new(out)?;
    (0..cfg.runs()).map(|run| train_run(cfg, &layout, run)).collect()
}
