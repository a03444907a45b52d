//! Experiment orchestration. Each stage reads its inputs from one output
//! directory and writes its results there, so the stages can run as separate
//! CLI invocations or back to back through [`run_all`].
//!
//! File layout (`RRR` = run, `FFF` = forecast index):
//! `snapshots_RRR.opnf`, `basis_RRR.opnf`, `latent_RRR.opnf`, `reduce_RRR.json`,
//! `explained_variance_RRR.csv`, `operators_RRR.opnf`, `train_RRR.json`,
//! `grid_RRR.csv`, `forecast_FFF.opnf`, `forecasts.json`, `nrmse.csv`,
//! `envelope.csv`, `vpt.csv`, `report.json`, `restart_*`, `*.svg`.

mod config;
mod container;
mod forecast;
mod generate;
mod plot;
mod report;
mod restart;
pub mod svg;
mod train;

use std::ops::Range;
use std::path::{Path, PathBuf};

pub use config::{
    DerivativeSource, ExperimentConfig, Lorenz96System, MetricSpace, ReductionConfig, RestartConfig, SolverConfig,
    Splits, SyntheticSystem, SystemConfig,
};
pub use container::{
    payload_hash, read_snapshots, write_snapshots, ContainerMeta, SnapshotContainer, FORMAT_VERSION, MAGIC,
};
pub use forecast::{
    cmd_evaluate, cmd_forecast, sample_forecast_starts, EvaluationReport, ForecastOutcome, ForecastRecord,
};
pub use generate::{cmd_generate, generate_run};
pub use plot::cmd_plot;
pub use report::{fmt_f64, read_csv, read_json, write_csv, write_json};
pub use restart::{cmd_restart_check, ks_continuation, RestartReport};
pub use train::{cmd_reduce, cmd_train, load_basis, load_operators, ReduceReport, TrainReport};

use crate::error::{Error, Result};

/// Paths of every artifact inside an output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub dir: PathBuf,
}

impl Layout {
    pub fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Self { dir: dir.to_path_buf() })
    }

    fn file(&self, name: String) -> PathBuf {
        self.dir.join(name)
    }

    pub fn snapshots(&self, run: usize) -> PathBuf {
        self.file(format!("snapshots_{run:03}.opnf"))
    }
    pub fn basis(&self, run: usize) -> PathBuf {
        self.file(format!("basis_{run:03}.opnf"))
    }
    pub fn latent(&self, run: usize) -> PathBuf {
        self.file(format!("latent_{run:03}.opnf"))
    }
    pub fn reduce_report(&self, run: usize) -> PathBuf {
        self.file(format!("reduce_{run:03}.json"))
    }
    pub fn explained_variance(&self, run: usize) -> PathBuf {
        self.file(format!("explained_variance_{run:03}.csv"))
    }
    pub fn operators(&self, run: usize) -> PathBuf {
        self.file(format!("operators_{run:03}.opnf"))
    }
    pub fn train_report(&self, run: usize) -> PathBuf {
        self.file(format!("train_{run:03}.json"))
    }
    pub fn grid_scores(&self, run: usize) -> PathBuf {
        self.file(format!("grid_{run:03}.csv"))
    }
    pub fn forecast(&self, index: usize) -> PathBuf {
        self.file(format!("forecast_{index:03}.opnf"))
    }
    pub fn forecasts(&self) -> PathBuf {
        self.file("forecasts.json".into())
    }
    pub fn nrmse(&self) -> PathBuf {
        self.file("nrmse.csv".into())
    }
    pub fn envelope(&self) -> PathBuf {
        self.file("envelope.csv".into())
    }
    pub fn vpt(&self) -> PathBuf {
        self.file("vpt.csv".into())
    }
    pub fn report(&self) -> PathBuf {
        self.file("report.json".into())
    }
    pub fn restart_report(&self) -> PathBuf {
        self.file("restart.json".into())
    }
    pub fn restart_field(&self, which: &str) -> PathBuf {
        self.file(format!("restart_{which}.opnf"))
    }
    pub fn restart_gridpoints(&self) -> PathBuf {
        self.file("restart_gridpoints.csv".into())
    }
    pub fn figure(&self, name: &str) -> PathBuf {
        self.file(format!("{name}.svg"))
    }
}

/// Contiguous, disjoint column ranges covering `0..k` in time order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitRanges {
    pub train: Range<usize>,
    pub validation: Range<usize>,
    pub test: Range<usize>,
}

pub fn split_ranges(k: usize, splits: &Splits) -> Result<SplitRanges> {
    let n_train = ((splits.train * k as f64).round() as usize).min(k);
    let n_val = ((splits.validation * k as f64).round() as usize).min(k - n_train);
    let ranges = SplitRanges {
        train: 0..n_train,
        validation: n_train..n_train + n_val,
        test: n_train + n_val..k,
    };
    if ranges.train.is_empty() || ranges.test.is_empty() || (splits.validation > 0.0 && ranges.validation.is_empty()) {
        return Err(Error::config(format!(
            "splits of {k} samples leave an empty window: {ranges:?}"
        )));
    }
    Ok(ranges)
}

/// Generate, reduce, train, forecast and evaluate in one go.
pub fn run_all(cfg: &ExperimentConfig, out: &Path) -> Result<EvaluationReport> {
    cmd_generate(cfg, out)?;
    cmd_reduce(cfg, out)?;
    cmd_train(cfg, out)?;
    cmd_forecast(cfg, out)?;
    cmd_evaluate(cfg, out)
}
