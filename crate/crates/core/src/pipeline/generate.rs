use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde_json::json;

use super::config::{whole_steps, ExperimentConfig, SystemConfig};
use super::container::write_snapshots;
use super::Layout;
use crate::dynamics::{lorenz63_rhs, lorenz96_rhs_into};
use crate::error::{Error, Result};
use crate::integrate::integrate;
use crate::snapshot::SnapshotMatrix;
use crate::spectral::simulate_ks;

/// RNG stream for the reference initial condition of a run.
pub(crate) const STREAM_INITIAL: u64 = 0;
/// RNG stream for choosing forecast start columns.
pub(crate) const STREAM_FORECAST: u64 = 1;

pub(crate) fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Reference trajectory of one run with the transient removed.
///
/// Lorenz 96 starts from i.i.d. standard normal values; the synthetic
/// (Lorenz 63) system from its configured state plus a unit normal kick;
/// KS from its fixed initial profile.
pub fn generate_run(cfg: &ExperimentConfig, run: usize) -> Result<SnapshotMatrix> {
    let seed = cfg.run_seed(run);
    let mut spec = cfg.integrator;
    spec.dt_output = cfg.system.dt();
    spec.state_bound = None;
    let full = match &cfg.system {
        SystemConfig::Lorenz96(s) => {
            let model = s.model();
            model.validate()?;
            let mut g = rng(seed, STREAM_INITIAL);
            let ic: Vec<f64> = (0..s.n_vars).map(|_| StandardNormal.sample(&mut g)).collect();
            integrate(|_, x, dx| lorenz96_rhs_into(x, &model, dx), &ic, 0.0, s.t_final, &spec)?
        }
        SystemConfig::Synthetic(s) => {
            let mut g = rng(seed, STREAM_INITIAL);
            let ic: Vec<f64> = s
                .initial
                .iter()
                .map(|v| {
                    let kick: f64 = StandardNormal.sample(&mut g);
                    v + kick
                })
                .collect();
            let (sig, rho, beta) = (s.sigma, s.rho, s.beta);
            integrate(
                |_, x, dx| {
                    let v = lorenz63_rhs(x, sig, rho, beta).expect("three components");
                    dx.copy_from_slice(&v);
                },
                &ic,
                0.0,
                s.t_final,
                &spec,
            )?
        }
        SystemConfig::Ks(k) => simulate_ks(k, None)?,
    };
    let start = whole_steps(cfg.transient_discard, cfg.system.dt())?;
    if start + 1 >= full.ncols() {
        return Err(Error::config(format!(
            "discarding {} s leaves no samples of the {} s record",
            cfg.transient_discard,
            cfg.system.t_final()
        )));
    }
    if start == 0 {
        Ok(full)
    } else {
        full.slice_columns(start, full.ncols())
    }
}

/// Writes `snapshots_RRR.opnf` for every run.
pub fn cmd_generate(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let layout = Layout::new(out)?;
    (0..cfg.runs())
        .into_par_iter()
        .map(|run| {
            let snaps = generate_run(cfg, run)?;
            let path = layout.snapshots(run);
            write_snapshots(
                &path,
                "snapshots",
                cfg.system.tag(),
                &snaps,
                json!({
                    "run": run,
                    "seed": cfg.run_seed(run),
                    "transient_discard": cfg.transient_discard,
                }),
            )?;
            Ok(path)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::config::SyntheticSystem;

    #[test]
    fn lorenz96_shape_and_seeding() {
        let mut cfg = ExperimentConfig::lorenz96(8.0, 2, 1.68);
        if let SystemConfig::Lorenz96(s) = &mut cfg.system {
            s.t_final = 30.0;
        }
        cfg.transient_discard = 10.0;
        let a = generate_run(&cfg, 0).unwrap();
        assert_eq!((a.nrows(), a.ncols()), (40, 2001));
        assert!((a.t0() - 10.0).abs() < 1e-12);
        assert_eq!(a, generate_run(&cfg, 0).unwrap());
        assert_ne!(a.column(0), generate_run(&cfg, 1).unwrap().column(0));
    }

    #[test]
    fn whole_record_discarded_is_an_error() {
        let mut cfg = ExperimentConfig::lorenz96(8.0, 1, 1.68);
        cfg.system = SystemConfig::Synthetic(SyntheticSystem {
            sigma: 10.0,
            rho: 28.0,
            beta: 8.0 / 3.0,
            initial: [1.0; 3],
            t_final: 1.0,
            dt: 0.01,
        });
        cfg.transient_discard = 1.0;
        assert!(matches!(generate_run(&cfg, 0), Err(Error::Config(_))));
        cfg.transient_discard = 0.5;
        assert_eq!(generate_run(&cfg, 0).unwrap().ncols(), 51);
    }
}
