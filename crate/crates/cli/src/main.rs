use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use opinf_core::pipeline::{self, ExperimentConfig};
use opinf_core::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "opinf", version, about = "Operator inference experiments for chaotic systems")]
struct Cli {
    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Replaces the seed list of the configuration with this single base seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory shared by all stages.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads for the pool and the linear algebra.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Simulate the reference system and write the snapshot containers.
    Generate,
    /// Fit the basis and write latent trajectories.
    Reduce,
    /// Learn the ROM operators.
    Train,
    /// Integrate the ROM from the forecast starts.
    Forecast,
    /// NRMSE, VPT and summary statistics.
    Evaluate,
    /// Restart the KS solver from a ROM state.
    RestartCheck,
    /// Render SVG figures from the reports.
    Plot,
}

fn setup_threads(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::config("--threads must be at least 1"));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::config(format!("thread pool: {e}")))?;
    faer::set_global_parallelism(if n == 1 { faer::Par::Seq } else { faer::Par::rayon(n) });
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        setup_threads(n)?;
    }
    let path = cli.config.as_ref().ok_or_else(|| Error::config("--config <path> is required"))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seeds = vec![seed];
    }
    let out = &cli.out;
    match cli.command {
        Command::Generate => {
            for p in pipeline::cmd_generate(&cfg, out)? {
                println!("wrote {}", p.display());
            }
        }
        Command::Reduce => {
            for r in pipeline::cmd_reduce(&cfg, out)? {
                println!(
                    "run {}: r = {} of {}, explained variance {:.6}, holdout projection error {:.4}%",
                    r.run,
                    r.r,
                    r.n,
                    r.explained_variance,
                    100.0 * r.holdout_projection_error
                );
            }
        }
        Command::Train => {
            for t in pipeline::cmd_train(&cfg, out)? {
                let reg = t
                    .regularizer
                    .map(|g| format!(", lambda2 = {:e}, lambda3 = {:e}", g.lambda2, g.lambda3))
                    .unwrap_or_default();
                println!(
                    "run {}: d = {}, {:?}{reg}, residual {:.3e}, {} of {} candidates failed",
                    t.run, t.d, t.solver, t.residual, t.failed_candidates, t.candidates
                );
            }
        }
        Command::Forecast => {
            let recs = pipeline::cmd_forecast(&cfg, out)?;
            let failed = recs.iter().filter(|r| r.failure_time.is_some()).count();
            println!("{} forecasts, {failed} stopped early", recs.len());
        }
        Command::Evaluate => {
            let r = pipeline::cmd_evaluate(&cfg, out)?;
            let s = r.summary;
            println!(
                "VPT over {} forecasts: min {:.3}, max {:.3}, mean {:.3}, std {:.3} (best: forecast {})",
                r.forecasts.len(),
                s.min,
                s.max,
                s.mean,
                s.std,
                r.best_forecast
            );
        }
        Command::RestartCheck => {
            let r = pipeline::cmd_restart_check(&cfg, out)?;
            println!(
                "forecast {}: truth restart rel. L2 {:.3e}, ROM vs restart rel. L2 {:.3e}, max |error| {:.3e}{}",
                r.forecast,
                r.truth_restart_relative_l2,
                r.opinf_vs_restart_relative_l2,
                r.max_abs_error,
                r.restart_failure.map(|f| format!(", restart failed: {f}")).unwrap_or_default()
            );
        }
        Command::Plot => {
            for p in pipeline::cmd_plot(&cfg, out)? {
                println!("wrote {}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
