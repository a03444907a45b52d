use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dynamics::{Lorenz96Config, LORENZ63_BETA, LORENZ63_RHO, LORENZ63_SIGMA};
use crate::error::{Error, Result};
use crate::integrate::IntegratorSpec;
use crate::opinf::{GridSpec, MemoryBudget, DEFAULT_BATCH};
use crate::spectral::KsConfig;

/// Which reference system produces the snapshots, with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SystemConfig {
    Lorenz96(Lorenz96System),
    Ks(KsConfig),
    /// Lorenz 63, a small exactly-quadratic system with known operators.
    Synthetic(SyntheticSystem),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lorenz96System {
    pub n_vars: usize,
    pub forcing: f64,
    #[serde(default = "yes")]
    pub damped: bool,
    pub t_final: f64,
    pub dt: f64,
}

impl Lorenz96System {
    pub fn model(&self) -> Lorenz96Config {
        Lorenz96Config {
            n_vars: self.n_vars,
            forcing: self.forcing,
            damped: self.damped,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSystem {
    #[serde(default = "sigma63")]
    pub sigma: f64,
    #[serde(default = "rho63")]
    pub rho: f64,
    #[serde(default = "beta63")]
    pub beta: f64,
    #[serde(default = "ones3")]
    pub initial: [f64; 3],
    pub t_final: f64,
    pub dt: f64,
}

fn yes() -> bool {
    true
}
fn sigma63() -> f64 {
    LORENZ63_SIGMA
}
fn rho63() -> f64 {
    LORENZ63_RHO
}
fn beta63() -> f64 {
    LORENZ63_BETA
}
fn ones3() -> [f64; 3] {
    [1.0, 1.0, 1.0]
}

impl SystemConfig {
    pub fn tag(&self) -> &'static str {
        match self {
            SystemConfig::Lorenz96(_) => "lorenz96",
            SystemConfig::Ks(_) => "ks",
            SystemConfig::Synthetic(_) => "synthetic",
        }
    }

    pub fn t_final(&self) -> f64 {
        match self {
            SystemConfig::Lorenz96(s) => s.t_final,
            SystemConfig::Ks(k) => k.t_final,
            SystemConfig::Synthetic(s) => s.t_final,
        }
    }

    pub fn dt(&self) -> f64 {
        match self {
            SystemConfig::Lorenz96(s) => s.dt,
            SystemConfig::Ks(k) => k.dt,
            SystemConfig::Synthetic(s) => s.dt,
        }
    }

    pub fn n_state(&self) -> usize {
        match self {
            SystemConfig::Lorenz96(s) => s.n_vars,
            SystemConfig::Ks(k) => k.n_grid,
            SystemConfig::Synthetic(_) => 3,
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            SystemConfig::Lorenz96(s) => s.model().validate()?,
            SystemConfig::Ks(k) => k.validate()?,
            SystemConfig::Synthetic(s) => {
                if ![s.sigma, s.rho, s.beta].iter().chain(&s.initial).all(|v| v.is_finite()) {
                    return Err(Error::config("synthetic system parameters must be finite"));
                }
            }
        }
        let (t, dt) = (self.t_final(), self.dt());
        if !(dt > 0.0 && dt.is_finite()) || !(t > 0.0 && t.is_finite()) {
            return Err(Error::config(format!("need t_final > 0 and dt > 0, got {t} and {dt}")));
        }
        Ok(())
    }
}

/// Fractions of the post-transient record, in time order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Splits {
    pub train: f64,
    #[serde(default)]
    pub validation: f64,
    pub test: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum ReductionConfig {
    None,
    /// Exactly one of `rank` and `energy`; the basis is fitted on the training split.
    Pca {
        #[serde(default)]
        rank: Option<usize>,
        #[serde(default)]
        energy: Option<f64>,
        #[serde(default = "yes")]
        centered: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "path", rename_all = "snake_case")]
pub enum SolverConfig {
    Pseudoinverse,
    Regularized {
        #[serde(default)]
        grid: GridSpec,
        /// Length of the validation forecast used to score candidates;
        /// defaults to the forecast horizon, capped by the validation split.
        #[serde(default)]
        validation_horizon: Option<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DerivativeSource {
    #[default]
    FiniteDifference,
    /// Evaluate the reference right-hand side on the snapshots (no reduction only).
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricSpace {
    #[default]
    Latent,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RestartConfig {
    /// Pick time after the forecast start, in Lyapunov times.
    #[serde(default = "default_pick")]
    pub t_pick_lyapunov: f64,
    #[serde(default = "default_duration")]
    pub duration: f64,
    /// Forecast to restart from; `None` takes the one with the largest VPT.
    #[serde(default)]
    pub forecast: Option<usize>,
    #[serde(default = "default_gridpoints")]
    pub gridpoints: usize,
}

fn default_pick() -> f64 {
    6.8
}
fn default_duration() -> f64 {
    20.0
}
fn default_gridpoints() -> usize {
    6
}

impl Default for RestartConfig {
    fn default() -> Self {
        Self {
            t_pick_lyapunov: default_pick(),
            duration: default_duration(),
            forecast: None,
            gridpoints: default_gridpoints(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub system: SystemConfig,
    pub splits: Splits,
    #[serde(default)]
    pub transient_discard: f64,
    /// Lorenz 96 / synthetic: independent repetitions, one forecast each.
    /// KS: forecast starts drawn from the test window of a single run.
    pub n_initial_conditions: usize,
    pub forecast_horizon: f64,
    #[serde(default = "no_reduction")]
    pub reduction: ReductionConfig,
    pub solver: SolverConfig,
    #[serde(default)]
    pub derivatives: DerivativeSource,
    #[serde(default = "default_epsilon")]
    pub vpt_epsilon: f64,
    pub lyapunov_exponent: f64,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub metric_space: MetricSpace,
    /// Used for reference ODE systems and for every ROM integration.
    #[serde(default)]
    pub integrator: IntegratorSpec,
    /// ROM integrations abort once |q| exceeds this multiple of the largest
    /// training magnitude. Zero disables the check.
    #[serde(default = "default_bound_factor")]
    pub rom_state_bound_factor: f64,
    #[serde(default = "default_batch")]
    pub gram_batch: usize,
    #[serde(default = "default_budget")]
    pub memory_budget_bytes: u64,
    #[serde(default)]
    pub restart: RestartConfig,
}

fn no_reduction() -> ReductionConfig {
    ReductionConfig::None
}
fn default_epsilon() -> f64 {
    0.5
}
fn default_seeds() -> Vec<u64> {
    vec![0]
}
fn default_bound_factor() -> f64 {
    10.0
}
fn default_batch() -> usize {
    DEFAULT_BATCH
}
fn default_budget() -> u64 {
    MemoryBudget::default().0
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.system.validate()?;
        let s = self.splits;
        if [s.train, s.validation, s.test].iter().any(|f| !(*f >= 0.0 && *f <= 1.0)) {
            return Err(Error::config("split fractions must lie in [0, 1]"));
        }
        let sum = s.train + s.validation + s.test;
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::config(format!("splits sum to {sum}, not 1")));
        }
        if s.train == 0.0 || s.test == 0.0 {
            return Err(Error::config("train and test splits must be non-empty"));
        }
        if !(self.transient_discard >= 0.0) || self.transient_discard >= self.system.t_final() {
            return Err(Error::config(format!(
                "transient_discard {} leaves nothing of the {} s record",
                self.transient_discard,
                self.system.t_final()
            )));
        }
        if !(self.forecast_horizon > 0.0 && self.forecast_horizon.is_finite()) {
            return Err(Error::config("forecast_horizon must be positive"));
        }
        if self.n_initial_conditions == 0 {
            return Err(Error::config("n_initial_conditions must be at least 1"));
        }
        if !(self.vpt_epsilon > 0.0) || !(self.lyapunov_exponent > 0.0 && self.lyapunov_exponent.is_finite()) {
            return Err(Error::config("vpt_epsilon and lyapunov_exponent must be positive"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds must not be empty"));
        }
        if self.gram_batch == 0 {
            return Err(Error::config("gram_batch must be positive"));
        }
        if !(self.rom_state_bound_factor >= 0.0) {
            return Err(Error::config("rom_state_bound_factor must be non-negative"));
        }
        self.integrator.validate()?;
        if let ReductionConfig::Pca { rank, energy, .. } = self.reduction {
            match (rank, energy) {
                (Some(0), None) => return Err(Error::config("PCA rank must be positive")),
                (Some(_), None) => {}
                (None, Some(t)) if t > 0.0 && t <= 1.0 => {}
                (None, Some(t)) => return Err(Error::config(format!("PCA energy must lie in (0, 1], got {t}"))),
                _ => return Err(Error::config("PCA needs exactly one of rank and energy")),
            }
        }
        if let SolverConfig::Regularized {
            grid,
            validation_horizon,
        } = &self.solver
        {
            grid.validate()?;
            if s.validation == 0.0 {
                return Err(Error::config("the regularized grid search needs a validation split"));
            }
            if let Some(h) = validation_horizon {
                if !(*h > 0.0) {
                    return Err(Error::config("validation_horizon must be positive"));
                }
            }
        }
        if self.derivatives == DerivativeSource::Exact {
            if self.reduction != ReductionConfig::None || matches!(self.system, SystemConfig::Ks(_)) {
                return Err(Error::config(
                    "exact derivatives need an ODE reference system without reduction",
                ));
            }
        }
        let r = self.restart;
        if !(r.t_pick_lyapunov >= 0.0) || !(r.duration >= 0.0) || r.gridpoints == 0 {
            return Err(Error::config("restart settings must be non-negative with at least one gridpoint"));
        }
        Ok(())
    }

    /// Independent simulations: every Lorenz 96 / synthetic repetition gets its
    /// own initial condition, split and model; KS is one long run.
    pub fn runs(&self) -> usize {
        match self.system {
            SystemConfig::Ks(_) => 1,
            _ => self.n_initial_conditions,
        }
    }

    pub fn forecasts_per_run(&self) -> usize {
        match self.system {
            SystemConfig::Ks(_) => self.n_initial_conditions,
            _ => 1,
        }
    }

    /// `seeds[i]` when listed, otherwise `seeds[0] + i`.
    pub fn run_seed(&self, run: usize) -> u64 {
        self.seeds.get(run).copied().unwrap_or_else(|| self.seeds[0].wrapping_add(run as u64))
    }

    pub fn memory_budget(&self) -> MemoryBudget {
        MemoryBudget(self.memory_budget_bytes)
    }

    /// Output samples per forecast, including the initial state.
    pub fn horizon_samples(&self) -> Result<usize> {
        Ok(whole_steps(self.forecast_horizon, self.system.dt())? + 1)
    }

    /// Lorenz 96, F = 8, 40 variables, `[0, 2000]` s with the first 1000 s
    /// discarded and a 50/50 train/test split.
    pub fn lorenz96(forcing: f64, repetitions: usize, lyapunov_exponent: f64) -> Self {
        Self {
            system: SystemConfig::Lorenz96(Lorenz96System {
                n_vars: 40,
                forcing,
                damped: true,
                t_final: 2000.0,
                dt: 0.01,
            }),
            splits: Splits {
                train: 0.5,
                validation: 0.0,
                test: 0.5,
            },
            transient_discard: 1000.0,
            n_initial_conditions: repetitions,
            forecast_horizon: 20.0,
            reduction: ReductionConfig::None,
            solver: SolverConfig::Pseudoinverse,
            derivatives: DerivativeSource::FiniteDifference,
            vpt_epsilon: 0.5,
            lyapunov_exponent,
            seeds: vec![0],
            metric_space: MetricSpace::Full,
            integrator: IntegratorSpec::adaptive(1e-8, 1e-10, 0.01),
            rom_state_bound_factor: default_bound_factor(),
            gram_batch: DEFAULT_BATCH,
            memory_budget_bytes: default_budget(),
            restart: RestartConfig::default(),
        }
    }

    /// KS on `L = 200` with 512 points and `dt = 0.125`, splits 90/5/5,
    /// 90 s forecasts and the 13 x 13 grid over `[-3, 3]`.
    pub fn ks(t_final: f64, reduction: ReductionConfig, n_initial_conditions: usize) -> Self {
        Self {
            system: SystemConfig::Ks(KsConfig {
                t_final,
                ..KsConfig::default()
            }),
            splits: Splits {
                train: 0.9,
                validation: 0.05,
                test: 0.05,
            },
            transient_discard: 0.0,
            n_initial_conditions,
            forecast_horizon: 90.0,
            reduction,
            solver: SolverConfig::Regularized {
                grid: GridSpec::default(),
                validation_horizon: None,
            },
            derivatives: DerivativeSource::FiniteDifference,
            vpt_epsilon: 0.5,
            lyapunov_exponent: 0.094,
            seeds: vec![0],
            metric_space: MetricSpace::Latent,
            integrator: IntegratorSpec::adaptive(1e-6, 1e-9, 0.125),
            rom_state_bound_factor: default_bound_factor(),
            gram_batch: DEFAULT_BATCH,
            memory_budget_bytes: default_budget(),
            restart: RestartConfig::default(),
        }
    }
}

pub(crate) fn whole_steps(span: f64, dt: f64) -> Result<usize> {
    let n = (span / dt).round();
    if (n * dt - span).abs() > 1e-9 * span.abs().max(1.0) {
        return Err(Error::config(format!("{span} s is not a whole number of {dt} s samples")));
    }
    Ok(n as usize)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_round_trip() {
        for cfg in [
            ExperimentConfig::lorenz96(8.0, 10, 1.68),
            ExperimentConfig::ks(
                6000.0,
                ReductionConfig::Pca {
                    rank: None,
                    energy: Some(0.9999),
                    centered: true,
                },
                10,
            ),
        ] {
            cfg.validate().unwrap();
            let back = ExperimentConfig::from_json(&cfg.to_json().unwrap()).unwrap();
            assert_eq!(back, cfg);
        }
    }

    #[test]
    fn minimal_json_fills_defaults() {
        let text = r#"{
            "system": {"kind": "lorenz96", "n_vars": 40, "forcing": 8, "t_final": 2000, "dt": 0.01},
            "splits": {"train": 0.5, "test": 0.5},
            "transient_discard": 1000,
            "n_initial_conditions": 3,
            "forecast_horizon": 20,
            "solver": {"path": "pseudoinverse"},
            "lyapunov_exponent": 1.68
        }"#;
        let cfg = ExperimentConfig::from_json(text).unwrap();
        assert_eq!(cfg.vpt_epsilon, 0.5);
        assert_eq!(cfg.reduction, ReductionConfig::None);
        assert_eq!(cfg.runs(), 3);
        assert_eq!(cfg.run_seed(2), 2);
        assert_eq!(cfg.horizon_samples().unwrap(), 2001);
    }

    #[test]
    fn rejects_bad_configs() {
        let base = ExperimentConfig::lorenz96(8.0, 2, 1.68);
        let mut c = base.clone();
        c.splits.test = 0.5 + 1e-9;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = base.clone();
        c.forecast_horizon = 0.0;
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.transient_discard = 2000.0;
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.solver = SolverConfig::Regularized {
            grid: GridSpec::default(),
            validation_horizon: None,
        };
        assert!(c.validate().is_err(), "grid search without a validation split");
        let mut c = base.clone();
        c.reduction = ReductionConfig::Pca {
            rank: Some(4),
            energy: Some(0.9),
            centered: true,
        };
        assert!(c.validate().is_err());
        let mut c = base;
        c.derivatives = DerivativeSource::Exact;
        c.reduction = ReductionConfig::Pca {
            rank: Some(4),
            energy: None,
            centered: true,
        };
        assert!(c.validate().is_err());
        assert!(ExperimentConfig::from_json("{").is_err());
    }
}
