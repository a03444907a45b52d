//! Operator inference for chaotic dynamical systems.
//!
//! Reference solvers ([`dynamics`], [`spectral`], [`integrate`]) generate
//! trajectories, [`reduction`] compresses them with PCA, [`opinf`] learns a
//! quadratic latent model by regularized least squares, and [`metrics`] scores
//! forecasts in Lyapunov time units. [`pipeline`] wires these into experiments.

pub mod dynamics;
pub mod error;
pub mod integrate;
pub mod metrics;
pub mod opinf;
pub mod pipeline;
pub mod reduction;
pub mod snapshot;
pub mod spectral;

pub use dynamics::{Lorenz96Config, QuadraticModel};
pub use error::{Error, Result};
pub use integrate::{integrate, IntegratorSpec, Method};
pub use metrics::MetricSeries;
pub use pipeline::{ExperimentConfig, SnapshotContainer};
pub use opinf::{DataMatrixDims, NormalEquations, RegularizerSpec, RomOperators};
pub use reduction::ReducedBasis;
pub use snapshot::SnapshotMatrix;
pub use spectral::KsConfig;
