//! Learning quadratic reduced models by least squares.
//!
//! Features per sample are `[1, q, kron_comp(q), u]`; the operator matrix
//! `O^T` stacks `c`, `A`, `H` and `B` in the same order.

mod derivatives;
mod features;
mod gram;
mod grid;
mod regularizer;
mod solve;

pub use derivatives::{estimate_derivatives, exact_derivatives};
pub use features::{
    assemble_data_matrix, compress_quadratic, compressed_index, expand_quadratic, feature_count,
    kron_comp, kron_comp_into, quadratic_width, DataMatrixDims, MemoryBudget,
};
pub use gram::{gram_accumulate, gram_accumulate_with, NormalEquations, DEFAULT_BATCH};
pub use grid::{
    grid_search, grid_search_bounded, log_range, GridScore, GridSearchResult, GridSpec,
    ValidationSet,
};
pub use regularizer::{build_gamma, RegularizerSpec};
pub use solve::{
    fit_pseudoinverse, pack_operators, solve_pseudoinverse, solve_regularized,
    solve_regularized_with, unpack_operators, RomOperators, SolverPath,
};

use crate::dynamics::QuadraticModel;
use crate::error::{check_dim, Error, Result};
use crate::integrate::{integrate, IntegratorSpec};
use crate::snapshot::SnapshotMatrix;

/// Integrates an input-free quadratic model from `q0` over `[0, horizon]`.
pub fn simulate_rom(
    model: &QuadraticModel,
    q0: &[f64],
    horizon: f64,
    spec: &IntegratorSpec,
) -> Result<SnapshotMatrix> {
    check_dim("initial latent state", model.r(), q0.len())?;
    if model.m() > 0 {
        return Err(Error::config(
            "model has inputs; use simulate_rom_with_input",
        ));
    }
    let mut scratch = vec![0.0; quadratic_width(model.r())];
    integrate(
        |_, q, dq| model.rhs_into(q, None, &mut scratch, dq),
        q0,
        0.0,
        horizon,
        spec,
    )
}

/// As [`simulate_rom`] with a time-dependent input `u(t)`.
pub fn simulate_rom_with_input<U>(
    model: &QuadraticModel,
    q0: &[f64],
    horizon: f64,
    spec: &IntegratorSpec,
    mut input: U,
) -> Result<SnapshotMatrix>
where
    U: FnMut(f64, &mut [f64]),
{
    check_dim("initial latent state", model.r(), q0.len())?;
    let mut scratch = vec![0.0; quadratic_width(model.r())];
    let mut u = vec![0.0; model.m()];
    integrate(
        |t, q, dq| {
            input(t, &mut u);
            model.rhs_into(q, Some(&u), &mut scratch, dq)
        },
        q0,
        0.0,
        horizon,
        spec,
    )
}
