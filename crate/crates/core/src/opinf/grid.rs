use faer::{Mat, Par};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::features::MemoryBudget;
use super::gram::NormalEquations;
use super::regularizer::RegularizerSpec;
use super::simulate_rom;
use super::solve::{regularized_solution, unpack_operators, RomOperators, SolverPath};
use crate::error::{check_dim, CandidateFailure, Error, Result};
use crate::integrate::IntegratorSpec;
use crate::metrics::{nrmse_values, series_sigma};

/// log10 values of λ2 (tied to λ1) and λ3 to try; λ4 is held at `lambda4`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub log10_lambda2: Vec<f64>,
    pub log10_lambda3: Vec<f64>,
    #[serde(default)]
    pub lambda4: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        let axis = log_range(-3.0, 3.0, 0.5);
        Self {
            log10_lambda2: axis.clone(),
            log10_lambda3: axis,
            lambda4: 0.0,
        }
    }
}

/// `min, min + step, ...` up to `max` inclusive (with a little slack for rounding).
pub fn log_range(min: f64, max: f64, step: f64) -> Vec<f64> {
    if !(step > 0.0) || max < min {
        return vec![min];
    }
    let n = ((max - min) / step + 1e-9).floor() as usize + 1;
    (0..n).map(|i| min + i as f64 * step).collect()
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.log10_lambda2.is_empty() || self.log10_lambda3.is_empty() {
            return Err(Error::config("regularization grid is empty"));
        }
        if self
            .log10_lambda2
            .iter()
            .chain(&self.log10_lambda3)
            .any(|v| !v.is_finite())
        {
            return Err(Error::config("regularization grid has non-finite entries"));
        }
        Ok(())
    }

    /// Candidates ordered by λ2 then λ3, which is also the tie-break order.
    pub fn candidates(&self) -> Vec<(f64, f64)> {
        let mut l2 = self.log10_lambda2.clone();
        let mut l3 = self.log10_lambda3.clone();
        l2.sort_by(f64::total_cmp);
        l2.dedup();
        l3.sort_by(f64::total_cmp);
        l3.dedup();
        l2.iter()
            .flat_map(|&a| l3.iter().map(move |&b| (a, b)))
            .collect()
    }
}

/// Latent trajectory used to score candidates. Column 0 is the initial state.
#[derive(Debug, Clone)]
pub struct ValidationSet {
    pub reference: Mat<f64>,
    pub dt: f64,
}

impl ValidationSet {
    pub fn horizon(&self) -> f64 {
        (self.reference.ncols().saturating_sub(1)) as f64 * self.dt
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridScore {
    pub log10_lambda2: f64,
    pub log10_lambda3: f64,
    /// Mean NRMSE over the validation horizon; `None` when the candidate failed.
    pub score: Option<f64>,
    pub failure_time: Option<f64>,
    pub reason: Option<String>,
}

#[derive(Debug, Clone)]
pub struct GridSearchResult {
    pub best: RegularizerSpec,
    pub operators: RomOperators,
    pub table: Vec<GridScore>,
}

/// Fits every grid candidate on the same normal equations, forecasts the
/// validation window and keeps the lowest mean NRMSE.
///
/// Candidates run in parallel, each with sequential linear algebra, so the
/// result does not depend on the worker count.
pub fn grid_search(
    ne: &NormalEquations,
    validation: &ValidationSet,
    grid: &GridSpec,
    integrator: &IntegratorSpec,
) -> Result<GridSearchResult> {
    grid_search_bounded(ne, validation, grid, integrator, MemoryBudget::default())
}

/// [`grid_search`] with at most as many candidates in flight as fit in `budget`
/// (each one factors its own copy of the Gram matrix).
pub fn grid_search_bounded(
    ne: &NormalEquations,
    validation: &ValidationSet,
    grid: &GridSpec,
    integrator: &IntegratorSpec,
    budget: MemoryBudget,
) -> Result<GridSearchResult> {
    grid.validate()?;
    let per_candidate = NormalEquations::bytes(&ne.dims);
    budget.check("one grid-search factorization", per_candidate)?;
    let in_flight = ((budget.0 as u128 / per_candidate.max(1)) as usize)
        .clamp(1, rayon::current_num_threads().max(1));
    let r = ne.dims.r;
    check_dim("validation rows", r, validation.reference.nrows())?;
    if validation.reference.ncols() < 2 {
        return Err(Error::config(
            "validation window needs at least two samples",
        ));
    }
    if ne.dims.m > 0 {
        return Err(Error::config(
            "grid search forecasts do not support input operators",
        ));
    }
    let sigma = series_sigma(&validation.reference);
    if let Some(i) = sigma.iter().position(|s| !(*s > 0.0)) {
        return Err(Error::degenerate(format!(
            "validation series {i} is constant"
        )));
    }
    let mut spec = *integrator;
    spec.dt_output = validation.dt;
    let q0 = validation.reference.col_as_slice(0).to_vec();
    let horizon = validation.horizon();

    let candidates = grid.candidates();
    let score_one = |&(l2, l3): &(f64, f64)| {
        let fail = |t: Option<f64>, reason: String| GridScore {
            log10_lambda2: l2,
            log10_lambda3: l3,
            score: None,
            failure_time: t,
            reason: Some(reason),
        };
        let reg = match RegularizerSpec::new(
            10f64.powf(l2),
            10f64.powf(l2),
            10f64.powf(l3),
            grid.lambda4,
        ) {
            Ok(s) => s,
            Err(e) => return fail(None, e.to_string()),
        };
        let ot = match regularized_solution(ne, &reg, Par::Seq) {
            Ok(ot) => ot,
            Err(e) => return fail(None, e.to_string()),
        };
        let model = match unpack_operators(ot.as_ref(), &ne.dims) {
            Ok(m) => m,
            Err(e) => return fail(None, e.to_string()),
        };
        match simulate_rom(&model, &q0, horizon, &spec) {
            Ok(pred) => match nrmse_values(&validation.reference, pred.data(), &sigma) {
                Ok(v) => {
                    let mean = v.iter().sum::<f64>() / v.len() as f64;
                    if mean.is_finite() {
                        GridScore {
                            log10_lambda2: l2,
                            log10_lambda3: l3,
                            score: Some(mean),
                            failure_time: None,
                            reason: None,
                        }
                    } else {
                        fail(None, "non-finite validation error".into())
                    }
                }
                Err(e) => fail(None, e.to_string()),
            },
            Err(Error::Integration(f)) => fail(Some(f.last_valid_time), f.reason.clone()),
            Err(e) => fail(None, e.to_string()),
        }
    };
    let mut table: Vec<GridScore> = Vec::with_capacity(candidates.len());
    for chunk in candidates.chunks(in_flight) {
        table.extend(chunk.par_iter().map(score_one).collect::<Vec<_>>());
    }

    let mut best: Option<usize> = None;
    for (i, s) in table.iter().enumerate() {
        if let Some(v) = s.score {
            if best.is_none_or(|b| v < table[b].score.unwrap()) {
                best = Some(i);
            }
        }
    }
    let Some(b) = best else {
        return Err(Error::AllCandidatesDiverged(
            table
                .into_iter()
                .map(|s| CandidateFailure {
                    log10_lambda2: s.log10_lambda2,
                    log10_lambda3: s.log10_lambda3,
                    failure_time: s.failure_time,
                    reason: s.reason.unwrap_or_default(),
                })
                .collect(),
        ));
    };
    let (l2, l3) = candidates[b];
    let best_spec =
        RegularizerSpec::new(10f64.powf(l2), 10f64.powf(l2), 10f64.powf(l3), grid.lambda4)?;
    // same sequential path as the scored fit, so the operators match bit for bit
    let operators = super::solve_regularized_with(ne, &best_spec, Par::Seq)?;
    debug_assert_eq!(operators.solver, SolverPath::Regularized);
    Ok(GridSearchResult {
        best: best_spec,
        operators,
        table,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::QuadraticModel;
    use crate::integrate::integrate;
    use crate::opinf::{exact_derivatives, gram_accumulate, MemoryBudget};

    fn rossler_like() -> QuadraticModel {
        // damped quadratic oscillator with bounded orbits
        let c = vec![0.0, 0.0];
        let a = Mat::from_fn(2, 2, |i, j| [[-0.1, 1.0], [-1.0, -0.1]][i][j]);
        let h = Mat::from_fn(2, 3, |i, p| if i == 0 && p == 1 { 0.05 } else { 0.0 });
        QuadraticModel::new(c, a, h, Mat::zeros(2, 0)).unwrap()
    }

    fn setup() -> (NormalEquations, ValidationSet) {
        let model = rossler_like();
        let spec = IntegratorSpec::adaptive(1e-10, 1e-12, 0.05);
        let traj = integrate(
            |_, q, dq| model.rhs_into(q, None, &mut [0.0; 3], dq),
            &[1.0, 0.5],
            0.0,
            10.0,
            &spec,
        )
        .unwrap();
        let train = traj.data().subcols(0, 150).to_owned();
        let rhat = exact_derivatives(&train, |q, dq| model.rhs_into(q, None, &mut [0.0; 3], dq));
        let ne = gram_accumulate(&train, None, &rhat, 64, MemoryBudget::default()).unwrap();
        let val = ValidationSet {
            reference: traj.data().subcols(149, 52).to_owned(),
            dt: 0.05,
        };
        (ne, val)
    }

    #[test]
    fn log_range_default_axis() {
        let axis = log_range(-3.0, 3.0, 0.5);
        assert_eq!(axis.len(), 13);
        assert_eq!(axis[0], -3.0);
        assert_eq!(axis[12], 3.0);
        assert_eq!(GridSpec::default().candidates().len(), 169);
    }

    #[test]
    fn single_point_grid() {
        let (ne, val) = setup();
        let grid = GridSpec {
            log10_lambda2: vec![-2.0],
            log10_lambda3: vec![-1.0],
            lambda4: 0.0,
        };
        let res = grid_search(&ne, &val, &grid, &IntegratorSpec::default()).unwrap();
        assert_eq!(res.best.lambda2, 1e-2);
        assert_eq!(res.best.lambda1, 1e-2);
        assert_eq!(res.best.lambda3, 1e-1);
        assert_eq!(res.table.len(), 1);
    }

    #[test]
    fn exact_data_prefers_small_lambda() {
        let (ne, val) = setup();
        let grid = GridSpec {
            log10_lambda2: vec![1.0, -6.0, -2.0],
            log10_lambda3: vec![0.0, 1.0, -6.0],
            lambda4: 0.0,
        };
        let res = grid_search(
            &ne,
            &val,
            &grid,
            &IntegratorSpec::adaptive(1e-10, 1e-12, 0.05),
        )
        .unwrap();
        assert_eq!((res.best.lambda2, res.best.lambda3), (1e-6, 1e-6));
        // table follows the sorted candidate order
        assert_eq!(res.table[0].log10_lambda2, -6.0);
        assert_eq!(res.table[0].log10_lambda3, -6.0);
        let best = res.table[0].score.unwrap();
        assert!(best < 1e-3, "{best}");
        let worst = res.table.iter().filter_map(|s| s.score).fold(0.0, f64::max);
        assert!(worst > best);
    }

    #[test]
    fn ties_go_to_smaller_lambdas() {
        // zero data: every candidate gives the zero model and identical scores
        let mut ne = setup().0;
        ne.cross = Mat::zeros(ne.cross.nrows(), ne.cross.ncols());
        let val = ValidationSet {
            reference: Mat::from_fn(2, 5, |i, j| (i + j) as f64),
            dt: 0.1,
        };
        let grid = GridSpec {
            log10_lambda2: vec![0.0, -1.0],
            log10_lambda3: vec![2.0, 1.0],
            lambda4: 0.0,
        };
        let res = grid_search(&ne, &val, &grid, &IntegratorSpec::default()).unwrap();
        assert_eq!((res.best.lambda2, res.best.lambda3), (0.1, 10.0));
    }

    #[test]
    fn all_diverging_candidates_are_listed() {
        let (mut ne, val) = setup();
        // a constant forcing pushing far away, stopped by the state bound
        for j in 0..ne.cross.ncols() {
            ne.cross[(0, j)] = 1e9;
        }
        let mut spec = IntegratorSpec::default();
        spec.state_bound = Some(100.0);
        let grid = GridSpec {
            log10_lambda2: vec![-3.0, -2.0],
            log10_lambda3: vec![-3.0],
            lambda4: 0.0,
        };
        match grid_search(&ne, &val, &grid, &spec) {
            Err(Error::AllCandidatesDiverged(list)) => {
                assert_eq!(list.len(), 2);
                assert!(list.iter().all(|c| c.failure_time.is_some()));
            }
            other => panic!("{other:?}"),
        }
    }
}
