use faer::dyn_stack::{MemBuffer, MemStack};
use faer::linalg::cholesky::llt::{factor, solve};
use faer::linalg::matmul::matmul;
use faer::{Accum, Conj, Mat, MatRef, Par};
use serde::{Deserialize, Serialize};

use super::features::{
    assemble_data_matrix, feature_count, quadratic_width, DataMatrixDims, MemoryBudget,
};
use super::gram::NormalEquations;
use super::regularizer::{build_gamma, RegularizerSpec};
use crate::dynamics::QuadraticModel;
use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverPath {
    Pseudoinverse,
    Regularized,
}

/// A learned quadratic model and how it was obtained.
#[derive(Debug, Clone, PartialEq)]
pub struct RomOperators {
    pub model: QuadraticModel,
    pub regularizer: Option<RegularizerSpec>,
    pub solver: SolverPath,
    /// `||D O^T - R^T||_F`.
    pub residual: f64,
}

/// Splits `O^T` (`d x r`) into `(c, A, H, B)` following the column order of `D`.
pub fn unpack_operators(ot: MatRef<'_, f64>, dims: &DataMatrixDims) -> Result<QuadraticModel> {
    let r = dims.r;
    check_dim("operator rows", dims.d(), ot.nrows())?;
    check_dim("operator columns", r, ot.ncols())?;
    let [_, lin, quad, inp] = dims.block_starts();
    let c = (0..r).map(|i| ot[(0, i)]).collect();
    let a = Mat::from_fn(r, r, |i, j| ot[(lin + j, i)]);
    let h = Mat::from_fn(r, quadratic_width(r), |i, p| ot[(quad + p, i)]);
    let b = Mat::from_fn(r, dims.m, |i, l| ot[(inp + l, i)]);
    QuadraticModel::new(c, a, h, b)
}

/// Inverse of [`unpack_operators`].
pub fn pack_operators(model: &QuadraticModel) -> Mat<f64> {
    let (r, m) = (model.r(), model.m());
    let dims = DataMatrixDims { r, m, k: 0 };
    let [_, lin, quad, inp] = dims.block_starts();
    let mut ot = Mat::zeros(dims.d(), r);
    for i in 0..r {
        ot[(0, i)] = model.c[i];
        for j in 0..r {
            ot[(lin + j, i)] = model.a[(i, j)];
        }
        for p in 0..quadratic_width(r) {
            ot[(quad + p, i)] = model.h[(i, p)];
        }
        for l in 0..m {
            ot[(inp + l, i)] = model.b[(i, l)];
        }
    }
    ot
}

/// Solves `(D^T D + Γ^2) O^T = D^T R^T` by Cholesky.
///
/// An indefinite system (possible only when every λ is zero) yields
/// [`Error::NotPositiveDefinite`]; fall back to [`solve_pseudoinverse`].
pub fn solve_regularized(ne: &NormalEquations, spec: &RegularizerSpec) -> Result<RomOperators> {
    solve_regularized_with(ne, spec, faer::get_global_parallelism())
}

pub fn solve_regularized_with(
    ne: &NormalEquations,
    spec: &RegularizerSpec,
    par: Par,
) -> Result<RomOperators> {
    spec.validate()?;
    let ot = regularized_solution(ne, spec, par)?;
    let residual = normal_equation_residual(ne, ot.as_ref(), par);
    Ok(RomOperators {
        model: unpack_operators(ot.as_ref(), &ne.dims)?,
        regularizer: Some(*spec),
        solver: SolverPath::Regularized,
        residual,
    })
}

pub(crate) fn regularized_solution(
    ne: &NormalEquations,
    spec: &RegularizerSpec,
    par: Par,
) -> Result<Mat<f64>> {
    let d = ne.dims.d();
    let gamma = build_gamma(spec, &ne.dims);
    let mut l = ne.gram.clone();
    for (i, g) in gamma.iter().enumerate() {
        l[(i, i)] += g * g;
    }
    let mut mem = MemBuffer::new(factor::cholesky_in_place_scratch::<f64>(
        d,
        par,
        Default::default(),
    ));
    let info = factor::cholesky_in_place(
        l.as_mut(),
        Default::default(),
        par,
        MemStack::new(&mut mem),
        Default::default(),
    )
    .map_err(|_| Error::NotPositiveDefinite)?;
    if info.dynamic_regularization_count > 0 {
        return Err(Error::NotPositiveDefinite);
    }
    let mut ot = ne.cross.clone();
    let mut mem = MemBuffer::new(solve::solve_in_place_scratch::<f64>(d, ot.ncols(), par));
    solve::solve_in_place_with_conj(
        l.as_ref(),
        Conj::No,
        ot.as_mut(),
        par,
        MemStack::new(&mut mem),
    );
    if (0..ot.ncols()).any(|j| ot.col_as_slice(j).iter().any(|v| !v.is_finite())) {
        return Err(Error::Numerical(
            "regularized solve produced non-finite operators".into(),
        ));
    }
    Ok(ot)
}

/// `||D X - R^T||_F` from the normal equations alone:
/// `tr(X^T G X) - 2 tr(X^T C) + ||R||^2`.
fn normal_equation_residual(ne: &NormalEquations, x: MatRef<'_, f64>, par: Par) -> f64 {
    let mut gx = Mat::<f64>::zeros(x.nrows(), x.ncols());
    matmul(gx.as_mut(), Accum::Replace, ne.gram.as_ref(), x, 1.0, par);
    let mut quad = 0.0;
    let mut lin = 0.0;
    for j in 0..x.ncols() {
        for i in 0..x.nrows() {
            quad += x[(i, j)] * gx[(i, j)];
            lin += x[(i, j)] * ne.cross[(i, j)];
        }
    }
    (quad - 2.0 * lin + ne.target_sq_norm).max(0.0).sqrt()
}

/// Minimum-norm least squares `O^T = D^+ R^T` via a thin SVD of `D` (`k x d`).
pub fn solve_pseudoinverse(data: &Mat<f64>, rhat: &Mat<f64>) -> Result<RomOperators> {
    let (k, d) = (data.nrows(), data.ncols());
    let r = rhat.nrows();
    check_dim("derivative columns", k, rhat.ncols())?;
    let base = feature_count(r, 0);
    if d < base {
        return Err(Error::Dimension {
            context: "data matrix columns",
            expected: base,
            actual: d,
        });
    }
    let dims = DataMatrixDims { r, m: d - base, k };
    let ot = pseudoinverse_solution(data.as_ref(), rhat.as_ref())?;
    let mut fit = data * &ot;
    fit -= rhat.transpose();
    Ok(RomOperators {
        model: unpack_operators(ot.as_ref(), &dims)?,
        regularizer: None,
        solver: SolverPath::Pseudoinverse,
        residual: fit.norm_l2(),
    })
}

fn pseudoinverse_solution(data: MatRef<'_, f64>, rhat: MatRef<'_, f64>) -> Result<Mat<f64>> {
    let (k, d) = (data.nrows(), data.ncols());
    let svd = data
        .thin_svd()
        .map_err(|e| Error::Numerical(format!("SVD of the data matrix failed: {e:?}")))?;
    let s = svd.S().column_vector();
    let p = s.nrows();
    let smax = (0..p).map(|i| s[i]).fold(0.0, f64::max);
    let cutoff = f64::EPSILON * k.max(d) as f64 * smax;
    // U^T R^T, rows scaled by 1/sigma with small singular values dropped
    let mut utr = svd.U().transpose() * rhat.transpose();
    for i in 0..p {
        let inv = if s[i] > cutoff { 1.0 / s[i] } else { 0.0 };
        for j in 0..utr.ncols() {
            utr[(i, j)] *= inv;
        }
    }
    Ok(svd.V() * &utr)
}

/// Assembles `D` (within `budget`) and calls [`solve_pseudoinverse`].
pub fn fit_pseudoinverse(
    qhat: &Mat<f64>,
    inputs: Option<&Mat<f64>>,
    rhat: &Mat<f64>,
    budget: MemoryBudget,
) -> Result<RomOperators> {
    let data = assemble_data_matrix(qhat, inputs, budget)?;
    solve_pseudoinverse(&data, rhat)
}
