//! PCA/POD bases: fitting, projection, reconstruction and error measures.

use faer::linalg::matmul::matmul;
use faer::{Accum, Mat, Par, Side};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::snapshot::SnapshotMatrix;

/// How many modes to keep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankTarget {
    Fixed(usize),
    /// Smallest rank whose cumulative explained variance reaches this ratio.
    Energy(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReducedBasis {
    /// `n x r`, orthonormal columns.
    pub basis: Mat<f64>,
    /// Temporal mean removed before projection (zeros when uncentered).
    pub mean: Vec<f64>,
    /// All singular values of the (centered) fit data, non-increasing.
    pub singular_values: Vec<f64>,
    pub centered: bool,
}

impl ReducedBasis {
    /// Pass-through basis for working in the full state space.
    pub fn identity(n: usize) -> Self {
        Self {
            basis: Mat::identity(n, n),
            mean: vec![0.0; n],
            singular_values: Vec::new(),
            centered: false,
        }
    }

    pub fn n(&self) -> usize {
        self.basis.nrows()
    }

    pub fn r(&self) -> usize {
        self.basis.ncols()
    }

    /// `max |V^T V - I|`.
    pub fn orthonormality_defect(&self) -> f64 {
        let g = self.basis.transpose() * &self.basis;
        let mut worst = 0.0f64;
        for j in 0..g.ncols() {
            for i in 0..g.nrows() {
                let want = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g[(i, j)] - want).abs());
            }
        }
        worst
    }

    /// Latent coordinates of a single full state.
    pub fn project_state(&self, state: &[f64]) -> Result<Vec<f64>> {
        check_dim("state length", self.n(), state.len())?;
        Ok((0..self.r())
            .map(|j| {
                self.basis
                    .col_as_slice(j)
                    .iter()
                    .zip(state.iter().zip(&self.mean))
                    .map(|(v, (x, m))| v * (x - m))
                    .sum()
            })
            .collect())
    }
}

pub fn fit_pca(q: &SnapshotMatrix, target: RankTarget, centered: bool) -> Result<ReducedBasis> {
    let (n, k) = (q.nrows(), q.ncols());
    if n == 0 || k == 0 {
        return Err(Error::degenerate("empty snapshot matrix"));
    }
    let max_rank = n.min(k);
    if let RankTarget::Fixed(r) = target {
        if r == 0 || r > max_rank {
            return Err(Error::config(format!(
                "requested rank {r} outside 1..={max_rank}"
            )));
        }
    }
    if let RankTarget::Energy(tau) = target {
        if !(tau > 0.0 && tau <= 1.0) {
            return Err(Error::config(format!(
                "energy threshold must lie in (0, 1], got {tau}"
            )));
        }
    }

    let mean = if centered {
        temporal_mean(q)
    } else {
        vec![0.0; n]
    };
    let x = Mat::from_fn(n, k, |i, j| q.data()[(i, j)] - mean[i]);
    let data_norm = q.data().norm_l2();
    let centered_norm = x.norm_l2();
    if data_norm == 0.0 || centered_norm <= 1e-12 * data_norm {
        return Err(Error::degenerate(
            "snapshots have no variance about their mean",
        ));
    }

    let (basis_full, singular_values) = if n <= k {
        left_vectors_from_row_gram(&x)?
    } else {
        left_vectors_from_column_gram(&x)?
    };

    let r = match target {
        RankTarget::Fixed(r) => r,
        RankTarget::Energy(tau) => {
            let cum = cumulative_ratios(&singular_values)?;
            cum.iter()
                .position(|&c| c >= tau)
                .map_or(cum.len(), |p| p + 1)
        }
    };
    let basis = basis_full.subcols(0, r).to_owned();
    Ok(ReducedBasis {
        basis,
        mean,
        singular_values,
        centered,
    })
}

fn temporal_mean(q: &SnapshotMatrix) -> Vec<f64> {
    let (n, k) = (q.nrows(), q.ncols());
    let mut mean = vec![0.0; n];
    for j in 0..k {
        for (m, v) in mean.iter_mut().zip(q.column(j)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= k as f64);
    mean
}

/// Eigen-decomposition of `X X^T` (n x n).
fn left_vectors_from_row_gram(x: &Mat<f64>) -> Result<(Mat<f64>, Vec<f64>)> {
    let n = x.nrows();
    let mut gram = Mat::<f64>::zeros(n, n);
    matmul(
        gram.as_mut(),
        Accum::Replace,
        x.as_ref(),
        x.transpose(),
        1.0,
        faer::get_global_parallelism(),
    );
    let eig = gram
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Numerical(format!("eigendecomposition failed: {e:?}")))?;
    let vals = eig.S().column_vector();
    let vecs = eig.U();
    // ascending -> descending
    let basis = Mat::from_fn(n, n, |i, j| vecs[(i, n - 1 - j)]);
    let sv = (0..n).map(|j| vals[n - 1 - j].max(0.0).sqrt()).collect();
    Ok((basis, sv))
}

/// Eigen-decomposition of `X^T X` (k x k), for fewer snapshots than states.
fn left_vectors_from_column_gram(x: &Mat<f64>) -> Result<(Mat<f64>, Vec<f64>)> {
    let (n, k) = (x.nrows(), x.ncols());
    let mut gram = Mat::<f64>::zeros(k, k);
    matmul(
        gram.as_mut(),
        Accum::Replace,
        x.transpose(),
        x.as_ref(),
        1.0,
        faer::get_global_parallelism(),
    );
    let eig = gram
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Numerical(format!("eigendecomposition failed: {e:?}")))?;
    let vals = eig.S().column_vector();
    let vecs = eig.U();
    let sv: Vec<f64> = (0..k).map(|j| vals[k - 1 - j].max(0.0).sqrt()).collect();
    let right = Mat::from_fn(k, k, |i, j| vecs[(i, k - 1 - j)]);
    let mut basis = x * &right;
    let cutoff = sv[0] * 1e-10;
    for j in 0..k {
        if sv[j] > cutoff {
            let s = sv[j];
            basis.col_as_slice_mut(j).iter_mut().for_each(|v| *v /= s);
        } else {
            // null directions: start from a canonical vector, orthogonalized below
            let col = basis.col_as_slice_mut(j);
            col.fill(0.0);
            col[j % n] = 1.0;
        }
    }
    orthonormalize(&mut basis);
    Ok((basis, sv))
}

/// Modified Gram–Schmidt, applied twice for stability.
fn orthonormalize(m: &mut Mat<f64>) {
    for _ in 0..2 {
        for j in 0..m.ncols() {
            for p in 0..j {
                let prev = m.col_as_slice(p).to_vec();
                let col = m.col_as_slice_mut(j);
                let dot: f64 = prev.iter().zip(col.iter()).map(|(a, b)| a * b).sum();
                for (c, v) in col.iter_mut().zip(&prev) {
                    *c -= dot * v;
                }
            }
            let col = m.col_as_slice_mut(j);
            let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                col.iter_mut().for_each(|v| *v /= norm);
            }
        }
    }
}

/// `V^T (Q - mean 1^T)`.
pub fn project(basis: &ReducedBasis, q: &SnapshotMatrix) -> Result<SnapshotMatrix> {
    check_dim("project: snapshot rows", basis.n(), q.nrows())?;
    let r = basis.r();
    let mut out = Mat::<f64>::zeros(r, q.ncols());
    matmul(
        out.as_mut(),
        Accum::Replace,
        basis.basis.transpose(),
        q.data().as_ref(),
        1.0,
        Par::Seq,
    );
    let shift = basis.project_state(&vec![0.0; basis.n()])?; // = -V^T mean
    for j in 0..q.ncols() {
        for (o, s) in out.col_as_slice_mut(j).iter_mut().zip(&shift) {
            *o += s;
        }
    }
    SnapshotMatrix::new(out, q.t0(), q.dt())
}

/// `V Q_r + mean 1^T`.
pub fn reconstruct(basis: &ReducedBasis, qr: &SnapshotMatrix) -> Result<SnapshotMatrix> {
    check_dim("reconstruct: latent rows", basis.r(), qr.nrows())?;
    let mut out = Mat::<f64>::zeros(basis.n(), qr.ncols());
    matmul(
        out.as_mut(),
        Accum::Replace,
        basis.basis.as_ref(),
        qr.data().as_ref(),
        1.0,
        Par::Seq,
    );
    for j in 0..qr.ncols() {
        for (o, m) in out.col_as_slice_mut(j).iter_mut().zip(&basis.mean) {
            *o += m;
        }
    }
    SnapshotMatrix::new(out, qr.t0(), qr.dt())
}

fn cumulative_ratios(singular_values: &[f64]) -> Result<Vec<f64>> {
    let total: f64 = singular_values.iter().map(|s| s * s).sum();
    if !(total > 0.0) {
        return Err(Error::degenerate("all singular values are zero"));
    }
    let mut acc = 0.0;
    let mut out: Vec<f64> = singular_values
        .iter()
        .map(|s| {
            acc += s * s;
            (acc / total).min(1.0)
        })
        .collect();
    if let Some(last) = out.last_mut() {
        *last = 1.0;
    }
    Ok(out)
}

/// Cumulative explained-variance ratio after each mode.
pub fn explained_variance(basis: &ReducedBasis) -> Result<Vec<f64>> {
    cumulative_ratios(&basis.singular_values)
}

/// `||Q - reconstruct(project(Q))||_F / ||Q||_F`.
pub fn projection_error(q: &SnapshotMatrix, basis: &ReducedBasis) -> Result<f64> {
    let norm = q.data().norm_l2();
    if norm == 0.0 {
        return Err(Error::degenerate(
            "projection error of an all-zero snapshot matrix",
        ));
    }
    let back = reconstruct(basis, &project(basis, q)?)?;
    Ok((q.data() - back.data()).norm_l2() / norm)
}
