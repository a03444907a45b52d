use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Number of unique quadratic products `q_i q_j`, `i <= j`.
pub const fn quadratic_width(r: usize) -> usize {
    r * (r + 1) / 2
}

/// Regression width `1 + r + r(r+1)/2 + m`.
pub const fn feature_count(r: usize, m: usize) -> usize {
    1 + r + quadratic_width(r) + m
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataMatrixDims {
    /// Latent dimension.
    pub r: usize,
    /// Input dimension.
    pub m: usize,
    /// Sample count.
    pub k: usize,
}

impl DataMatrixDims {
    pub fn d(&self) -> usize {
        feature_count(self.r, self.m)
    }

    /// Column offsets of the four operator blocks, `[const, linear, quadratic, input]`.
    pub fn block_starts(&self) -> [usize; 4] {
        [0, 1, 1 + self.r, 1 + self.r + quadratic_width(self.r)]
    }

    /// Bytes needed to hold a dense `k x d` data matrix.
    pub fn data_matrix_bytes(&self) -> u128 {
        self.k as u128 * self.d() as u128 * 8
    }
}

/// Upper bound on bytes a dense intermediate may occupy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryBudget(pub u64);

impl Default for MemoryBudget {
    fn default() -> Self {
        MemoryBudget(2 << 30)
    }
}

impl MemoryBudget {
    pub(crate) fn check(&self, what: &'static str, required: u128) -> Result<()> {
        if required > self.0 as u128 {
            Err(Error::MemoryBudget {
                what,
                required,
                budget: self.0 as u128,
            })
        } else {
            Ok(())
        }
    }
}

/// Unique quadratic products `[q1^2, q1 q2, ..., q1 qr, q2^2, ..., qr^2]`.
pub fn kron_comp(q: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; quadratic_width(q.len())];
    kron_comp_into(q, &mut out);
    out
}

pub fn kron_comp_into(q: &[f64], out: &mut [f64]) {
    let mut p = 0;
    for (i, &qi) in q.iter().enumerate() {
        for &qj in &q[i..] {
            out[p] = qi * qj;
            p += 1;
        }
    }
}

/// Position of `q_i q_j` (`i <= j`) in the compressed product.
pub fn compressed_index(r: usize, i: usize, j: usize) -> usize {
    debug_assert!(i <= j && j < r);
    // rows before i contribute r, r-1, ..., r-i+1 entries
    i * r - i * i.saturating_sub(1) / 2 + (j - i)
}

/// Folds a full quadratic operator acting on `q ⊗ q` (`r x r^2`) into compressed form.
///
/// The two symmetric coefficients of `q_i q_j` are summed.
pub fn compress_quadratic(h_full: &Mat<f64>) -> Result<Mat<f64>> {
    let r = h_full.nrows();
    check_dim("full quadratic operator columns", r * r, h_full.ncols())?;
    let mut out = Mat::zeros(r, quadratic_width(r));
    for a in 0..r {
        for b in 0..r {
            let (i, j) = if a <= b { (a, b) } else { (b, a) };
            let p = compressed_index(r, i, j);
            for row in 0..r {
                out[(row, p)] += h_full[(row, a * r + b)];
            }
        }
    }
    Ok(out)
}

/// Symmetric full operator whose action on `q ⊗ q` matches the compressed one.
pub fn expand_quadratic(h_comp: &Mat<f64>) -> Result<Mat<f64>> {
    let r = h_comp.nrows();
    check_dim(
        "compressed quadratic operator columns",
        quadratic_width(r),
        h_comp.ncols(),
    )?;
    let mut out = Mat::zeros(r, r * r);
    for i in 0..r {
        for j in i..r {
            let p = compressed_index(r, i, j);
            for row in 0..r {
                let v = h_comp[(row, p)];
                if i == j {
                    out[(row, i * r + i)] = v;
                } else {
                    out[(row, i * r + j)] = 0.5 * v;
                    out[(row, j * r + i)] = 0.5 * v;
                }
            }
        }
    }
    Ok(out)
}

/// Writes the feature vector `[1, q, kron_comp(q), u]` of one sample.
pub(crate) fn write_features(q: &[f64], u: Option<&[f64]>, out: &mut [f64]) {
    let r = q.len();
    out[0] = 1.0;
    out[1..=r].copy_from_slice(q);
    let qw = quadratic_width(r);
    kron_comp_into(q, &mut out[1 + r..1 + r + qw]);
    if let Some(u) = u {
        out[1 + r + qw..].copy_from_slice(u);
    }
}

pub(crate) fn check_training_shapes(
    qhat: &Mat<f64>,
    inputs: Option<&Mat<f64>>,
) -> Result<DataMatrixDims> {
    let (r, k) = (qhat.nrows(), qhat.ncols());
    if k == 0 {
        return Err(Error::config("no training samples"));
    }
    let m = match inputs {
        Some(u) => {
            check_dim("input samples", k, u.ncols())?;
            u.nrows()
        }
        None => 0,
    };
    Ok(DataMatrixDims { r, m, k })
}

/// Dense data matrix `D = [1 | Q^T | (Q ⊗ Q)^T | U^T]`, `k x d`.
///
/// Fails with [`Error::MemoryBudget`] rather than allocating past `budget`;
/// use [`gram_accumulate`](super::gram_accumulate) for large problems.
pub fn assemble_data_matrix(
    qhat: &Mat<f64>,
    inputs: Option<&Mat<f64>>,
    budget: MemoryBudget,
) -> Result<Mat<f64>> {
    let dims = check_training_shapes(qhat, inputs)?;
    budget.check("data matrix", dims.data_matrix_bytes())?;
    let d = dims.d();
    let mut row = vec![0.0; d];
    let mut out = Mat::<f64>::zeros(dims.k, d);
    let mut uj = vec![0.0; dims.m];
    for j in 0..dims.k {
        if let Some(u) = inputs {
            uj.iter_mut().enumerate().for_each(|(i, v)| *v = u[(i, j)]);
        }
        write_features(
            qhat.col_as_slice(j),
            inputs.map(|_| uj.as_slice()),
            &mut row,
        );
        for (c, &v) in row.iter().enumerate() {
            out[(j, c)] = v;
        }
    }
    Ok(out)
}
