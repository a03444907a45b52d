use faer::linalg::matmul::matmul;
use faer::linalg::matmul::triangular::{self, BlockStructure};
use faer::{Accum, Mat, Par};

use super::features::{check_training_shapes, write_features, DataMatrixDims, MemoryBudget};
use crate::error::{check_dim, Error, Result};

/// `D^T D` and `D^T R^T`, plus `||R||_F^2` for cheap residuals.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalEquations {
    /// Symmetric, `d x d`.
    pub gram: Mat<f64>,
    /// `d x r`.
    pub cross: Mat<f64>,
    pub dims: DataMatrixDims,
    pub target_sq_norm: f64,
}

impl NormalEquations {
    pub fn bytes(dims: &DataMatrixDims) -> u128 {
        let d = dims.d() as u128;
        d * (d + dims.r as u128) * 8
    }
}

/// Default number of samples per batch.
pub const DEFAULT_BATCH: usize = 2048;

/// Builds the normal equations batch by batch without forming `D`.
///
/// Batches are contiguous column ranges of `qhat` summed in index order, so the
/// result is reproducible for a fixed `batch_size`.
pub fn gram_accumulate(
    qhat: &Mat<f64>,
    inputs: Option<&Mat<f64>>,
    rhat: &Mat<f64>,
    batch_size: usize,
    budget: MemoryBudget,
) -> Result<NormalEquations> {
    gram_accumulate_with(
        qhat,
        inputs,
        rhat,
        batch_size,
        budget,
        faer::get_global_parallelism(),
    )
}

pub fn gram_accumulate_with(
    qhat: &Mat<f64>,
    inputs: Option<&Mat<f64>>,
    rhat: &Mat<f64>,
    batch_size: usize,
    budget: MemoryBudget,
    par: Par,
) -> Result<NormalEquations> {
    let dims = check_training_shapes(qhat, inputs)?;
    check_dim("derivative rows", dims.r, rhat.nrows())?;
    check_dim("derivative columns", dims.k, rhat.ncols())?;
    if batch_size == 0 {
        return Err(Error::config("batch_size must be at least 1"));
    }
    let d = dims.d();
    let b = batch_size.min(dims.k);
    budget.check(
        "normal equations plus one feature batch",
        NormalEquations::bytes(&dims) + (d as u128 + dims.r as u128) * b as u128 * 8,
    )?;

    let mut gram = Mat::<f64>::zeros(d, d);
    let mut cross = Mat::<f64>::zeros(d, dims.r);
    let mut feats = Mat::<f64>::zeros(d, b);
    let mut uj = vec![0.0; dims.m];
    let mut target_sq_norm = 0.0;

    let mut start = 0;
    while start < dims.k {
        let nb = b.min(dims.k - start);
        for s in 0..nb {
            let j = start + s;
            if let Some(u) = inputs {
                uj.iter_mut().enumerate().for_each(|(i, v)| *v = u[(i, j)]);
            }
            write_features(
                qhat.col_as_slice(j),
                inputs.map(|_| uj.as_slice()),
                feats.col_as_slice_mut(s),
            );
        }
        let f = feats.as_ref().subcols(0, nb);
        let rb = rhat.as_ref().subcols(start, nb);
        triangular::matmul(
            gram.as_mut(),
            BlockStructure::TriangularLower,
            Accum::Add,
            f,
            BlockStructure::Rectangular,
            f.transpose(),
            BlockStructure::Rectangular,
            1.0,
            par,
        );
        matmul(cross.as_mut(), Accum::Add, f, rb.transpose(), 1.0, par);
        for j in 0..nb {
            target_sq_norm += rb.col(j).iter().map(|v| v * v).sum::<f64>();
        }
        start += nb;
    }
    for j in 0..d {
        for i in 0..j {
            gram[(i, j)] = gram[(j, i)];
        }
    }
    Ok(NormalEquations {
        gram,
        cross,
        dims,
        target_sq_norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::opinf::assemble_data_matrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, k: usize, seed: u64) -> Mat<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Mat::from_fn(n, k, |_, _| rng.random_range(-1.0..1.0))
    }

    fn rel(a: &Mat<f64>, b: &Mat<f64>) -> f64 {
        (a - b).norm_l2() / b.norm_l2()
    }

    #[test]
    fn matches_dense_products() {
        let (q, u, r) = (random(4, 300, 1), random(2, 300, 2), random(4, 300, 3));
        let d = assemble_data_matrix(&q, Some(&u), MemoryBudget::default()).unwrap();
        let gram = d.transpose() * &d;
        let cross = d.transpose() * r.transpose();
        for bs in [300, 64, 7, 1] {
            let ne = gram_accumulate(&q, Some(&u), &r, bs, MemoryBudget::default()).unwrap();
            assert!(rel(&ne.gram, &gram) < 1e-13, "bs={bs}");
            assert!(rel(&ne.cross, &cross) < 1e-13, "bs={bs}");
            assert!((ne.target_sq_norm - r.norm_l2().powi(2)).abs() < 1e-10);
            assert_eq!(ne.gram, ne.gram.transpose().to_owned());
        }
    }

    #[test]
    fn zero_states_give_single_entry() {
        let k = 17;
        let ne = gram_accumulate(
            &Mat::zeros(3, k),
            None,
            &Mat::zeros(3, k),
            5,
            MemoryBudget::default(),
        )
        .unwrap();
        assert_eq!(ne.gram[(0, 0)], k as f64);
        let nonzero = (0..ne.gram.ncols())
            .flat_map(|j| ne.gram.col_as_slice(j).iter())
            .filter(|v| **v != 0.0)
            .count();
        assert_eq!(nonzero, 1);
    }

    #[test]
    fn bitwise_independent_of_thread_count() {
        let (q, r) = (random(9, 700, 4), random(9, 700, 5));
        let a = gram_accumulate_with(&q, None, &r, 128, MemoryBudget::default(), Par::Seq).unwrap();
        let b = gram_accumulate_with(&q, None, &r, 128, MemoryBudget::default(), Par::rayon(3))
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_arguments() {
        let q = random(2, 10, 6);
        let budget = MemoryBudget::default();
        assert!(matches!(
            gram_accumulate(&q, None, &q, 0, budget),
            Err(Error::Config(_))
        ));
        assert!(gram_accumulate(&q, None, &random(3, 10, 7), 4, budget).is_err());
        assert!(matches!(
            gram_accumulate(&q, None, &q, 4, MemoryBudget(64)),
            Err(Error::MemoryBudget { .. })
        ));
    }
}
