use faer::Mat;

use crate::error::{Error, Result};

/// Second-order finite differences along the columns of `qhat`.
///
/// Central in the interior, one-sided three-point stencils at both ends.
pub fn estimate_derivatives(qhat: &Mat<f64>, dt: f64) -> Result<Mat<f64>> {
    let (r, k) = (qhat.nrows(), qhat.ncols());
    if k < 3 {
        return Err(Error::config(format!(
            "derivative estimation needs at least 3 samples, got {k}"
        )));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::config(format!("dt must be positive, got {dt}")));
    }
    let h2 = 0.5 / dt;
    let mut out = Mat::<f64>::zeros(r, k);
    for j in 1..k - 1 {
        for i in 0..r {
            out[(i, j)] = (qhat[(i, j + 1)] - qhat[(i, j - 1)]) * h2;
        }
    }
    for i in 0..r {
        out[(i, 0)] = (-3.0 * qhat[(i, 0)] + 4.0 * qhat[(i, 1)] - qhat[(i, 2)]) * h2;
        out[(i, k - 1)] = (3.0 * qhat[(i, k - 1)] - 4.0 * qhat[(i, k - 2)] + qhat[(i, k - 3)]) * h2;
    }
    Ok(out)
}

/// Derivatives taken directly from a known right-hand side.
pub fn exact_derivatives<F>(qhat: &Mat<f64>, mut rhs: F) -> Mat<f64>
where
    F: FnMut(&[f64], &mut [f64]),
{
    let mut out = Mat::<f64>::zeros(qhat.nrows(), qhat.ncols());
    for j in 0..qhat.ncols() {
        rhs(qhat.col_as_slice(j), out.col_as_slice_mut(j));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sampled(k: usize, dt: f64, f: impl Fn(f64) -> f64) -> Mat<f64> {
        Mat::from_fn(1, k, |_, j| f(j as f64 * dt))
    }

    #[test]
    fn exact_on_linear_and_quadratic() {
        let r = estimate_derivatives(&sampled(6, 0.5, |t| 3.0 * t - 1.0), 0.5).unwrap();
        assert!((0..6).all(|j| (r[(0, j)] - 3.0).abs() < 1e-13));

        let dt = 0.1;
        let r = estimate_derivatives(&sampled(8, dt, |t| t * t), dt).unwrap();
        for j in 0..8 {
            assert!((r[(0, j)] - 2.0 * j as f64 * dt).abs() < 1e-12, "j={j}");
        }
    }

    #[test]
    fn second_order_convergence() {
        let err = |dt: f64| {
            let k = (2.0 / dt).round() as usize + 1;
            let r = estimate_derivatives(&sampled(k, dt, f64::sin), dt).unwrap();
            (0..k)
                .map(|j| (r[(0, j)] - (j as f64 * dt).cos()).abs())
                .fold(0.0, f64::max)
        };
        let (e1, e2) = (err(0.01), err(0.005));
        let ratio = e1 / e2;
        assert!(ratio > 3.6 && ratio < 4.4, "ratio {ratio}");
    }

    #[test]
    fn too_few_samples() {
        assert!(matches!(
            estimate_derivatives(&Mat::zeros(2, 2), 0.1),
            Err(Error::Config(_))
        ));
        assert!(estimate_derivatives(&Mat::zeros(2, 3), 0.0).is_err());
    }

    #[test]
    fn exact_mode_applies_rhs() {
        let q = Mat::from_fn(2, 3, |i, j| (i + j) as f64);
        let r = exact_derivatives(&q, |x, dx| {
            dx[0] = x[1];
            dx[1] = -x[0];
        });
        assert_eq!(r[(0, 2)], 3.0);
        assert_eq!(r[(1, 2)], -2.0);
    }
}
