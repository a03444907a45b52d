//! Forecast-quality metrics.
//!
//! Times in a [`MetricSeries`] are measured from the forecast start, so VPT is
//! the length of the valid prefix times the Lyapunov exponent.

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSeries {
    pub times: Vec<f64>,
    /// Non-negative; `+inf` marks samples after a forecast diverged.
    pub values: Vec<f64>,
    pub lyapunov_exponent: f64,
}

impl MetricSeries {
    pub fn new(times: Vec<f64>, values: Vec<f64>, lyapunov_exponent: f64) -> Result<Self> {
        check_dim("metric series values", times.len(), values.len())?;
        if !(lyapunov_exponent > 0.0 && lyapunov_exponent.is_finite()) {
            return Err(Error::config(format!(
                "Lyapunov exponent must be positive, got {lyapunov_exponent}"
            )));
        }
        if values.iter().any(|v| v.is_nan() || *v < 0.0) {
            return Err(Error::Numerical(
                "metric values must be non-negative".into(),
            ));
        }
        Ok(Self {
            times,
            values,
            lyapunov_exponent,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Times in Lyapunov units.
    pub fn lyapunov_times(&self) -> Vec<f64> {
        self.times
            .iter()
            .map(|t| t * self.lyapunov_exponent)
            .collect()
    }

    /// Appends `+inf` samples at `times`, for horizons a forecast never reached.
    pub fn extend_diverged(&mut self, times: &[f64]) {
        self.times.extend_from_slice(times);
        self.values
            .extend(std::iter::repeat_n(f64::INFINITY, times.len()));
    }

    pub fn mean(&self) -> f64 {
        if self.values.is_empty() {
            return f64::NAN;
        }
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

/// Population standard deviation of every row of `truth`.
pub fn series_sigma(truth: &Mat<f64>) -> Vec<f64> {
    let (n, k) = (truth.nrows(), truth.ncols());
    let mut mean = vec![0.0; n];
    for j in 0..k {
        for (m, v) in mean.iter_mut().zip(truth.col_as_slice(j)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= k.max(1) as f64);
    let mut var = vec![0.0; n];
    for j in 0..k {
        for i in 0..n {
            let e = truth[(i, j)] - mean[i];
            var[i] += e * e;
        }
    }
    var.into_iter()
        .map(|v| (v / k.max(1) as f64).sqrt())
        .collect()
}

fn check_pair(truth: &Mat<f64>, pred: &Mat<f64>, sigma: &[f64]) -> Result<()> {
    check_dim("prediction rows", truth.nrows(), pred.nrows())?;
    check_dim("prediction columns", truth.ncols(), pred.ncols())?;
    check_dim("sigma length", truth.nrows(), sigma.len())?;
    if let Some(i) = sigma.iter().position(|s| !(*s > 0.0)) {
        return Err(Error::degenerate(format!(
            "series {i} has zero standard deviation"
        )));
    }
    Ok(())
}

/// `sqrt(mean_i ((x_i - xhat_i) / sigma_i)^2)` at every column.
pub fn nrmse_values(truth: &Mat<f64>, pred: &Mat<f64>, sigma: &[f64]) -> Result<Vec<f64>> {
    check_pair(truth, pred, sigma)?;
    let n = truth.nrows() as f64;
    Ok((0..truth.ncols())
        .map(|j| {
            let s: f64 = truth
                .col_as_slice(j)
                .iter()
                .zip(pred.col_as_slice(j))
                .zip(sigma)
                .map(|((a, b), s)| ((a - b) / s).powi(2))
                .sum();
            let v = (s / n).sqrt();
            if v.is_nan() {
                f64::INFINITY
            } else {
                v
            }
        })
        .collect())
}

/// NRMSE series with times taken relative to `times[0]`.
pub fn nrmse(
    truth: &Mat<f64>,
    pred: &Mat<f64>,
    sigma: &[f64],
    times: &[f64],
    lyapunov_exponent: f64,
) -> Result<MetricSeries> {
    check_dim("metric times", truth.ncols(), times.len())?;
    let values = nrmse_values(truth, pred, sigma)?;
    let t0 = times.first().copied().unwrap_or(0.0);
    MetricSeries::new(
        times.iter().map(|t| t - t0).collect(),
        values,
        lyapunov_exponent,
    )
}

/// Pointwise `|x_i(t) - xhat_i(t)| / sigma_i`.
pub fn nrse_field(truth: &Mat<f64>, pred: &Mat<f64>, sigma: &[f64]) -> Result<Mat<f64>> {
    check_pair(truth, pred, sigma)?;
    Ok(Mat::from_fn(truth.nrows(), truth.ncols(), |i, j| {
        (truth[(i, j)] - pred[(i, j)]).abs() / sigma[i]
    }))
}

/// Valid prediction time in Lyapunov units: the longest prefix with NRMSE below `epsilon`.
pub fn vpt(series: &MetricSeries, epsilon: f64) -> f64 {
    let valid = series.values.iter().take_while(|v| **v < epsilon).count();
    if valid == 0 {
        return 0.0;
    }
    (series.times[valid - 1] - series.times[0]) * series.lyapunov_exponent
}

/// `||truth - pred||_F / ||truth||_F`.
pub fn relative_l2(truth: &Mat<f64>, pred: &Mat<f64>) -> Result<f64> {
    check_dim("prediction rows", truth.nrows(), pred.nrows())?;
    check_dim("prediction columns", truth.ncols(), pred.ncols())?;
    let denom = truth.norm_l2();
    if denom == 0.0 {
        return Err(Error::degenerate(
            "relative error against an all-zero truth",
        ));
    }
    Ok((truth - pred).norm_l2() / denom)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VptSummary {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

pub fn aggregate_vpt(vpts: &[f64]) -> Result<VptSummary> {
    if vpts.is_empty() {
        return Err(Error::config("no VPT values to aggregate"));
    }
    let n = vpts.len() as f64;
    let mean = vpts.iter().sum::<f64>() / n;
    let var = vpts.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Ok(VptSummary {
        min: vpts.iter().copied().fold(f64::INFINITY, f64::min),
        max: vpts.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        mean,
        std: var.sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn row(v: &[f64]) -> Mat<f64> {
        Mat::from_fn(1, v.len(), |_, j| v[j])
    }

    fn series(values: &[f64], lyap: f64) -> MetricSeries {
        MetricSeries::new(
            (0..values.len()).map(|i| i as f64).collect(),
            values.to_vec(),
            lyap,
        )
        .unwrap()
    }

    #[test]
    fn nrmse_hand_examples() {
        let t = row(&[0.0, 0.0]);
        assert_eq!(nrmse_values(&t, &t, &[1.0]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(
            nrmse_values(&t, &row(&[1.0, 0.0]), &[2.0]).unwrap(),
            vec![0.5, 0.0]
        );

        let truth = Mat::<f64>::zeros(2, 1);
        let pred = Mat::from_fn(2, 1, |i, _| [3.0, 4.0][i]);
        let v = nrmse_values(&truth, &pred, &[1.0, 1.0]).unwrap();
        assert_eq!(v[0], 12.5f64.sqrt());
        assert!((v[0] - 3.5355).abs() < 1e-4);
    }

    #[test]
    fn zero_sigma_names_series() {
        let t = Mat::<f64>::zeros(3, 2);
        let err = nrmse_values(&t, &t, &[1.0, 0.0, 1.0]).unwrap_err();
        assert!(err.to_string().contains("series 1"), "{err}");
        assert!(nrse_field(&t, &t, &[1.0, 1.0, 0.0]).is_err());
    }

    #[test]
    fn sigma_is_population_std() {
        let t = Mat::from_fn(
            2,
            4,
            |i, j| if i == 0 { [1.0, 2.0, 3.0, 4.0][j] } else { 7.0 },
        );
        let s = series_sigma(&t);
        assert!((s[0] - 1.25f64.sqrt()).abs() < 1e-15);
        assert_eq!(s[1], 0.0);
    }

    #[test]
    fn nrse_examples() {
        let t = Mat::<f64>::zeros(2, 3);
        assert_eq!(nrse_field(&t, &t, &[1.0, 1.0]).unwrap(), t);
        let f = nrse_field(&row(&[0.0]), &row(&[2.0]), &[2.0]).unwrap();
        assert_eq!(f[(0, 0)], 1.0);
    }

    #[test]
    fn nrse_rms_matches_nrmse() {
        let truth = Mat::from_fn(5, 7, |i, j| ((i * 7 + j) as f64).sin());
        let pred = Mat::from_fn(5, 7, |i, j| ((i * 7 + j) as f64 * 1.1).cos());
        let sigma = [0.5, 1.0, 1.5, 2.0, 0.3];
        let field = nrse_field(&truth, &pred, &sigma).unwrap();
        let v = nrmse_values(&truth, &pred, &sigma).unwrap();
        for j in 0..7 {
            let rms = ((0..5).map(|i| field[(i, j)].powi(2)).sum::<f64>() / 5.0).sqrt();
            assert!((rms - v[j]).abs() < 1e-14);
        }
    }

    #[test]
    fn vpt_examples() {
        assert_eq!(vpt(&series(&[0.1, 0.2, 0.3], 2.0), 0.5), 4.0);
        assert_eq!(vpt(&series(&[0.1, 0.3, 0.6, 0.4], 2.0), 0.5), 2.0);
        assert_eq!(vpt(&series(&[0.7, 0.1], 2.0), 0.5), 0.0);
        let mut s = series(&[0.1, 0.1], 1.0);
        s.extend_diverged(&[2.0, 3.0]);
        assert_eq!(vpt(&s, 0.5), 1.0);
        assert_eq!(s.values[3], f64::INFINITY);
    }

    #[test]
    fn vpt_uses_relative_times() {
        let s = MetricSeries::new(vec![10.0, 10.5, 11.0], vec![0.0, 0.1, 0.9], 1.0).unwrap();
        assert_eq!(vpt(&s, 0.5), 0.5);
    }

    #[test]
    fn relative_l2_examples() {
        let t = Mat::from_fn(3, 4, |i, j| (i + 2 * j) as f64 - 2.5);
        assert_eq!(relative_l2(&t, &t).unwrap(), 0.0);
        assert_eq!(relative_l2(&t, &Mat::zeros(3, 4)).unwrap(), 1.0);
        assert!(relative_l2(&Mat::zeros(3, 4), &t).is_err());
    }

    #[test]
    fn aggregate_examples() {
        let s = aggregate_vpt(&[5.0, 5.0, 5.0]).unwrap();
        assert_eq!((s.min, s.max, s.mean, s.std), (5.0, 5.0, 5.0, 0.0));
        let s = aggregate_vpt(&[1.0, 3.0]).unwrap();
        assert_eq!((s.mean, s.std), (2.0, 1.0));
        assert!(aggregate_vpt(&[]).is_err());
    }

    #[test]
    fn series_validation() {
        assert!(MetricSeries::new(vec![0.0], vec![], 1.0).is_err());
        assert!(MetricSeries::new(vec![0.0], vec![0.1], 0.0).is_err());
        assert!(MetricSeries::new(vec![0.0], vec![-0.1], 1.0).is_err());
    }

    proptest! {
        #[test]
        fn vpt_monotone_in_epsilon(values in prop::collection::vec(0.0f64..2.0, 1..60), e1 in 0.01f64..2.0, e2 in 0.01f64..2.0) {
            let s = series(&values, 0.7);
            let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
            prop_assert!(vpt(&s, lo) <= vpt(&s, hi));
        }

        #[test]
        fn vpt_depends_only_on_predicate(values in prop::collection::vec(0.0f64..2.0, 1..60)) {
            // strictly increasing map fixing 0.5
            let s = series(&values, 1.3);
            let mapped: Vec<f64> = values.iter().map(|v| 0.5 * (v / 0.5).powi(3)).collect();
            prop_assert_eq!(vpt(&s, 0.5), vpt(&series(&mapped, 1.3), 0.5));
        }

        #[test]
        fn nrmse_permutation_invariant(seed in 0u64..1000) {
            let n = 4;
            let truth = Mat::from_fn(n, 6, |i, j| ((seed as usize + i * 6 + j) as f64).sin());
            let pred = Mat::from_fn(n, 6, |i, j| ((seed as usize + i * 3 + j) as f64).cos());
            let sigma = [0.4, 0.9, 1.7, 2.2];
            let perm = [2usize, 0, 3, 1];
            let pt = Mat::from_fn(n, 6, |i, j| truth[(perm[i], j)]);
            let pp = Mat::from_fn(n, 6, |i, j| pred[(perm[i], j)]);
            let ps: Vec<f64> = perm.iter().map(|&p| sigma[p]).collect();
            let a = nrmse_values(&truth, &pred, &sigma).unwrap();
            let b = nrmse_values(&pt, &pp, &ps).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() <= 1e-14 * x.max(1.0));
            }
        }

        #[test]
        fn relative_l2_scale_invariant(c in prop::sample::select(vec![-3.0, -0.5, 0.25, 2.0, 1e3])) {
            let truth = Mat::from_fn(3, 5, |i, j| (i * 5 + j) as f64 + 1.0);
            let pred = Mat::from_fn(3, 5, |i, j| (i * 5 + j) as f64 * 0.9);
            let a = relative_l2(&truth, &pred).unwrap();
            let b = relative_l2(&(&truth * faer::Scale(c)), &(&pred * faer::Scale(c))).unwrap();
            prop_assert!((a - b).abs() < 1e-14);
        }
    }
}
