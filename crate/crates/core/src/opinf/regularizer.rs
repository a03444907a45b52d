use serde::{Deserialize, Serialize};

use super::features::{quadratic_width, DataMatrixDims};
use crate::error::{Error, Result};

/// Tikhonov weights for the constant, linear, quadratic and input blocks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegularizerSpec {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lambda4: f64,
}

impl RegularizerSpec {
    pub fn new(lambda1: f64, lambda2: f64, lambda3: f64, lambda4: f64) -> Result<Self> {
        let s = Self {
            lambda1,
            lambda2,
            lambda3,
            lambda4,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn uniform(lambda: f64) -> Result<Self> {
        Self::new(lambda, lambda, lambda, lambda)
    }

    /// The experimental convention: `lambda1 = lambda2`, `lambda4 = 0`.
    pub fn tied(lambda2: f64, lambda3: f64) -> Result<Self> {
        Self::new(lambda2, lambda2, lambda3, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
            ("lambda4", self.lambda4),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        [self.lambda1, self.lambda2, self.lambda3, self.lambda4]
            .iter()
            .all(|v| *v == 0.0)
    }
}

/// Diagonal of Γ. Each block of the feature vector gets its own weight:
/// index 0, then `r` linear, `r(r+1)/2` quadratic and `m` input entries.
pub fn build_gamma(spec: &RegularizerSpec, dims: &DataMatrixDims) -> Vec<f64> {
    let mut g = Vec::with_capacity(dims.d());
    g.push(spec.lambda1);
    g.extend(std::iter::repeat_n(spec.lambda2, dims.r));
    g.extend(std::iter::repeat_n(spec.lambda3, quadratic_width(dims.r)));
    g.extend(std::iter::repeat_n(spec.lambda4, dims.m));
    g
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims(r: usize, m: usize) -> DataMatrixDims {
        DataMatrixDims { r, m, k: 1 }
    }

    #[test]
    fn examples() {
        let s = RegularizerSpec::new(1.0, 2.0, 3.0, 9.0).unwrap();
        assert_eq!(
            build_gamma(&s, &dims(2, 0)),
            vec![1.0, 2.0, 2.0, 3.0, 3.0, 3.0]
        );
        let s = RegularizerSpec::new(1.0, 2.0, 3.0, 4.0).unwrap();
        assert_eq!(build_gamma(&s, &dims(1, 1)), vec![1.0, 2.0, 3.0, 4.0]);
        let g = build_gamma(&RegularizerSpec::uniform(0.7).unwrap(), &dims(5, 2));
        assert_eq!(g.len(), dims(5, 2).d());
        assert!(g.iter().all(|v| *v == 0.7));
    }

    #[test]
    fn tied_convention() {
        let s = RegularizerSpec::tied(1e-3, 1e2).unwrap();
        assert_eq!(
            (s.lambda1, s.lambda2, s.lambda3, s.lambda4),
            (1e-3, 1e-3, 1e2, 0.0)
        );
        assert!(!s.is_zero());
        assert!(RegularizerSpec::uniform(0.0).unwrap().is_zero());
    }

    #[test]
    fn rejects_negative() {
        assert!(RegularizerSpec::new(-1.0, 0.0, 0.0, 0.0).is_err());
        assert!(RegularizerSpec::tied(0.0, f64::NAN).is_err());
    }
}
