//! Right-hand sides of the benchmark systems and of learned quadratic models.
//!
//! Everything here is a pure function of state and configuration.

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::opinf::{kron_comp_into, quadratic_width};

/// Single-tier Lorenz 96 ring.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lorenz96Config {
    pub n_vars: usize,
    pub forcing: f64,
    /// Include the linear `-X_k` term of the standard model.
    #[serde(default = "default_true")]
    pub damped: bool,
}

fn default_true() -> bool {
    true
}

impl Lorenz96Config {
    pub fn new(n_vars: usize, forcing: f64) -> Result<Self> {
        let cfg = Self {
            n_vars,
            forcing,
            damped: true,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_vars < 4 {
            return Err(Error::config(format!(
                "Lorenz 96 needs at least 4 variables, got {}",
                self.n_vars
            )));
        }
        if !self.forcing.is_finite() {
            return Err(Error::config("Lorenz 96 forcing must be finite"));
        }
        Ok(())
    }
}

#[inline]
fn wrap(i: usize, offset: isize, n: usize) -> usize {
    (i as isize + offset).rem_euclid(n as isize) as usize
}

/// `dX_k/dt = X_{k-1}(X_{k+1} - X_{k-2}) - X_k + F`, indices cyclic.
pub fn lorenz96_rhs(state: &[f64], cfg: &Lorenz96Config) -> Result<Vec<f64>> {
    cfg.validate()?;
    check_dim("lorenz96 state", cfg.n_vars, state.len())?;
    let mut out = vec![0.0; state.len()];
    lorenz96_rhs_into(state, cfg, &mut out);
    Ok(out)
}

/// Allocation-free variant; lengths are the caller's responsibility.
pub fn lorenz96_rhs_into(state: &[f64], cfg: &Lorenz96Config, out: &mut [f64]) {
    let n = state.len();
    let damping = if cfg.damped { 1.0 } else { 0.0 };
    for k in 0..n {
        let advection = state[wrap(k, -1, n)] * (state[wrap(k, 1, n)] - state[wrap(k, -2, n)]);
        out[k] = advection - damping * state[k] + cfg.forcing;
    }
}

/// Three-tier Lorenz 96 with `K` large-scale, `J` per-`X` and `I` per-`Y` variables.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lorenz96ThreeTierConfig {
    pub k: usize,
    pub j: usize,
    pub i: usize,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub e: f64,
    pub g: f64,
    pub h: f64,
    pub forcing: f64,
}

impl Lorenz96ThreeTierConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 4 || self.j < 4 || self.i < 4 {
            return Err(Error::config(format!(
                "every tier needs at least 4 variables, got (K, J, I) = ({}, {}, {})",
                self.k, self.j, self.i
            )));
        }
        let coeffs = [self.b, self.c, self.d, self.e, self.g, self.h, self.forcing];
        if coeffs.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("three-tier coefficients must be finite"));
        }
        if self.b == 0.0 || self.d == 0.0 {
            return Err(Error::config(
                "coefficients b and d appear as divisors and must be nonzero",
            ));
        }
        Ok(())
    }
}

/// State of the three-tier model.
///
/// `y[k * J + j]` is `Y_{j,k}` and `z[(k * J + j) * I + i]` is `Z_{i,j,k}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ThreeTierState {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
}

impl ThreeTierState {
    pub fn zeros(cfg: &Lorenz96ThreeTierConfig) -> Self {
        Self {
            x: vec![0.0; cfg.k],
            y: vec![0.0; cfg.k * cfg.j],
            z: vec![0.0; cfg.k * cfg.j * cfg.i],
        }
    }
}

/// Coupled three-tier tendencies. Each fast index is cyclic within its parent
/// (`Y_{j+1,k}` wraps in `j` for fixed `k`, likewise `Z` in `i`).
pub fn lorenz96_three_tier_rhs(
    state: &ThreeTierState,
    cfg: &Lorenz96ThreeTierConfig,
) -> Result<ThreeTierState> {
    cfg.validate()?;
    let (nk, nj, ni) = (cfg.k, cfg.j, cfg.i);
    check_dim("three-tier X", nk, state.x.len())?;
    check_dim("three-tier Y", nk * nj, state.y.len())?;
    check_dim("three-tier Z", nk * nj * ni, state.z.len())?;

    let (x, y, z) = (&state.x, &state.y, &state.z);
    let hcb = cfg.h * cfg.c / cfg.b;
    let hed = cfg.h * cfg.e / cfg.d;
    let mut out = ThreeTierState::zeros(cfg);

    for k in 0..nk {
        let y_sum: f64 = y[k * nj..(k + 1) * nj].iter().sum();
        out.x[k] = x[wrap(k, -1, nk)] * (x[wrap(k, 1, nk)] - x[wrap(k, -2, nk)]) + cfg.forcing
            - hcb * y_sum;

        let yk = &y[k * nj..(k + 1) * nj];
        for j in 0..nj {
            let base = (k * nj + j) * ni;
            let zkj = &z[base..base + ni];
            let z_sum: f64 = zkj.iter().sum();
            out.y[k * nj + j] =
                -cfg.c * cfg.b * yk[wrap(j, 1, nj)] * (yk[wrap(j, 2, nj)] - yk[wrap(j, -1, nj)])
                    - cfg.c * yk[j]
                    + hcb * x[k]
                    - hed * z_sum;

            for i in 0..ni {
                out.z[base + i] = cfg.e
                    * cfg.d
                    * zkj[wrap(i, -1, ni)]
                    * (zkj[wrap(i, 1, ni)] - zkj[wrap(i, -2, ni)])
                    - cfg.g * cfg.e * zkj[i]
                    + hed * yk[j];
            }
        }
    }
    Ok(out)
}

/// `[sigma (y - x), x (rho - z) - y, x y - beta z]`.
pub fn lorenz63_rhs(state: &[f64], sigma: f64, rho: f64, beta: f64) -> Result<[f64; 3]> {
    check_dim("lorenz63 state", 3, state.len())?;
    let (x, y, z) = (state[0], state[1], state[2]);
    Ok([sigma * (y - x), x * (rho - z) - y, x * y - beta * z])
}

pub const LORENZ63_SIGMA: f64 = 10.0;
pub const LORENZ63_RHO: f64 = 28.0;
pub const LORENZ63_BETA: f64 = 8.0 / 3.0;

/// `dq/dt = c + A q + H kron_comp(q) + B u` with a compressed quadratic operator.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticModel {
    pub c: Vec<f64>,
    pub a: Mat<f64>,
    pub h: Mat<f64>,
    pub b: Mat<f64>,
}

impl QuadraticModel {
    pub fn zeros(r: usize, m: usize) -> Self {
        Self {
            c: vec![0.0; r],
            a: Mat::zeros(r, r),
            h: Mat::zeros(r, quadratic_width(r)),
            b: Mat::zeros(r, m),
        }
    }

    pub fn new(c: Vec<f64>, a: Mat<f64>, h: Mat<f64>, b: Mat<f64>) -> Result<Self> {
        let model = Self { c, a, h, b };
        model.validate()?;
        Ok(model)
    }

    pub fn r(&self) -> usize {
        self.c.len()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.r();
        check_dim("A rows", r, self.a.nrows())?;
        check_dim("A cols", r, self.a.ncols())?;
        check_dim("H rows", r, self.h.nrows())?;
        check_dim("H cols", quadratic_width(r), self.h.ncols())?;
        check_dim("B rows", r, self.b.nrows())?;
        let finite = self.c.iter().all(|v| v.is_finite())
            && [&self.a, &self.h, &self.b]
                .iter()
                .all(|m| (0..m.ncols()).all(|j| m.col_as_slice(j).iter().all(|v| v.is_finite())));
        if !finite {
            return Err(Error::Numerical(
                "quadratic model has non-finite entries".into(),
            ));
        }
        Ok(())
    }

    pub fn rhs(&self, state: &[f64], input: Option<&[f64]>) -> Result<Vec<f64>> {
        check_dim("quadratic state", self.r(), state.len())?;
        match input {
            Some(u) => check_dim("quadratic input", self.m(), u.len())?,
            None if self.m() > 0 => {
                return Err(Error::config(
                    "model has an input operator but no input was given",
                ))
            }
            None => {}
        }
        let mut out = vec![0.0; self.r()];
        let mut scratch = vec![0.0; quadratic_width(self.r())];
        self.rhs_into(state, input, &mut scratch, &mut out);
        Ok(out)
    }

    /// Allocation-free evaluation. `scratch` must hold `r(r+1)/2` values.
    pub fn rhs_into(
        &self,
        state: &[f64],
        input: Option<&[f64]>,
        scratch: &mut [f64],
        out: &mut [f64],
    ) {
        out.copy_from_slice(&self.c);
        axpy_columns(&self.a, state, out);
        kron_comp_into(state, scratch);
        axpy_columns(&self.h, scratch, out);
        if let Some(u) = input {
            axpy_columns(&self.b, u, out);
        }
    }
}

/// `out += M x`, column by column.
fn axpy_columns(m: &Mat<f64>, x: &[f64], out: &mut [f64]) {
    for (j, &xj) in x.iter().enumerate() {
        if xj == 0.0 {
            continue;
        }
        for (o, &mij) in out.iter_mut().zip(m.col_as_slice(j)) {
            *o += mij * xj;
        }
    }
}

/// Free-function form of [`QuadraticModel::rhs`].
pub fn quadratic_rhs(
    model: &QuadraticModel,
    state: &[f64],
    input: Option<&[f64]>,
) -> Result<Vec<f64>> {
    model.rhs(state, input)
}
