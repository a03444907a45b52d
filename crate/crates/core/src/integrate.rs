//! Explicit Runge–Kutta integration onto a uniform output grid.
//!
//! `Rk45Adaptive` is the Dormand–Prince 5(4) pair with PI step-size control and
//! the 4th-order continuous extension; `Rk4Fixed` takes classical RK4 steps of
//! exactly `dt_output`.

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::error::{Error, IntegrationFailure, Result};
use crate::snapshot::SnapshotMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Rk4Fixed,
    Rk45Adaptive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorSpec {
    pub method: Method,
    pub rtol: f64,
    pub atol: f64,
    pub dt_output: f64,
    pub max_steps: usize,
    /// Abort once any component exceeds this magnitude.
    #[serde(default)]
    pub state_bound: Option<f64>,
}

impl Default for IntegratorSpec {
    fn default() -> Self {
        Self {
            method: Method::Rk45Adaptive,
            rtol: 1e-6,
            atol: 1e-9,
            dt_output: 0.01,
            max_steps: 10_000_000,
            state_bound: None,
        }
    }
}

impl IntegratorSpec {
    pub fn adaptive(rtol: f64, atol: f64, dt_output: f64) -> Self {
        Self {
            rtol,
            atol,
            dt_output,
            ..Self::default()
        }
    }

    pub fn fixed(dt_output: f64) -> Self {
        Self {
            method: Method::Rk4Fixed,
            dt_output,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt_output > 0.0 && self.dt_output.is_finite()) {
            return Err(Error::config(format!(
                "dt_output must be positive, got {}",
                self.dt_output
            )));
        }
        if self.method == Method::Rk45Adaptive && !(self.rtol > 0.0 && self.atol > 0.0) {
            return Err(Error::config(
                "adaptive integration needs rtol > 0 and atol > 0",
            ));
        }
        if matches!(self.state_bound, Some(b) if !(b > 0.0)) {
            return Err(Error::config("state_bound must be positive"));
        }
        if self.max_steps == 0 {
            return Err(Error::config("max_steps must be positive"));
        }
        Ok(())
    }
}

/// Integrates `dq/dt = rhs(t, q)` from `t0` to `t1` and samples the solution at
/// `t0 + i * dt_output`.
///
/// `rhs(t, q, dq)` writes the derivative into `dq`. On failure the returned
/// [`IntegrationFailure`] carries the samples produced so far.
pub fn integrate<F>(
    mut rhs: F,
    q0: &[f64],
    t0: f64,
    t1: f64,
    spec: &IntegratorSpec,
) -> Result<SnapshotMatrix>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    spec.validate()?;
    if !(t1 >= t0) || !t0.is_finite() || !t1.is_finite() {
        return Err(Error::config(format!(
            "need finite t1 >= t0, got [{t0}, {t1}]"
        )));
    }
    if q0.iter().any(|v| !v.is_finite()) {
        return Err(Error::config("initial state has non-finite values"));
    }
    let n_out = crate::spectral::steps_for(t1 - t0, spec.dt_output)? + 1;
    let mut out = Output::new(q0.len(), n_out, t0, spec.dt_output);
    out.push(q0);

    let result = match spec.method {
        Method::Rk4Fixed => rk4_fixed(&mut rhs, q0, &mut out, spec),
        Method::Rk45Adaptive => dopri5(&mut rhs, q0, &mut out, spec),
    };
    match result {
        Ok(()) => out.finish(),
        Err((last_valid_time, reason)) => {
            let partial = out.finish()?;
            Err(Error::Integration(Box::new(IntegrationFailure {
                last_valid_time,
                reason,
                partial,
            })))
        }
    }
}

struct Output {
    data: Mat<f64>,
    filled: usize,
    t0: f64,
    dt: f64,
}

impl Output {
    fn new(n: usize, k: usize, t0: f64, dt: f64) -> Self {
        Self {
            data: Mat::zeros(n, k),
            filled: 0,
            t0,
            dt,
        }
    }

    fn capacity(&self) -> usize {
        self.data.ncols()
    }

    fn next_time(&self) -> f64 {
        self.t0 + self.filled as f64 * self.dt
    }

    fn push(&mut self, q: &[f64]) {
        self.data.col_as_slice_mut(self.filled).copy_from_slice(q);
        self.filled += 1;
    }

    fn push_with(&mut self, f: impl FnOnce(&mut [f64])) {
        f(self.data.col_as_slice_mut(self.filled));
        self.filled += 1;
    }

    fn done(&self) -> bool {
        self.filled == self.capacity()
    }

    fn finish(self) -> Result<SnapshotMatrix> {
        let data = if self.filled == self.capacity() {
            self.data
        } else {
            self.data.subcols(0, self.filled).to_owned()
        };
        SnapshotMatrix::new(data, self.t0, self.dt)
    }
}

type StepFailure = (f64, String);

fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

fn check_state(y: &[f64], t: f64, spec: &IntegratorSpec) -> Result<(), StepFailure> {
    if !all_finite(y) {
        return Err((t, "state became non-finite".into()));
    }
    if let Some(bound) = spec.state_bound {
        if let Some(v) = y.iter().find(|v| v.abs() > bound) {
            return Err((t, format!("state magnitude {v:e} exceeded bound {bound:e}")));
        }
    }
    Ok(())
}

fn rk4_fixed<F>(
    rhs: &mut F,
    q0: &[f64],
    out: &mut Output,
    spec: &IntegratorSpec,
) -> Result<(), StepFailure>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let n = q0.len();
    let h = spec.dt_output;
    let mut y = q0.to_vec();
    let (mut k1, mut k2, mut k3, mut k4, mut tmp) = (
        vec![0.0; n],
        vec![0.0; n],
        vec![0.0; n],
        vec![0.0; n],
        vec![0.0; n],
    );
    let mut steps = 0usize;
    while !out.done() {
        let t = out.next_time() - h;
        if steps >= spec.max_steps {
            return Err((t, format!("step limit {} reached", spec.max_steps)));
        }
        rhs(t, &y, &mut k1);
        for i in 0..n {
            tmp[i] = y[i] + 0.5 * h * k1[i];
        }
        rhs(t + 0.5 * h, &tmp, &mut k2);
        for i in 0..n {
            tmp[i] = y[i] + 0.5 * h * k2[i];
        }
        rhs(t + 0.5 * h, &tmp, &mut k3);
        for i in 0..n {
            tmp[i] = y[i] + h * k3[i];
        }
        rhs(t + h, &tmp, &mut k4);
        for i in 0..n {
            tmp[i] = y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        check_state(&tmp, t, spec)?;
        std::mem::swap(&mut y, &mut tmp);
        out.push(&y);
        steps += 1;
    }
    Ok(())
}

// Dormand–Prince 5(4) tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
// dense output
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

const SAFETY: f64 = 0.9;
const BETA: f64 = 0.04;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;

fn error_norm(err: &[f64], y0: &[f64], y1: &[f64], spec: &IntegratorSpec) -> f64 {
    let n = err.len().max(1) as f64;
    let sum: f64 = err
        .iter()
        .zip(y0.iter().zip(y1))
        .map(|(e, (a, b))| {
            let sc = spec.atol + spec.rtol * a.abs().max(b.abs());
            (e / sc).powi(2)
        })
        .sum();
    (sum / n).sqrt()
}

fn initial_step<F>(
    rhs: &mut F,
    t0: f64,
    y0: &[f64],
    f0: &[f64],
    spec: &IntegratorSpec,
    h_max: f64,
) -> f64
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let n = y0.len();
    let scale = |i: usize| spec.atol + spec.rtol * y0[i].abs();
    let rms = |v: &[f64]| {
        ((0..n).map(|i| (v[i] / scale(i)).powi(2)).sum::<f64>() / n.max(1) as f64).sqrt()
    };
    let d0 = rms(y0);
    let d1 = rms(f0);
    let mut h0 = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        0.01 * d0 / d1
    };
    h0 = h0.min(h_max);
    let y1: Vec<f64> = (0..n).map(|i| y0[i] + h0 * f0[i]).collect();
    let mut f1 = vec![0.0; n];
    rhs(t0 + h0, &y1, &mut f1);
    let diff: Vec<f64> = (0..n).map(|i| f1[i] - f0[i]).collect();
    let d2 = rms(&diff) / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(1.0 / 5.0)
    };
    let h = (100.0 * h0).min(h1).min(h_max);
    if h.is_finite() && h > 0.0 {
        h
    } else {
        1e-6_f64.min(h_max)
    }
}

fn dopri5<F>(
    rhs: &mut F,
    q0: &[f64],
    out: &mut Output,
    spec: &IntegratorSpec,
) -> Result<(), StepFailure>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let n = q0.len();
    let t_end = out.t0 + (out.capacity() - 1) as f64 * out.dt;
    if out.done() {
        return Ok(());
    }
    let span = t_end - out.t0;
    let h_max = span;

    let mut t = out.t0;
    let mut y = q0.to_vec();
    let mut k: [Vec<f64>; 7] = std::array::from_fn(|_| vec![0.0; n]);
    let mut y_stage = vec![0.0; n];
    let mut y_new = vec![0.0; n];
    let mut err = vec![0.0; n];
    let mut cont: [Vec<f64>; 5] = std::array::from_fn(|_| vec![0.0; n]);

    rhs(t, &y, &mut k[0]);
    if !all_finite(&k[0]) {
        return Err((t, "derivative at the initial state is non-finite".into()));
    }
    let mut h = initial_step(rhs, t, &y, &k[0], spec, h_max);
    let mut fac_old: f64 = 1e-4;
    let mut steps = 0usize;
    let mut rejected_last = false;

    loop {
        if steps >= spec.max_steps {
            return Err((t, format!("step limit {} reached", spec.max_steps)));
        }
        let last = t + h >= t_end || (t_end - (t + h)) <= 1e-12 * span.max(1.0);
        if last {
            h = t_end - t;
        }
        if h <= 1e-14 * t.abs().max(span).max(1.0) {
            return Err((t, format!("step size underflow (h = {h:e})")));
        }
        steps += 1;

        macro_rules! stage {
            ($dst:expr, $c:expr, $( ($a:expr, $j:expr) ),+ ) => {{
                for i in 0..n {
                    y_stage[i] = y[i] + h * (0.0 $( + $a * k[$j][i] )+);
                }
                let (_, rest) = k.split_at_mut($dst);
                rhs(t + $c * h, &y_stage, &mut rest[0]);
            }};
        }
        stage!(1, C2, (A21, 0));
        stage!(2, C3, (A31, 0), (A32, 1));
        stage!(3, C4, (A41, 0), (A42, 1), (A43, 2));
        stage!(4, C5, (A51, 0), (A52, 1), (A53, 2), (A54, 3));
        stage!(5, 1.0, (A61, 0), (A62, 1), (A63, 2), (A64, 3), (A65, 4));
        for i in 0..n {
            y_new[i] = y[i]
                + h * (A71 * k[0][i]
                    + A73 * k[2][i]
                    + A74 * k[3][i]
                    + A75 * k[4][i]
                    + A76 * k[5][i]);
        }
        {
            let (_, rest) = k.split_at_mut(6);
            rhs(t + h, &y_new, &mut rest[0]);
        }
        for i in 0..n {
            err[i] = h
                * (E1 * k[0][i]
                    + E3 * k[2][i]
                    + E4 * k[3][i]
                    + E5 * k[4][i]
                    + E6 * k[5][i]
                    + E7 * k[6][i]);
        }
        let mut err_norm = error_norm(&err, &y, &y_new, spec);
        if !err_norm.is_finite() || !all_finite(&y_new) || !all_finite(&k[6]) {
            err_norm = f64::INFINITY;
        }

        let expo = 0.2 - BETA * 0.75;
        if err_norm <= 1.0 {
            check_state(&y_new, t, spec)?;
            // PI controller
            let fac11 = err_norm.powf(expo);
            let fac = (fac11 / fac_old.powf(BETA) / SAFETY).clamp(1.0 / FAC_MAX, 1.0 / FAC_MIN);
            let mut h_new = h / fac;
            fac_old = err_norm.max(1e-4);

            // dense output coefficients over [t, t + h]
            for i in 0..n {
                let ydiff = y_new[i] - y[i];
                let bspl = h * k[0][i] - ydiff;
                cont[0][i] = y[i];
                cont[1][i] = ydiff;
                cont[2][i] = bspl;
                cont[3][i] = ydiff - h * k[6][i] - bspl;
                cont[4][i] = h
                    * (D1 * k[0][i]
                        + D3 * k[2][i]
                        + D4 * k[3][i]
                        + D5 * k[4][i]
                        + D6 * k[5][i]
                        + D7 * k[6][i]);
            }
            let t_new = if last { t_end } else { t + h };
            while !out.done() {
                // the final grid point is t_end itself and is only reached by the last step
                if out.filled + 1 == out.capacity() {
                    if last {
                        out.push(&y_new);
                    }
                    break;
                }
                let ts = out.next_time();
                if ts > t_new {
                    break;
                }
                let theta = (ts - t) / h;
                let theta1 = 1.0 - theta;
                out.push_with(|col| {
                    for i in 0..n {
                        col[i] = cont[0][i]
                            + theta
                                * (cont[1][i]
                                    + theta1
                                        * (cont[2][i]
                                            + theta * (cont[3][i] + theta1 * cont[4][i])));
                    }
                });
            }

            std::mem::swap(&mut y, &mut y_new);
            k.swap(0, 6);
            t = t_new;
            if last || out.done() {
                return Ok(());
            }
            if rejected_last {
                h_new = h_new.min(h);
            }
            rejected_last = false;
            h = h_new.min(h_max);
        } else {
            let fac11 = if err_norm.is_finite() {
                err_norm.powf(expo)
            } else {
                1.0 / FAC_MIN
            };
            h /= (fac11 / SAFETY).min(1.0 / FAC_MIN);
            rejected_last = true;
        }
    }
}
