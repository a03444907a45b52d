//! Kuramoto–Sivashinsky solver: Fourier pseudospectral in space, ETDRK4 in time.
//!
//! Solves `u_t + u u_x + a u_xx + b u_xxxx = 0` on a periodic domain `[0, L)`.
//! The φ-function combinations of the ETDRK4 update are evaluated by contour
//! averages, which keeps them accurate for modes with vanishing linear rate.

use std::f64::consts::PI;
use std::sync::Arc;

use faer::Mat;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::snapshot::SnapshotMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsConfig {
    pub domain_length: f64,
    pub n_grid: usize,
    pub dt: f64,
    pub t_final: f64,
    #[serde(default = "unit")]
    pub a_coeff: f64,
    #[serde(default = "unit")]
    pub b_coeff: f64,
    #[serde(default = "default_contour_points")]
    pub contour_points: usize,
    /// Apply the 2/3 rule to the nonlinear term.
    #[serde(default)]
    pub dealias: bool,
}

fn unit() -> f64 {
    1.0
}

fn default_contour_points() -> usize {
    16
}

impl Default for KsConfig {
    /// `L = 200`, 512 points, `dt = 0.125`, `T = 6e4`.
    fn default() -> Self {
        Self {
            domain_length: 200.0,
            n_grid: 512,
            dt: 0.125,
            t_final: 6.0e4,
            a_coeff: 1.0,
            b_coeff: 1.0,
            contour_points: 16,
            dealias: false,
        }
    }
}

impl KsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_grid < 2 || self.n_grid % 2 != 0 {
            return Err(Error::config(format!(
                "n_grid must be even and >= 2, got {}",
                self.n_grid
            )));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::config(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        if !(self.domain_length > 0.0 && self.domain_length.is_finite()) {
            return Err(Error::config(format!(
                "domain length must be positive, got {}",
                self.domain_length
            )));
        }
        if !(self.t_final >= 0.0 && self.t_final.is_finite()) {
            return Err(Error::config(format!(
                "t_final must be non-negative, got {}",
                self.t_final
            )));
        }
        if !self.a_coeff.is_finite() || !self.b_coeff.is_finite() {
            return Err(Error::config("KS coefficients must be finite"));
        }
        if self.contour_points < 8 {
            return Err(Error::config(format!(
                "need at least 8 contour points, got {}",
                self.contour_points
            )));
        }
        Ok(())
    }

    /// Number of time steps covering `[0, t_final]`.
    pub fn n_steps(&self) -> Result<usize> {
        steps_for(self.t_final, self.dt)
    }

    pub fn grid(&self) -> Vec<f64> {
        let h = self.domain_length / self.n_grid as f64;
        (0..self.n_grid).map(|i| i as f64 * h).collect()
    }
}

pub(crate) fn steps_for(span: f64, dt: f64) -> Result<usize> {
    let n = (span / dt).round();
    if (n * dt - span).abs() > 1e-9 * span.abs().max(1.0) {
        return Err(Error::config(format!(
            "span {span} is not a whole number of steps of {dt}"
        )));
    }
    Ok(n as usize)
}

/// Signed integer frequencies in FFT order (`0, 1, ..., N/2-1, -N/2, ..., -1`).
fn frequencies(n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |i| {
        if i < n / 2 {
            i as f64
        } else {
            i as f64 - n as f64
        }
    })
}

pub fn wavenumbers(cfg: &KsConfig) -> Vec<f64> {
    let scale = 2.0 * PI / cfg.domain_length;
    frequencies(cfg.n_grid).map(|f| f * scale).collect()
}

/// Linear growth rate `a k^2 - b k^4` of each Fourier mode.
pub fn ks_linear_symbol(cfg: &KsConfig) -> Vec<f64> {
    wavenumbers(cfg)
        .into_iter()
        .map(|k| cfg.a_coeff * k * k - cfg.b_coeff * k.powi(4))
        .collect()
}

/// Per-mode ETDRK4 coefficients.
///
/// `f2` multiplies `N(a) + N(b)` in the final stage, so its small-rate limit is `dt/3`.
#[derive(Debug, Clone, Default)]
pub struct EtdrkCoefficients {
    pub e: Vec<Complex64>,
    pub e2: Vec<Complex64>,
    pub q: Vec<Complex64>,
    pub f1: Vec<Complex64>,
    pub f2: Vec<Complex64>,
    pub f3: Vec<Complex64>,
}

/// Mean of `f` over `m` points on the unit circle centred at `z0`.
pub(crate) fn contour_mean(z0: f64, m: usize, f: impl Fn(Complex64) -> Complex64) -> Complex64 {
    let sum: Complex64 = (0..m)
        .map(|j| {
            let theta = 2.0 * PI * (j as f64 + 0.5) / m as f64;
            f(Complex64::new(z0 + theta.cos(), theta.sin()))
        })
        .sum();
    sum / m as f64
}

pub fn etdrk4_coefficients(cfg: &KsConfig) -> Result<EtdrkCoefficients> {
    cfg.validate()?;
    let h = cfg.dt;
    let m = cfg.contour_points;
    let lsym = ks_linear_symbol(cfg);
    let n = lsym.len();
    let mut out = EtdrkCoefficients {
        e: Vec::with_capacity(n),
        e2: Vec::with_capacity(n),
        q: Vec::with_capacity(n),
        f1: Vec::with_capacity(n),
        f2: Vec::with_capacity(n),
        f3: Vec::with_capacity(n),
    };
    for &l in &lsym {
        let z = h * l;
        out.e.push(Complex64::new(z.exp(), 0.0));
        out.e2.push(Complex64::new((z / 2.0).exp(), 0.0));
        out.q
            .push(h * contour_mean(z, m, |w| ((w / 2.0).exp() - 1.0) / w));
        out.f1.push(
            h * contour_mean(z, m, |w| {
                (-4.0 - w + w.exp() * (4.0 - 3.0 * w + w * w)) / w.powi(3)
            }),
        );
        out.f2
            .push(h * contour_mean(z, m, |w| 2.0 * (2.0 + w + w.exp() * (w - 2.0)) / w.powi(3)));
        out.f3.push(
            h * contour_mean(z, m, |w| {
                (-4.0 - 3.0 * w - w * w + w.exp() * (4.0 - w)) / w.powi(3)
            }),
        );
    }
    let all = [&out.e, &out.e2, &out.q, &out.f1, &out.f2, &out.f3];
    if all
        .iter()
        .any(|v| v.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()))
    {
        return Err(Error::Numerical(
            "ETDRK4 coefficients are not finite; check the contour setup".into(),
        ));
    }
    Ok(out)
}

/// Time stepper holding the Fourier state and FFT plans.
pub struct KsSolver {
    cfg: KsConfig,
    coeffs: EtdrkCoefficients,
    /// `i k`, zero at the Nyquist mode.
    deriv: Vec<Complex64>,
    dealias_mask: Option<Vec<bool>>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    v: Vec<Complex64>,
    steps_taken: usize,
    // scratch
    u: Vec<Complex64>,
    nv: Vec<Complex64>,
    na: Vec<Complex64>,
    nb: Vec<Complex64>,
    nc: Vec<Complex64>,
    a: Vec<Complex64>,
    b: Vec<Complex64>,
    c: Vec<Complex64>,
}

impl std::fmt::Debug for KsSolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KsSolver")
            .field("cfg", &self.cfg)
            .field("steps_taken", &self.steps_taken)
            .finish_non_exhaustive()
    }
}

impl KsSolver {
    pub fn new(cfg: &KsConfig, initial: &[f64]) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.n_grid;
        check_dim("KS initial field", n, initial.len())?;
        let coeffs = etdrk4_coefficients(cfg)?;
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        let deriv = wavenumbers(cfg)
            .into_iter()
            .enumerate()
            .map(|(i, k)| {
                if i == n / 2 {
                    Complex64::new(0.0, 0.0)
                } else {
                    Complex64::new(0.0, k)
                }
            })
            .collect();
        let dealias_mask = cfg
            .dealias
            .then(|| frequencies(n).map(|f| f.abs() < n as f64 / 3.0).collect());
        let zero = vec![Complex64::new(0.0, 0.0); n];
        let mut solver = Self {
            cfg: *cfg,
            coeffs,
            deriv,
            dealias_mask,
            fwd,
            inv,
            v: zero.clone(),
            steps_taken: 0,
            u: zero.clone(),
            nv: zero.clone(),
            na: zero.clone(),
            nb: zero.clone(),
            nc: zero.clone(),
            a: zero.clone(),
            b: zero.clone(),
            c: zero,
        };
        solver.set_field(initial)?;
        Ok(solver)
    }

    pub fn config(&self) -> &KsConfig {
        &self.cfg
    }

    pub fn steps_taken(&self) -> usize {
        self.steps_taken
    }

    pub fn set_field(&mut self, field: &[f64]) -> Result<()> {
        check_dim("KS field", self.cfg.n_grid, field.len())?;
        if field.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("KS field has non-finite values"));
        }
        for (v, &x) in self.v.iter_mut().zip(field) {
            *v = Complex64::new(x, 0.0);
        }
        self.fwd.process(&mut self.v);
        enforce_hermitian(&mut self.v);
        Ok(())
    }

    /// Fourier coefficients of the current field (unnormalized forward transform).
    pub fn spectrum(&self) -> &[Complex64] {
        &self.v
    }

    pub fn set_spectrum(&mut self, spectrum: &[Complex64]) -> Result<()> {
        check_dim("KS spectrum", self.cfg.n_grid, spectrum.len())?;
        self.v.copy_from_slice(spectrum);
        Ok(())
    }

    /// Current field in real space.
    pub fn field(&mut self) -> Vec<f64> {
        let mut out = vec![0.0; self.cfg.n_grid];
        self.field_into(&mut out);
        out
    }

    pub fn field_into(&mut self, out: &mut [f64]) {
        self.u.copy_from_slice(&self.v);
        self.inv.process(&mut self.u);
        let scale = 1.0 / self.cfg.n_grid as f64;
        for (o, z) in out.iter_mut().zip(&self.u) {
            *o = z.re * scale;
        }
    }

    /// Relative norm of the imaginary residue of the inverse transform.
    pub fn imag_residue(&mut self) -> f64 {
        self.u.copy_from_slice(&self.v);
        self.inv.process(&mut self.u);
        let re: f64 = self.u.iter().map(|z| z.re * z.re).sum();
        let im: f64 = self.u.iter().map(|z| z.im * z.im).sum();
        if re == 0.0 {
            im.sqrt()
        } else {
            (im / re).sqrt()
        }
    }

    /// Advances one `dt`.
    pub fn step(&mut self) -> Result<()> {
        let n = self.cfg.n_grid;
        let co = std::mem::take(&mut self.coeffs);

        let v = std::mem::take(&mut self.v);
        let mut nv = std::mem::take(&mut self.nv);
        let mut na = std::mem::take(&mut self.na);
        let mut nb = std::mem::take(&mut self.nb);
        let mut nc = std::mem::take(&mut self.nc);
        let mut a = std::mem::take(&mut self.a);
        let mut b = std::mem::take(&mut self.b);
        let mut c = std::mem::take(&mut self.c);

        self.nonlinear(&v, &mut nv);
        for i in 0..n {
            a[i] = co.e2[i] * v[i] + co.q[i] * nv[i];
        }
        self.nonlinear(&a, &mut na);
        for i in 0..n {
            b[i] = co.e2[i] * v[i] + co.q[i] * na[i];
        }
        self.nonlinear(&b, &mut nb);
        for i in 0..n {
            c[i] = co.e2[i] * a[i] + co.q[i] * (2.0 * nb[i] - nv[i]);
        }
        self.nonlinear(&c, &mut nc);
        let mut next = v;
        for i in 0..n {
            next[i] = co.e[i] * next[i]
                + nv[i] * co.f1[i]
                + (na[i] + nb[i]) * co.f2[i]
                + nc[i] * co.f3[i];
        }

        self.v = next;
        self.nv = nv;
        self.na = na;
        self.nb = nb;
        self.nc = nc;
        self.a = a;
        self.b = b;
        self.c = c;
        self.coeffs = co;
        self.steps_taken += 1;
        enforce_hermitian(&mut self.v);

        if self
            .v
            .iter()
            .any(|z| !z.re.is_finite() || !z.im.is_finite())
        {
            return Err(Error::BlowUp {
                step: self.steps_taken,
            });
        }
        Ok(())
    }

    /// `-FFT(u u_x)`, evaluated as `-(i k / 2) FFT(u^2)`.
    ///
    /// The pointwise product `u * u_x` is not conservative on the grid and lets
    /// the mean mode drift; the flux form keeps the `k = 0` and Nyquist modes exactly zero.
    fn nonlinear(&mut self, v: &[Complex64], out: &mut [Complex64]) {
        let n = self.cfg.n_grid;
        let scale = 1.0 / n as f64;
        self.u.copy_from_slice(v);
        self.inv.process(&mut self.u);
        for (o, z) in out.iter_mut().zip(&self.u) {
            let re = z.re * scale;
            *o = Complex64::new(re * re, 0.0);
        }
        self.fwd.process(out);
        for (o, d) in out.iter_mut().zip(&self.deriv) {
            *o *= -0.5 * d;
        }
        if let Some(mask) = &self.dealias_mask {
            for (o, &keep) in out.iter_mut().zip(mask) {
                if !keep {
                    *o = Complex64::new(0.0, 0.0);
                }
            }
        }
    }
}

/// Projects a spectrum onto the spectra of real fields.
///
/// The anti-Hermitian part never reaches the nonlinear term, so without this it
/// grows from round-off at the linear rate of the unstable modes and eventually
/// swamps the real field (around t = 300 for the default configuration).
fn enforce_hermitian(v: &mut [Complex64]) {
    let n = v.len();
    v[0].im = 0.0;
    for i in 1..n.div_ceil(2) {
        let avg = 0.5 * (v[i] + v[n - i].conj());
        v[i] = avg;
        v[n - i] = avg.conj();
    }
    if n % 2 == 0 {
        v[n / 2].im = 0.0;
    }
}

/// Advances a Fourier state by one step with a fresh solver. Convenience for one-off use;
/// [`KsSolver::step`] reuses plans and scratch space.
pub fn etdrk4_step(state_hat: &[Complex64], cfg: &KsConfig) -> Result<Vec<Complex64>> {
    let mut solver = KsSolver::new(cfg, &vec![0.0; cfg.n_grid])?;
    solver.set_spectrum(state_hat)?;
    solver.step()?;
    Ok(solver.spectrum().to_vec())
}

/// `u(0, x) = cos(pi x / 20) (1 + sin(pi x / 20))` on the periodic grid.
pub fn ks_initial_condition(cfg: &KsConfig) -> Vec<f64> {
    cfg.grid()
        .into_iter()
        .map(|x| {
            let s = PI * x / 20.0;
            s.cos() * (1.0 + s.sin())
        })
        .collect()
}

/// Real-space snapshots at every step, `t_final / dt + 1` columns including `t = 0`.
pub fn simulate_ks(cfg: &KsConfig, initial: Option<&[f64]>) -> Result<SnapshotMatrix> {
    cfg.validate()?;
    let default_ic;
    let initial = match initial {
        Some(ic) => ic,
        None => {
            default_ic = ks_initial_condition(cfg);
            &default_ic
        }
    };
    let steps = cfg.n_steps()?;
    let mut solver = KsSolver::new(cfg, initial)?;
    let mut data = Mat::<f64>::zeros(cfg.n_grid, steps + 1);
    data.col_as_slice_mut(0).copy_from_slice(initial);
    for j in 1..=steps {
        solver.step()?;
        solver.field_into(data.col_as_slice_mut(j));
    }
    SnapshotMatrix::new(data, 0.0, cfg.dt)
}
