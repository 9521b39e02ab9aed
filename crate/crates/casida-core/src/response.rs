//! Density-density response in time and frequency, the Dyson identity and
//! the kick route to absorption spectra.

use std::f64::consts::PI;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use num_complex::Complex64 as c64;

use crate::dynamics::{propagate_nonlinear, Drive, LinearizedFlow, Pulse};
use crate::error::{Error, Result};
use crate::groundstate::GroundState;
use crate::la;
use crate::linops::ParticleHoleSpace;
use crate::model::ModelSystem;

const I: c64 = c64 { re: 0.0, im: 1.0 };

/// Real frequencies with a common broadening `eta > 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct FrequencyGrid {
    omega: Vec<f64>,
    eta: f64,
}

impl FrequencyGrid {
    pub fn new(omega_min: f64, omega_max: f64, n_omega: usize, eta: f64) -> Result<Self> {
        if n_omega < 2 || !(omega_max > omega_min) || !omega_min.is_finite() || !omega_max.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "frequency grid needs n >= 2 and min < max (got {n_omega}, [{omega_min}, {omega_max}])"
            )));
        }
        let step = (omega_max - omega_min) / (n_omega - 1) as f64;
        let omega = (0..n_omega).map(|k| omega_min + k as f64 * step).collect();
        Self::from_values(omega, eta)
    }

    pub fn from_values(omega: Vec<f64>, eta: f64) -> Result<Self> {
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::InvalidParameter(format!("broadening eta = {eta} must be positive")));
        }
        if omega.is_empty() || omega.iter().any(|w| !w.is_finite()) || omega.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter("frequencies must be finite and strictly increasing".into()));
        }
        Ok(Self { omega, eta })
    }

    pub fn omega(&self) -> &[f64] {
        &self.omega
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn len(&self) -> usize {
        self.omega.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omega.is_empty()
    }

    /// Largest gap between neighbouring frequencies.
    pub fn spacing(&self) -> f64 {
        self.omega.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }

    pub fn negated(&self) -> FrequencyGrid {
        FrequencyGrid { omega: self.omega.iter().rev().map(|w| -w).collect(), eta: self.eta }
    }
}

/// `<W|chi(omega) V>` on a frequency grid.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumResult {
    pub omega: Vec<f64>,
    pub values: Vec<c64>,
    pub eta: f64,
    pub delta: f64,
    pub n: usize,
    pub half_width: f64,
    pub n_electrons: usize,
}

impl SpectrumResult {
    pub fn imag_abs(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.im.abs()).collect()
    }

    /// Largest `Im` value at `omega > 0`; dissipative spectra have it `<= 0`.
    pub fn max_positive_frequency_imag(&self) -> f64 {
        self.omega
            .iter()
            .zip(&self.values)
            .filter(|(w, _)| **w > 0.0)
            .map(|(_, v)| v.im)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Indices of local maxima of `|Im|` above `floor * max|Im|`.
    pub fn peaks(&self, floor: f64) -> Vec<usize> {
        find_peaks(&self.imag_abs(), floor)
    }
}

pub fn find_peaks(y: &[f64], floor: f64) -> Vec<usize> {
    let top = y.iter().cloned().fold(0.0, f64::max);
    let mut out = Vec::new();
    for k in 1..y.len().saturating_sub(1) {
        if y[k] > y[k - 1] && y[k] >= y[k + 1] && y[k] > floor * top {
            out.push(k);
        }
    }
    out
}

/// How `(M + i z J) x = b` is solved at each frequency.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ResolventMethod {
    /// Modal factorization shared by all frequencies.
    #[default]
    Spectral,
    /// One LU factorization of the doubled system per frequency.
    Dense,
}

/// Frequency and time response at coupling `delta`.
#[derive(Clone, Debug)]
pub struct ResponseSolver {
    flow: LinearizedFlow,
    gc: Array2<f64>,
    n: usize,
    half_width: f64,
    n_electrons: usize,
}

impl ResponseSolver {
    pub fn new(model: &ModelSystem, gs: &GroundState, delta: f64) -> Result<Self> {
        if !(gs.gamma() > 0.0) {
            return Err(Error::NotAMinimum(gs.gamma()));
        }
        let space = ParticleHoleSpace::new(model, gs)?;
        Self::from_space(model, space, delta)
    }

    pub fn from_space(model: &ModelSystem, space: ParticleHoleSpace, delta: f64) -> Result<Self> {
        let flow = LinearizedFlow::from_space(space, delta)?;
        let (u, _, _) = flow.perp().modal_factors();
        let (_, _, q_half, _) = flow.perp().half_factors();
        let gc = flow.space().pair().t().dot(&q_half.dot(u));
        Ok(Self {
            flow,
            gc,
            n: model.grid().n(),
            half_width: model.grid().half_width(),
            n_electrons: model.n_electrons(),
        })
    }

    pub fn flow(&self) -> &LinearizedFlow {
        &self.flow
    }

    pub fn delta(&self) -> f64 {
        self.flow.perp().delta()
    }

    /// Excitation energies in ascending order.
    pub fn excitation_energies(&self) -> Vec<f64> {
        let mut w = self.flow.perp().excitation_energies().to_vec();
        w.sort_by(f64::total_cmp);
        w
    }

    fn check_len(&self, v: ArrayView1<f64>) -> Result<()> {
        if v.len() != self.n {
            return Err(Error::ShapeMismatch { expected: format!("{}", self.n), got: format!("{}", v.len()) });
        }
        Ok(())
    }

    pub fn chi_time(&self, v: ArrayView1<f64>, t: f64) -> Result<Array1<f64>> {
        self.flow.chi_time(v, t)
    }

    fn wrap(&self, freq: &FrequencyGrid, values: Vec<c64>) -> SpectrumResult {
        SpectrumResult {
            omega: freq.omega().to_vec(),
            values,
            eta: freq.eta(),
            delta: self.delta(),
            n: self.n,
            half_width: self.half_width,
            n_electrons: self.n_electrons,
        }
    }

    /// `<W|chi(omega + i eta) V> = -<W|S0 (M + i z J)^{-1} (1 - P0) V Psi0>`.
    pub fn chi_freq(&self, v: ArrayView1<f64>, w: ArrayView1<f64>, freq: &FrequencyGrid) -> Result<SpectrumResult> {
        self.chi_freq_with(v, w, freq, ResolventMethod::Spectral)
    }

    pub fn chi_freq_with(
        &self,
        v: ArrayView1<f64>,
        w: ArrayView1<f64>,
        freq: &FrequencyGrid,
        method: ResolventMethod,
    ) -> Result<SpectrumResult> {
        self.check_len(v)?;
        self.check_len(w)?;
        let values = match method {
            ResolventMethod::Spectral => {
                let alpha = self.gc.t().dot(&w);
                let beta = self.gc.t().dot(&v);
                let ab = &alpha * &beta;
                let s2 = self.flow.perp().excitation_energies().mapv(|s| s * s);
                let mut out = Vec::with_capacity(freq.len());
                for &om in freq.omega() {
                    let z = c64::new(om, freq.eta());
                    let z2 = z * z;
                    let mut acc = c64::new(0.0, 0.0);
                    for (x, s) in ab.iter().zip(s2.iter()) {
                        let d = s - z2;
                        if d.norm() < 1e-12 {
                            return Err(Error::SingularSystem(format!("z = {z} is on the spectrum")));
                        }
                        acc += x / d;
                    }
                    out.push(acc * -2.0);
                }
                out
            }
            ResolventMethod::Dense => {
                let space = self.flow.space();
                let br = space.potential_coeffs(v).mapv(|x| c64::new(x, 0.0));
                let bj = Array1::zeros(space.dim());
                let dw = space.potential_coeffs(w);
                let mut out = Vec::with_capacity(freq.len());
                for &om in freq.omega() {
                    let (xr, _) = self.flow.perp().resolve_dense(c64::new(om, freq.eta()), br.view(), bj.view())?;
                    let acc: c64 = dw.iter().zip(xr.iter()).map(|(a, x)| x * *a).sum();
                    out.push(acc * -2.0);
                }
                out
            }
        };
        Ok(self.wrap(freq, values))
    }

    /// `chi(z)` as a grid matrix `X` with `<W|chi V> = h W^T X V`.
    pub fn chi_matrix(&self, z: c64) -> Result<Array2<c64>> {
        let h = self.flow.space().weight();
        let s2 = self.flow.perp().excitation_energies().mapv(|s| s * s);
        let mut scaled = la::to_complex(self.gc.view());
        for (mut col, s) in scaled.axis_iter_mut(Axis(1)).zip(s2.iter()) {
            let d = s - z * z;
            if d.norm() < 1e-12 {
                return Err(Error::SingularSystem(format!("z = {z} is on the spectrum")));
            }
            col /= d;
        }
        Ok(scaled.dot(&la::to_complex(self.gc.t())) * c64::new(-2.0 / h, 0.0))
    }
}

/// `chi(t) V` at full coupling.
pub fn chi_time(gs: &GroundState, model: &ModelSystem, v: ArrayView1<f64>, t: f64) -> Result<Array1<f64>> {
    LinearizedFlow::new(model, gs, 1.0)?.chi_time(v, t)
}

/// `<W|chi(omega) V>` at full coupling.
pub fn chi_freq(
    gs: &GroundState,
    model: &ModelSystem,
    v: ArrayView1<f64>,
    w: ArrayView1<f64>,
    freq: &FrequencyGrid,
) -> Result<SpectrumResult> {
    ResponseSolver::new(model, gs, 1.0)?.chi_freq(v, w, freq)
}

/// Largest relative residual of `X = X0 + X0 (delta f_hxc) X` over the grid,
/// with `X0` the response at zero coupling around the same ground state.
pub fn dyson_residual(gs: &GroundState, model: &ModelSystem, freq: &FrequencyGrid, delta: f64) -> Result<f64> {
    if !(gs.gamma() > 0.0) {
        return Err(Error::NotAMinimum(gs.gamma()));
    }
    let space = ParticleHoleSpace::new(model, gs)?;
    let bare = ResponseSolver::from_space(model, space.clone(), 0.0)?;
    let full = ResponseSolver::from_space(model, space, delta)?;
    let f = la::to_complex((model.hxc_kernel(gs.rho().view())? * delta).view());
    let mut worst: f64 = 0.0;
    for &om in freq.omega() {
        let z = c64::new(om, freq.eta());
        let x0 = bare.chi_matrix(z)?;
        let x = full.chi_matrix(z)?;
        let rhs = &x0 + &x0.dot(&f).dot(&x);
        let scale = la::max_abs_c(x.iter()).max(f64::MIN_POSITIVE);
        worst = worst.max(la::max_abs_c((&x - &rhs).iter()) / scale);
    }
    Ok(worst)
}

/// Settings of the kick route.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KickOptions {
    pub eps: f64,
    pub sigma: f64,
    pub dt: f64,
    pub sample_every: usize,
}

impl Default for KickOptions {
    fn default() -> Self {
        Self { eps: 1e-3, sigma: 0.1, dt: 0.01, sample_every: 1 }
    }
}

/// Damped Fourier transform of `<W, drho(t)>/eps` after a narrow Gaussian
/// pulse, divided by the transform of the pulse.
pub fn kick_spectrum(
    gs: &GroundState,
    model: &ModelSystem,
    v: ArrayView1<f64>,
    w: ArrayView1<f64>,
    t_end: f64,
    freq: &FrequencyGrid,
    opts: &KickOptions,
) -> Result<(SpectrumResult, Vec<(f64, f64)>)> {
    let t0 = 6.0 * opts.sigma;
    let drive = Drive::new(Pulse::Gaussian { t0, sigma: opts.sigma }, v.to_owned(), opts.eps)?;
    if !(opts.eps > 0.0) {
        return Err(Error::InvalidParameter("kick amplitude must be positive".into()));
    }
    let traj = propagate_nonlinear(model, gs, &drive, t_end, opts.dt, opts.sample_every)?;
    let h = gs.weight();
    let signal: Vec<(f64, f64)> = traj
        .times
        .iter()
        .zip(traj.observable(w, h))
        .map(|(&t, s)| (t, s / opts.eps))
        .collect();
    let eta = freq.eta();
    let mut values = Vec::with_capacity(freq.len());
    for &om in freq.omega() {
        let z = c64::new(om, eta);
        let mut acc = c64::new(0.0, 0.0);
        for pair in signal.windows(2) {
            let (ta, sa) = pair[0];
            let (tb, sb) = pair[1];
            acc += ((I * z * ta).exp() * sa + (I * z * tb).exp() * sb) * (0.5 * (tb - ta));
        }
        let pulse = (I * z * t0 - z * z * (0.5 * opts.sigma * opts.sigma)).exp() * ((2.0 * PI).sqrt() * opts.sigma);
        values.push(acc / pulse);
    }
    let res = SpectrumResult {
        omega: freq.omega().to_vec(),
        values,
        eta,
        delta: 1.0,
        n: model.grid().n(),
        half_width: model.grid().half_width(),
        n_electrons: model.n_electrons(),
    };
    Ok((res, signal))
}
