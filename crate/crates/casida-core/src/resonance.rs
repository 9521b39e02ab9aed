//! Widths of embedded excitations: the scalar Schur complement, its
//! second-order pole and the smoothed golden rule.

use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};

use ndarray::{Array1, Array2, ArrayView1};
use num_complex::Complex64 as c64;

use crate::error::{Error, Result};
use crate::groundstate::GroundState;
use crate::la;
use crate::lineshape::{fit_lorentzian, LorentzianFit};
use crate::linops::{self, CasidaVector, ParticleHoleSpace, PerpSystem};
use crate::model::ModelSystem;
use crate::response::{FrequencyGrid, ResponseSolver};

const I: c64 = c64 { re: 0.0, im: 1.0 };

/// Spacing of the levels bracketing `e`.
pub fn level_spacing(energies: ArrayView1<f64>, e: f64) -> f64 {
    let n = energies.len();
    if n < 2 {
        return f64::INFINITY;
    }
    let k = energies.iter().position(|&v| v > e).unwrap_or(n - 1).clamp(1, n - 1);
    energies[k] - energies[k - 1]
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChannelOptions {
    /// Minimal `|e0 + lambda_i|` in units of the level spacing.
    pub threshold_margin: f64,
    /// Minimal gap around `lambda_i0` and `lambda_a0`.
    pub gap_tol: f64,
}

impl Default for ChannelOptions {
    fn default() -> Self {
        Self { threshold_margin: 5.0, gap_tol: 1e-8 }
    }
}

/// Bare transition `i0 -> a0`; `i0` indexes the occupied set, `a0` the spectrum of `H0`.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionChannel {
    i0: usize,
    a0: usize,
    e0: f64,
    lambda_i0: f64,
    lambda_a0: f64,
    spacing: f64,
}

impl TransitionChannel {
    pub fn new(gs: &GroundState, i0: usize, a0: usize) -> Result<Self> {
        Self::with_options(gs, i0, a0, &ChannelOptions::default())
    }

    pub fn with_options(gs: &GroundState, i0: usize, a0: usize, opts: &ChannelOptions) -> Result<Self> {
        let ch = Self::unchecked(gs, i0, a0)?;
        let vals = &gs.spectrum().values;
        let lam_top = gs.lambda().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !(ch.e0 > -lam_top) {
            return Err(Error::ChannelInvalid(format!(
                "e0 = {:.6} is not above the threshold -lambda_N = {:.6}",
                ch.e0, -lam_top
            )));
        }
        for &l in gs.lambda() {
            if (ch.e0 + l).abs() < opts.threshold_margin * ch.spacing {
                return Err(Error::ChannelInvalid(format!(
                    "e0 + lambda = {:.3e} lies within {} level spacings of a threshold",
                    ch.e0 + l,
                    opts.threshold_margin
                )));
            }
        }
        let occ = gs.occupied()[i0];
        for idx in [occ, a0] {
            let gap_lo = if idx > 0 { vals[idx] - vals[idx - 1] } else { f64::INFINITY };
            let gap_hi = if idx + 1 < vals.len() { vals[idx + 1] - vals[idx] } else { f64::INFINITY };
            if gap_lo.min(gap_hi) < opts.gap_tol {
                return Err(Error::ChannelInvalid(format!("level {idx} is not simple")));
            }
        }
        Ok(ch)
    }

    /// Index checks only; the channel may be closed or sit at a threshold.
    pub fn unchecked(gs: &GroundState, i0: usize, a0: usize) -> Result<Self> {
        let occ = gs.occupied();
        if i0 >= occ.len() {
            return Err(Error::ChannelInvalid(format!("occupied index {i0} out of range")));
        }
        let vals = &gs.spectrum().values;
        if a0 >= vals.len() || occ.contains(&a0) {
            return Err(Error::ChannelInvalid(format!("level {a0} is not an unoccupied level")));
        }
        let lambda_i0 = vals[occ[i0]];
        let lambda_a0 = vals[a0];
        let e0 = lambda_a0 - lambda_i0;
        let lam_top = gs.lambda().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let spacing = level_spacing(vals.view(), e0 + lam_top);
        Ok(Self { i0, a0, e0, lambda_i0, lambda_a0, spacing })
    }

    pub fn i0(&self) -> usize {
        self.i0
    }

    pub fn a0(&self) -> usize {
        self.a0
    }

    pub fn e0(&self) -> f64 {
        self.e0
    }

    pub fn lambda_i0(&self) -> f64 {
        self.lambda_i0
    }

    pub fn lambda_a0(&self) -> f64 {
        self.lambda_a0
    }

    /// Box level spacing at `e0 + lambda_N`.
    pub fn spacing(&self) -> f64 {
        self.spacing
    }
}

/// Overlaps `c_i = <psi_i | phi_i0>` of the current orbitals with the canonical level `i0`.
fn sector_weights(gs: &GroundState, ch: &TransitionChannel) -> Array1<f64> {
    let phi = gs.spectrum().vectors.column(gs.occupied()[ch.i0]);
    gs.psi().t().dot(&phi) * gs.weight()
}

/// The variation `u_i = c_i phi_a0`.
pub fn transition_variation(gs: &GroundState, ch: &TransitionChannel) -> Array2<c64> {
    let c = sector_weights(gs, ch);
    let phi = gs.spectrum().vectors.column(ch.a0);
    Array2::from_shape_fn((gs.n_grid(), gs.n_occ()), |(x, i)| c64::new(c[i] * phi[x], 0.0))
}

/// Casida vector with upper block `transition_variation` and lower block 0.
pub fn transition_vector(gs: &GroundState, ch: &TransitionChannel) -> CasidaVector {
    let x = transition_variation(gs, ch);
    let y = Array2::zeros(x.raw_dim());
    CasidaVector { x, y }
}

/// `||S0(U_{i0 -> a0})||`; vanishes for dark transitions.
pub fn residue_check(gs: &GroundState, ch: &TransitionChannel) -> Result<f64> {
    let s = linops::s0_apply(gs, transition_variation(gs, ch).view())?;
    Ok((gs.weight() * s.dot(&s)).sqrt())
}

/// Gaussian-smoothed spectral measure of `H0` on its unoccupied levels.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralMeasure {
    energies: Array1<f64>,
    s: f64,
}

impl SpectralMeasure {
    pub fn new(energies: Array1<f64>, s: f64) -> Result<Self> {
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::InvalidParameter(format!("smoothing width {s} must be positive")));
        }
        Ok(Self { energies, s })
    }

    pub fn energies(&self) -> &Array1<f64> {
        &self.energies
    }

    pub fn width(&self) -> f64 {
        self.s
    }

    pub fn kernel(&self, x: f64) -> f64 {
        (-0.5 * (x / self.s).powi(2)).exp() / (self.s * (2.0 * PI).sqrt())
    }

    /// `sum_k w_k G_s(e - e_k)`.
    pub fn density(&self, e: f64, weights: ArrayView1<f64>) -> f64 {
        self.energies.iter().zip(weights.iter()).map(|(&ek, &w)| w * self.kernel(e - ek)).sum()
    }

    /// Unit weights; integrates to the number of levels.
    pub fn trace_density(&self, e: f64) -> f64 {
        self.energies.iter().map(|&ek| self.kernel(e - ek)).sum()
    }

    pub fn count_within(&self, e: f64) -> usize {
        self.energies.iter().filter(|&&ek| (ek - e).abs() <= self.s).count()
    }
}

/// One decay channel of the golden-rule width.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelWidth {
    pub index: usize,
    pub energy: f64,
    pub width: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GoldenRule {
    pub gamma: f64,
    pub channels: Vec<ChannelWidth>,
    pub s: f64,
    pub delta: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResonanceEstimate {
    pub e0: f64,
    pub delta: f64,
    pub z_pole: c64,
    pub delta_e: f64,
    pub gamma: f64,
    pub first_order: f64,
    pub eta_seq: Vec<f64>,
    pub second_order: Vec<c64>,
    pub extrapolated: c64,
    pub extrapolation_spread: f64,
}

/// Transition-basis data of one channel.
#[derive(Clone, Debug)]
pub struct Resonance {
    space: ParticleHoleSpace,
    channel: TransitionChannel,
    e: Array1<f64>,
    ke: Array1<f64>,
    kee: f64,
}

impl Resonance {
    pub fn new(model: &ModelSystem, gs: &GroundState, channel: TransitionChannel) -> Result<Self> {
        if !(gs.gamma() > 0.0) {
            return Err(Error::NotAMinimum(gs.gamma()));
        }
        let space = ParticleHoleSpace::new(model, gs)?;
        Self::from_space(gs, space, channel)
    }

    pub fn from_space(gs: &GroundState, space: ParticleHoleSpace, channel: TransitionChannel) -> Result<Self> {
        let va = space
            .virt_index()
            .iter()
            .position(|&k| k == channel.a0)
            .ok_or_else(|| Error::ChannelInvalid(format!("level {} is not in the virtual set", channel.a0)))?;
        let c = sector_weights(gs, &channel);
        let mut e = Array1::zeros(space.dim());
        for (i, &ci) in c.iter().enumerate() {
            e[space.pair_index(i, va)] = ci;
        }
        let ke = space.kc().dot(&e);
        let kee = e.dot(&ke);
        Ok(Self { space, channel, e, ke, kee })
    }

    pub fn channel(&self) -> &TransitionChannel {
        &self.channel
    }

    pub fn space(&self) -> &ParticleHoleSpace {
        &self.space
    }

    /// Transition coordinates `e` with `e[(i, a0)] = c_i`.
    pub fn coefficients(&self) -> &Array1<f64> {
        &self.e
    }

    /// `<U|K0 U>` at coupling `delta`.
    pub fn first_order(&self, delta: f64) -> f64 {
        delta * self.kee
    }

    fn u_reim(&self) -> (Array1<c64>, Array1<c64>) {
        (self.e.mapv(|v| c64::new(v * FRAC_1_SQRT_2, 0.0)), self.e.mapv(|v| -I * (v * FRAC_1_SQRT_2)))
    }

    fn check_upper(z: c64) -> Result<()> {
        if !(z.im > 0.0) {
            return Err(Error::InvalidParameter(format!("z = {z} must lie in the upper half plane")));
        }
        Ok(())
    }

    fn inner(a: &(Array1<c64>, Array1<c64>), b: &(Array1<c64>, Array1<c64>)) -> c64 {
        let d = |x: &Array1<c64>, y: &Array1<c64>| x.iter().zip(y.iter()).map(|(p, q)| p.conj() * q).sum::<c64>();
        d(&a.0, &b.0) + d(&a.1, &b.1)
    }

    /// `S(z) = 1 / <U|(M + i z J)^{-1} U>`.
    pub fn schur_complement(&self, perp: &PerpSystem, z: c64) -> Result<c64> {
        Self::check_upper(z)?;
        let u = self.u_reim();
        let a = perp.resolve(z, u.0.view(), u.1.view())?;
        let uau = Self::inner(&u, &a);
        let s = c64::new(1.0, 0.0) / uau;
        if !s.is_finite() || s.norm() > 1e10 {
            return Err(Error::SingularRestriction(format!("{z}")));
        }
        Ok(s)
    }

    /// `<U|K0 R_perp(z) K0|U>`.
    pub fn second_order(&self, perp: &PerpSystem, z: c64) -> Result<c64> {
        Self::check_upper(z)?;
        let delta = perp.delta();
        let u = self.u_reim();
        let proj = c64::new(delta * self.kee, 0.0);
        let vr = self.ke.mapv(|v| c64::new(SQRT_2 * delta * v, 0.0)) - &u.0 * proj;
        let vj = -&u.1 * proj;
        let v = (vr, vj);
        let a = perp.resolve(z, u.0.view(), u.1.view())?;
        let b = perp.resolve(z, v.0.view(), v.1.view())?;
        let uau = Self::inner(&u, &a);
        if uau.norm() < 1e-10 {
            return Err(Error::SingularRestriction(format!("{z}")));
        }
        Ok(Self::inner(&v, &b) - Self::inner(&v, &a) * Self::inner(&u, &b) / uau)
    }

    /// `z_pole = e0 + <U|K0 U> - <U|K0 R_perp(e0 + i0) K0|U>`, the last term
    /// extrapolated to `eta -> 0` from `eta_seq`.
    pub fn pole_estimate(&self, delta: f64, eta_seq: &[f64], tol: f64) -> Result<ResonanceEstimate> {
        if eta_seq.len() < 2 || eta_seq.iter().any(|&e| !(e > 0.0)) {
            return Err(Error::InvalidParameter("need at least two positive eta values".into()));
        }
        let e0 = self.channel.e0;
        if delta == 0.0 {
            return Ok(ResonanceEstimate {
                e0,
                delta,
                z_pole: c64::new(e0, 0.0),
                delta_e: 0.0,
                gamma: 0.0,
                first_order: 0.0,
                eta_seq: eta_seq.to_vec(),
                second_order: vec![c64::new(0.0, 0.0); eta_seq.len()],
                extrapolated: c64::new(0.0, 0.0),
                extrapolation_spread: 0.0,
            });
        }
        let perp = PerpSystem::new(&self.space, delta)?;
        let mut ts = Vec::with_capacity(eta_seq.len());
        for &eta in eta_seq {
            ts.push(self.second_order(&perp, c64::new(e0, eta))?);
        }
        let deg = (eta_seq.len() - 1).min(2);
        let t0 = poly_at_zero(eta_seq, &ts, deg)?;
        let t_low = poly_at_zero(eta_seq, &ts, deg - 1)?;
        let spread = (t0 - t_low).norm();
        if spread > tol * t0.norm().max(f64::MIN_POSITIVE) {
            return Err(Error::NoConvergence(format!(
                "eta extrapolants differ by {spread:.3e} against |T| = {:.3e}; enlarge L",
                t0.norm()
            )));
        }
        let first = self.first_order(delta);
        let z_pole = c64::new(e0 + first, 0.0) - t0;
        Ok(ResonanceEstimate {
            e0,
            delta,
            z_pole,
            delta_e: z_pole.re - e0,
            gamma: -z_pole.im,
            first_order: first,
            eta_seq: eta_seq.to_vec(),
            second_order: ts,
            extrapolated: t0,
            extrapolation_spread: spread,
        })
    }

    /// `Gamma = pi sum_{i open} sum_b |<phi_b, i| K0 U_perp>|^2 G_s(e0 + lambda_i - e_b)`.
    pub fn golden_rule_width(&self, delta: f64, s: f64) -> Result<GoldenRule> {
        let measure = SpectralMeasure::new(self.space.virt_energies().clone(), s)?;
        let (mu, q) = la::eigh_real(self.space.lagrange())?;
        let n_occ = self.space.n_occ();
        let nv = self.space.n_virt();
        let g = (&self.ke - &(&self.e * self.kee)) * delta;
        let g = g.into_shape_with_order((n_occ, nv)).expect("sector layout");
        let g = q.t().dot(&g);
        let mut channels = Vec::new();
        for k in 0..n_occ {
            let energy = self.channel.e0 + mu[k];
            if energy <= 0.0 {
                continue;
            }
            if measure.count_within(energy) < 5 {
                return Err(Error::SmoothingTooNarrow(format!(
                    "{} levels within s = {s:.3e} of E = {energy:.4}",
                    measure.count_within(energy)
                )));
            }
            let w = g.row(k).mapv(|x| x * x);
            channels.push(ChannelWidth { index: k, energy, width: PI * measure.density(energy, w.view()) });
        }
        let gamma = channels.iter().map(|c| c.width).sum();
        Ok(GoldenRule { gamma, channels, s, delta })
    }
}

/// Value at 0 of the least-squares polynomial of degree `deg` through `(x, y)`.
fn poly_at_zero(x: &[f64], y: &[c64], deg: usize) -> Result<c64> {
    let cols = deg + 1;
    let v = Array2::from_shape_fn((x.len(), cols), |(r, c)| x[r].powi(c as i32));
    let vt = v.t();
    let normal = vt.dot(&v);
    let solve = |b: Array1<f64>| -> Result<f64> {
        use ndarray_linalg::Solve;
        Ok(normal.solve_into(vt.dot(&b))?[0])
    };
    let re = solve(y.iter().map(|z| z.re).collect())?;
    let im = solve(y.iter().map(|z| z.im).collect())?;
    Ok(c64::new(re, im))
}

/// Lorentzian fit of `|Im <V|chi(omega) V>|` on `omega in center +- half_window`.
pub fn lorentzian_width(
    solver: &ResponseSolver,
    v: ArrayView1<f64>,
    center: f64,
    half_window: f64,
    n_omega: usize,
    eta: f64,
) -> Result<LorentzianFit> {
    let freq = FrequencyGrid::new(center - half_window, center + half_window, n_omega, eta)?;
    let spec = solver.chi_freq(v, v, &freq)?;
    fit_lorentzian(&spec.omega, &spec.imag_abs())
}
