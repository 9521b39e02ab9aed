//! Time propagation: the driven nonlinear orbitals, the linearized flow
//! `exp(-t J M)` and its forced response.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use ndarray_linalg::layout::MatrixLayout;
use ndarray_linalg::tridiagonal::{SolveTridiagonal, Tridiagonal};
use ndarray_linalg::{FactorizeInto, Solve, SVD};
use num_complex::Complex64 as c64;

use crate::error::{Error, Result};
use crate::groundstate::{density, GroundState};
use crate::la;
use crate::linops::{self, ParticleHoleSpace, PerpSystem};
use crate::model::ModelSystem;

const I: c64 = c64 { re: 0.0, im: 1.0 };

/// Time profile of the drive. Every profile vanishes for `t < 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Pulse {
    Off,
    Gaussian { t0: f64, sigma: f64 },
    Step,
    Sinusoid { omega0: f64 },
}

impl Pulse {
    pub fn eval(&self, t: f64) -> f64 {
        if t < 0.0 {
            return 0.0;
        }
        match *self {
            Pulse::Off => 0.0,
            Pulse::Gaussian { t0, sigma } => (-0.5 * ((t - t0) / sigma).powi(2)).exp(),
            Pulse::Step => 1.0,
            Pulse::Sinusoid { omega0 } => (omega0 * t).sin(),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Pulse::Off | Pulse::Step => true,
            Pulse::Gaussian { t0, sigma } => t0.is_finite() && sigma.is_finite() && sigma > 0.0,
            Pulse::Sinusoid { omega0 } => omega0.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("bad pulse {self:?}")))
        }
    }
}

/// `eps f(t) V_P`.
#[derive(Clone, Debug, PartialEq)]
pub struct Drive {
    pulse: Pulse,
    v_p: Array1<f64>,
    eps: f64,
}

impl Drive {
    pub fn new(pulse: Pulse, v_p: Array1<f64>, eps: f64) -> Result<Self> {
        pulse.validate()?;
        if !(eps.is_finite() && eps >= 0.0) {
            return Err(Error::InvalidParameter(format!("amplitude {eps} must be >= 0")));
        }
        if v_p.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("probe potential has non-finite entries".into()));
        }
        Ok(Self { pulse, v_p, eps })
    }

    pub fn f(&self, t: f64) -> f64 {
        self.pulse.eval(t)
    }

    pub fn pulse(&self) -> Pulse {
        self.pulse
    }

    pub fn v_p(&self) -> &Array1<f64> {
        &self.v_p
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn with_eps(&self, eps: f64) -> Result<Self> {
        Drive::new(self.pulse, self.v_p.clone(), eps)
    }
}

/// Sampled `U(t)` and density variations.
///
/// Nonlinear runs store `U = ((Psi(t) G(t)^{-1}) - Psi0) / eps` and
/// `rho(t) - rho0`; at `eps = 0` the raw deviation `Psi(t) G(t)^{-1} - Psi0`
/// is stored instead. Linearized runs store the first-order variation and
/// its density `S0(U)`.
#[derive(Clone, Debug, Default)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Array2<c64>>,
    pub densities: Vec<Array1<f64>>,
    pub eps: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn norms(&self, h: f64) -> Vec<f64> {
        self.states.iter().map(|u| la::weighted_norm(u.view(), h)).collect()
    }

    /// `<W, drho(t)>` at every sample.
    pub fn observable(&self, w: ArrayView1<f64>, h: f64) -> Vec<f64> {
        self.densities.iter().map(|d| h * w.dot(d)).collect()
    }
}

fn check_step(dt: f64) -> Result<()> {
    if !(dt.is_finite() && dt != 0.0) {
        return Err(Error::InvalidParameter(format!("time step {dt} must be finite and nonzero")));
    }
    Ok(())
}

fn cn_step(psi: &Array2<c64>, v: &Array1<f64>, kin: (f64, f64), dt: f64) -> Result<Array2<c64>> {
    let (d, o) = kin;
    let n = psi.nrows();
    let a = I * (0.5 * dt);
    let mut rhs = Array2::zeros(psi.raw_dim());
    for (mut rc, pc) in rhs.axis_iter_mut(Axis(1)).zip(psi.axis_iter(Axis(1))) {
        for k in 0..n {
            let mut hp = pc[k] * (d + v[k]);
            if k > 0 {
                hp += pc[k - 1] * o;
            }
            if k + 1 < n {
                hp += pc[k + 1] * o;
            }
            rc[k] = pc[k] - a * hp;
        }
    }
    let tri = Tridiagonal {
        l: MatrixLayout::F { col: n as i32, lda: n as i32 },
        dl: vec![a * o; n - 1],
        d: (0..n).map(|k| c64::new(1.0, 0.0) + a * (d + v[k])).collect(),
        du: vec![a * o; n - 1],
    };
    Ok(tri.solve_tridiagonal(&rhs)?)
}

fn column_norms(psi: &Array2<c64>, h: f64) -> Array1<f64> {
    psi.axis_iter(Axis(1)).map(|c| h * c.iter().map(|z| z.norm_sqr()).sum::<f64>()).collect()
}

/// One predictor-corrector Crank-Nicolson step of `j dPsi/dt = (H[rho] + eps f V_P) Psi`.
fn nonlinear_step(model: &ModelSystem, drive: &Drive, psi: &Array2<c64>, t: f64, dt: f64) -> Result<Array2<c64>> {
    let kin = model.grid().kinetic_coefficients();
    let fm = drive.eps() * drive.f(t + 0.5 * dt);
    let rho_n = density(psi.view());
    let mut v = model.effective_potential(rho_n.view())?;
    v.scaled_add(fm, drive.v_p());
    let pred = cn_step(psi, &v, kin, dt)?;
    let rho_mid = (&rho_n + &density(pred.view())) * 0.5;
    let mut v = model.effective_potential(rho_mid.view())?;
    v.scaled_add(fm, drive.v_p());
    cn_step(psi, &v, kin, dt)
}

/// Advances `psi` by `steps` steps of size `dt` (negative `dt` runs backwards).
pub fn propagate_orbitals(
    model: &ModelSystem,
    drive: &Drive,
    psi: ArrayView2<c64>,
    t_start: f64,
    dt: f64,
    steps: usize,
) -> Result<Array2<c64>> {
    check_step(dt)?;
    let h = model.grid().weight();
    let mut psi = psi.to_owned();
    let mut norms = column_norms(&psi, h);
    for k in 0..steps {
        let t = t_start + k as f64 * dt;
        let next = nonlinear_step(model, drive, &psi, t, dt)?;
        if next.iter().any(|z| !z.is_finite()) {
            return Err(Error::NonfiniteState(t + dt));
        }
        let new_norms = column_norms(&next, h);
        let drift = la::max_abs((&new_norms - &norms).iter());
        if drift > 1e-6 {
            return Err(Error::StepTooLarge { t: t + dt, drift });
        }
        psi = next;
        norms = new_norms;
    }
    Ok(psi)
}

/// Inverse of the discrete stationary phase after `steps` steps:
/// `Q diag(conj(phi_k)^steps) Q^T` with `phi_k = (1 - i mu_k dt/2)/(1 + i mu_k dt/2)`.
fn gauge_inverse(mu: &Array1<f64>, q: &Array2<f64>, dt: f64, steps: usize) -> Array2<c64> {
    let qc = la::to_complex(q.view());
    let mut scaled = qc.clone();
    for (mut col, &m) in scaled.axis_iter_mut(Axis(1)).zip(mu.iter()) {
        let theta = 2.0 * (0.5 * m * dt).atan();
        col *= c64::from_polar(1.0, theta * steps as f64);
    }
    scaled.dot(&qc.t())
}

/// Propagates `Psi0` under the drive up to `t_end`, sampling every `sample_every` steps.
pub fn propagate_nonlinear(
    model: &ModelSystem,
    gs: &GroundState,
    drive: &Drive,
    t_end: f64,
    dt: f64,
    sample_every: usize,
) -> Result<Trajectory> {
    if !(dt > 0.0 && dt.is_finite()) || !(t_end >= 0.0) || sample_every == 0 {
        return Err(Error::InvalidParameter(format!("need dt > 0, T >= 0, sampling >= 1 (dt = {dt}, T = {t_end})")));
    }
    if drive.v_p().len() != gs.n_grid() {
        return Err(Error::ShapeMismatch { expected: format!("{}", gs.n_grid()), got: format!("{}", drive.v_p().len()) });
    }
    let steps = (t_end / dt).round() as usize;
    let h = gs.weight();
    let (mu, q) = la::eigh_real(gs.lagrange())?;
    let psi0 = gs.psi_complex();
    let eps = drive.eps();
    let mut traj = Trajectory { eps, ..Default::default() };
    let mut psi = psi0.clone();
    let mut norms = column_norms(&psi, h);
    let record = |psi: &Array2<c64>, k: usize, traj: &mut Trajectory| {
        let g = gauge_inverse(&mu, &q, dt, k);
        let mut u = psi.dot(&g) - &psi0;
        if eps > 0.0 {
            u /= c64::new(eps, 0.0);
        }
        traj.times.push(k as f64 * dt);
        traj.densities.push(density(psi.view()) - gs.rho());
        traj.states.push(u);
    };
    record(&psi, 0, &mut traj);
    for k in 0..steps {
        let t = k as f64 * dt;
        let next = nonlinear_step(model, drive, &psi, t, dt)?;
        if next.iter().any(|z| !z.is_finite()) {
            return Err(Error::NonfiniteState(t + dt));
        }
        let new_norms = column_norms(&next, h);
        let drift = la::max_abs((&new_norms - &norms).iter());
        if drift > 1e-6 {
            return Err(Error::StepTooLarge { t: t + dt, drift });
        }
        psi = next;
        norms = new_norms;
        if (k + 1) % sample_every == 0 || k + 1 == steps {
            record(&psi, k + 1, &mut traj);
        }
    }
    Ok(traj)
}

/// `exp(-t J M)` on `Ran(1 - P0)` with `K0` scaled by `delta`, plus the
/// modal factors of the forced response.
#[derive(Clone, Debug)]
pub struct LinearizedFlow {
    space: ParticleHoleSpace,
    perp: PerpSystem,
    out_r: Array2<f64>,
    out_j: Array2<f64>,
    in_j: Array2<f64>,
}

impl LinearizedFlow {
    pub fn new(model: &ModelSystem, gs: &GroundState, delta: f64) -> Result<Self> {
        if !(gs.gamma() > 0.0) {
            return Err(Error::NotAMinimum(gs.gamma()));
        }
        let space = ParticleHoleSpace::new(model, gs)?;
        Self::from_space(space, delta)
    }

    pub fn from_space(space: ParticleHoleSpace, delta: f64) -> Result<Self> {
        let perp = PerpSystem::new(&space, delta)?;
        let (u, _, vt) = perp.modal_factors();
        let (_, p_half_inv, q_half, q_half_inv) = perp.half_factors();
        let out_r = p_half_inv.dot(&vt.t());
        let out_j = q_half_inv.dot(u);
        let in_j = u.t().dot(q_half);
        Ok(Self { space, perp, out_r, out_j, in_j })
    }

    pub fn space(&self) -> &ParticleHoleSpace {
        &self.space
    }

    pub fn perp(&self) -> &PerpSystem {
        &self.perp
    }

    fn perp_coeffs(&self, u: ArrayView2<c64>) -> Result<(Array1<f64>, Array1<f64>)> {
        let norm = la::weighted_norm(u, self.space.weight());
        let leak = self.space.occupied_component(u);
        if leak > 1e-10 * norm.max(1.0) {
            return Err(Error::NotPerp(leak));
        }
        let c = self.space.to_coeffs(u)?;
        Ok((c.mapv(|z| z.re), c.mapv(|z| z.im)))
    }

    /// `exp(-t J M) U0` for `U0` in `Ran(1 - P0)`.
    pub fn apply(&self, t: f64, u0: ArrayView2<c64>) -> Result<Array2<c64>> {
        let (cr, cj) = self.perp_coeffs(u0)?;
        let (xr, xj) = self.perp.propagate(t, cr.view(), cj.view());
        self.space.from_real_coeffs(xr.view(), xj.view())
    }

    /// `exp(-t M^{1/2} J M^{1/2}) V` for `V` in `Ran(1 - P0)`.
    pub fn apply_sandwich(&self, t: f64, v: ArrayView2<c64>) -> Result<Array2<c64>> {
        let (cr, cj) = self.perp_coeffs(v)?;
        let (yr, yj) = self.perp.sandwich_exp(t, cr.view(), cj.view());
        self.space.from_real_coeffs(yr.view(), yj.view())
    }

    /// `Re<U|M U>` for `U` in `Ran(1 - P0)`.
    pub fn energy(&self, u: ArrayView2<c64>) -> Result<f64> {
        let (cr, cj) = self.perp_coeffs(u)?;
        Ok(self.perp.quadratic_form(cr.view(), cj.view()))
    }

    /// Largest discrete-`H^2` operator norm of `exp(-t J M)` over `times`.
    pub fn h2_amplification(&self, model: &ModelSystem, times: &[f64]) -> Result<f64> {
        let h = self.space.weight();
        let nv = self.space.n_virt();
        let n_occ = self.space.n_occ();
        let m = self.space.dim();
        let mut w1 = model.grid().kinetic_matrix();
        for k in 0..w1.nrows() {
            w1[[k, k]] += 1.0;
        }
        let phi = self.space.virt();
        let wv = phi.t().dot(&w1.dot(phi)) * h;
        let (wl, wvec) = la::eigh_real(&wv)?;
        let wh = la::spectral_apply(&wl, &wvec, |x| x);
        let wi = la::spectral_apply(&wl, &wvec, |x| 1.0 / x);
        let mut big = Array2::zeros((2 * m, 2 * m));
        let mut big_inv = Array2::zeros((2 * m, 2 * m));
        for b in 0..2 * n_occ {
            big.slice_mut(s![b * nv..(b + 1) * nv, b * nv..(b + 1) * nv]).assign(&wh);
            big_inv.slice_mut(s![b * nv..(b + 1) * nv, b * nv..(b + 1) * nv]).assign(&wi);
        }
        let mut worst: f64 = 0.0;
        for &t in times {
            let mut e = Array2::zeros((2 * m, 2 * m));
            for col in 0..2 * m {
                let mut cr = Array1::zeros(m);
                let mut cj = Array1::zeros(m);
                if col < m {
                    cr[col] = 1.0;
                } else {
                    cj[col - m] = 1.0;
                }
                let (xr, xj) = self.perp.propagate(t, cr.view(), cj.view());
                e.slice_mut(s![..m, col]).assign(&xr);
                e.slice_mut(s![m.., col]).assign(&xj);
            }
            let a = big.dot(&e).dot(&big_inv);
            let (_, sv, _) = a.svd(false, false)?;
            worst = worst.max(sv[0]);
        }
        Ok(worst)
    }

    /// Time-domain response kernel `chi(t) V = -theta(t) S0(exp(-tJM) J (1-P0) V Psi0)`.
    pub fn chi_time(&self, v: ArrayView1<f64>, t: f64) -> Result<Array1<f64>> {
        if v.len() != self.space.n_grid() {
            return Err(Error::ShapeMismatch { expected: format!("{}", self.space.n_grid()), got: format!("{}", v.len()) });
        }
        if t < 0.0 {
            return Ok(Array1::zeros(v.len()));
        }
        let g = self.space.potential_coeffs(v);
        let b0 = self.in_j.dot(&g);
        let sigma = self.perp.excitation_energies();
        let a = Zip::from(&b0).and(sigma).map_collect(|&b, &s| b * (s * t).sin());
        let xr = self.out_r.dot(&a);
        Ok(-self.space.density_of(xr.view()))
    }

    /// First-order forced response `U1 = U_A + U_perp` sampled every `dt_out`.
    pub fn trajectory(
        &self,
        model: &ModelSystem,
        gs: &GroundState,
        drive: &Drive,
        t_end: f64,
        dt_out: f64,
    ) -> Result<Trajectory> {
        if !(dt_out > 0.0 && dt_out.is_finite()) || !(t_end >= 0.0) {
            return Err(Error::InvalidParameter(format!("need dt_out > 0 and T >= 0 (dt_out = {dt_out}, T = {t_end})")));
        }
        let v_p = drive.v_p();
        if v_p.len() != gs.n_grid() || gs.n_grid() != self.space.n_grid() {
            return Err(Error::ShapeMismatch { expected: format!("{}", self.space.n_grid()), got: format!("{}", v_p.len()) });
        }
        let h = gs.weight();
        let n_occ = gs.n_occ();
        let m = self.space.dim();
        let sigma = self.perp.excitation_energies().clone();
        let sigma_max = sigma.iter().cloned().fold(0.0, f64::max);

        let g = self.space.potential_coeffs(v_p.view());
        let b0 = self.in_j.dot(&g);
        // density per unit modal sine amplitude
        let y = self.space.pair().t().dot(&(&self.out_r * &b0.view().insert_axis(Axis(0)))) * (-2.0 / h);

        let (mu, qm) = la::eigh_real(gs.lagrange())?;
        let psi_t = gs.psi().dot(&qm);
        let f_hxc = model.hxc_kernel(gs.rho().view())? * self.perp.delta();
        let fy = f_hxc.dot(&y);
        let mut gb = Array2::zeros((n_occ * n_occ, m));
        let mut c_t = Array2::zeros((n_occ, n_occ));
        for k in 0..n_occ {
            for i in 0..n_occ {
                let pair = &psi_t.column(k) * &psi_t.column(i) * h;
                gb.row_mut(k * n_occ + i).assign(&pair.dot(&fy));
                c_t[[k, i]] = pair.dot(v_p);
            }
        }
        let dmu = Array2::from_shape_fn((n_occ, n_occ), |(k, i)| mu[k] - mu[i]);

        let n_out = (t_end / dt_out).round() as usize;
        let per_out = ((dt_out * sigma_max).ceil() as usize).max(1);
        let ds = dt_out / per_out as f64;
        let hs = 0.5 * ds;
        let (xq, wq) = la::gauss_legendre(8)?;
        let nodes: Vec<f64> = xq.iter().map(|x| 0.5 * hs * (x + 1.0)).collect();
        let node_w: Vec<Array1<c64>> = nodes
            .iter()
            .zip(wq.iter())
            .map(|(&s, &w)| sigma.mapv(|sg| c64::from_polar(0.5 * hs * w, -sg * (hs - s))))
            .collect();
        let step_phase = sigma.mapv(|sg| c64::from_polar(1.0, -sg * hs));
        let ph_full = dmu.mapv(|d| c64::from_polar(1.0, -d * ds));
        let ph_half = dmu.mapv(|d| c64::from_polar(1.0, -d * hs));

        let f = |t: f64| drive.f(t);
        let gauge_force = |t: f64, z: &Array1<c64>| -> Array2<c64> {
            let sv = z.mapv(|c| -c.im);
            let b = gb.dot(&sv).into_shape_with_order((n_occ, n_occ)).expect("square");
            (&c_t * f(t) + &b).mapv(|x| c64::new(x, 0.0))
        };
        let advance = |z: &mut Array1<c64>, t: f64| {
            let mut next = &*z * &step_phase;
            for (s, w) in nodes.iter().zip(node_w.iter()) {
                next.scaled_add(c64::new(f(t + s), 0.0), w);
            }
            *z = next;
        };

        let mut traj = Trajectory { eps: drive.eps(), ..Default::default() };
        let mut z = Array1::<c64>::zeros(m);
        let mut a_t = Array2::<c64>::zeros((n_occ, n_occ));
        let qc = la::to_complex(qm.view());
        let psi0 = gs.psi_complex();
        let emit = |t: f64, z: &Array1<c64>, a_t: &Array2<c64>, traj: &mut Trajectory| -> Result<()> {
            let sv = z.mapv(|c| -c.im);
            let cv = z.mapv(|c| c.re);
            let cr = -self.out_r.dot(&(&b0 * &sv));
            let cj = -self.out_j.dot(&(&b0 * &cv));
            let u_perp = self.space.from_real_coeffs(cr.view(), cj.view())?;
            let a = qc.dot(a_t).dot(&qc.t());
            traj.times.push(t);
            traj.states.push(u_perp + psi0.dot(&a));
            traj.densities.push(y.dot(&sv));
            Ok(())
        };
        emit(0.0, &z, &a_t, &mut traj)?;
        let mut t = 0.0;
        for out in 1..=n_out {
            for _ in 0..per_out {
                let g0 = gauge_force(t, &z);
                advance(&mut z, t);
                let g1 = gauge_force(t + hs, &z);
                advance(&mut z, t + hs);
                let g2 = gauge_force(t + ds, &z);
                let quad = (&ph_full * &g0 + &(&ph_half * &g1) * c64::new(4.0, 0.0) + &g2) * (ds / 6.0);
                a_t = &ph_full * &a_t - &(quad * I);
                t += ds;
            }
            t = out as f64 * dt_out;
            emit(t, &z, &a_t, &mut traj)?;
        }
        Ok(traj)
    }
}

/// `exp(-t J M) U0`, building the flow at full coupling.
pub fn linearized_propagator_apply(gs: &GroundState, model: &ModelSystem, t: f64, u0: ArrayView2<c64>) -> Result<Array2<c64>> {
    LinearizedFlow::new(model, gs, 1.0)?.apply(t, u0)
}

/// First-order response `U1(t)` to the drive, sampled every `dt_out`.
pub fn propagate_linearized(
    gs: &GroundState,
    model: &ModelSystem,
    drive: &Drive,
    t_end: f64,
    dt_out: f64,
) -> Result<Trajectory> {
    LinearizedFlow::new(model, gs, 1.0)?.trajectory(model, gs, drive, t_end, dt_out)
}

fn reim_flat(u: ArrayView2<c64>) -> Array1<f64> {
    let v = la::flatten(u);
    let d = v.len();
    let mut out = Array1::zeros(2 * d);
    for (k, z) in v.iter().enumerate() {
        out[k] = z.re;
        out[k + d] = z.im;
    }
    out
}

/// Remainder `R(U, eps, t)` of the driven equation around `Psi0`.
pub fn remainder(
    model: &ModelSystem,
    gs: &GroundState,
    drive: &Drive,
    u: ArrayView2<c64>,
    t: f64,
) -> Result<Array2<c64>> {
    let eps = drive.eps();
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter("remainder needs eps > 0".into()));
    }
    let psi0 = gs.psi_complex();
    let shifted = &psi0 + &u.mapv(|z| z * eps);
    let rho = density(shifted.view());
    let (kd, _) = model.grid().kinetic_coefficients();
    let v0: Array1<f64> = gs.h0().diag().mapv(|d| d - kd);
    let dv = model.effective_potential(rho.view())? - &v0;
    let mut r = linops::k0_apply(gs, model, u)? * c64::new(-1.0, 0.0);
    let fe = eps * drive.f(t);
    for ((mut rc, pc), uc) in r.axis_iter_mut(Axis(1)).zip(psi0.axis_iter(Axis(1))).zip(u.axis_iter(Axis(1))) {
        for x in 0..rc.len() {
            rc[x] += pc[x] * (dv[x] / eps) + uc[x] * (dv[x] + fe * drive.v_p()[x]);
        }
    }
    Ok(r)
}

/// Largest weighted-norm mismatch between the sampled `U(t)` and the
/// Crank-Nicolson solution of `J dU/dt = M_dyn U + f V_P Psi0 + R` on the
/// same time grid, with `R` taken from the samples. At `eps = 0` the
/// forcing vanishes and the largest stored deviation is returned.
pub fn duhamel_residual(traj: &Trajectory, gs: &GroundState, model: &ModelSystem, drive: &Drive) -> Result<f64> {
    let h = gs.weight();
    if drive.eps() == 0.0 {
        return Ok(traj.norms(h).into_iter().fold(0.0, f64::max));
    }
    if traj.len() < 2 {
        return Ok(0.0);
    }
    let dt = traj.times[1] - traj.times[0];
    for w in traj.times.windows(2) {
        if ((w[1] - w[0]) - dt).abs() > 1e-9 * dt.abs().max(1.0) {
            return Err(Error::InvalidParameter("Duhamel check needs uniform sampling".into()));
        }
    }
    let m_dyn = linops::omega_op(gs).add(&linops::k0_op(gs, model, 1.0)?).reim_matrix();
    let n = gs.n_grid() * gs.n_occ();
    let mut jm = Array2::zeros((2 * n, 2 * n));
    jm.slice_mut(s![..n, ..]).assign(&(-&m_dyn.slice(s![n.., ..])));
    jm.slice_mut(s![n.., ..]).assign(&m_dyn.slice(s![..n, ..]));
    let eye = Array2::<f64>::eye(2 * n);
    let plus = (&eye + &(&jm * (0.5 * dt))).factorize_into()?;
    let minus = &eye - &(&jm * (0.5 * dt));

    let psi0 = gs.psi_complex();
    let forcing = |k: usize| -> Result<Array1<f64>> {
        let t = traj.times[k];
        let mut g = remainder(model, gs, drive, traj.states[k].view(), t)?;
        let fv = drive.f(t);
        for (mut gc, pc) in g.axis_iter_mut(Axis(1)).zip(psi0.axis_iter(Axis(1))) {
            Zip::from(&mut gc).and(&pc).and(drive.v_p()).for_each(|gv, &p, &v| *gv += p * (fv * v));
        }
        let flat = reim_flat(g.view());
        let mut jg = Array1::zeros(2 * n);
        jg.slice_mut(s![..n]).assign(&(-&flat.slice(s![n..])));
        jg.slice_mut(s![n..]).assign(&flat.slice(s![..n]));
        Ok(jg)
    };
    let mut w = reim_flat(traj.states[0].view());
    let mut g_prev = forcing(0)?;
    let mut worst: f64 = 0.0;
    for k in 1..traj.len() {
        let g_next = forcing(k)?;
        let rhs = minus.dot(&w) - &((&g_prev + &g_next) * (0.5 * dt));
        w = plus.solve_into(rhs)?;
        let diff = &w - &reim_flat(traj.states[k].view());
        worst = worst.max((h * diff.dot(&diff)).sqrt());
        g_prev = g_next;
    }
    Ok(worst)
}
