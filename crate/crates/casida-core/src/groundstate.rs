//! Energy minimization over orthonormal orbitals, canonicalization and the
//! coercivity certificate of the constrained Hessian.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use num_complex::Complex64 as c64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::la;
use crate::linops::{ParticleHoleSpace, PerpSystem};
use crate::model::ModelSystem;

/// Which eigenvectors of `H[rho]` are occupied.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub enum Occupation {
    #[default]
    Aufbau,
    Indices(Vec<usize>),
}

#[derive(Clone, Debug)]
pub struct ScfOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub mixing: f64,
    pub occupation: Occupation,
    /// Seeds a small perturbation of the starting density; `0` leaves it untouched.
    pub seed: u64,
    /// Iterations without a new best residual before a projected-gradient phase.
    pub stall_window: usize,
    pub fallback_steps: usize,
}

impl Default for ScfOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iter: 5000,
            mixing: 0.3,
            occupation: Occupation::Aufbau,
            seed: 0,
            stall_window: 200,
            fallback_steps: 25,
        }
    }
}

/// Full eigendecomposition of `H0`, eigenvectors normalized with the grid weight.
#[derive(Clone, Debug)]
pub struct H0Spectrum {
    pub values: Array1<f64>,
    pub vectors: Array2<f64>,
}

#[derive(Clone, Debug)]
pub struct GroundState {
    psi: Array2<f64>,
    lambda: Array1<f64>,
    lagrange: Array2<f64>,
    rho: Array1<f64>,
    energy: f64,
    gamma: f64,
    h0: Array2<f64>,
    spectrum: H0Spectrum,
    occupied: Vec<usize>,
    aufbau: bool,
    iterations: usize,
    residual: f64,
    fallback_used: bool,
    weight: f64,
}

impl GroundState {
    /// Occupied orbitals, `n x N`.
    pub fn psi(&self) -> &Array2<f64> {
        &self.psi
    }

    /// Occupied eigenvalues in the order of `occupied()`.
    pub fn lambda(&self) -> &Array1<f64> {
        &self.lambda
    }

    /// `h Psi^T H0 Psi`; diagonal for canonical orbitals.
    pub fn lagrange(&self) -> &Array2<f64> {
        &self.lagrange
    }

    pub fn rho(&self) -> &Array1<f64> {
        &self.rho
    }

    pub fn energy(&self) -> f64 {
        self.energy
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn h0(&self) -> &Array2<f64> {
        &self.h0
    }

    pub fn spectrum(&self) -> &H0Spectrum {
        &self.spectrum
    }

    /// Indices into `spectrum()` of the occupied levels.
    pub fn occupied(&self) -> &[usize] {
        &self.occupied
    }

    /// False when the occupied set is not the lowest `N` levels.
    pub fn aufbau(&self) -> bool {
        self.aufbau
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    /// Self-consistency residual `|H[rho0] Psi0 - Psi0 diag(lambda)|`.
    pub fn residual(&self) -> f64 {
        self.residual
    }

    pub fn fallback_used(&self) -> bool {
        self.fallback_used
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn n_occ(&self) -> usize {
        self.psi.ncols()
    }

    pub fn n_grid(&self) -> usize {
        self.psi.nrows()
    }

    /// True when the Lagrange matrix is diagonal.
    pub fn is_canonical(&self) -> bool {
        let n = self.lagrange.nrows();
        let scale = la::max_abs(self.lagrange.iter()).max(1.0);
        (0..n).all(|i| (0..n).all(|j| i == j || self.lagrange[[i, j]].abs() <= 1e-13 * scale))
    }

    pub fn psi_complex(&self) -> Array2<c64> {
        la::to_complex(self.psi.view())
    }

    /// Same state with orbitals `Psi0 R` for an orthogonal `R`.
    pub fn rotated(&self, r: ArrayView2<f64>) -> Result<GroundState> {
        let n_occ = self.n_occ();
        if r.dim() != (n_occ, n_occ) {
            return Err(Error::ShapeMismatch {
                expected: format!("{n_occ}x{n_occ} rotation"),
                got: format!("{:?}", r.dim()),
            });
        }
        let dev = la::max_abs((r.t().dot(&r) - Array2::<f64>::eye(n_occ)).iter());
        if dev > 1e-10 {
            return Err(Error::InvalidParameter(format!("rotation is not orthogonal ({dev:e})")));
        }
        let mut out = self.clone();
        out.psi = self.psi.dot(&r);
        out.lagrange = r.t().dot(&self.lagrange).dot(&r);
        Ok(out)
    }

    /// Orthonormality defect `max |h Psi^T Psi - I|`.
    pub fn orthonormality_defect(&self) -> f64 {
        orthonormality_defect(self.psi.view(), self.weight)
    }
}

pub(crate) fn orthonormality_defect(psi: ArrayView2<f64>, h: f64) -> f64 {
    let s = psi.t().dot(&psi) * h;
    la::max_abs((s - Array2::<f64>::eye(psi.ncols())).iter())
}

fn density_real(psi: ArrayView2<f64>) -> Array1<f64> {
    psi.mapv(|v| v * v).sum_axis(Axis(1))
}

pub fn density(psi: ArrayView2<c64>) -> Array1<f64> {
    psi.mapv(|v| v.norm_sqr()).sum_axis(Axis(1))
}

/// Kinetic, external, Hartree and xc contributions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnergyTerms {
    pub kinetic: f64,
    pub external: f64,
    pub hartree: f64,
    pub xc: f64,
}

impl EnergyTerms {
    pub fn total(&self) -> f64 {
        self.kinetic + self.external + self.hartree + self.xc
    }
}

pub fn energy_terms(model: &ModelSystem, psi: ArrayView2<c64>) -> Result<EnergyTerms> {
    let n = model.grid().n();
    if psi.nrows() != n {
        return Err(Error::ShapeMismatch { expected: format!("{n} rows"), got: format!("{}", psi.nrows()) });
    }
    let h = model.grid().weight();
    let (d, o) = model.grid().kinetic_coefficients();
    let mut kinetic = 0.0;
    for col in psi.axis_iter(Axis(1)) {
        for k in 0..n {
            let mut t = col[k] * d;
            if k > 0 {
                t += col[k - 1] * o;
            }
            if k + 1 < n {
                t += col[k + 1] * o;
            }
            kinetic += (col[k].conj() * t).re;
        }
    }
    let rho = density(psi);
    let vh = model.hartree_potential(rho.view())?;
    let xc = model.xc();
    Ok(EnergyTerms {
        kinetic: kinetic * h,
        external: h * model.v_ext().dot(&rho),
        hartree: 0.5 * h * vh.dot(&rho),
        xc: h * rho.iter().map(|&r| xc.energy_density(r)).sum::<f64>(),
    })
}

/// Energy of real orbitals; rejects inputs that are not orthonormal to 1e-8.
pub fn energy(model: &ModelSystem, psi: ArrayView2<f64>) -> Result<f64> {
    let defect = orthonormality_defect(psi, model.grid().weight());
    if defect > 1e-8 {
        return Err(Error::NotOrthonormal(defect));
    }
    Ok(energy_terms(model, la::to_complex(psi).view())?.total())
}

/// Energy functional evaluated at arbitrary complex orbitals, without the
/// orthonormality check.
pub fn energy_unconstrained(model: &ModelSystem, psi: ArrayView2<c64>) -> Result<f64> {
    Ok(energy_terms(model, psi)?.total())
}

/// Energy of complex orbitals; rejects inputs that are not orthonormal to 1e-8.
pub fn energy_complex(model: &ModelSystem, psi: ArrayView2<c64>) -> Result<f64> {
    let h = model.grid().weight();
    let s = la::gram(psi, psi, h);
    let defect = la::max_abs_c((s - Array2::<c64>::eye(psi.ncols())).iter());
    if defect > 1e-8 {
        return Err(Error::NotOrthonormal(defect));
    }
    energy_unconstrained(model, psi)
}

fn occupied_indices(occ: &Occupation, n_elec: usize, n: usize) -> Result<Vec<usize>> {
    match occ {
        Occupation::Aufbau => Ok((0..n_elec).collect()),
        Occupation::Indices(idx) => {
            let mut sorted = idx.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != n_elec || idx.len() != n_elec {
                return Err(Error::InvalidParameter(format!(
                    "occupation needs {n_elec} distinct indices, got {idx:?}"
                )));
            }
            if let Some(&bad) = sorted.iter().find(|&&i| i >= n) {
                return Err(Error::InvalidParameter(format!("occupied index {bad} out of range")));
            }
            Ok(sorted)
        }
    }
}

/// Normalized, sign-fixed eigendecomposition; degenerate clusters are
/// rotated to diagonalize the position operator.
fn canonical_eigh(ham: &Array2<f64>, x: &Array1<f64>, h: f64) -> Result<(Array1<f64>, Array2<f64>)> {
    let (vals, mut vecs) = la::eigh_real(ham)?;
    vecs /= h.sqrt();
    let n = vals.len();
    let scale = la::max_abs(vals.iter()).max(1.0);
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && vals[end] - vals[end - 1] < 1e-10 * scale {
            end += 1;
        }
        if end - start > 1 {
            let block = vecs.slice(s![.., start..end]).to_owned();
            let xb = block.t().dot(&(&block * &x.view().insert_axis(Axis(1)))) * h;
            let (_, rot) = la::eigh_real(&xb)?;
            vecs.slice_mut(s![.., start..end]).assign(&block.dot(&rot));
        }
        start = end;
    }
    for mut col in vecs.axis_iter_mut(Axis(1)) {
        la::fix_sign(&mut col);
    }
    Ok((vals, vecs))
}

fn apply_hamiltonian(model: &ModelSystem, v: ArrayView1<f64>, psi: ArrayView2<f64>) -> Array2<f64> {
    let (d, o) = model.grid().kinetic_coefficients();
    let n = psi.nrows();
    let mut out = Array2::zeros(psi.raw_dim());
    for (mut oc, pc) in out.axis_iter_mut(Axis(1)).zip(psi.axis_iter(Axis(1))) {
        for k in 0..n {
            let mut t = (d + v[k]) * pc[k];
            if k > 0 {
                t += o * pc[k - 1];
            }
            if k + 1 < n {
                t += o * pc[k + 1];
            }
            oc[k] = t;
        }
    }
    out
}

fn residual_norm(r: &Array2<f64>, h: f64) -> f64 {
    let max_entry = la::max_abs(r.iter());
    let max_col = r
        .axis_iter(Axis(1))
        .map(|c| (h * c.dot(&c)).sqrt())
        .fold(0.0_f64, f64::max);
    max_entry.max(max_col)
}

/// `|H[rho(psi)] psi - psi diag(lambda)|`, max of entrywise and column L2 norms.
fn stationarity_residual(
    model: &ModelSystem,
    psi: ArrayView2<f64>,
    lambda: ArrayView1<f64>,
    rho: ArrayView1<f64>,
) -> Result<f64> {
    let v = model.effective_potential(rho)?;
    let mut r = apply_hamiltonian(model, v.view(), psi);
    for (mut col, (pc, &l)) in r.axis_iter_mut(Axis(1)).zip(psi.axis_iter(Axis(1)).zip(lambda.iter())) {
        col.scaled_add(-l, &pc);
    }
    Ok(residual_norm(&r, model.grid().weight()))
}

fn lowdin(psi: &Array2<f64>, h: f64) -> Result<Array2<f64>> {
    let s = psi.t().dot(psi) * h;
    let (vals, vecs) = la::eigh_real(&s)?;
    if vals.iter().any(|&v| v <= 1e-14) {
        return Err(Error::SingularSystem("orbital overlap is singular".into()));
    }
    Ok(psi.dot(&la::spectral_apply(&vals, &vecs, |v| 1.0 / v.sqrt())))
}

/// Armijo-backtracked steepest descent on the orbital manifold.
fn projected_gradient(model: &ModelSystem, mut psi: Array2<f64>, steps: usize) -> Result<Array2<f64>> {
    let h = model.grid().weight();
    let mut tau = 1.0;
    let mut e = energy(model, psi.view())?;
    for _ in 0..steps {
        let rho = density_real(psi.view());
        let v = model.effective_potential(rho.view())?;
        let hpsi = apply_hamiltonian(model, v.view(), psi.view());
        let lag = psi.t().dot(&hpsi) * h;
        let g = &hpsi - &psi.dot(&lag);
        let g2 = h * g.iter().map(|x| x * x).sum::<f64>();
        if g2 == 0.0 {
            break;
        }
        let mut accepted = false;
        for _ in 0..40 {
            let trial = lowdin(&(&psi - &(&g * tau)), h)?;
            let et = energy(model, trial.view())?;
            if et <= e - 1e-4 * tau * 2.0 * g2 {
                psi = trial;
                e = et;
                accepted = true;
                tau *= 1.5;
                break;
            }
            tau *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Ok(psi)
}

/// Damped self-consistent field iteration with a projected-gradient fallback.
///
/// Converges when the eigenvectors of `H[rho_in]` satisfy
/// `|H[rho_out] psi - psi diag(lambda)| <= tol`. The returned `H0` is the
/// Hamiltonian whose exact eigenvectors are `Psi0`.
pub fn minimize(model: &ModelSystem, opts: &ScfOptions) -> Result<GroundState> {
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tol = {} must be positive", opts.tol)));
    }
    if !(opts.mixing > 0.0 && opts.mixing <= 1.0) {
        return Err(Error::InvalidParameter(format!("mixing = {} must lie in (0, 1]", opts.mixing)));
    }
    let grid = model.grid();
    let n = grid.n();
    let h = grid.weight();
    let n_elec = model.n_electrons();
    let occ = occupied_indices(&opts.occupation, n_elec, n)?;

    let core = model.hamiltonian(Array1::zeros(n).view())?;
    let (_, vecs) = canonical_eigh(&core, grid.x(), h)?;
    let mut rho_in = density_real(vecs.select(Axis(1), &occ).view());
    if opts.seed != 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        rho_in.mapv_inplace(|r| r * (1.0 + 1e-3 * rng.random_range(-1.0..1.0)));
        let total = rho_in.sum() * h;
        rho_in *= n_elec as f64 / total;
    }

    let mut best = f64::INFINITY;
    let mut best_it = 0;
    let mut fallback_used = false;
    let mut last = f64::NAN;
    for it in 1..=opts.max_iter {
        let ham = model.hamiltonian(rho_in.view())?;
        let (vals, vecs) = canonical_eigh(&ham, grid.x(), h)?;
        let psi = vecs.select(Axis(1), &occ);
        let lambda = vals.select(Axis(0), &occ);
        let rho_out = density_real(psi.view());
        let res = stationarity_residual(model, psi.view(), lambda.view(), rho_out.view())?;
        last = res;
        if !res.is_finite() {
            return Err(Error::MaxIterations { iterations: it, residual: res });
        }
        if res <= opts.tol {
            if let Some((index, &value)) = lambda.iter().enumerate().find(|(_, &l)| l >= 0.0) {
                return Err(Error::PositiveOccupiedEigenvalue { index, value });
            }
            let lagrange = Array2::from_diag(&lambda);
            let e = energy(model, psi.view())?;
            let mut gs = GroundState {
                psi,
                lambda,
                lagrange,
                rho: rho_out,
                energy: e,
                gamma: f64::NAN,
                h0: ham,
                spectrum: H0Spectrum { values: vals, vectors: vecs },
                aufbau: occ.iter().copied().eq(0..n_elec),
                occupied: occ,
                iterations: it,
                residual: res,
                fallback_used,
                weight: h,
            };
            gs.gamma = gamma_scaled(model, &gs, 1.0)?;
            return Ok(gs);
        }
        if res < best {
            best = res;
            best_it = it;
        } else if it - best_it >= opts.stall_window {
            let psi = projected_gradient(model, psi, opts.fallback_steps)?;
            rho_in = density_real(psi.view());
            fallback_used = true;
            best = f64::INFINITY;
            best_it = it;
            continue;
        }
        rho_in = &rho_in * (1.0 - opts.mixing) + &rho_out * opts.mixing;
    }
    Err(Error::MaxIterations { iterations: opts.max_iter, residual: last })
}

/// Smallest eigenvalue of `Re<U|M U>` on `Ran(1 - P0)` with `K0` scaled by `delta`.
pub fn gamma_scaled(model: &ModelSystem, gs: &GroundState, delta: f64) -> Result<f64> {
    let space = ParticleHoleSpace::new(model, gs)?;
    Ok(PerpSystem::lowest_eigenvalue(&space, delta)?)
}

/// Coercivity constant of `M_dyn` on `Ran(1 - P0)`; errors when it is not positive.
pub fn coercivity_constant(model: &ModelSystem, gs: &GroundState) -> Result<f64> {
    let g = gamma_scaled(model, gs, 1.0)?;
    if g <= -1e-10 {
        return Err(Error::NotAMinimum(g));
    }
    Ok(g)
}

/// Fitted power law of `|E(Psi0 + eps U) - q(eps U)|`, `q` the quadratic model.
#[derive(Clone, Debug)]
pub struct ExpansionFit {
    pub eps: Vec<f64>,
    pub residuals: Vec<f64>,
    pub slope: Option<f64>,
}

/// Quadratic model of the energy around `Psi0`:
/// `E(Psi0) + 2 Re<H Psi0|U> + <U|H U> + Re<U|K(U)>`, all at `rho(Psi0)`.
pub fn energy_expansion_residual(
    model: &ModelSystem,
    gs: &GroundState,
    u: ArrayView2<c64>,
    eps_list: &[f64],
) -> Result<ExpansionFit> {
    let h = model.grid().weight();
    let psi = gs.psi_complex();
    if u.dim() != psi.dim() {
        return Err(Error::ShapeMismatch { expected: format!("{:?}", psi.dim()), got: format!("{:?}", u.dim()) });
    }
    let rho = density(psi.view());
    let ham = model.hamiltonian(rho.view())?;
    let f = model.hxc_kernel(rho.view())?;
    let e0 = energy_unconstrained(model, psi.view())?;
    let hc = la::to_complex(ham.view());
    let hpsi = hc.dot(&psi);
    let hu = hc.dot(&u);
    let first = 2.0 * la::re_inner(hpsi.view(), u, h);
    let s = crate::linops::density_variation(gs.psi().view(), u);
    let fs = f.dot(&s);
    let k_term = h * fs.dot(&(&s * 0.5));
    let second = la::re_inner(u, hu.view(), h) + k_term;
    let mut residuals = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        let trial = &psi + &u.mapv(|z| z * eps);
        let e = energy_unconstrained(model, trial.view())?;
        residuals.push((e - (e0 + eps * first + eps * eps * second)).abs());
    }
    let slope = la::loglog_slope(eps_list, &residuals);
    Ok(ExpansionFit { eps: eps_list.to_vec(), residuals, slope })
}

/// `Psi (Psi^* Psi)^{-1/2}` in the weighted inner product.
pub fn orthonormalize(psi: ArrayView2<c64>, h: f64) -> Result<Array2<c64>> {
    let s = la::gram(psi, psi, h);
    let (vals, vecs) = la::eigh_complex(&s)?;
    if vals.iter().any(|&v| v <= 1e-14) {
        return Err(Error::SingularSystem("orbital overlap is singular".into()));
    }
    let mut scaled = vecs.clone();
    for (mut col, &v) in scaled.axis_iter_mut(Axis(1)).zip(vals.iter()) {
        col.mapv_inplace(|z| z / v.sqrt());
    }
    let inv_sqrt = scaled.dot(&vecs.t().mapv(|z| z.conj()));
    Ok(psi.dot(&inv_sqrt))
}

/// `min_R |Psi - Phi R|^2 = 2N - 2 Tr(Sigma)`, `Sigma` the singular values of `h Phi^* Psi`.
pub fn subspace_distance(psi: ArrayView2<c64>, phi: ArrayView2<c64>, h: f64) -> Result<f64> {
    use ndarray_linalg::SVD;
    if psi.dim() != phi.dim() {
        return Err(Error::ShapeMismatch { expected: format!("{:?}", psi.dim()), got: format!("{:?}", phi.dim()) });
    }
    let overlap = la::gram(phi, psi, h);
    let (_, sv, _) = overlap.svd(false, false)?;
    let n = psi.ncols() as f64;
    Ok((2.0 * n - 2.0 * sv.sum()).max(0.0))
}

pub fn subspace_distance_real(psi: ArrayView2<f64>, phi: ArrayView2<f64>, h: f64) -> Result<f64> {
    subspace_distance(la::to_complex(psi).view(), la::to_complex(phi).view(), h)
}
