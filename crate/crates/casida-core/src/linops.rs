//! Real-linear operator algebra on orbital variations.
//!
//! A variation `U` is an `n x N` complex matrix; orbital multiplication by
//! the imaginary unit is stored as multiplication by `i`. Operators of the
//! form `U -> A U + B conj(U)` act on the column-stacked vector of `U`.
//! Inner products carry the uniform grid weight, so adjoints are plain
//! conjugate transposes.

use std::f64::consts::FRAC_1_SQRT_2;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use ndarray_linalg::{EigValsh, Solve, SVD, UPLO};
use num_complex::Complex64 as c64;

use crate::error::{Error, Result};
use crate::groundstate::GroundState;
use crate::la;
use crate::model::ModelSystem;

const I: c64 = c64 { re: 0.0, im: 1.0 };

fn check_shape(gs: &GroundState, u: ArrayView2<c64>) -> Result<()> {
    if u.dim() != gs.psi().dim() {
        return Err(Error::ShapeMismatch {
            expected: format!("{:?}", gs.psi().dim()),
            got: format!("{:?}", u.dim()),
        });
    }
    Ok(())
}

/// `sum_j conj(psi_j) u_j + psi_j conj(u_j)` for real orbitals.
pub fn density_variation(psi: ArrayView2<f64>, u: ArrayView2<c64>) -> Array1<f64> {
    let mut out = Array1::zeros(psi.nrows());
    for (p, uc) in psi.axis_iter(Axis(1)).zip(u.axis_iter(Axis(1))) {
        Zip::from(&mut out).and(&p).and(&uc).for_each(|o, &pv, &uv| *o += 2.0 * pv * uv.re);
    }
    out
}

/// Density response `S0(U)`.
pub fn s0_apply(gs: &GroundState, u: ArrayView2<c64>) -> Result<Array1<f64>> {
    check_shape(gs, u)?;
    Ok(density_variation(gs.psi().view(), u))
}

/// `v -> v Psi0`. Pairs with `S0` as `2 Re<v Psi0|U> = <v|S0 U>`.
pub fn s0_adjoint(gs: &GroundState, v: ArrayView1<f64>) -> Result<Array2<c64>> {
    if v.len() != gs.n_grid() {
        return Err(Error::ShapeMismatch { expected: format!("{}", gs.n_grid()), got: format!("{}", v.len()) });
    }
    Ok(multiply_orbitals(gs.psi().view(), v))
}

fn multiply_orbitals(psi: ArrayView2<f64>, v: ArrayView1<f64>) -> Array2<c64> {
    let mut out = Array2::zeros(psi.raw_dim());
    for (mut oc, pc) in out.axis_iter_mut(Axis(1)).zip(psi.axis_iter(Axis(1))) {
        Zip::from(&mut oc).and(&pc).and(&v).for_each(|o, &p, &vv| *o = c64::new(p * vv, 0.0));
    }
    out
}

/// `(K0 U)_i = (f_hxc S0(U)) psi_i`.
pub fn k0_apply(gs: &GroundState, model: &ModelSystem, u: ArrayView2<c64>) -> Result<Array2<c64>> {
    check_shape(gs, u)?;
    let f = model.hxc_kernel(gs.rho().view())?;
    let s = density_variation(gs.psi().view(), u);
    Ok(multiply_orbitals(gs.psi().view(), f.dot(&s).view()))
}

/// `U -> A U + B conj(U)` on column-stacked variations.
#[derive(Clone, Debug, PartialEq)]
pub struct RealLinearOp {
    a: Array2<c64>,
    b: Array2<c64>,
    n: usize,
    n_orb: usize,
}

impl RealLinearOp {
    pub fn new(a: Array2<c64>, b: Array2<c64>, n: usize, n_orb: usize) -> Result<Self> {
        let d = n * n_orb;
        if a.dim() != (d, d) || b.dim() != (d, d) {
            return Err(Error::ShapeMismatch {
                expected: format!("two {d}x{d} blocks"),
                got: format!("{:?} and {:?}", a.dim(), b.dim()),
            });
        }
        Ok(Self { a, b, n, n_orb })
    }

    pub fn identity(n: usize, n_orb: usize) -> Self {
        let d = n * n_orb;
        Self { a: Array2::eye(d), b: Array2::zeros((d, d)), n, n_orb }
    }

    pub fn a(&self) -> &Array2<c64> {
        &self.a
    }

    pub fn b(&self) -> &Array2<c64> {
        &self.b
    }

    pub fn dim(&self) -> usize {
        self.n * self.n_orb
    }

    pub fn apply(&self, u: ArrayView2<c64>) -> Result<Array2<c64>> {
        let v = la::flatten(u);
        if v.len() != self.dim() {
            return Err(Error::ShapeMismatch { expected: format!("{} entries", self.dim()), got: format!("{}", v.len()) });
        }
        let out = self.a.dot(&v) + self.b.dot(&v.mapv(|z| z.conj()));
        la::unflatten(out.view(), self.n, self.n_orb)
    }

    /// `self o other`.
    pub fn compose(&self, other: &RealLinearOp) -> RealLinearOp {
        let a = self.a.dot(&other.a) + self.b.dot(&other.b.mapv(|z| z.conj()));
        let b = self.a.dot(&other.b) + self.b.dot(&other.a.mapv(|z| z.conj()));
        RealLinearOp { a, b, n: self.n, n_orb: self.n_orb }
    }

    pub fn add(&self, other: &RealLinearOp) -> RealLinearOp {
        RealLinearOp { a: &self.a + &other.a, b: &self.b + &other.b, n: self.n, n_orb: self.n_orb }
    }

    pub fn sub(&self, other: &RealLinearOp) -> RealLinearOp {
        RealLinearOp { a: &self.a - &other.a, b: &self.b - &other.b, n: self.n, n_orb: self.n_orb }
    }

    pub fn scale(&self, f: f64) -> RealLinearOp {
        let f = c64::new(f, 0.0);
        RealLinearOp { a: &self.a * f, b: &self.b * f, n: self.n, n_orb: self.n_orb }
    }

    /// `[[A, B], [conj B, conj A]]` acting on `(X, Y)`.
    pub fn casida_matrix(&self) -> Array2<c64> {
        let d = self.dim();
        let mut m = Array2::zeros((2 * d, 2 * d));
        m.slice_mut(s![..d, ..d]).assign(&self.a);
        m.slice_mut(s![..d, d..]).assign(&self.b);
        m.slice_mut(s![d.., ..d]).assign(&self.b.mapv(|z| z.conj()));
        m.slice_mut(s![d.., d..]).assign(&self.a.mapv(|z| z.conj()));
        m
    }

    /// Real matrix acting on `(Re U, Im U)`.
    pub fn reim_matrix(&self) -> Array2<f64> {
        let d = self.dim();
        let mut m = Array2::zeros((2 * d, 2 * d));
        Zip::indexed(&self.a).and(&self.b).for_each(|(r, c), a, b| {
            m[[r, c]] = a.re + b.re;
            m[[r, c + d]] = -a.im + b.im;
            m[[r + d, c]] = a.im + b.im;
            m[[r + d, c + d]] = a.re - b.re;
        });
        m
    }

    pub fn apply_casida(&self, v: &CasidaVector) -> Result<CasidaVector> {
        let x = la::flatten(v.x.view());
        let y = la::flatten(v.y.view());
        if x.len() != self.dim() || y.len() != self.dim() {
            return Err(Error::ShapeMismatch { expected: format!("{} entries", self.dim()), got: format!("{}", x.len()) });
        }
        let xo = self.a.dot(&x) + self.b.dot(&y);
        let yo = self.b.mapv(|z| z.conj()).dot(&x) + self.a.mapv(|z| z.conj()).dot(&y);
        Ok(CasidaVector {
            x: la::unflatten(xo.view(), self.n, self.n_orb)?,
            y: la::unflatten(yo.view(), self.n, self.n_orb)?,
        })
    }

    /// Largest entry of `C - C^*` for the doubled Casida matrix `C`.
    pub fn hermitian_defect(&self) -> f64 {
        let da = &self.a - &self.a.t().mapv(|z| z.conj());
        let db = &self.b - &self.b.t();
        la::max_abs_c(da.iter()).max(la::max_abs_c(db.iter()))
    }
}

/// The assembled operators of the linearized dynamics.
#[derive(Clone, Debug)]
pub struct Operators {
    pub omega: RealLinearOp,
    pub lambda: RealLinearOp,
    pub p0: RealLinearOp,
    pub k0: RealLinearOp,
    pub m_dyn: RealLinearOp,
    pub m: RealLinearOp,
    pub j: RealLinearOp,
}

fn block_diag_same(blk: &Array2<f64>, n_orb: usize) -> Array2<c64> {
    let n = blk.nrows();
    let mut m = Array2::zeros((n * n_orb, n * n_orb));
    for i in 0..n_orb {
        m.slice_mut(s![i * n..(i + 1) * n, i * n..(i + 1) * n]).assign(&blk.mapv(|v| c64::new(v, 0.0)));
    }
    m
}

fn occupied_projector(gs: &GroundState) -> Array2<f64> {
    gs.psi().dot(&gs.psi().t()) * gs.weight()
}

/// `(Lambda U)_i = sum_j u_j Lambda_ji`.
pub fn lambda_op(gs: &GroundState) -> RealLinearOp {
    let n = gs.n_grid();
    let n_orb = gs.n_occ();
    let d = n * n_orb;
    let mut a = Array2::zeros((d, d));
    let lag = gs.lagrange();
    for i in 0..n_orb {
        for j in 0..n_orb {
            let l = c64::new(lag[[j, i]], 0.0);
            for x in 0..n {
                a[[i * n + x, j * n + x]] = l;
            }
        }
    }
    RealLinearOp { a, b: Array2::zeros((d, d)), n, n_orb }
}

pub fn omega_op(gs: &GroundState) -> RealLinearOp {
    let n = gs.n_grid();
    let n_orb = gs.n_occ();
    let h0 = RealLinearOp { a: block_diag_same(gs.h0(), n_orb), b: Array2::zeros((n * n_orb, n * n_orb)), n, n_orb };
    h0.sub(&lambda_op(gs))
}

pub fn p0_op(gs: &GroundState) -> RealLinearOp {
    let n = gs.n_grid();
    let n_orb = gs.n_occ();
    RealLinearOp { a: block_diag_same(&occupied_projector(gs), n_orb), b: Array2::zeros((n * n_orb, n * n_orb)), n, n_orb }
}

pub fn perp_projector(gs: &GroundState) -> RealLinearOp {
    RealLinearOp::identity(gs.n_grid(), gs.n_occ()).sub(&p0_op(gs))
}

pub fn j_op(n: usize, n_orb: usize) -> RealLinearOp {
    let d = n * n_orb;
    RealLinearOp { a: Array2::eye(d) * I, b: Array2::zeros((d, d)), n, n_orb }
}

/// `K0` with the kernel scaled by `delta`.
pub fn k0_op(gs: &GroundState, model: &ModelSystem, delta: f64) -> Result<RealLinearOp> {
    let n = gs.n_grid();
    let n_orb = gs.n_occ();
    let d = n * n_orb;
    let f = model.hxc_kernel(gs.rho().view())? * delta;
    let psi = gs.psi();
    let mut a = Array2::zeros((d, d));
    for i in 0..n_orb {
        for j in 0..n_orb {
            let mut blk = f.clone();
            for x in 0..n {
                for y in 0..n {
                    blk[[x, y]] *= psi[[x, i]] * psi[[y, j]];
                }
            }
            a.slice_mut(s![i * n..(i + 1) * n, j * n..(j + 1) * n]).assign(&blk.mapv(|v| c64::new(v, 0.0)));
        }
    }
    let b = a.clone();
    Ok(RealLinearOp { a, b, n, n_orb })
}

fn occupied_exchange(gs: &GroundState, sign: f64) -> RealLinearOp {
    let n = gs.n_grid();
    let n_orb = gs.n_occ();
    let d = n * n_orb;
    let h = gs.weight();
    let psi = gs.psi();
    let half = c64::new(0.5, 0.0);
    let a = block_diag_same(&occupied_projector(gs), n_orb) * half;
    let mut b = Array2::zeros((d, d));
    for i in 0..n_orb {
        for k in 0..n_orb {
            for x in 0..n {
                for y in 0..n {
                    b[[i * n + x, k * n + y]] = c64::new(sign * 0.5 * h * psi[[x, k]] * psi[[y, i]], 0.0);
                }
            }
        }
    }
    RealLinearOp { a, b, n, n_orb }
}

/// `U -> Psi0 herm(h Psi0^* U)`.
pub fn growth_projector(gs: &GroundState) -> RealLinearOp {
    occupied_exchange(gs, 1.0)
}

/// `U -> Psi0 skew(h Psi0^* U)`.
pub fn gauge_projector(gs: &GroundState) -> RealLinearOp {
    occupied_exchange(gs, -1.0)
}

/// Assembles the dense operators with `K0` at full strength.
pub fn assemble(gs: &GroundState, model: &ModelSystem) -> Result<Operators> {
    assemble_scaled(gs, model, 1.0)
}

pub fn assemble_scaled(gs: &GroundState, model: &ModelSystem, delta: f64) -> Result<Operators> {
    if !(gs.gamma() > 0.0) {
        return Err(Error::NotAMinimum(gs.gamma()));
    }
    let omega = omega_op(gs);
    let lambda = lambda_op(gs);
    let p0 = p0_op(gs);
    let k0 = k0_op(gs, model, delta)?;
    let m_dyn = omega.add(&k0);
    let q = perp_projector(gs);
    let m = q.compose(&m_dyn).compose(&q);
    let j = j_op(gs.n_grid(), gs.n_occ());
    Ok(Operators { omega, lambda, p0, k0, m_dyn, m, j })
}

/// Doubled vector `(X, Y)`; physical vectors satisfy `Y = conj(X)`.
#[derive(Clone, Debug, PartialEq)]
pub struct CasidaVector {
    pub x: Array2<c64>,
    pub y: Array2<c64>,
}

impl CasidaVector {
    pub fn physical_defect(&self) -> f64 {
        la::max_abs_c((&self.y - &self.x.mapv(|z| z.conj())).iter())
    }

    pub fn is_physical(&self, tol: f64) -> bool {
        self.physical_defect() <= tol
    }

    pub fn norm(&self, h: f64) -> f64 {
        (la::weighted_norm(self.x.view(), h).powi(2) + la::weighted_norm(self.y.view(), h).powi(2)).sqrt()
    }

    /// Multiplication by `J = diag(i, -i)`.
    pub fn apply_j(&self) -> CasidaVector {
        CasidaVector { x: &self.x * I, y: &self.y * (-I) }
    }
}

pub fn to_casida(u: ArrayView2<c64>) -> CasidaVector {
    CasidaVector { x: u.mapv(|z| z * FRAC_1_SQRT_2), y: u.mapv(|z| z.conj() * FRAC_1_SQRT_2) }
}

/// Inverse of `to_casida`; with `physical` set, rejects `Y != conj(X)` beyond 1e-10.
pub fn from_casida(v: &CasidaVector, physical: bool) -> Result<Array2<c64>> {
    if physical {
        let defect = v.physical_defect();
        if defect > 1e-10 {
            return Err(Error::InvalidParameter(format!("Casida vector is not physical ({defect:e})")));
        }
    }
    Ok((&v.x + &v.y.mapv(|z| z.conj())).mapv(|z| z * FRAC_1_SQRT_2))
}

/// Complexified `(U_r, U_j)` of a general doubled vector.
pub fn casida_to_reim(v: &CasidaVector) -> (Array2<c64>, Array2<c64>) {
    let ur = (&v.x + &v.y).mapv(|z| z * FRAC_1_SQRT_2);
    let uj = (&v.x - &v.y).mapv(|z| z * (-I) * FRAC_1_SQRT_2);
    (ur, uj)
}

pub fn reim_to_casida(ur: ArrayView2<c64>, uj: ArrayView2<c64>) -> CasidaVector {
    CasidaVector {
        x: (&ur + &uj.mapv(|z| z * I)).mapv(|z| z * FRAC_1_SQRT_2),
        y: (&ur - &uj.mapv(|z| z * I)).mapv(|z| z * FRAC_1_SQRT_2),
    }
}

pub fn to_reim(u: ArrayView2<c64>) -> (Array2<f64>, Array2<f64>) {
    (u.mapv(|z| z.re), u.mapv(|z| z.im))
}

pub fn from_reim(ur: ArrayView2<f64>, uj: ArrayView2<f64>) -> Result<Array2<c64>> {
    if ur.dim() != uj.dim() {
        return Err(Error::ShapeMismatch { expected: format!("{:?}", ur.dim()), got: format!("{:?}", uj.dim()) });
    }
    Ok(Zip::from(&ur).and(&uj).map_collect(|&r, &j| c64::new(r, j)))
}

/// `U = U_S + U_A + U_perp` with `U_S = Psi0 S`, `U_A = Psi0 A`.
#[derive(Clone, Debug)]
pub struct VariationSplit {
    pub growth: Array2<c64>,
    pub gauge: Array2<c64>,
    pub perp: Array2<c64>,
    pub s: Array2<c64>,
    pub a: Array2<c64>,
}

pub fn split_variation(gs: &GroundState, u: ArrayView2<c64>) -> Result<VariationSplit> {
    check_shape(gs, u)?;
    let psi = gs.psi_complex();
    let c = la::gram(psi.view(), u, gs.weight());
    let ch = c.t().mapv(|z| z.conj());
    let s_mat = (&c + &ch).mapv(|z| z * 0.5);
    let a_mat = (&c - &ch).mapv(|z| z * 0.5);
    Ok(VariationSplit {
        growth: psi.dot(&s_mat),
        gauge: psi.dot(&a_mat),
        perp: &u - &psi.dot(&c),
        s: s_mat,
        a: a_mat,
    })
}

/// Orthonormal basis of `Ran(1 - P0)` built from the unoccupied eigenvectors
/// of `H0`, one copy per occupied sector. Pair index `(i, a) -> i * nv + a`.
#[derive(Clone, Debug)]
pub struct ParticleHoleSpace {
    h: f64,
    psi: Array2<f64>,
    virt: Array2<f64>,
    virt_energies: Array1<f64>,
    virt_index: Vec<usize>,
    occ_index: Vec<usize>,
    canonical_occ: Array2<f64>,
    lagrange: Array2<f64>,
    omega: Array2<f64>,
    pair: Array2<f64>,
    kc: Array2<f64>,
}

impl ParticleHoleSpace {
    pub fn new(model: &ModelSystem, gs: &GroundState) -> Result<Self> {
        let h = gs.weight();
        let spec = gs.spectrum();
        let n = gs.n_grid();
        let n_occ = gs.n_occ();
        let occ_index = gs.occupied().to_vec();
        let virt_index: Vec<usize> = (0..n).filter(|k| !occ_index.contains(k)).collect();
        let nv = virt_index.len();
        let virt = spec.vectors.select(Axis(1), &virt_index);
        let virt_energies = spec.values.select(Axis(0), &virt_index);
        let canonical_occ = spec.vectors.select(Axis(1), &occ_index);
        let psi = gs.psi().clone();
        let lagrange = gs.lagrange().clone();
        let m = n_occ * nv;

        let mut omega = Array2::zeros((m, m));
        for i in 0..n_occ {
            for j in 0..n_occ {
                for a in 0..nv {
                    omega[[i * nv + a, j * nv + a]] -= lagrange[[j, i]];
                }
            }
            for a in 0..nv {
                omega[[i * nv + a, i * nv + a]] += virt_energies[a];
            }
        }

        let mut pair = Array2::zeros((m, n));
        for i in 0..n_occ {
            for a in 0..nv {
                let mut row = pair.row_mut(i * nv + a);
                Zip::from(&mut row)
                    .and(&virt.column(a))
                    .and(&psi.column(i))
                    .for_each(|r, &pa, &pi| *r = h * pa * pi);
            }
        }
        let f = model.hxc_kernel(gs.rho().view())?;
        let mut kc = pair.dot(&f).dot(&pair.t()) / h;
        la::symmetrize(&mut kc);

        Ok(Self { h, psi, virt, virt_energies, virt_index, occ_index, canonical_occ, lagrange, omega, pair, kc })
    }

    pub fn weight(&self) -> f64 {
        self.h
    }

    pub fn n_occ(&self) -> usize {
        self.psi.ncols()
    }

    pub fn n_virt(&self) -> usize {
        self.virt.ncols()
    }

    pub fn n_grid(&self) -> usize {
        self.psi.nrows()
    }

    pub fn dim(&self) -> usize {
        self.n_occ() * self.n_virt()
    }

    pub fn pair_index(&self, i: usize, a: usize) -> usize {
        i * self.n_virt() + a
    }

    pub fn psi(&self) -> &Array2<f64> {
        &self.psi
    }

    pub fn virt(&self) -> &Array2<f64> {
        &self.virt
    }

    pub fn virt_energies(&self) -> &Array1<f64> {
        &self.virt_energies
    }

    /// Spectrum indices of the unoccupied levels, in basis order.
    pub fn virt_index(&self) -> &[usize] {
        &self.virt_index
    }

    pub fn occ_index(&self) -> &[usize] {
        &self.occ_index
    }

    /// Canonical occupied eigenvectors of `H0`, whatever the frame of `psi`.
    pub fn canonical_occ(&self) -> &Array2<f64> {
        &self.canonical_occ
    }

    pub fn lagrange(&self) -> &Array2<f64> {
        &self.lagrange
    }

    /// `Omega` restricted to `Ran(1 - P0)`.
    pub fn omega(&self) -> &Array2<f64> {
        &self.omega
    }

    /// `D[(i,a), x] = h phi_a(x) psi_i(x)`.
    pub fn pair(&self) -> &Array2<f64> {
        &self.pair
    }

    /// Coupling matrix `<phi_a psi_i| f_hxc |phi_b psi_j>` at full strength.
    pub fn kc(&self) -> &Array2<f64> {
        &self.kc
    }

    /// Coordinates of `U` in the basis; the orbital imaginary part maps to the imaginary part.
    pub fn to_coeffs(&self, u: ArrayView2<c64>) -> Result<Array1<c64>> {
        if u.dim() != self.psi.dim() {
            return Err(Error::ShapeMismatch { expected: format!("{:?}", self.psi.dim()), got: format!("{:?}", u.dim()) });
        }
        let nv = self.n_virt();
        let vt = self.virt.t().mapv(|v| c64::new(v * self.h, 0.0));
        let mut c = Array1::zeros(self.dim());
        for i in 0..self.n_occ() {
            c.slice_mut(s![i * nv..(i + 1) * nv]).assign(&vt.dot(&u.column(i)));
        }
        Ok(c)
    }

    pub fn from_coeffs(&self, c: ArrayView1<c64>) -> Result<Array2<c64>> {
        if c.len() != self.dim() {
            return Err(Error::ShapeMismatch { expected: format!("{}", self.dim()), got: format!("{}", c.len()) });
        }
        let nv = self.n_virt();
        let vc = la::to_complex(self.virt.view());
        let mut u = Array2::zeros(self.psi.raw_dim());
        for i in 0..self.n_occ() {
            u.column_mut(i).assign(&vc.dot(&c.slice(s![i * nv..(i + 1) * nv])));
        }
        Ok(u)
    }

    pub fn from_real_coeffs(&self, cr: ArrayView1<f64>, cj: ArrayView1<f64>) -> Result<Array2<c64>> {
        let c = Zip::from(&cr).and(&cj).map_collect(|&r, &j| c64::new(r, j));
        self.from_coeffs(c.view())
    }

    /// Norm of `P0 U`.
    pub fn occupied_component(&self, u: ArrayView2<c64>) -> f64 {
        let psi = la::to_complex(self.psi.view());
        let c = la::gram(psi.view(), u, self.h);
        la::weighted_norm(psi.dot(&c).view(), self.h)
    }

    /// Coordinates of `(1 - P0) v Psi0`.
    pub fn potential_coeffs(&self, v: ArrayView1<f64>) -> Array1<f64> {
        self.pair.dot(&v)
    }

    /// `S0` of the variation with real-part coordinates `cr`.
    pub fn density_of(&self, cr: ArrayView1<f64>) -> Array1<f64> {
        self.pair.t().dot(&cr) * (2.0 / self.h)
    }

    pub fn density_of_complex(&self, cr: ArrayView1<c64>) -> Array1<c64> {
        let scale = c64::new(2.0 / self.h, 0.0);
        la::to_complex(self.pair.t()).dot(&cr) * scale
    }

    /// `(P, Q)` blocks of `M` in the real/imaginary representation.
    pub fn reim_blocks(&self, delta: f64) -> (Array2<f64>, Array2<f64>) {
        let p = &self.omega + &(&self.kc * (2.0 * delta));
        (p, self.omega.clone())
    }

    /// Doubled Casida matrix `[[Omega + dKc, dKc], [dKc, Omega + dKc]]`.
    pub fn casida_matrix(&self, delta: f64) -> Array2<c64> {
        let m = self.dim();
        let k = &self.kc * delta;
        let diag = (&self.omega + &k).mapv(|v| c64::new(v, 0.0));
        let off = k.mapv(|v| c64::new(v, 0.0));
        let mut out = Array2::zeros((2 * m, 2 * m));
        out.slice_mut(s![..m, ..m]).assign(&diag);
        out.slice_mut(s![m.., m..]).assign(&diag);
        out.slice_mut(s![..m, m..]).assign(&off);
        out.slice_mut(s![m.., ..m]).assign(&off);
        out
    }
}

/// `M` on `Ran(1 - P0)` in the real/imaginary representation,
/// `M = diag(P, Q)`, together with the square-root factors used by the
/// propagator and the resolvent.
///
/// With `B = Q^{1/2} P^{1/2} = U S V^T`, `exp(-t M^{1/2} J M^{1/2})` is a
/// rotation by `S t` in the modal pairs and `(P - z^2 Q^{-1})^{-1} =
/// Q^{1/2} U (S^2 - z^2)^{-1} U^T Q^{1/2}`.
#[derive(Clone, Debug)]
pub struct PerpSystem {
    delta: f64,
    p: Array2<f64>,
    q: Array2<f64>,
    p_half: Array2<f64>,
    p_half_inv: Array2<f64>,
    q_half: Array2<f64>,
    q_half_inv: Array2<f64>,
    q_inv: Array2<f64>,
    u: Array2<f64>,
    sigma: Array1<f64>,
    vt: Array2<f64>,
    wq: Array2<f64>,
    gamma: f64,
}

impl PerpSystem {
    pub fn new(space: &ParticleHoleSpace, delta: f64) -> Result<Self> {
        let (p, q) = space.reim_blocks(delta);
        let (pv, pvec) = la::eigh_real(&p)?;
        let (qv, qvec) = la::eigh_real(&q)?;
        let gamma = pv[0].min(qv[0]);
        if gamma <= 0.0 {
            return Err(Error::NotAMinimum(gamma));
        }
        let p_half = la::spectral_apply(&pv, &pvec, f64::sqrt);
        let p_half_inv = la::spectral_apply(&pv, &pvec, |v| 1.0 / v.sqrt());
        let q_half = la::spectral_apply(&qv, &qvec, f64::sqrt);
        let q_half_inv = la::spectral_apply(&qv, &qvec, |v| 1.0 / v.sqrt());
        let q_inv = la::spectral_apply(&qv, &qvec, |v| 1.0 / v);
        let b = q_half.dot(&p_half);
        let (u, sigma, vt) = b.svd(true, true)?;
        let u = u.expect("requested");
        let vt = vt.expect("requested");
        let wq = u.t().dot(&q_half);
        Ok(Self { delta, p, q, p_half, p_half_inv, q_half, q_half_inv, q_inv, u, sigma, vt, wq, gamma })
    }

    /// `min(eig P, eig Q)` without building the factors.
    pub fn lowest_eigenvalue(space: &ParticleHoleSpace, delta: f64) -> Result<f64> {
        let (p, q) = space.reim_blocks(delta);
        let pv = p.eigvalsh(UPLO::Lower)?;
        let qv = q.eigvalsh(UPLO::Lower)?;
        Ok(pv[0].min(qv[0]))
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn dim(&self) -> usize {
        self.p.nrows()
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn p(&self) -> &Array2<f64> {
        &self.p
    }

    pub fn q(&self) -> &Array2<f64> {
        &self.q
    }

    /// Excitation energies, the singular values of `Q^{1/2} P^{1/2}`, descending.
    pub fn excitation_energies(&self) -> &Array1<f64> {
        &self.sigma
    }

    pub fn apply(&self, cr: ArrayView1<f64>, cj: ArrayView1<f64>) -> (Array1<f64>, Array1<f64>) {
        (self.p.dot(&cr), self.q.dot(&cj))
    }

    pub fn quadratic_form(&self, cr: ArrayView1<f64>, cj: ArrayView1<f64>) -> f64 {
        cr.dot(&self.p.dot(&cr)) + cj.dot(&self.q.dot(&cj))
    }

    pub fn m_half(&self, cr: ArrayView1<f64>, cj: ArrayView1<f64>) -> (Array1<f64>, Array1<f64>) {
        (self.p_half.dot(&cr), self.q_half.dot(&cj))
    }

    pub fn m_half_inv(&self, yr: ArrayView1<f64>, yj: ArrayView1<f64>) -> (Array1<f64>, Array1<f64>) {
        (self.p_half_inv.dot(&yr), self.q_half_inv.dot(&yj))
    }

    /// `exp(-t M^{1/2} J M^{1/2})`, an orthogonal map.
    pub fn sandwich_exp(&self, t: f64, yr: ArrayView1<f64>, yj: ArrayView1<f64>) -> (Array1<f64>, Array1<f64>) {
        let a = self.vt.dot(&yr);
        let b = self.u.t().dot(&yj);
        let mut a2 = Array1::zeros(a.len());
        let mut b2 = Array1::zeros(b.len());
        for k in 0..a.len() {
            let (sn, cs) = (self.sigma[k] * t).sin_cos();
            a2[k] = a[k] * cs + b[k] * sn;
            b2[k] = b[k] * cs - a[k] * sn;
        }
        (self.vt.t().dot(&a2), self.u.dot(&b2))
    }

    /// `exp(-t J M)` as `M^{-1/2} exp(-t M^{1/2} J M^{1/2}) M^{1/2}`.
    pub fn propagate(&self, t: f64, cr: ArrayView1<f64>, cj: ArrayView1<f64>) -> (Array1<f64>, Array1<f64>) {
        let (yr, yj) = self.m_half(cr, cj);
        let (yr, yj) = self.sandwich_exp(t, yr.view(), yj.view());
        self.m_half_inv(yr.view(), yj.view())
    }

    /// `(U, S, V^T)` with `Q^{1/2} P^{1/2} = U S V^T`.
    pub fn modal_factors(&self) -> (&Array2<f64>, &Array1<f64>, &Array2<f64>) {
        (&self.u, &self.sigma, &self.vt)
    }

    /// `(P^{1/2}, P^{-1/2}, Q^{1/2}, Q^{-1/2})`.
    pub fn half_factors(&self) -> (&Array2<f64>, &Array2<f64>, &Array2<f64>, &Array2<f64>) {
        (&self.p_half, &self.p_half_inv, &self.q_half, &self.q_half_inv)
    }

    /// Solves `(M + i z J) x = b` on the complexified space, spectrally.
    pub fn resolve(&self, z: c64, br: ArrayView1<c64>, bj: ArrayView1<c64>) -> Result<(Array1<c64>, Array1<c64>)> {
        let z2 = z * z;
        let gap = self.sigma.iter().map(|s| (s * s - z2).norm()).fold(f64::INFINITY, f64::min);
        if gap < 1e-12 {
            return Err(Error::SingularSystem(format!("z = {z} is on the spectrum")));
        }
        let qinv = la::to_complex(self.q_inv.view());
        let rhs = &br + &(qinv.dot(&bj) * (I * z));
        let wq = la::to_complex(self.wq.view());
        let mut modal = wq.dot(&rhs);
        for (mk, s) in modal.iter_mut().zip(self.sigma.iter()) {
            *mk /= s * s - z2;
        }
        let xr = wq.t().dot(&modal);
        let xj = qinv.dot(&(&bj - &(&xr * (I * z))));
        Ok((xr, xj))
    }

    /// Same solve by LU factorization of the doubled matrix.
    pub fn resolve_dense(&self, z: c64, br: ArrayView1<c64>, bj: ArrayView1<c64>) -> Result<(Array1<c64>, Array1<c64>)> {
        let m = self.dim();
        let mut a = Array2::<c64>::zeros((2 * m, 2 * m));
        a.slice_mut(s![..m, ..m]).assign(&la::to_complex(self.p.view()));
        a.slice_mut(s![m.., m..]).assign(&la::to_complex(self.q.view()));
        for k in 0..m {
            a[[k, m + k]] = -I * z;
            a[[m + k, k]] = I * z;
        }
        let mut b = Array1::zeros(2 * m);
        b.slice_mut(s![..m]).assign(&br);
        b.slice_mut(s![m..]).assign(&bj);
        let x = a.solve_into(b).map_err(|e| Error::SingularSystem(e.to_string()))?;
        Ok((x.slice(s![..m]).to_owned(), x.slice(s![m..]).to_owned()))
    }
}
