#![allow(dead_code)]

use std::sync::OnceLock;

use casida_core::groundstate::{minimize, GroundState, ScfOptions};
use casida_core::model::{GridSpec, ModelSystem, SoftCoulombParams, XcPolynomial};
use ndarray::Array2;
use ndarray_linalg::QR;
use num_complex::Complex64 as c64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn model(n: usize, l: f64, z: f64, n_elec: usize, c2: f64) -> ModelSystem {
    ModelSystem::new(
        GridSpec::new(n, l).unwrap(),
        SoftCoulombParams::new(1.0, z, 1.0).unwrap(),
        XcPolynomial::new(c2, 0.0, 0.0).unwrap(),
        n_elec,
    )
    .unwrap()
}

pub fn default_model() -> ModelSystem {
    model(300, 20.0, 2.0, 2, -1.0)
}

pub fn default_system() -> &'static (ModelSystem, GroundState) {
    static CELL: OnceLock<(ModelSystem, GroundState)> = OnceLock::new();
    CELL.get_or_init(|| {
        let m = default_model();
        let gs = minimize(&m, &ScfOptions { tol: 1e-11, ..Default::default() }).unwrap();
        (m, gs)
    })
}

/// Small system for tests that need many dense operations.
pub fn small_system() -> &'static (ModelSystem, GroundState) {
    static CELL: OnceLock<(ModelSystem, GroundState)> = OnceLock::new();
    CELL.get_or_init(|| {
        let m = model(80, 8.0, 2.0, 2, -1.0);
        let gs = minimize(&m, &ScfOptions { tol: 1e-11, ..Default::default() }).unwrap();
        (m, gs)
    })
}

pub fn resonance_model() -> ModelSystem {
    ModelSystem::new(
        GridSpec::new(321, 80.0).unwrap(),
        SoftCoulombParams::new(1.0, 6.0, 1.0).unwrap(),
        XcPolynomial::new(1.0, 0.0, 0.0).unwrap(),
        2,
    )
    .unwrap()
}

pub fn resonance_system() -> &'static (ModelSystem, GroundState) {
    static CELL: OnceLock<(ModelSystem, GroundState)> = OnceLock::new();
    CELL.get_or_init(|| {
        let m = resonance_model();
        let gs = minimize(&m, &ScfOptions { tol: 1e-10, ..Default::default() }).unwrap();
        (m, gs)
    })
}

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| StandardNormal.sample(rng))
}

pub fn random_variation(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<c64> {
    let re = gaussian_matrix(rng, rows, cols);
    let im = gaussian_matrix(rng, rows, cols);
    Array2::from_shape_fn((rows, cols), |(i, j)| c64::new(re[[i, j]], im[[i, j]]))
}

pub fn random_orthogonal(rng: &mut ChaCha8Rng, n: usize) -> Array2<f64> {
    let (q, _) = gaussian_matrix(rng, n, n).qr().unwrap();
    q
}

/// Component of `u` orthogonal to the occupied orbitals.
pub fn project_out(psi: &Array2<f64>, h: f64, u: &Array2<c64>) -> Array2<c64> {
    let pc = psi.mapv(|v| c64::new(v, 0.0));
    let c = pc.t().dot(u) * h;
    u - &pc.dot(&c)
}

pub fn wnorm(u: &Array2<c64>, h: f64) -> f64 {
    (h * u.iter().map(|z| z.norm_sqr()).sum::<f64>()).sqrt()
}

pub fn max_abs(it: impl IntoIterator<Item = f64>) -> f64 {
    it.into_iter().fold(0.0, |m, v| m.max(v.abs()))
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

pub fn max_abs_c(a: &Array2<c64>) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.norm()))
}
