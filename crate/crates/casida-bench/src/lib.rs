//! Fixtures shared by the benchmarks under `benches/`.

use casida_core::groundstate::{minimize, GroundState, ScfOptions};
use casida_core::model::{GridSpec, ModelSystem, SoftCoulombParams, XcPolynomial};

/// Two electrons in a soft-Coulomb well with `n` points on `[-L, L]`.
pub fn model(n: usize, l: f64) -> ModelSystem {
    ModelSystem::new(
        GridSpec::new(n, l).expect("grid"),
        SoftCoulombParams::new(1.0, 2.0, 1.0).expect("soft Coulomb"),
        XcPolynomial::new(-1.0, 0.0, 0.0).expect("xc"),
        2,
    )
    .expect("model")
}

pub fn ground_state(m: &ModelSystem) -> GroundState {
    minimize(m, &ScfOptions { tol: 1e-10, ..Default::default() }).expect("scf")
}
