//! Discretized one-dimensional model: grid, kinetic stencil, soft-Coulomb
//! potentials and a polynomial exchange-correlation energy.

use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{Error, Result};

/// Uniform grid on `[-L, L]` with Dirichlet boundaries.
#[derive(Clone, Debug, PartialEq)]
pub struct GridSpec {
    n: usize,
    l: f64,
    h: f64,
    x: Array1<f64>,
}

impl GridSpec {
    pub const MIN_POINTS: usize = 16;

    pub fn new(n: usize, l: f64) -> Result<Self> {
        if n < Self::MIN_POINTS {
            return Err(Error::InvalidGrid(format!(
                "n = {n} is below the minimum of {}",
                Self::MIN_POINTS
            )));
        }
        if !(l.is_finite() && l > 0.0) {
            return Err(Error::InvalidGrid(format!("half-width L = {l} must be positive")));
        }
        let h = 2.0 * l / (n - 1) as f64;
        let mid = (n - 1) as f64 / 2.0;
        // Offsets from the centre keep the abscissae exactly symmetric.
        let x = Array1::from_shape_fn(n, |k| (k as f64 - mid) * h);
        Ok(Self { n, l, h, x })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn half_width(&self) -> f64 {
        self.l
    }

    pub fn spacing(&self) -> f64 {
        self.h
    }

    /// Quadrature weight; uniform on the grid.
    pub fn weight(&self) -> f64 {
        self.h
    }

    pub fn x(&self) -> &Array1<f64> {
        &self.x
    }

    /// Diagonal and off-diagonal value of `-1/2 d^2/dx^2`.
    pub fn kinetic_coefficients(&self) -> (f64, f64) {
        kinetic_coefficients(self.h)
    }

    pub fn kinetic_matrix(&self) -> Array2<f64> {
        kinetic_stencil(self.n, self.h)
    }
}

fn kinetic_coefficients(h: f64) -> (f64, f64) {
    let inv = 1.0 / (h * h);
    (inv, -0.5 * inv)
}

/// Dense `-1/2` times the three-point Laplacian with Dirichlet ends.
///
/// No lower bound on `n`, so small stencils can be inspected directly.
pub fn kinetic_stencil(n: usize, h: f64) -> Array2<f64> {
    let (d, o) = kinetic_coefficients(h);
    let mut t = Array2::zeros((n, n));
    for k in 0..n {
        t[[k, k]] = d;
        if k + 1 < n {
            t[[k, k + 1]] = o;
            t[[k + 1, k]] = o;
        }
    }
    t
}

/// Softening lengths and external charge.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SoftCoulombParams {
    pub a: f64,
    pub z: f64,
    pub a_ext: f64,
}

impl SoftCoulombParams {
    pub fn new(a: f64, z: f64, a_ext: f64) -> Result<Self> {
        if !(a.is_finite() && a > 0.0) {
            return Err(Error::InvalidParameter(format!("softening a = {a} must be positive")));
        }
        if !(a_ext.is_finite() && a_ext > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "external softening a_ext = {a_ext} must be positive"
            )));
        }
        if !(z.is_finite() && z >= 0.0) {
            return Err(Error::InvalidParameter(format!("charge Z = {z} must be non-negative")));
        }
        Ok(Self { a, z, a_ext })
    }

    pub fn kernel(&self, x: f64) -> f64 {
        1.0 / (x * x + self.a * self.a).sqrt()
    }

    pub fn external(&self, x: f64) -> f64 {
        -self.z / (x * x + self.a_ext * self.a_ext).sqrt()
    }
}

/// `e_xc(rho) = c2 rho^2 + c3 rho^3 + c4 rho^4`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct XcPolynomial {
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
}

/// Pointwise energy density and its first two derivatives.
#[derive(Clone, Debug, PartialEq)]
pub struct XcValues {
    pub e: Array1<f64>,
    pub v: Array1<f64>,
    pub dv: Array1<f64>,
}

impl XcPolynomial {
    pub fn new(c2: f64, c3: f64, c4: f64) -> Result<Self> {
        if ![c2, c3, c4].iter().all(|c| c.is_finite()) {
            return Err(Error::InvalidParameter("xc coefficients must be finite".into()));
        }
        Ok(Self { c2, c3, c4 })
    }

    pub fn energy_density(&self, r: f64) -> f64 {
        r * r * (self.c2 + r * (self.c3 + r * self.c4))
    }

    pub fn potential(&self, r: f64) -> f64 {
        r * (2.0 * self.c2 + r * (3.0 * self.c3 + r * 4.0 * self.c4))
    }

    pub fn kernel(&self, r: f64) -> f64 {
        2.0 * self.c2 + r * (6.0 * self.c3 + r * 12.0 * self.c4)
    }

    pub fn derivatives(&self, rho: ArrayView1<f64>) -> Result<XcValues> {
        check_density(rho)?;
        Ok(XcValues {
            e: rho.mapv(|r| self.energy_density(r)),
            v: rho.mapv(|r| self.potential(r)),
            dv: rho.mapv(|r| self.kernel(r)),
        })
    }
}

pub(crate) fn check_density(rho: ArrayView1<f64>) -> Result<()> {
    for (index, &value) in rho.iter().enumerate() {
        if !(value >= 0.0) {
            return Err(Error::NegativeDensity { index, value });
        }
    }
    Ok(())
}

/// Grid, potentials and functional for `N` spinless electrons.
#[derive(Clone, Debug)]
pub struct ModelSystem {
    grid: GridSpec,
    sc: SoftCoulombParams,
    xc: XcPolynomial,
    n_elec: usize,
    hartree_scale: f64,
    v_ext: Array1<f64>,
    w: Array2<f64>,
}

impl ModelSystem {
    pub fn new(grid: GridSpec, sc: SoftCoulombParams, xc: XcPolynomial, n_elec: usize) -> Result<Self> {
        let n = grid.n();
        if n_elec == 0 || n_elec >= n {
            return Err(Error::InvalidParameter(format!(
                "electron count N = {n_elec} must satisfy 1 <= N < n = {n}"
            )));
        }
        let x = grid.x();
        let v_ext = x.mapv(|xi| sc.external(xi));
        let w = Array2::from_shape_fn((n, n), |(i, j)| sc.kernel(x[i] - x[j]));
        Ok(Self { grid, sc, xc, n_elec, hartree_scale: 1.0, v_ext, w })
    }

    /// Multiplies the Hartree kernel; `0.0` removes the interaction.
    pub fn with_hartree_scale(mut self, scale: f64) -> Result<Self> {
        if !(scale.is_finite() && scale >= 0.0) {
            return Err(Error::InvalidParameter(format!("Hartree scale {scale} must be >= 0")));
        }
        self.hartree_scale = scale;
        Ok(self)
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn soft_coulomb(&self) -> &SoftCoulombParams {
        &self.sc
    }

    pub fn xc(&self) -> &XcPolynomial {
        &self.xc
    }

    pub fn n_electrons(&self) -> usize {
        self.n_elec
    }

    pub fn hartree_scale(&self) -> f64 {
        self.hartree_scale
    }

    pub fn v_ext(&self) -> &Array1<f64> {
        &self.v_ext
    }

    /// Unscaled kernel matrix `w(x_i - x_j)`.
    pub fn kernel_matrix(&self) -> &Array2<f64> {
        &self.w
    }

    fn check_len(&self, rho: ArrayView1<f64>) -> Result<()> {
        if rho.len() != self.grid.n() {
            return Err(Error::ShapeMismatch {
                expected: format!("density of length {}", self.grid.n()),
                got: format!("length {}", rho.len()),
            });
        }
        Ok(())
    }

    pub fn hartree_potential(&self, rho: ArrayView1<f64>) -> Result<Array1<f64>> {
        self.check_len(rho)?;
        check_density(rho)?;
        Ok(self.hartree_unchecked(rho))
    }

    pub(crate) fn hartree_unchecked(&self, rho: ArrayView1<f64>) -> Array1<f64> {
        if self.hartree_scale == 0.0 {
            return Array1::zeros(rho.len());
        }
        self.w.dot(&rho) * (self.grid.weight() * self.hartree_scale)
    }

    /// `V_ext + V_H(rho) + v_xc(rho)`, the diagonal part of `H[rho]`.
    pub fn effective_potential(&self, rho: ArrayView1<f64>) -> Result<Array1<f64>> {
        self.check_len(rho)?;
        check_density(rho)?;
        let mut v = self.hartree_unchecked(rho);
        for ((vk, &ve), &r) in v.iter_mut().zip(self.v_ext.iter()).zip(rho.iter()) {
            *vk += ve + self.xc.potential(r);
        }
        Ok(v)
    }

    pub fn hamiltonian(&self, rho: ArrayView1<f64>) -> Result<Array2<f64>> {
        let v = self.effective_potential(rho)?;
        let mut hm = self.grid.kinetic_matrix();
        for (k, vk) in v.iter().enumerate() {
            hm[[k, k]] += vk;
        }
        Ok(hm)
    }

    /// Density-to-potential kernel `dv_hxc/drho` as a grid matrix:
    /// `h w(x_i - x_j) + diag(v_xc'(rho))`.
    pub fn hxc_kernel(&self, rho: ArrayView1<f64>) -> Result<Array2<f64>> {
        self.check_len(rho)?;
        check_density(rho)?;
        let mut f = &self.w * (self.grid.weight() * self.hartree_scale);
        for (k, &r) in rho.iter().enumerate() {
            f[[k, k]] += self.xc.kernel(r);
        }
        Ok(f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn grid_rejects_too_few_points() {
        assert!(matches!(GridSpec::new(15, 1.0), Err(Error::InvalidGrid(_))));
        assert!(GridSpec::new(16, 1.0).is_ok());
        assert!(GridSpec::new(32, 0.0).is_err());
    }

    #[test]
    fn odd_grid_is_symmetric() {
        let g = GridSpec::new(101, 7.3).unwrap();
        let x = g.x();
        for k in 0..101 {
            assert_eq!(x[k], -x[100 - k]);
        }
        assert_eq!(x[50], 0.0);
        assert!((x[100] - 7.3).abs() < 1e-14);
    }

    #[test]
    fn three_point_stencil() {
        let t = kinetic_stencil(3, 1.0);
        assert_eq!(t, array![[1.0, -0.5, 0.0], [-0.5, 1.0, -0.5], [0.0, -0.5, 1.0]]);
    }

    #[test]
    fn xc_at_zero_density() {
        let xc = XcPolynomial::new(-0.7, 0.3, 0.1).unwrap();
        let vals = xc.derivatives(Array1::zeros(4).view()).unwrap();
        assert!(vals.e.iter().all(|&e| e == 0.0));
        assert!(vals.v.iter().all(|&v| v == 0.0));
        assert!(vals.dv.iter().all(|&d| d == -1.4));
    }

    #[test]
    fn xc_rejects_negative_density() {
        let xc = XcPolynomial::default();
        let err = xc.derivatives(array![0.1, -1e-3].view()).unwrap_err();
        assert_eq!(err, Error::NegativeDensity { index: 1, value: -1e-3 });
    }

    #[test]
    fn soft_coulomb_validation() {
        assert!(SoftCoulombParams::new(0.0, 1.0, 1.0).is_err());
        assert!(SoftCoulombParams::new(1.0, -1.0, 1.0).is_err());
        assert!(SoftCoulombParams::new(1.0, 1.0, 0.0).is_err());
    }
}
