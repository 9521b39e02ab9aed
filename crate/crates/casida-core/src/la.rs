//! Small dense helpers shared by the solver modules.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, ShapeBuilder};
use ndarray_linalg::{Eigh, UPLO};
use num_complex::Complex64 as c64;

use crate::error::{Error, Result};

pub fn eigh_real(a: &Array2<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
    Ok(a.eigh(UPLO::Lower)?)
}

/// Hermitian eigendecomposition. The input is copied to column-major order
/// first: ndarray-linalg returns conjugated eigenvectors for row-major
/// complex input.
pub fn eigh_complex(a: &Array2<c64>) -> Result<(Array1<f64>, Array2<c64>)> {
    let mut f = Array2::zeros(a.raw_dim().f());
    f.assign(a);
    Ok(f.eigh(UPLO::Lower)?)
}

/// `V f(D) V^T` for a symmetric eigendecomposition.
pub fn spectral_apply(vals: &Array1<f64>, vecs: &Array2<f64>, f: impl Fn(f64) -> f64) -> Array2<f64> {
    let mut scaled = vecs.clone();
    for (mut col, &v) in scaled.axis_iter_mut(Axis(1)).zip(vals.iter()) {
        col *= f(v);
    }
    scaled.dot(&vecs.t())
}

pub fn symmetrize(a: &mut Array2<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in 0..i {
            let m = 0.5 * (a[[i, j]] + a[[j, i]]);
            a[[i, j]] = m;
            a[[j, i]] = m;
        }
    }
}

/// Sign convention: the first entry above `1e-6 * max|v|` is positive.
pub fn fix_sign(v: &mut ndarray::ArrayViewMut1<f64>) {
    let max = v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    if max == 0.0 {
        return;
    }
    if let Some(first) = v.iter().find(|x| x.abs() > 1e-6 * max) {
        if *first < 0.0 {
            v.mapv_inplace(|x| -x);
        }
    }
}

pub fn max_abs<'a>(it: impl IntoIterator<Item = &'a f64>) -> f64 {
    it.into_iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

pub fn max_abs_c<'a>(it: impl IntoIterator<Item = &'a c64>) -> f64 {
    it.into_iter().fold(0.0_f64, |m, x| m.max(x.norm()))
}

/// Column-stacked flattening of an `n x N` orbital matrix: index `i * n + x`.
pub fn flatten(u: ArrayView2<c64>) -> Array1<c64> {
    u.t().iter().copied().collect()
}

pub fn unflatten(v: ArrayView1<c64>, n: usize, n_orb: usize) -> Result<Array2<c64>> {
    if v.len() != n * n_orb {
        return Err(Error::ShapeMismatch {
            expected: format!("vector of length {}", n * n_orb),
            got: format!("length {}", v.len()),
        });
    }
    Ok(Array2::from_shape_vec((n, n_orb).f(), v.to_vec()).expect("length checked"))
}

pub fn to_complex(a: ArrayView2<f64>) -> Array2<c64> {
    a.mapv(|x| c64::new(x, 0.0))
}

/// Weighted Gram matrix `h A^* B`.
pub fn gram(a: ArrayView2<c64>, b: ArrayView2<c64>, h: f64) -> Array2<c64> {
    a.t().mapv(|z| z.conj()).dot(&b) * c64::new(h, 0.0)
}

/// Real part of the weighted inner product over all entries.
pub fn re_inner(a: ArrayView2<c64>, b: ArrayView2<c64>, h: f64) -> f64 {
    h * a.iter().zip(b.iter()).map(|(x, y)| (x.conj() * y).re).sum::<f64>()
}

pub fn weighted_norm(a: ArrayView2<c64>, h: f64) -> f64 {
    (h * a.iter().map(|z| z.norm_sqr()).sum::<f64>()).sqrt()
}

/// Gauss-Legendre nodes and weights on `[-1, 1]` (Golub-Welsch).
pub fn gauss_legendre(k: usize) -> Result<(Array1<f64>, Array1<f64>)> {
    let mut jac = Array2::zeros((k, k));
    for i in 1..k {
        let b = i as f64 / ((4 * i * i - 1) as f64).sqrt();
        jac[[i, i - 1]] = b;
        jac[[i - 1, i]] = b;
    }
    let (x, v) = eigh_real(&jac)?;
    let w = v.row(0).mapv(|c| 2.0 * c * c);
    Ok((x, w))
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(a, b)| **a > 0.0 && **b > 0.0)
        .map(|(a, b)| (a.ln(), b.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    Some(sxy / sxx)
}
