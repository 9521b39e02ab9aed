//! Lorentzian-plus-linear-background fits by Levenberg-Marquardt.

use ndarray::{Array1, Array2};
use ndarray_linalg::Solve;

use crate::error::{Error, Result};

/// `A g^2 / ((x - x0)^2 + g^2) + c0 + c1 (x - xm)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LorentzianFit {
    pub amplitude: f64,
    pub center: f64,
    pub half_width: f64,
    pub background: (f64, f64),
    pub x_mid: f64,
    pub rms: f64,
    pub iterations: usize,
}

impl LorentzianFit {
    pub fn fwhm(&self) -> f64 {
        2.0 * self.half_width
    }

    pub fn eval(&self, x: f64) -> f64 {
        model(&self.params(), self.x_mid, x)
    }

    fn params(&self) -> [f64; 5] {
        [self.amplitude, self.center, self.half_width, self.background.0, self.background.1]
    }
}

fn model(p: &[f64; 5], xm: f64, x: f64) -> f64 {
    let g2 = p[2] * p[2];
    p[0] * g2 / ((x - p[1]).powi(2) + g2) + p[3] + p[4] * (x - xm)
}

fn gradient(p: &[f64; 5], xm: f64, x: f64) -> [f64; 5] {
    let g = p[2];
    let dx = x - p[1];
    let den = dx * dx + g * g;
    let l = g * g / den;
    [
        l,
        p[0] * 2.0 * g * g * dx / (den * den),
        p[0] * 2.0 * g * dx * dx / (den * den),
        1.0,
        x - xm,
    ]
}

fn sum_sq(p: &[f64; 5], xm: f64, x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(&xi, &yi)| (yi - model(p, xm, xi)).powi(2)).sum()
}

pub fn fit_lorentzian(x: &[f64], y: &[f64]) -> Result<LorentzianFit> {
    if x.len() != y.len() || x.len() < 6 {
        return Err(Error::InvalidParameter("Lorentzian fit needs at least 6 matching points".into()));
    }
    let (kmax, &ymax) = y.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).expect("non-empty");
    let ymin = y.iter().cloned().fold(f64::INFINITY, f64::min);
    let half = ymin + 0.5 * (ymax - ymin);
    let mut lo = kmax;
    while lo > 0 && y[lo] > half {
        lo -= 1;
    }
    let mut hi = kmax;
    while hi + 1 < y.len() && y[hi] > half {
        hi += 1;
    }
    let xm = 0.5 * (x[0] + x[x.len() - 1]);
    let g0 = (0.5 * (x[hi] - x[lo])).max(x[1] - x[0]);
    let mut p = [ymax - ymin, x[kmax], g0, ymin, 0.0];
    let mut cost = sum_sq(&p, xm, x, y);
    let mut lambda = 1e-3;
    let mut iterations = 0;
    for it in 0..500 {
        iterations = it + 1;
        let mut jtj = Array2::<f64>::zeros((5, 5));
        let mut jtr = Array1::<f64>::zeros(5);
        for (&xi, &yi) in x.iter().zip(y) {
            let gr = gradient(&p, xm, xi);
            let r = yi - model(&p, xm, xi);
            for a in 0..5 {
                jtr[a] += gr[a] * r;
                for b in 0..5 {
                    jtj[[a, b]] += gr[a] * gr[b];
                }
            }
        }
        let mut improved = false;
        while lambda < 1e12 {
            let mut lhs = jtj.clone();
            for a in 0..5 {
                lhs[[a, a]] += lambda * jtj[[a, a]].max(1e-300);
            }
            let step = match lhs.solve(&jtr) {
                Ok(s) => s,
                Err(_) => {
                    lambda *= 10.0;
                    continue;
                }
            };
            let mut trial = p;
            for a in 0..5 {
                trial[a] += step[a];
            }
            trial[2] = trial[2].abs();
            let c = sum_sq(&trial, xm, x, y);
            if c < cost {
                let rel = (cost - c) / cost.max(1e-300);
                p = trial;
                cost = c;
                lambda = (lambda / 10.0).max(1e-12);
                improved = rel > 1e-14;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    if p.iter().any(|v| !v.is_finite()) {
        return Err(Error::NoConvergence("Lorentzian fit diverged".into()));
    }
    Ok(LorentzianFit {
        amplitude: p[0],
        center: p[1],
        half_width: p[2],
        background: (p[3], p[4]),
        x_mid: xm,
        rms: (cost / x.len() as f64).sqrt(),
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_synthetic_line() {
        let truth = LorentzianFit {
            amplitude: 2.5,
            center: 0.31,
            half_width: 0.012,
            background: (0.1, -0.4),
            x_mid: 0.3,
            rms: 0.0,
            iterations: 0,
        };
        let x: Vec<f64> = (0..201).map(|k| 0.2 + 0.2 * k as f64 / 200.0).collect();
        let y: Vec<f64> = x.iter().map(|&v| truth.eval(v)).collect();
        let fit = fit_lorentzian(&x, &y).unwrap();
        assert!((fit.center - 0.31).abs() < 1e-9);
        assert!((fit.fwhm() - 0.024).abs() < 1e-9);
        assert!((fit.amplitude - 2.5).abs() < 1e-7);
    }
}
