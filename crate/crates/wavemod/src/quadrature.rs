//! Composite Gauss-Legendre quadrature with panel doubling.

use crate::error::{Error, Result};
use num_complex::Complex64;
use std::f64::consts::PI;

/// Nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            if n == 1 {
                p0 = 1.0;
                p1 = z;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
    }
    (x, w)
}

/// Vector-valued integral over [a, b] with `panels` equal panels of `order` points.
pub fn integrate_vec<F: Fn(f64) -> Vec<Complex64>>(f: &F, a: f64, b: f64, panels: usize, rule: &(Vec<f64>, Vec<f64>)) -> Vec<Complex64> {
    let h = (b - a) / panels as f64;
    let mut acc: Vec<Complex64> = vec![];
    for p in 0..panels {
        let c = a + (p as f64 + 0.5) * h;
        for (x, w) in rule.0.iter().zip(&rule.1) {
            let v = f(c + 0.5 * h * x);
            if acc.is_empty() {
                acc = vec![Complex64::new(0.0, 0.0); v.len()];
            }
            for (s, vi) in acc.iter_mut().zip(v) {
                *s += vi * (0.5 * h * w);
            }
        }
    }
    acc
}

/// Doubles the panel count until successive results agree to `tol` (sup norm, relative to
/// `1 + ‖I‖`). Returns the value and the panel count used.
pub fn integrate_adaptive<F: Fn(f64) -> Vec<Complex64>>(
    f: &F,
    a: f64,
    b: f64,
    order: usize,
    tol: f64,
    max_panels: usize,
) -> Result<(Vec<Complex64>, usize)> {
    let rule = gauss_legendre(order);
    let mut panels = 1;
    let mut prev = integrate_vec(f, a, b, panels, &rule);
    let mut last = f64::INFINITY;
    while panels < max_panels {
        panels *= 2;
        let cur = integrate_vec(f, a, b, panels, &rule);
        let diff = cur.iter().zip(&prev).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
        let scale = 1.0 + cur.iter().map(|x| x.norm()).fold(0.0, f64::max);
        last = diff / scale;
        if last < tol {
            return Ok((cur, panels));
        }
        prev = cur;
    }
    Err(Error::QuadratureNonConvergence(last))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_for_polynomials() {
        let (x, w) = gauss_legendre(5);
        for p in 0..10 {
            let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(p)).sum();
            let exact = if p % 2 == 1 { 0.0 } else { 2.0 / (p as f64 + 1.0) };
            assert!((s - exact).abs() < 1e-14, "p={p}");
        }
    }

    #[test]
    fn oscillatory_integral_converges() {
        let f = |x: f64| vec![Complex64::from_polar(1.0, 20.0 * x)];
        let (v, _) = integrate_adaptive(&f, 0.0, 1.0, 8, 1e-13, 1024).unwrap();
        let exact = (Complex64::from_polar(1.0, 20.0) - 1.0) / Complex64::new(0.0, 20.0);
        assert!((v[0] - exact).norm() < 1e-12);
    }

    #[test]
    fn reports_nonconvergence() {
        let f = |x: f64| vec![Complex64::new(x.abs().sqrt().recip().min(1e12), 0.0)];
        assert!(integrate_adaptive(&f, -1.0, 1.0, 2, 1e-14, 4).is_err());
    }
}
