//! Trigonometric differentiation and periodic grid helpers.

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::f64::consts::PI;
use std::sync::Arc;

#[derive(Clone)]
pub struct Fourier {
    n: usize,
    period: f64,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    wn: Vec<f64>,
}

impl std::fmt::Debug for Fourier {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fourier").field("n", &self.n).field("period", &self.period).finish()
    }
}

impl Fourier {
    pub fn new(n: usize, period: f64) -> Self {
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        let wn = (0..n)
            .map(|j| {
                let m = if j <= n / 2 { j as f64 } else { j as f64 - n as f64 };
                2.0 * PI * m / period
            })
            .collect();
        Self { n, period, fwd, inv, wn }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    /// Angular wavenumbers in FFT order. The Nyquist entry carries +n/2.
    pub fn wavenumbers(&self) -> &[f64] {
        &self.wn
    }

    pub fn is_nyquist(&self, j: usize) -> bool {
        self.n % 2 == 0 && j == self.n / 2
    }

    pub fn forward(&self, x: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.fwd.process(&mut buf);
        buf
    }

    pub fn forward_complex(&self, x: &[Complex64]) -> Vec<Complex64> {
        let mut buf = x.to_vec();
        self.fwd.process(&mut buf);
        buf
    }

    pub fn forward_in_place(&self, buf: &mut [Complex64]) {
        self.fwd.process(buf);
    }

    /// Inverse transform including the 1/n normalisation.
    pub fn inverse_in_place(&self, buf: &mut [Complex64]) {
        self.inv.process(buf);
        let s = 1.0 / self.n as f64;
        for v in buf.iter_mut() {
            *v *= s;
        }
    }

    pub fn inverse_real(&self, mut c: Vec<Complex64>) -> Vec<f64> {
        self.inverse_in_place(&mut c);
        c.into_iter().map(|z| z.re).collect()
    }

    pub fn inverse_complex(&self, mut c: Vec<Complex64>) -> Vec<Complex64> {
        self.inverse_in_place(&mut c);
        c
    }

    /// Symbol of the m-th derivative; odd orders drop the Nyquist mode.
    pub fn symbol(&self, m: u32) -> Vec<Complex64> {
        (0..self.n)
            .map(|j| {
                if m % 2 == 1 && self.is_nyquist(j) {
                    Complex64::new(0.0, 0.0)
                } else {
                    Complex64::new(0.0, self.wn[j]).powu(m)
                }
            })
            .collect()
    }

    pub fn deriv(&self, x: &[f64], m: u32) -> Vec<f64> {
        if m == 0 {
            return x.to_vec();
        }
        let mut c = self.forward(x);
        for (cj, s) in c.iter_mut().zip(self.symbol(m)) {
            *cj *= s;
        }
        self.inverse_real(c)
    }

    pub fn deriv_complex(&self, x: &[Complex64], m: u32) -> Vec<Complex64> {
        if m == 0 {
            return x.to_vec();
        }
        let mut c = self.forward_complex(x);
        for (cj, s) in c.iter_mut().zip(self.symbol(m)) {
            *cj *= s;
        }
        self.inverse_complex(c)
    }

    /// Dense circulant matrix of the m-th derivative, row-major.
    pub fn deriv_matrix(&self, m: u32) -> Vec<f64> {
        let n = self.n;
        let mut e0 = vec![0.0; n];
        e0[0] = 1.0;
        let col = self.deriv(&e0, m);
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] = col[(i + n - j) % n];
            }
        }
        out
    }

    /// Band-limited interpolation of periodic samples at arbitrary points.
    pub fn interpolate(&self, x: &[f64], points: &[f64]) -> Vec<f64> {
        let c = self.forward(x);
        let n = self.n as f64;
        points
            .iter()
            .map(|&p| {
                let mut s = 0.0;
                for (j, cj) in c.iter().enumerate() {
                    let w = if self.is_nyquist(j) { 0.5 } else { 1.0 };
                    let ph = Complex64::from_polar(1.0, self.wn[j] * p);
                    s += w * (cj * ph).re;
                    if self.is_nyquist(j) {
                        s += w * (cj * ph.conj()).re;
                    }
                }
                s / n
            })
            .collect()
    }
}

/// Equispaced grid on [0, period).
pub fn grid(n: usize, period: f64) -> Vec<f64> {
    (0..n).map(|i| period * i as f64 / n as f64).collect()
}

/// L²(0,1) inner products of stacked component blocks sampled on `n_grid` points;
/// the first slot is conjugated.
pub fn inner_real(u: &[f64], v: &[f64], n_grid: usize) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>() / n_grid as f64
}

pub fn inner_cr(u: &[Complex64], v: &[f64], n_grid: usize) -> Complex64 {
    u.iter().zip(v).map(|(a, b)| a.conj() * b).sum::<Complex64>() / n_grid as f64
}

pub fn inner_c(u: &[Complex64], v: &[Complex64], n_grid: usize) -> Complex64 {
    u.iter().zip(v).map(|(a, b)| a.conj() * b).sum::<Complex64>() / n_grid as f64
}

pub fn sup(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |m, v| m.max(v.abs()))
}

pub fn sup_c(x: &[Complex64]) -> f64 {
    x.iter().fold(0.0, |m, v| m.max(v.norm()))
}

pub fn to_complex(x: &[f64]) -> Vec<Complex64> {
    x.iter().map(|&v| Complex64::new(v, 0.0)).collect()
}

/// Apply a per-component operation to a stacked field of `n` blocks.
pub fn blockwise<F: Fn(&[f64]) -> Vec<f64>>(x: &[f64], n: usize, op: F) -> Vec<f64> {
    let m = x.len() / n;
    let mut out = Vec::with_capacity(x.len());
    for c in 0..n {
        out.extend(op(&x[c * m..(c + 1) * m]));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivative_of_trig_polynomial_is_exact() {
        let f = Fourier::new(32, 1.0);
        let z = grid(32, 1.0);
        let x: Vec<f64> = z.iter().map(|&s| (2.0 * PI * 3.0 * s).sin()).collect();
        let dx = f.deriv(&x, 1);
        for (s, d) in z.iter().zip(&dx) {
            assert!((d - 6.0 * PI * (6.0 * PI * s).cos()).abs() < 1e-11);
        }
        let d2 = f.deriv(&x, 2);
        for (xv, d) in x.iter().zip(&d2) {
            assert!((d + 36.0 * PI * PI * xv).abs() < 1e-9);
        }
    }

    #[test]
    fn matrix_matches_fft_derivative() {
        let f = Fourier::new(16, 2.0);
        let x: Vec<f64> = (0..16).map(|i| ((i * 7) % 5) as f64 - 2.0).collect();
        let m = f.deriv_matrix(1);
        let dx = f.deriv(&x, 1);
        for i in 0..16 {
            let s: f64 = (0..16).map(|j| m[i * 16 + j] * x[j]).sum();
            assert!((s - dx[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn interpolation_reproduces_band_limited_signal() {
        let f = Fourier::new(24, 1.0);
        let z = grid(24, 1.0);
        let g = |s: f64| 1.0 + (2.0 * PI * s).cos() - 0.3 * (2.0 * PI * 5.0 * s).sin();
        let x: Vec<f64> = z.iter().map(|&s| g(s)).collect();
        let pts = [0.013, 0.5001, 0.77];
        let y = f.interpolate(&x, &pts);
        for (p, v) in pts.iter().zip(y) {
            assert!((v - g(*p)).abs() < 1e-12);
        }
    }
}
