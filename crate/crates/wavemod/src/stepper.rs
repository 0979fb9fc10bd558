//! Exponential time differencing (ETDRK4) for `u_t = k²Du_ζζ + ωu_ζ + N(u)` on a periodic
//! domain, with the diffusion matrix diagonalised once.

use crate::error::{Error, Result};
use crate::spectral::{self, Fourier};
use num_complex::Complex64;
use std::f64::consts::PI;

/// φ-function coefficients of the Kassam-Trefethen form of ETDRK4, per rotated component
/// and Fourier mode.
#[derive(Debug, Clone)]
pub struct Etdrk4 {
    pub dt: f64,
    n_comp: usize,
    npts: usize,
    fourier: Fourier,
    /// Orthogonal `Q` (row-major) with `D = Q Λ Qᵀ`.
    q: Vec<f64>,
    lin: Vec<Complex64>,
    e: Vec<Complex64>,
    e2: Vec<Complex64>,
    qc: Vec<Complex64>,
    f1: Vec<Complex64>,
    f2: Vec<Complex64>,
    f3: Vec<Complex64>,
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
pub fn symmetric_eigen(a: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut m = a.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    for _ in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| m[i * n + j].powi(2)).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for r in p + 1..n {
                let apq = m[p * n + r];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (m[r * n + r] - m[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkr) = (m[k * n + p], m[k * n + r]);
                    m[k * n + p] = c * mkp - s * mkr;
                    m[k * n + r] = s * mkp + c * mkr;
                }
                for k in 0..n {
                    let (mpk, mrk) = (m[p * n + k], m[r * n + k]);
                    m[p * n + k] = c * mpk - s * mrk;
                    m[r * n + k] = s * mpk + c * mrk;
                }
                for k in 0..n {
                    let (vkp, vkr) = (v[k * n + p], v[k * n + r]);
                    v[k * n + p] = c * vkp - s * vkr;
                    v[k * n + r] = s * vkp + c * vkr;
                }
            }
        }
    }
    ((0..n).map(|i| m[i * n + i]).collect(), v)
}

fn phi_coefficients(lin: Complex64, dt: f64) -> [Complex64; 6] {
    // contour average over 32 points on the unit circle around L·dt
    let l = lin * dt;
    let zero = Complex64::new(0.0, 0.0);
    let (mut q, mut f1, mut f2, mut f3) = (zero, zero, zero, zero);
    let m = 32;
    for j in 0..m {
        let r = Complex64::from_polar(1.0, PI * (j as f64 + 0.5) / m as f64 * 2.0);
        let z = l + r;
        let ez = z.exp();
        let ez2 = (z / 2.0).exp();
        q += (ez2 - 1.0) / z;
        f1 += (-4.0 - z + ez * (4.0 - 3.0 * z + z * z)) / (z * z * z);
        f2 += (2.0 + z + ez * (z - 2.0)) / (z * z * z);
        f3 += (-4.0 - 3.0 * z - z * z + ez * (4.0 - z)) / (z * z * z);
    }
    let s = dt / m as f64;
    [l.exp(), (l / 2.0).exp(), q * s, f1 * s, f2 * s, f3 * s]
}

impl Etdrk4 {
    /// Linear part `k²D∂² + ω∂` on `npts` points of a domain of length `length`.
    pub fn new(diffusion: &[f64], n_comp: usize, k: f64, omega: f64, npts: usize, length: f64, dt: f64) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::InvalidParameter("time step must be positive".into()));
        }
        let (lam, q) = symmetric_eigen(diffusion, n_comp);
        let fourier = Fourier::new(npts, length);
        let s1 = fourier.symbol(1);
        let s2 = fourier.symbol(2);
        let total = n_comp * npts;
        let mut out = Self {
            dt,
            n_comp,
            npts,
            fourier,
            q,
            lin: vec![Complex64::new(0.0, 0.0); total],
            e: vec![Complex64::new(0.0, 0.0); total],
            e2: vec![Complex64::new(0.0, 0.0); total],
            qc: vec![Complex64::new(0.0, 0.0); total],
            f1: vec![Complex64::new(0.0, 0.0); total],
            f2: vec![Complex64::new(0.0, 0.0); total],
            f3: vec![Complex64::new(0.0, 0.0); total],
        };
        for c in 0..n_comp {
            for j in 0..npts {
                let lin = k * k * lam[c] * s2[j] + omega * s1[j];
                let [e, e2, qq, f1, f2, f3] = phi_coefficients(lin, dt);
                let i = c * npts + j;
                out.lin[i] = lin;
                out.e[i] = e;
                out.e2[i] = e2;
                out.qc[i] = qq;
                out.f1[i] = f1;
                out.f2[i] = f2;
                out.f3[i] = f3;
            }
        }
        Ok(out)
    }

    fn rotate(&self, u: &[f64], transpose: bool) -> Vec<f64> {
        let (n, m) = (self.n_comp, self.npts);
        let mut out = vec![0.0; u.len()];
        for a in 0..n {
            for b in 0..n {
                let w = if transpose { self.q[b * n + a] } else { self.q[a * n + b] };
                if w == 0.0 {
                    continue;
                }
                for i in 0..m {
                    out[a * m + i] += w * u[b * m + i];
                }
            }
        }
        out
    }

    fn to_modes(&self, u: &[f64]) -> Vec<Complex64> {
        let w = self.rotate(u, true);
        let mut out = Vec::with_capacity(w.len());
        for c in 0..self.n_comp {
            out.extend(self.fourier.forward(&w[c * self.npts..(c + 1) * self.npts]));
        }
        out
    }

    fn from_modes(&self, v: &[Complex64]) -> Vec<f64> {
        let mut w = Vec::with_capacity(v.len());
        for c in 0..self.n_comp {
            w.extend(self.fourier.inverse_real(v[c * self.npts..(c + 1) * self.npts].to_vec()));
        }
        self.rotate(&w, false)
    }

    /// One step of `u_t = Lu + N(u)`.
    pub fn step<F: Fn(&[f64]) -> Vec<f64>>(&self, u: &mut Vec<f64>, nonlin: &F) {
        let v = self.to_modes(u);
        let nv = self.to_modes(&nonlin(u));
        let a: Vec<Complex64> = (0..v.len()).map(|i| self.e2[i] * v[i] + self.qc[i] * nv[i]).collect();
        let na = self.to_modes(&nonlin(&self.from_modes(&a)));
        let b: Vec<Complex64> = (0..v.len()).map(|i| self.e2[i] * v[i] + self.qc[i] * na[i]).collect();
        let nb = self.to_modes(&nonlin(&self.from_modes(&b)));
        let c: Vec<Complex64> = (0..v.len()).map(|i| self.e2[i] * a[i] + self.qc[i] * (2.0 * nb[i] - nv[i])).collect();
        let nc = self.to_modes(&nonlin(&self.from_modes(&c)));
        let next: Vec<Complex64> = (0..v.len())
            .map(|i| self.e[i] * v[i] + nv[i] * self.f1[i] + 2.0 * (na[i] + nb[i]) * self.f2[i] + nc[i] * self.f3[i])
            .collect();
        *u = self.from_modes(&next);
    }

    /// Integrate from 0 to `t` with the fixed step, shortening the last step if needed.
    pub fn advance<F: Fn(&[f64]) -> Vec<f64>>(&self, u: &mut Vec<f64>, t: f64, nonlin: &F) -> Result<()> {
        let steps = (t / self.dt).floor() as usize;
        for _ in 0..steps {
            self.step(u, nonlin);
        }
        let rest = t - steps as f64 * self.dt;
        if rest > 1e-12 * self.dt.max(1.0) {
            let mut short = self.clone();
            short.rebuild_for(rest);
            short.step(u, nonlin);
        }
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::BlowUp(t));
        }
        Ok(())
    }

    fn rebuild_for(&mut self, dt: f64) {
        for i in 0..self.e.len() {
            let [e, e2, q, f1, f2, f3] = phi_coefficients(self.lin[i], dt);
            self.e[i] = e;
            self.e2[i] = e2;
            self.qc[i] = q;
            self.f1[i] = f1;
            self.f2[i] = f2;
            self.f3[i] = f3;
        }
        self.dt = dt;
    }

    pub fn n_comp(&self) -> usize {
        self.n_comp
    }

    pub fn npts(&self) -> usize {
        self.npts
    }
}

/// Sup norm over a stacked field.
pub fn field_sup(u: &[f64]) -> f64 {
    spectral::sup(u)
}
