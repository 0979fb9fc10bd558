//! Thin wrappers over faer for the dense problems used throughout the crate.

use crate::error::{Error, Result};
use faer::linalg::solvers::Solve;
use faer::Mat;
use num_complex::Complex64;

pub type CMat = Mat<Complex64>;

/// Solve `A x = b` for a row-major real matrix.
pub fn solve_real(a: &[f64], n: usize, b: &[f64]) -> Result<Vec<f64>> {
    let m = Mat::<f64>::from_fn(n, n, |i, j| a[i * n + j]);
    let mut rhs = Mat::<f64>::from_fn(n, 1, |i, _| b[i]);
    let lu = m.partial_piv_lu();
    lu.solve_in_place(rhs.as_mut());
    let x: Vec<f64> = (0..n).map(|i| rhs[(i, 0)]).collect();
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Instability("singular linear system".into()));
    }
    Ok(x)
}

pub fn eigenvalues(a: &CMat) -> Option<Vec<Complex64>> {
    a.eigenvalues().ok()
}

fn normalize(v: &mut [Complex64]) {
    let n = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if n > 0.0 {
        for z in v.iter_mut() {
            *z /= n;
        }
    }
}

/// Right and left eigenvectors for an eigenvalue estimate `sigma` by inverse iteration,
/// together with the Rayleigh-quotient eigenvalue `<y, A x> / <y, x>`.
pub fn eigenpair_near(a: &CMat, sigma: Complex64, iters: usize) -> Result<(Complex64, Vec<Complex64>, Vec<Complex64>)> {
    let n = a.nrows();
    let scale = (0..n).map(|i| a[(i, i)].norm()).fold(1.0, f64::max);
    let mut shift = sigma;
    let mut attempt = 0;
    loop {
        let mut m = a.clone();
        for i in 0..n {
            m[(i, i)] -= shift;
        }
        let lu = m.partial_piv_lu();
        let mut x = Mat::<Complex64>::from_fn(n, 1, |i, _| Complex64::new(1.0 + 0.01 * (i % 7) as f64, 0.3 - 0.02 * (i % 5) as f64));
        let mut y = x.clone();
        let mut ok = true;
        for _ in 0..iters {
            lu.solve_in_place(x.as_mut());
            lu.solve_adjoint_in_place(y.as_mut());
            let mut xv: Vec<Complex64> = (0..n).map(|i| x[(i, 0)]).collect();
            let mut yv: Vec<Complex64> = (0..n).map(|i| y[(i, 0)]).collect();
            if xv.iter().chain(yv.iter()).any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                ok = false;
                break;
            }
            normalize(&mut xv);
            normalize(&mut yv);
            for i in 0..n {
                x[(i, 0)] = xv[i];
                y[(i, 0)] = yv[i];
            }
        }
        if ok {
            let xv: Vec<Complex64> = (0..n).map(|i| x[(i, 0)]).collect();
            let yv: Vec<Complex64> = (0..n).map(|i| y[(i, 0)]).collect();
            let ax = matvec(a, &xv);
            let num: Complex64 = yv.iter().zip(&ax).map(|(p, q)| p.conj() * q).sum();
            let den: Complex64 = yv.iter().zip(&xv).map(|(p, q)| p.conj() * q).sum();
            let lam = if den.norm() > 1e-300 { num / den } else { sigma };
            return Ok((lam, xv, yv));
        }
        attempt += 1;
        if attempt > 4 {
            return Err(Error::Instability("inverse iteration failed".into()));
        }
        shift = sigma + Complex64::new(1e-13 * scale * 10f64.powi(attempt), 0.0);
    }
}

/// Eigendecomposition `A = V Λ V⁻¹` with a factorised `V` for coordinate changes.
pub struct EigenBasis {
    pub values: Vec<Complex64>,
    pub vectors: CMat,
    lu: faer::linalg::solvers::PartialPivLu<Complex64>,
}

impl EigenBasis {
    pub fn new(a: &CMat) -> Result<Self> {
        let e = a.eigen().map_err(|_| Error::EigenFailure(f64::NAN))?;
        let values: Vec<Complex64> = (0..a.nrows()).map(|i| e.S()[i]).collect();
        let vectors = e.U().to_owned();
        let lu = vectors.partial_piv_lu();
        Ok(Self { values, vectors, lu })
    }

    /// Coordinates `V⁻¹ w`.
    pub fn coords(&self, w: &[Complex64]) -> Vec<Complex64> {
        let mut x = Mat::<Complex64>::from_fn(w.len(), 1, |i, _| w[i]);
        self.lu.solve_in_place(x.as_mut());
        (0..w.len()).map(|i| x[(i, 0)]).collect()
    }

    /// `Σ_j c_j V_j`.
    pub fn combine(&self, c: &[Complex64]) -> Vec<Complex64> {
        matvec(&self.vectors, c)
    }
}

pub fn matvec(a: &CMat, x: &[Complex64]) -> Vec<Complex64> {
    let n = a.nrows();
    (0..n).map(|i| (0..a.ncols()).map(|j| a[(i, j)] * x[j]).sum()).collect()
}

pub fn adjoint_matvec(a: &CMat, y: &[Complex64]) -> Vec<Complex64> {
    let n = a.ncols();
    (0..n).map(|j| (0..a.nrows()).map(|i| a[(i, j)].conj() * y[i]).sum()).collect()
}
