//! Viscous Hamilton-Jacobi and Burgers' equations `γ_t = dγ_ζζ + aγ_ζ + νγ_ζ²` solved exactly
//! through the Cole-Hopf transform, explicit front solutions, and the fully nonlinear
//! Hamilton-Jacobi and Whitham equations driven by tabulated `ω(k)`, `d(k)`.

use crate::bloch::{coefficient_table, CoefficientRow};
use crate::error::{Error, Result};
use crate::fit::{self, SlopeFit};
use crate::model::RDSystem;
use crate::spectral::{self, Fourier};
use crate::stepper::Etdrk4;
use crate::wavetrain::{SolverOptions, WaveProfile};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HjCoefficients {
    pub a: f64,
    pub d: f64,
    pub nu: f64,
}

impl HjCoefficients {
    fn check(&self) -> Result<()> {
        if !(self.d > 0.0) || !self.a.is_finite() || !self.nu.is_finite() {
            return Err(Error::InvalidParameter(format!("need d > 0 and finite a, nu (got {self:?})")));
        }
        Ok(())
    }
}

/// Uniform grid `ζ_i = −L/2 + iL/n`, `i = 0..n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub n: usize,
    pub length: f64,
}

impl Default for Line {
    fn default() -> Self {
        Self { n: 4096, length: 400.0 }
    }
}

impl Line {
    pub fn new(n: usize, length: f64) -> Result<Self> {
        if n < 8 || !(length > 0.0) {
            return Err(Error::InvalidParameter("line needs n >= 8 and positive length".into()));
        }
        Ok(Self { n, length })
    }

    pub fn h(&self) -> f64 {
        self.length / self.n as f64
    }

    pub fn zeta(&self) -> Vec<f64> {
        (0..self.n).map(|i| -0.5 * self.length + i as f64 * self.h()).collect()
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n {
            return Err(Error::DimensionMismatch { expected: self.n, got: x.len() });
        }
        Ok(())
    }
}

/// How data are continued beyond the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Boundary {
    /// Affine continuation of each end, fitted on the last few samples.
    Affine,
    Periodic,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhaseField {
    pub line: Line,
    pub t: f64,
    pub coeffs: HjCoefficients,
    pub gamma: Vec<f64>,
    pub gamma_z: Vec<f64>,
    pub gamma_zz: Vec<f64>,
}

impl PhaseField {
    pub fn zeta(&self) -> Vec<f64> {
        self.line.zeta()
    }

    /// `∂_tγ` from the equation.
    pub fn gamma_t(&self) -> Vec<f64> {
        let c = &self.coeffs;
        (0..self.gamma.len()).map(|i| c.d * self.gamma_zz[i] + c.a * self.gamma_z[i] + c.nu * self.gamma_z[i].powi(2)).collect()
    }

    /// CSV `(zeta, gamma, gamma_z, gamma_zz)` plus a JSON sidecar with `t`, coefficients and grid.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["zeta", "gamma", "gamma_z", "gamma_zz"])?;
        for (i, z) in self.zeta().iter().enumerate() {
            w.write_record([z, &self.gamma[i], &self.gamma_z[i], &self.gamma_zz[i]].map(|v| format!("{v:.17e}")))?;
        }
        w.flush()?;
        let meta = serde_json::json!({ "t": self.t, "a": self.coeffs.a, "d": self.coeffs.d, "nu": self.coeffs.nu, "grid": self.line });
        std::fs::write(path.with_extension("json"), serde_json::to_string_pretty(&meta)?)?;
        Ok(())
    }
}

/// `1/√(4π) ∫_{−∞}^x e^{−y²/4} dy`, so that `erf_paper(0) = 1/2`.
pub fn erf_paper(x: f64) -> f64 {
    0.5 * libm::erfc(-0.5 * x)
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

/// Value and first two ζ-derivatives of a field.
#[derive(Debug, Clone)]
pub struct Jet {
    pub value: Vec<f64>,
    pub d1: Vec<f64>,
    pub d2: Vec<f64>,
}

fn line_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let q = sxy / sxx;
    (my - q * mx, q)
}

fn multiplier_jet(f: &Fourier, data: &[f64], t: f64, a: f64, d: f64) -> [Vec<f64>; 3] {
    let mut spec = f.forward(data);
    let s1 = f.symbol(1);
    let s2 = f.symbol(2);
    for (j, z) in spec.iter_mut().enumerate() {
        *z *= ((d * s2[j] + a * s1[j]) * t).exp();
    }
    let go = |m: &[num_complex::Complex64]| {
        let c: Vec<_> = spec.iter().zip(m).map(|(z, s)| z * s).collect();
        f.inverse_real(c)
    };
    [f.inverse_real(spec.clone()), go(&s1), go(&s2)]
}

/// `e^{(d∂² + a∂)t}w₀` with its first two derivatives.
///
/// With [`Boundary::Affine`] the data are split into an explicit part carrying the fitted
/// affine tails (propagated in closed form) and a residual that is zero-padded and
/// propagated with the exact Fourier multiplier.
pub fn heat_flow(w0: &[f64], line: &Line, t: f64, a: f64, d: f64, bc: Boundary) -> Result<Jet> {
    line.check(w0)?;
    if !(t >= 0.0) || !(d > 0.0) {
        return Err(Error::InvalidParameter("heat flow needs t >= 0 and d > 0".into()));
    }
    match bc {
        Boundary::Periodic => {
            let f = Fourier::new(line.n, line.length);
            let [value, d1, d2] = multiplier_jet(&f, w0, t, a, d);
            Ok(Jet { value, d1, d2 })
        }
        Boundary::Affine => {
            let (n, h) = (line.n, line.h());
            let z = line.zeta();
            let m = 8.min(n / 2);
            let (pm, qm) = line_fit(&z[..m], &w0[..m]);
            let (pp, qp) = line_fit(&z[n - m..], &w0[n - m..]);
            let sigma = std::f64::consts::SQRT_2 * line.length / 40.0;
            let blend = |x: f64| normal_cdf(x / sigma);
            let tails: Vec<f64> = z.iter().map(|&x| (pm + qm * x) * (1.0 - blend(x)) + (pp + qp * x) * blend(x)).collect();
            let s2 = 2.0 * d * t;
            let tau = (sigma * sigma + s2).sqrt();
            let mut jet = Jet { value: vec![0.0; n], d1: vec![0.0; n], d2: vec![0.0; n] };
            for (i, &x) in z.iter().enumerate() {
                let xx = x + a * t;
                let (cdf, pdf) = (normal_cdf(xx / tau), normal_pdf(xx / tau));
                let f1 = [cdf, pdf / tau, -xx / tau.powi(3) * pdf];
                let f2 = [
                    xx * cdf + s2 / tau * pdf,
                    cdf + xx * pdf * sigma * sigma / tau.powi(3),
                    pdf / tau + sigma * sigma / tau.powi(3) * pdf * (1.0 - xx * xx / (tau * tau)),
                ];
                jet.value[i] = pm + qm * xx + (pp - pm) * f1[0] + (qp - qm) * f2[0];
                jet.d1[i] = qm + (pp - pm) * f1[1] + (qp - qm) * f2[1];
                jet.d2[i] = (pp - pm) * f1[2] + (qp - qm) * f2[2];
            }
            let pad = ((a.abs() * t + 12.0 * s2.sqrt()) / h).ceil() as usize + 32;
            let total = n + 2 * pad;
            let mut r = vec![0.0; total];
            for i in 0..n {
                r[pad + i] = w0[i] - tails[i];
            }
            let f = Fourier::new(total, total as f64 * h);
            let parts = multiplier_jet(&f, &r, t, a, d);
            for i in 0..n {
                jet.value[i] += parts[0][pad + i];
                jet.d1[i] += parts[1][pad + i];
                jet.d2[i] += parts[2][pad + i];
            }
            Ok(jet)
        }
    }
}

pub fn heat_solve(w0: &[f64], line: &Line, t: f64, a: f64, d: f64, bc: Boundary) -> Result<Vec<f64>> {
    Ok(heat_flow(w0, line, t, a, d, bc)?.value)
}

/// Cole-Hopf variable `y = e^{(ν/d)γ} − 1`.
pub fn cole_hopf(gamma: &[f64], c: &HjCoefficients) -> Result<Vec<f64>> {
    let r = c.nu / c.d;
    let worst = gamma.iter().map(|g| r * g).fold(f64::NEG_INFINITY, f64::max);
    if worst > 700.0 {
        return Err(Error::ColeHopfPositivity(f64::INFINITY));
    }
    Ok(gamma.iter().map(|g| (r * g).exp_m1()).collect())
}

pub fn inverse_cole_hopf(y: &[f64], c: &HjCoefficients) -> Result<Vec<f64>> {
    let low = y.iter().map(|v| 1.0 + v).fold(f64::INFINITY, f64::min);
    if !(low > 0.0) {
        return Err(Error::ColeHopfPositivity(low));
    }
    Ok(y.iter().map(|v| c.d / c.nu * v.ln_1p()).collect())
}

pub fn hj_solve(gamma0: &[f64], line: &Line, t: f64, c: &HjCoefficients, bc: Boundary) -> Result<PhaseField> {
    c.check()?;
    line.check(gamma0)?;
    if c.nu == 0.0 {
        let j = heat_flow(gamma0, line, t, c.a, c.d, bc)?;
        return Ok(PhaseField { line: *line, t, coeffs: *c, gamma: j.value, gamma_z: j.d1, gamma_zz: j.d2 });
    }
    let y0 = cole_hopf(gamma0, c)?;
    let j = heat_flow(&y0, line, t, c.a, c.d, bc)?;
    let low = j.value.iter().map(|v| 1.0 + v).fold(f64::INFINITY, f64::min);
    if !(low > 1e-12) {
        return Err(Error::ColeHopfPositivity(low));
    }
    let s = c.d / c.nu;
    let gamma = j.value.iter().map(|v| s * v.ln_1p()).collect();
    let gamma_z: Vec<f64> = (0..line.n).map(|i| s * j.d1[i] / (1.0 + j.value[i])).collect();
    let gamma_zz = (0..line.n)
        .map(|i| {
            let p = 1.0 + j.value[i];
            s * (j.d2[i] / p - (j.d1[i] / p).powi(2))
        })
        .collect();
    Ok(PhaseField { line: *line, t, coeffs: *c, gamma, gamma_z, gamma_zz })
}

/// `γ(ζ) = ∫_{−L/2}^ζ k`, spectrally (zero-padded for [`Boundary::Affine`]; `k` must have zero
/// mean for [`Boundary::Periodic`]).
pub fn antiderivative(k: &[f64], line: &Line, bc: Boundary) -> Result<Vec<f64>> {
    line.check(k)?;
    let n = line.n;
    let h = line.h();
    let (pad, buf) = match bc {
        Boundary::Periodic => {
            let mean = k.iter().sum::<f64>() / n as f64;
            if mean.abs() > 1e-12 * (1.0 + spectral::sup(k)) {
                return Err(Error::InvalidParameter("periodic wavenumber data must have zero mean".into()));
            }
            (0, k.to_vec())
        }
        Boundary::Affine => {
            let mut b = vec![0.0; 3 * n];
            b[n..2 * n].copy_from_slice(k);
            (n, b)
        }
    };
    let total = buf.len();
    let mean = buf.iter().sum::<f64>() / total as f64;
    let f = Fourier::new(total, total as f64 * h);
    let mut spec = f.forward(&buf.iter().map(|v| v - mean).collect::<Vec<_>>());
    let s1 = f.symbol(1);
    for (j, z) in spec.iter_mut().enumerate() {
        *z = if s1[j].norm() > 0.0 { *z / s1[j] } else { num_complex::Complex64::new(0.0, 0.0) };
    }
    let g = f.inverse_real(spec);
    let base = g[pad];
    Ok((0..n).map(|i| g[pad + i] - base + mean * i as f64 * h).collect())
}

/// Viscous Burgers' `k_t = dk_ζζ + ak_ζ + ν(k²)_ζ` through the antiderivative and
/// [`hj_solve`]; returns `k̆(t)`.
pub fn burgers_solve(k0bar: &[f64], line: &Line, t: f64, c: &HjCoefficients, bc: Boundary) -> Result<Vec<f64>> {
    let g0 = antiderivative(k0bar, line, bc)?;
    Ok(hj_solve(&g0, line, t, c, bc)?.gamma_z)
}

fn periodic_integrate<F: Fn(&[f64]) -> Vec<f64>>(u0: &[f64], line: &Line, t: f64, a: f64, d: f64, dt: f64, nonlin: F) -> Result<Vec<f64>> {
    let st = Etdrk4::new(&[d], 1, 1.0, a, line.n, line.length, dt)?;
    let scale = spectral::sup(u0);
    let mut u = u0.to_vec();
    let mut done = 0.0;
    // advance in chunks so that norm growth is caught early
    let chunk = (dt * 50.0).max(dt);
    while done < t - 1e-14 {
        let step = chunk.min(t - done);
        st.advance(&mut u, step, &nonlin)?;
        done += step;
        if spectral::sup(&u) > 10.0 * scale + 1.0 {
            return Err(Error::Instability(format!("norm growth at t = {done}")));
        }
    }
    Ok(u)
}

/// Direct integration of `γ_t = dγ_ζζ + aγ_ζ + νγ_ζ²` on the periodic line: the linear part is
/// integrated exactly, the nonlinearity explicitly (ETDRK4).
pub fn hj_direct(gamma0: &[f64], line: &Line, t: f64, c: &HjCoefficients, dt: f64) -> Result<Vec<f64>> {
    c.check()?;
    line.check(gamma0)?;
    let f = Fourier::new(line.n, line.length);
    periodic_integrate(gamma0, line, t, c.a, c.d, dt, |g: &[f64]| f.deriv(g, 1).iter().map(|v| c.nu * v * v).collect())
}

/// Direct integration of Burgers' equation on the periodic line.
pub fn burgers_direct(k0: &[f64], line: &Line, t: f64, c: &HjCoefficients, dt: f64) -> Result<Vec<f64>> {
    c.check()?;
    line.check(k0)?;
    let f = Fourier::new(line.n, line.length);
    periodic_integrate(k0, line, t, c.a, c.d, dt, |k: &[f64]| {
        let sq: Vec<f64> = k.iter().map(|v| c.nu * v * v).collect();
        f.deriv(&sq, 1)
    })
}

/// `γ_f` and its derivatives at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrontJet {
    pub gamma: f64,
    pub gamma_x: f64,
    pub gamma_xx: f64,
    pub gamma_t: f64,
}

pub fn front_jet(gamma_minus: f64, gamma_plus: f64, x: f64, t: f64, c: &HjCoefficients) -> FrontJet {
    let s = 1.0 + t;
    let w = (c.d * s).sqrt();
    let xx = (x + c.a * s) / w;
    let e = erf_paper(xx);
    let e1 = (-0.25 * xx * xx).exp() / (4.0 * PI).sqrt();
    let e2 = -0.5 * xx * e1;
    let delta = gamma_plus - gamma_minus;
    let (g, g1, g2) = if c.nu == 0.0 {
        (delta * e, delta, 0.0)
    } else {
        let beta = (c.nu * delta / c.d).exp_m1();
        let p = 1.0 + beta * e;
        (c.d / c.nu * (beta * e).ln_1p(), c.d / c.nu * beta / p, -c.d / c.nu * beta * beta / (p * p))
    };
    let xt = c.a / w - xx / (2.0 * s);
    let xx1 = 1.0 / w;
    FrontJet {
        gamma: gamma_minus + g,
        gamma_x: g1 * e1 * xx1,
        gamma_xx: (g2 * e1 * e1 + g1 * e2) * xx1 * xx1,
        gamma_t: g1 * e1 * xt,
    }
}

/// Monotone front connecting `γ₋` to `γ₊`, centred at `x = −a(1+t)`.
pub fn front_solution(gamma_minus: f64, gamma_plus: f64, x: f64, t: f64, c: &HjCoefficients) -> f64 {
    front_jet(gamma_minus, gamma_plus, x, t, c).gamma
}

/// Pointwise residual of the Hamilton-Jacobi equation on the front.
pub fn front_residual(gamma_minus: f64, gamma_plus: f64, x: f64, t: f64, c: &HjCoefficients) -> f64 {
    let j = front_jet(gamma_minus, gamma_plus, x, t, c);
    j.gamma_t - c.d * j.gamma_xx - c.a * j.gamma_x - c.nu * j.gamma_x * j.gamma_x
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrontDecay {
    pub j: u32,
    pub l: u32,
    pub ts: Vec<f64>,
    pub norms: Vec<f64>,
    pub fit: SlopeFit,
    /// Range of `‖·‖∞ (1+t)^{j/2+l} / max(|γ₋|, |γ₊|)` over the time grid.
    pub lower: f64,
    pub upper: f64,
}

/// Sup norms of `∂_ζ^j(∂_t − a∂_ζ)^l γ_f(t)` sampled on `line`, with a log-log fit.
pub fn front_decay_rates(
    gamma_minus: f64,
    gamma_plus: f64,
    j: u32,
    l: u32,
    ts: &[f64],
    line: &Line,
    c: &HjCoefficients,
) -> Result<FrontDecay> {
    c.check()?;
    if j > 2 || l > 1 {
        return Err(Error::InvalidParameter("front decay needs j <= 2 and l <= 1".into()));
    }
    let z = line.zeta();
    let (lo, hi) = (z[0], z[z.len() - 1]);
    let amp = gamma_minus.abs().max(gamma_plus.abs());
    let mut norms = vec![];
    for &t in ts {
        let s = 1.0 + t;
        let centre = -c.a * s;
        let core = 8.0 * (c.d * s).sqrt();
        if centre - core < lo || centre + core > hi {
            return Err(Error::InvalidParameter(format!("grid too narrow to contain the front core at t = {t}")));
        }
        let transport = |x: f64| {
            let q = front_jet(gamma_minus, gamma_plus, x, t, c);
            q.gamma_t - c.a * q.gamma_x
        };
        let fd = 1e-3 * (c.d * s).sqrt();
        let value = |x: f64| -> f64 {
            let q = front_jet(gamma_minus, gamma_plus, x, t, c);
            match (j, l) {
                (0, 0) => q.gamma,
                (1, 0) => q.gamma_x,
                (2, 0) => q.gamma_xx,
                (0, 1) => transport(x),
                (1, 1) => (transport(x + fd) - transport(x - fd)) / (2.0 * fd),
                _ => (transport(x + 10.0 * fd) - 2.0 * transport(x) + transport(x - 10.0 * fd)) / (100.0 * fd * fd),
            }
        };
        norms.push(z.iter().map(|&x| value(x).abs()).fold(0.0, f64::max));
    }
    let tmin = ts.iter().copied().fold(f64::INFINITY, f64::min);
    let tmax = ts.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let fit = fit::power_fit(ts, &norms, tmin, tmax)?;
    let rate = 0.5 * j as f64 + l as f64;
    let scaled: Vec<f64> = ts.iter().zip(&norms).map(|(t, n)| n * (1.0 + t).powf(rate) / amp).collect();
    Ok(FrontDecay {
        j,
        l,
        ts: ts.to_vec(),
        norms,
        fit,
        lower: scaled.iter().copied().fold(f64::INFINITY, f64::min),
        upper: scaled.iter().copied().fold(0.0, f64::max),
    })
}

/// Smooth least-squares polynomial fits of `ω(k)` and `d(k)` over a tabulated range.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DispersionTable {
    pub k0: f64,
    pub rows: Vec<CoefficientRow>,
    scale: f64,
    omega_poly: Vec<f64>,
    d_poly: Vec<f64>,
}

fn poly_fit(x: &[f64], y: &[f64], degree: usize) -> Result<Vec<f64>> {
    let n = x.len();
    let m = degree + 1;
    let mut a = vec![0.0; m * m];
    let mut b = vec![0.0; m];
    for (xi, yi) in x.iter().zip(y) {
        let pw: Vec<f64> = (0..m).map(|p| xi.powi(p as i32)).collect();
        for r in 0..m {
            b[r] += pw[r] * yi;
            for c in 0..m {
                a[r * m + c] += pw[r] * pw[c];
            }
        }
    }
    if n < m {
        return Err(Error::InsufficientSamples { need: m, have: n });
    }
    crate::linalg::solve_real(&a, m, &b)
}

fn poly_eval(p: &[f64], x: f64, deriv: u32) -> f64 {
    let mut s = 0.0;
    for (i, c) in p.iter().enumerate() {
        let i = i as u32;
        if i < deriv {
            continue;
        }
        let mut f = 1.0;
        for q in 0..deriv {
            f *= (i - q) as f64;
        }
        s += c * f * x.powi((i - deriv) as i32);
    }
    s
}

impl DispersionTable {
    pub fn new(mut rows: Vec<CoefficientRow>, k0: f64) -> Result<Self> {
        rows.sort_by(|a, b| a.k.partial_cmp(&b.k).unwrap());
        let degree = 6.min(rows.len().saturating_sub(2));
        if rows.len() < 5 {
            return Err(Error::InsufficientSamples { need: 5, have: rows.len() });
        }
        let scale = (rows[rows.len() - 1].k - rows[0].k) / 2.0;
        let x: Vec<f64> = rows.iter().map(|r| (r.k - k0) / scale).collect();
        let om: Vec<f64> = rows.iter().map(|r| r.omega).collect();
        let dd: Vec<f64> = rows.iter().map(|r| r.d).collect();
        Ok(Self { k0, scale, omega_poly: poly_fit(&x, &om, degree)?, d_poly: poly_fit(&x, &dd, degree)?, rows })
    }

    /// Tabulate `2·count + 1` waves over `k₀(1 ± rel_width)`, continued outward from `wave`.
    pub fn build(sys: &RDSystem, wave: &WaveProfile, rel_width: f64, count: usize, fit_window: f64, solver: &SolverOptions) -> Result<Self> {
        let k0 = wave.k;
        let below: Vec<f64> = (0..=count).map(|i| k0 * (1.0 - rel_width * i as f64 / count as f64)).collect();
        let above: Vec<f64> = (1..=count).map(|i| k0 * (1.0 + rel_width * i as f64 / count as f64)).collect();
        let mut rows = coefficient_table(sys, wave, &below, fit_window, solver)?;
        rows.extend(coefficient_table(sys, wave, &above, fit_window, solver)?);
        Self::new(rows, k0)
    }

    pub fn range(&self) -> (f64, f64) {
        (self.rows[0].k, self.rows[self.rows.len() - 1].k)
    }

    fn arg(&self, k: f64) -> Result<f64> {
        let (lo, hi) = self.range();
        if !(k >= lo && k <= hi) {
            return Err(Error::TableRange(k));
        }
        Ok((k - self.k0) / self.scale)
    }

    pub fn omega(&self, k: f64) -> Result<f64> {
        Ok(poly_eval(&self.omega_poly, self.arg(k)?, 0))
    }

    pub fn omega_prime(&self, k: f64) -> Result<f64> {
        Ok(poly_eval(&self.omega_poly, self.arg(k)?, 1) / self.scale)
    }

    pub fn omega_second(&self, k: f64) -> Result<f64> {
        Ok(poly_eval(&self.omega_poly, self.arg(k)?, 2) / (self.scale * self.scale))
    }

    pub fn d(&self, k: f64) -> Result<f64> {
        Ok(poly_eval(&self.d_poly, self.arg(k)?, 0))
    }

    /// `(a, d, ν)` of the quadratic approximation at `k₀` implied by the fitted tables.
    pub fn burgers_coefficients(&self) -> Result<HjCoefficients> {
        let k0 = self.k0;
        Ok(HjCoefficients {
            a: self.omega(k0)? - k0 * self.omega_prime(k0)?,
            d: self.d(k0)?,
            nu: -0.5 * k0 * k0 * self.omega_second(k0)?,
        })
    }
}

/// Whitham equation `κ_t = (d(k₀κ)κ_ζ)_ζ + (ω(k₀)κ − ω(k₀κ))_ζ` on the periodic line.
pub fn whitham_solve(kappa0: &[f64], line: &Line, t: f64, table: &DispersionTable, dt: f64) -> Result<Vec<f64>> {
    line.check(kappa0)?;
    let c = table.burgers_coefficients()?;
    let k0 = table.k0;
    let om0 = table.omega(k0)?;
    let f = Fourier::new(line.n, line.length);
    let err = std::cell::RefCell::new(None);
    let nonlin = |u: &[f64]| -> Vec<f64> {
        let uz = f.deriv(u, 1);
        let mut flux = vec![0.0; u.len()];
        for i in 0..u.len() {
            let k = k0 * (1.0 + u[i]);
            match (table.d(k), table.omega(k)) {
                (Ok(dk), Ok(om)) => flux[i] = (dk - c.d) * uz[i] + om0 * (1.0 + u[i]) - om - c.a * u[i],
                (Err(e), _) | (_, Err(e)) => {
                    err.borrow_mut().get_or_insert(e);
                }
            }
        }
        f.deriv(&flux, 1)
    };
    let u0: Vec<f64> = kappa0.iter().map(|k| k - 1.0).collect();
    let u = periodic_integrate(&u0, line, t, c.a, c.d, dt, nonlin)?;
    if let Some(e) = err.into_inner() {
        return Err(e);
    }
    Ok(u.iter().map(|v| 1.0 + v).collect())
}

/// Hamilton-Jacobi equation `Υ_t = d(k₀Υ_ζ)Υ_ζζ + ω(k₀)Υ_ζ − ω(k₀Υ_ζ)` for `Υ = ζ + γ` on the
/// periodic line, in terms of the periodic deviation `γ`.
pub fn hj2_solve(gamma0: &[f64], line: &Line, t: f64, table: &DispersionTable, dt: f64) -> Result<Vec<f64>> {
    line.check(gamma0)?;
    let c = table.burgers_coefficients()?;
    let k0 = table.k0;
    let om0 = table.omega(k0)?;
    let f = Fourier::new(line.n, line.length);
    let err = std::cell::RefCell::new(None);
    let nonlin = |g: &[f64]| -> Vec<f64> {
        let gz = f.deriv(g, 1);
        let gzz = f.deriv(g, 2);
        let mut out = vec![0.0; g.len()];
        for i in 0..g.len() {
            let k = k0 * (1.0 + gz[i]);
            match (table.d(k), table.omega(k)) {
                (Ok(dk), Ok(om)) => out[i] = (dk - c.d) * gzz[i] + om0 * (1.0 + gz[i]) - om - c.a * gz[i],
                (Err(e), _) | (_, Err(e)) => {
                    err.borrow_mut().get_or_insert(e);
                }
            }
        }
        out
    };
    let g = periodic_integrate(gamma0, line, t, c.a, c.d, dt, nonlin)?;
    if let Some(e) = err.into_inner() {
        return Err(e);
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const C: HjCoefficients = HjCoefficients { a: 0.7, d: 0.9, nu: -0.6 };

    fn bump(line: &Line, amp: f64, width: f64) -> Vec<f64> {
        line.zeta().iter().map(|z| amp * (-(z / width).powi(2)).exp()).collect()
    }

    #[test]
    fn erf_normalisation() {
        assert!((erf_paper(0.0) - 0.5).abs() < 1e-16);
        for x in [0.3, 1.7, 4.0] {
            assert!((erf_paper(x) + erf_paper(-x) - 1.0).abs() < 1e-15);
        }
        // defining integral by composite Gauss-Legendre on [-40, 10]
        let (xs, ws) = crate::quadrature::gauss_legendre(20);
        let mut s = 0.0;
        for p in 0..50 {
            let c = -40.0 + p as f64 + 0.5;
            for (x, w) in xs.iter().zip(&ws) {
                s += 0.5 * w * (-(c + 0.5 * x).powi(2) / 4.0).exp();
            }
        }
        s /= (4.0 * PI).sqrt();
        assert!((s - 1.0).abs() < 1e-10 && (erf_paper(10.0) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn heat_flow_of_gaussian_and_constants() {
        let line = Line::new(2048, 200.0).unwrap();
        let (a, d, t) = (0.8, 0.6, 3.0);
        let s2 = 4.0;
        let w0: Vec<f64> = line.zeta().iter().map(|z| (-z * z / (2.0 * s2)).exp()).collect();
        for bc in [Boundary::Affine, Boundary::Periodic] {
            let w = heat_solve(&w0, &line, t, a, d, bc).unwrap();
            let v = s2 + 2.0 * d * t;
            for (z, wi) in line.zeta().iter().zip(&w) {
                let exact = (s2 / v).sqrt() * (-(z + a * t).powi(2) / (2.0 * v)).exp();
                assert!((wi - exact).abs() < 1e-12);
            }
            let c = heat_solve(&vec![1.5; line.n], &line, t, a, d, bc).unwrap();
            assert!(c.iter().all(|v| (v - 1.5).abs() < 1e-12));
        }
        // finite-difference residual of the equation
        let dtt = 1e-4;
        let p = heat_flow(&w0, &line, t + dtt, a, d, Boundary::Affine).unwrap();
        let m = heat_flow(&w0, &line, t - dtt, a, d, Boundary::Affine).unwrap();
        let c = heat_flow(&w0, &line, t, a, d, Boundary::Affine).unwrap();
        for i in 0..line.n {
            let r = (p.value[i] - m.value[i]) / (2.0 * dtt) - d * c.d2[i] - a * c.d1[i];
            assert!(r.abs() < 1e-5);
        }
    }

    #[test]
    fn affine_tails_propagate_exactly() {
        let line = Line::new(1024, 100.0).unwrap();
        let c = HjCoefficients { a: -0.4, d: 0.5, nu: 0.0 };
        let w0: Vec<f64> = line.zeta().iter().map(|&z| front_solution(-0.3, 0.8, z, 0.0, &c) + 0.01 * z).collect();
        let w = heat_flow(&w0, &line, 5.0, c.a, c.d, Boundary::Affine).unwrap();
        for (i, &z) in line.zeta().iter().enumerate() {
            let exact = front_solution(-0.3, 0.8, z, 5.0, &c) + 0.01 * (z + c.a * 5.0);
            assert!((w.value[i] - exact).abs() < 1e-10, "{z}");
            let j = front_jet(-0.3, 0.8, z, 5.0, &c);
            assert!((w.d1[i] - j.gamma_x - 0.01).abs() < 1e-10);
            assert!((w.d2[i] - j.gamma_xx).abs() < 1e-10);
        }
    }

    #[test]
    fn fronts_solve_the_equation_and_evolve_under_cole_hopf() {
        let line = Line::new(4096, 400.0).unwrap();
        for c in [C, HjCoefficients { nu: 0.0, ..C }] {
            for &x in &[-5.0, -0.7, 0.0, 2.0, 9.0] {
                for &t in &[0.0, 1.0, 30.0] {
                    assert!(front_residual(0.1, 0.9, x, t, &c).abs() < 1e-8);
                }
            }
            let g0: Vec<f64> = line.zeta().iter().map(|&z| front_solution(0.1, 0.9, z, 0.0, &c)).collect();
            for t in [1.0, 10.0] {
                let g = hj_solve(&g0, &line, t, &c, Boundary::Affine).unwrap();
                let err = line.zeta().iter().zip(&g.gamma).map(|(&z, v)| (v - front_solution(0.1, 0.9, z, t, &c)).abs()).fold(0.0, f64::max);
                assert!(err < 1e-6, "{err}");
            }
        }
        let nu0 = HjCoefficients { nu: 0.0, ..C };
        assert!((front_solution(0.2, 1.0, -nu0.a * 4.0, 3.0, &nu0) - 0.6).abs() < 1e-15);
        assert!(line.zeta().iter().all(|&z| front_solution(0.4, 0.4, z, 2.0, &C) == 0.4));
    }

    #[test]
    fn cole_hopf_matches_direct_integration() {
        let line = Line::new(1024, 100.0).unwrap();
        let g0 = bump(&line, 0.8, 4.0);
        let ch = hj_solve(&g0, &line, 1.0, &C, Boundary::Periodic).unwrap();
        let direct = hj_direct(&g0, &line, 1.0, &C, 0.005).unwrap();
        let err = ch.gamma.iter().zip(&direct).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-6, "{err}");
        let k0: Vec<f64> = Fourier::new(line.n, line.length).deriv(&g0, 1);
        let kb = burgers_solve(&k0, &line, 1.0, &C, Boundary::Periodic).unwrap();
        let kd = burgers_direct(&k0, &line, 1.0, &C, 0.005).unwrap();
        assert!(kb.iter().zip(&kd).all(|(a, b)| (a - b).abs() < 1e-6));
        // step halving of the direct integrator is fourth order
        let e1: f64 = hj_direct(&g0, &line, 1.0, &C, 0.1).unwrap().iter().zip(&ch.gamma).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let e2: f64 = hj_direct(&g0, &line, 1.0, &C, 0.05).unwrap().iter().zip(&ch.gamma).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(e1 / e2 > 10.0, "{}", e1 / e2);
    }

    #[test]
    fn burgers_conserves_mass_and_reduces_to_heat() {
        let line = Line::new(2048, 200.0).unwrap();
        let z = line.zeta();
        let k0: Vec<f64> = z.iter().map(|z| 0.3 * (-(z / 3.0).powi(2)).exp() * (1.0 + 0.5 * z.sin())).collect();
        let mass = |k: &[f64]| k.iter().sum::<f64>() * line.h();
        for t in [0.5, 5.0, 20.0] {
            let k = burgers_solve(&k0, &line, t, &C, Boundary::Affine).unwrap();
            assert!((mass(&k) - mass(&k0)).abs() < 1e-8);
        }
        let lin = HjCoefficients { nu: 0.0, ..C };
        let k = burgers_solve(&k0, &line, 2.0, &lin, Boundary::Affine).unwrap();
        let h = heat_solve(&k0, &line, 2.0, lin.a, lin.d, Boundary::Affine).unwrap();
        assert!(k.iter().zip(&h).all(|(a, b)| (a - b).abs() < 1e-10));
        assert!(antiderivative(&k0, &line, Boundary::Periodic).is_err());
    }

    #[test]
    fn cole_hopf_round_trip_and_limits() {
        let g: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin() * 2.0).collect();
        let back = inverse_cole_hopf(&cole_hopf(&g, &C).unwrap(), &C).unwrap();
        assert!(g.iter().zip(&back).all(|(a, b)| (a - b).abs() < 1e-12));
        assert!(cole_hopf(&[-2000.0], &C).is_err());
        assert!(inverse_cole_hopf(&[-1.5], &C).is_err());
        let line = Line::new(64, 10.0).unwrap();
        let c = vec![0.3; 64];
        let g = hj_solve(&c, &line, 4.0, &C, Boundary::Affine).unwrap();
        assert!(g.gamma.iter().all(|v| (v - 0.3).abs() < 1e-12));
    }

    #[test]
    fn galilean_consistency() {
        let line = Line::new(1024, 100.0).unwrap();
        let g0 = bump(&line, 0.5, 3.0);
        let t = 2.0;
        let a = 5.0 * line.h() / t;
        let drift = hj_solve(&g0, &line, t, &HjCoefficients { a, ..C }, Boundary::Affine).unwrap();
        let still = hj_solve(&g0, &line, t, &HjCoefficients { a: 0.0, ..C }, Boundary::Affine).unwrap();
        for i in 0..line.n - 5 {
            assert!((drift.gamma[i] - still.gamma[i + 5]).abs() < 1e-12);
        }
    }

    #[test]
    fn front_rates_are_diffusive() {
        let line = Line::default();
        let ts = fit::geometric_times(1.0, 1.25, 100.0);
        for (j, l, p) in [(1, 0, -0.5), (2, 0, -1.0), (0, 1, -1.0), (0, 0, 0.0)] {
            let r = front_decay_rates(0.0, 0.3, j, l, &ts, &line, &C).unwrap();
            assert!((r.fit.slope - p).abs() < 0.05, "{j} {l}: {}", r.fit.slope);
            assert!(r.lower > 0.0 && r.upper / r.lower < 1.2);
        }
        let narrow = Line::new(256, 20.0).unwrap();
        assert!(front_decay_rates(0.0, 0.3, 1, 0, &ts, &narrow, &C).is_err());
    }

    fn gl_like_table(k0: f64) -> DispersionTable {
        let rows = (0..13)
            .map(|i| {
                let k = k0 * (0.85 + 0.025 * i as f64);
                CoefficientRow { k, omega: 0.4 * k + 0.8 * k * k * k, a: 0.0, d: 0.2 + 0.5 * k * k }
            })
            .collect();
        DispersionTable::new(rows, k0).unwrap()
    }

    #[test]
    fn tables_and_whitham_limits() {
        let tab = gl_like_table(0.5);
        let c = tab.burgers_coefficients().unwrap();
        assert!((c.a - (-2.0 * 0.8 * 0.125)).abs() < 1e-10);
        assert!((c.nu + 0.5 * 0.25 * 4.8 * 0.5).abs() < 1e-9);
        assert!(matches!(tab.omega(0.9), Err(Error::TableRange(_))));
        let line = Line::new(256, 64.0).unwrap();
        let flat = whitham_solve(&vec![1.0; line.n], &line, 3.0, &tab, 0.01).unwrap();
        assert!(flat.iter().all(|v| (v - 1.0).abs() < 1e-12));
        let big: Vec<f64> = line.zeta().iter().map(|z| 1.0 + 0.5 * (-(z / 3.0).powi(2)).exp()).collect();
        assert!(matches!(whitham_solve(&big, &line, 1.0, &tab, 0.01), Err(Error::TableRange(_))));
    }

    #[test]
    fn whitham_is_second_order_close_to_burgers() {
        let tab = gl_like_table(0.5);
        let c = tab.burgers_coefficients().unwrap();
        let line = Line::new(256, 64.0).unwrap();
        let f = Fourier::new(line.n, line.length);
        let diff = |eps: f64| {
            let g0 = bump(&line, eps, 3.0);
            let k0 = f.deriv(&g0, 1);
            let kap: Vec<f64> = k0.iter().map(|k| 1.0 + k).collect();
            let w = whitham_solve(&kap, &line, 5.0, &tab, 0.01).unwrap();
            let b = burgers_solve(&k0, &line, 5.0, &c, Boundary::Periodic).unwrap();
            w.iter().zip(&b).map(|(w, b)| (w - 1.0 - b).abs()).fold(0.0, f64::max)
        };
        let r = diff(0.2) / diff(0.1);
        assert!((3.3..4.7).contains(&r), "{r}");
        let g0 = bump(&line, 0.1, 3.0);
        let h = hj2_solve(&g0, &line, 5.0, &tab, 0.01).unwrap();
        let v = hj_solve(&g0, &line, 5.0, &c, Boundary::Periodic).unwrap();
        let e = h.iter().zip(&v.gamma).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(e < 0.01 * 0.1, "{e}");
        let fine = hj2_solve(&g0, &line, 5.0, &tab, 0.005).unwrap();
        assert!(fine.iter().zip(&h).all(|(a, b)| (a - b).abs() < 1e-9));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn heat_flow_does_not_expand_sup(amps in proptest::collection::vec(-1.0f64..1.0, 4), t in 0.1f64..20.0) {
            let line = Line::new(512, 64.0).unwrap();
            let w0: Vec<f64> = line.zeta().iter().map(|z| {
                amps.iter().enumerate().map(|(j, a)| a * (2.0 * PI * (j + 1) as f64 * z / 64.0).sin()).sum::<f64>()
            }).collect();
            let w = heat_solve(&w0, &line, t, 0.3, 0.7, Boundary::Periodic).unwrap();
            prop_assert!(spectral::sup(&w) <= spectral::sup(&w0) * (1.0 + 1e-12) + 1e-14);
        }

        #[test]
        fn comparison_principle(shift in 0.0f64..0.3, amp in 0.1f64..1.0, t in 0.5f64..10.0) {
            let line = Line::new(512, 80.0).unwrap();
            let lo = bump(&line, amp, 3.0);
            let hi: Vec<f64> = line.zeta().iter().zip(&lo).map(|(z, v)| v + shift * (-(z / 6.0).powi(2)).exp()).collect();
            let a = hj_solve(&lo, &line, t, &C, Boundary::Affine).unwrap();
            let b = hj_solve(&hi, &line, t, &C, Boundary::Affine).unwrap();
            prop_assert!(a.gamma.iter().zip(&b.gamma).all(|(x, y)| *x <= *y + 1e-12));
        }
    }
}
