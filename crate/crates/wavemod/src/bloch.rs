//! Bloch operators `L(ξ)` of a wave train, spectral certification, the critical eigenvalue
//! curve and the modulation coefficients `a`, `d`, `ν`.

use crate::error::{Error, Result};
use crate::linalg::{self, CMat};
use crate::model::RDSystem;
use crate::spectral::{self, Fourier};
use crate::wavetrain::{self, Dispersion, KDerivatives, SolverOptions, WaveProfile};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::path::Path;

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// Discretised `k²D(∂+iξ)² + ω(∂+iξ) + f'(φ₀)` on the profile grid.
#[derive(Debug, Clone)]
pub struct BlochOperator {
    pub n_comp: usize,
    pub n_grid: usize,
    k: f64,
    omega: f64,
    diffusion: Vec<f64>,
    jac: Vec<f64>,
    d1: Vec<f64>,
    d2: Vec<f64>,
}

impl BlochOperator {
    pub fn new(sys: &RDSystem, wave: &WaveProfile) -> Self {
        let f = Fourier::new(wave.n_grid, 1.0);
        Self {
            n_comp: sys.n,
            n_grid: wave.n_grid,
            k: wave.k,
            omega: wave.omega,
            diffusion: sys.diffusion.clone(),
            jac: sys.jac_field(&wave.phi),
            d1: f.deriv_matrix(1),
            d2: f.deriv_matrix(2),
        }
    }

    pub fn size(&self) -> usize {
        self.n_comp * self.n_grid
    }

    pub fn matrix(&self, xi: f64) -> CMat {
        let (n, m) = (self.n_comp, self.n_grid);
        let k2 = self.k * self.k;
        CMat::from_fn(n * m, n * m, |r, c| {
            let (p, i) = (r / m, r % m);
            let (q, j) = (c / m, c % m);
            let dpq = self.diffusion[p * n + q];
            let mut v = Complex64::new(0.0, 0.0);
            let delta = if i == j { 1.0 } else { 0.0 };
            let dxx = Complex64::new(self.d2[i * m + j] - xi * xi * delta, 2.0 * xi * self.d1[i * m + j]);
            v += k2 * dpq * dxx;
            if p == q {
                v += self.omega * Complex64::new(self.d1[i * m + j], xi * delta);
            }
            if i == j {
                v += self.jac[(p * n + q) * m + i];
            }
            v
        })
    }

    pub fn apply(&self, xi: f64, v: &[Complex64]) -> Vec<Complex64> {
        linalg::matvec(&self.matrix(xi), v)
    }
}

pub fn assemble_bloch(sys: &RDSystem, wave: &WaveProfile, xi: f64) -> CMat {
    BlochOperator::new(sys, wave).matrix(xi)
}

/// Full spectrum at `ξ`, sorted by decreasing real part.
pub fn spectrum(op: &BlochOperator, xi: f64) -> Result<Vec<Complex64>> {
    let mut ev = linalg::eigenvalues(&op.matrix(xi)).ok_or(Error::EigenFailure(xi))?;
    if ev.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::EigenFailure(xi));
    }
    ev.sort_by(|a, b| b.re.partial_cmp(&a.re).unwrap().then(a.im.partial_cmp(&b.im).unwrap()));
    Ok(ev)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct StabilityOptions {
    pub xi_count: usize,
    pub zero_radius: f64,
    pub slack: f64,
    /// Lower bound for `|⟨y, x⟩|` of unit left/right kernel vectors.
    pub simplicity_floor: f64,
}

impl Default for StabilityOptions {
    fn default() -> Self {
        Self { xi_count: 64, zero_radius: 1e-6, slack: 1e-10, simplicity_floor: 1e-3 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StabilityReport {
    pub k: f64,
    pub d1_holds: bool,
    pub d2_holds: bool,
    pub d3_holds: bool,
    /// Largest θ with `Re λ ≤ −θξ² + slack` on the grid (≤ 0 when D2 fails).
    pub d2_theta: f64,
    /// Frequency attaining the θ minimum; the failure witness when D2 fails.
    pub d2_witness: f64,
    pub spectral_margin: f64,
    pub lambda0: Complex64,
    pub kernel_count: usize,
    pub kernel_product: f64,
    pub grid_resolutions: (usize, usize),
    /// `(ξ, max Re σ(L(ξ)))` for the nonnegative half of the grid.
    pub envelope: Vec<(f64, f64)>,
}

impl StabilityReport {
    pub fn certified(&self) -> bool {
        self.d1_holds && self.d2_holds && self.d3_holds
    }
}

/// Uniform grid of `count` points on `[−π, π)`.
pub fn xi_grid(count: usize) -> Vec<f64> {
    (0..count).map(|j| -PI + 2.0 * PI * j as f64 / count as f64).collect()
}

pub fn stability_report(sys: &RDSystem, wave: &WaveProfile, opts: &StabilityOptions) -> Result<StabilityReport> {
    let op = BlochOperator::new(sys, wave);
    // the spectrum at −ξ is the conjugate of that at ξ
    let mut xs: Vec<f64> = xi_grid(opts.xi_count).into_iter().map(f64::abs).collect();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    xs.dedup_by(|a, b| (*a - *b).abs() < 1e-14);
    if xs[0] != 0.0 {
        xs.insert(0, 0.0);
    }
    let spectra: Vec<Result<Vec<Complex64>>> = xs.par_iter().map(|&xi| spectrum(&op, xi)).collect();
    let mut spectra_ok = Vec::with_capacity(xs.len());
    for s in spectra {
        spectra_ok.push(s?);
    }
    let s0 = &spectra_ok[0];
    let near: Vec<Complex64> = s0.iter().copied().filter(|z| z.norm() < opts.zero_radius).collect();
    let lambda0 = s0.iter().copied().min_by(|a, b| a.norm().partial_cmp(&b.norm()).unwrap()).unwrap();
    let kernel_product = if near.len() == 1 {
        let (_, x, y) = linalg::eigenpair_near(&op.matrix(0.0), lambda0, 3)?;
        y.iter().zip(&x).map(|(p, q)| p.conj() * q).sum::<Complex64>().norm()
    } else {
        0.0
    };
    let d3 = near.len() == 1 && kernel_product > opts.simplicity_floor;

    let mut d1 = true;
    let mut theta = f64::INFINITY;
    let mut witness = 0.0;
    let mut envelope = vec![];
    for (xi, s) in xs.iter().zip(&spectra_ok) {
        let rest: Vec<&Complex64> = if *xi == 0.0 {
            let mut skipped = false;
            s.iter()
                .filter(|z| {
                    if !skipped && **z == lambda0 {
                        skipped = true;
                        false
                    } else {
                        true
                    }
                })
                .collect()
        } else {
            s.iter().collect()
        };
        let max_re = rest.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
        envelope.push((*xi, s[0].re));
        if max_re > opts.slack {
            d1 = false;
        }
        if *xi > 0.0 {
            let th = (opts.slack - s[0].re) / (xi * xi);
            if th < theta {
                theta = th;
                witness = *xi;
            }
        }
    }
    let d2 = theta > 0.0 && d1;
    let margin = xs.iter().zip(&spectra_ok).map(|(xi, s)| {
        let m = if *xi == 0.0 { s.iter().filter(|z| **z != lambda0).map(|z| z.re).fold(f64::NEG_INFINITY, f64::max) } else { s[0].re };
        m + theta.max(0.0) * xi * xi
    });
    let spectral_margin = margin.fold(f64::NEG_INFINITY, f64::max);
    Ok(StabilityReport {
        k: wave.k,
        d1_holds: d1,
        d2_holds: d2,
        d3_holds: d3,
        d2_theta: theta,
        d2_witness: witness,
        spectral_margin,
        lambda0,
        kernel_count: near.len(),
        kernel_product,
        grid_resolutions: (opts.xi_count, wave.n_grid),
        envelope,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StabilityBoundary {
    pub ks: Vec<f64>,
    pub certified: Vec<bool>,
    /// Last certified and first non-certified wavenumber along the sweep.
    pub bracket: Option<(f64, f64)>,
}

/// Sweep `ks` (monotone) by continuation from `start` and locate the first loss of stability.
pub fn stability_boundary(
    sys: &RDSystem,
    start: &WaveProfile,
    ks: &[f64],
    opts: &StabilityOptions,
    solver: &SolverOptions,
) -> Result<StabilityBoundary> {
    let mut prev = start.clone();
    let mut certified = vec![];
    for &k in ks {
        let w = wavetrain::wave_at(sys, k, &prev, 1, solver)?;
        certified.push(stability_report(sys, &w, opts)?.certified());
        prev = w;
    }
    let bracket = (1..ks.len()).find(|&i| certified[i - 1] && !certified[i]).map(|i| (ks[i - 1], ks[i]));
    Ok(StabilityBoundary { ks: ks.to_vec(), certified, bracket })
}

/// Left kernel vector of `L(0)`, real and scaled by `⟨Φ̃₀, φ₀'⟩ = 1`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Kernel {
    pub adjoint: Vec<f64>,
    pub lambda0: Complex64,
    /// `‖Φ₀ − φ₀'‖∞ / ‖φ₀'‖∞` after normalising the computed right vector.
    pub alignment: f64,
}

pub fn kernel(sys: &RDSystem, wave: &WaveProfile) -> Result<Kernel> {
    let op = BlochOperator::new(sys, wave);
    let m = op.matrix(0.0);
    let ev = linalg::eigenvalues(&m).ok_or(Error::EigenFailure(0.0))?;
    let lam = ev.iter().copied().min_by(|a, b| a.norm().partial_cmp(&b.norm()).unwrap()).unwrap();
    let (lam, x, y) = linalg::eigenpair_near(&m, lam, 3)?;
    let n = wave.n_grid;
    let big = y.iter().copied().max_by(|a, b| a.norm().partial_cmp(&b.norm()).unwrap()).unwrap();
    let rot = big.conj() / big.norm();
    let yr: Vec<f64> = y.iter().map(|z| (z * rot).re).collect();
    let s = spectral::inner_real(&yr, &wave.dphi, n);
    if s.abs() < 1e-300 {
        return Err(Error::Hypothesis("adjoint kernel orthogonal to the translational mode".into()));
    }
    let adjoint: Vec<f64> = yr.iter().map(|v| v / s).collect();
    let ad_c = spectral::to_complex(&adjoint);
    let sx = spectral::inner_c(&ad_c, &x, n);
    let scale = spectral::sup(&wave.dphi);
    let alignment = x.iter().zip(&wave.dphi).map(|(z, d)| (z / sx - d).norm()).fold(0.0, f64::max) / scale;
    Ok(Kernel { adjoint, lambda0: lam, alignment })
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CurveOptions {
    /// `ξ₀` is the largest radius keeping the gap above this fraction of the gap at 0.
    pub gap_fraction: f64,
    pub inverse_iters: usize,
    /// Coefficient `g` in `⟨Φ̃₀, Φ_ξ⟩ = 1 + i k₀ ξ g`.
    pub gauge: f64,
}

impl Default for CurveOptions {
    fn default() -> Self {
        Self { gap_fraction: 0.1, inverse_iters: 3, gauge: 1.0 }
    }
}

/// Critical eigenpairs on a nonnegative grid `xis` (starting at 0); values at `−ξ` follow by
/// conjugation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectralCurve {
    pub k0: f64,
    pub xis: Vec<f64>,
    pub lambda_c: Vec<Complex64>,
    pub phi: Vec<Vec<Complex64>>,
    pub phi_adj: Vec<Vec<Complex64>>,
    /// Distance from `λ_c(ξ)` to the rest of `σ(L(ξ))`.
    pub gaps: Vec<f64>,
    pub xi0: f64,
    pub residuals: Vec<f64>,
    pub adjoint_residuals: Vec<f64>,
    pub adjoint0: Vec<f64>,
    pub alignment0: f64,
    pub n_grid: usize,
    pub n_comp: usize,
}

impl SpectralCurve {
    pub fn len(&self) -> usize {
        self.xis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xis.is_empty()
    }

    /// `(λ_c, Φ, Φ̃)` at `sign·ξ_j`.
    pub fn signed(&self, j: usize, negative: bool) -> (Complex64, Vec<Complex64>, Vec<Complex64>) {
        if negative {
            (
                self.lambda_c[j].conj(),
                self.phi[j].iter().map(|z| z.conj()).collect(),
                self.phi_adj[j].iter().map(|z| z.conj()).collect(),
            )
        } else {
            (self.lambda_c[j], self.phi[j].clone(), self.phi_adj[j].clone())
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["xi", "re_lambda", "im_lambda"])?;
        let mut rows: Vec<(f64, Complex64)> = vec![];
        for (x, l) in self.xis.iter().zip(&self.lambda_c).rev() {
            if *x > 0.0 {
                rows.push((-x, l.conj()));
            }
        }
        for (x, l) in self.xis.iter().zip(&self.lambda_c) {
            rows.push((*x, *l));
        }
        for (x, l) in rows {
            w.write_record([format!("{x:.17e}"), format!("{:.17e}", l.re), format!("{:.17e}", l.im)])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn critical_curve(sys: &RDSystem, wave: &WaveProfile, xis: &[f64], opts: &CurveOptions) -> Result<SpectralCurve> {
    if xis.is_empty() || xis[0] != 0.0 || xis.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter("curve grid must start at 0 and increase".into()));
    }
    let op = BlochOperator::new(sys, wave);
    let n = wave.n_grid;
    let ker = kernel(sys, wave)?;
    let ad0 = spectral::to_complex(&ker.adjoint);
    let spectra: Vec<Result<Vec<Complex64>>> = xis.par_iter().map(|&xi| spectrum(&op, xi)).collect();
    let mut lambdas: Vec<Complex64> = vec![];
    let mut phis = vec![];
    let mut adjs = vec![];
    let mut gaps = vec![];
    let mut res = vec![];
    let mut ares = vec![];
    for (j, (&xi, s)) in xis.iter().zip(spectra).enumerate() {
        let s = s?;
        let predict = match j {
            0 => Complex64::new(0.0, 0.0),
            1 => lambdas[0],
            _ => {
                let h = (xi - xis[j - 1]) / (xis[j - 1] - xis[j - 2]);
                lambdas[j - 1] + (lambdas[j - 1] - lambdas[j - 2]) * h
            }
        };
        let mut order: Vec<(f64, Complex64)> = s.iter().map(|z| ((z - predict).norm(), *z)).collect();
        order.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let (d_best, best) = order[0];
        let d_next = order.get(1).map(|o| o.0).unwrap_or(f64::INFINITY);
        if j == 0 && order.iter().filter(|o| o.0 < 1e-6).count() > 1 {
            return Err(Error::GapCollapse(order.iter().filter(|o| o.0 < 1e-6).count()));
        }
        if j > 0 && (d_next - d_best) <= 1e-12 * (1.0 + best.norm()) {
            return Err(Error::ContinuationAmbiguity(xi));
        }
        let gap = s.iter().filter(|z| **z != best).map(|z| (z - best).norm()).fold(f64::INFINITY, f64::min);
        let m = op.matrix(xi);
        let (lam, mut x, mut y) = linalg::eigenpair_near(&m, best, opts.inverse_iters)?;
        let target = Complex64::new(1.0, wave.k * xi * opts.gauge);
        let sx = spectral::inner_c(&ad0, &x, n);
        let sc = target / sx;
        for z in x.iter_mut() {
            *z *= sc;
        }
        let sy = spectral::inner_c(&y, &x, n);
        let c = Complex64::new(1.0, 0.0) / sy.conj();
        for z in y.iter_mut() {
            *z *= c;
        }
        let nx = spectral::sup_c(&x);
        let ny = spectral::sup_c(&y);
        let ax = linalg::matvec(&m, &x);
        let ay = linalg::adjoint_matvec(&m, &y);
        res.push(ax.iter().zip(&x).map(|(p, q)| (p - lam * q).norm()).fold(0.0, f64::max) / nx);
        ares.push(ay.iter().zip(&y).map(|(p, q)| (p - lam.conj() * q).norm()).fold(0.0, f64::max) / ny);
        lambdas.push(lam);
        phis.push(x);
        adjs.push(y);
        gaps.push(gap);
    }
    let floor = opts.gap_fraction * gaps[0];
    let mut xi0 = 0.0;
    for (x, g) in xis.iter().zip(&gaps) {
        if *g > floor {
            xi0 = *x;
        } else {
            break;
        }
    }
    Ok(SpectralCurve {
        k0: wave.k,
        xis: xis.to_vec(),
        lambda_c: lambdas,
        phi: phis,
        phi_adj: adjs,
        gaps,
        xi0,
        residuals: res,
        adjoint_residuals: ares,
        adjoint0: ker.adjoint,
        alignment0: ker.alignment,
        n_grid: n,
        n_comp: sys.n,
    })
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RouteValues {
    pub route_a: f64,
    pub route_b: f64,
    pub discrepancy: f64,
}

impl RouteValues {
    fn new(route_a: f64, route_b: f64) -> Self {
        let scale = route_a.abs().max(route_b.abs());
        let discrepancy = if scale > 0.0 { (route_a - route_b).abs() / scale } else { 0.0 };
        Self { route_a, route_b, discrepancy }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModulationCoefficients {
    pub k0: f64,
    pub omega0: f64,
    pub omega1: f64,
    pub omega2: f64,
    /// Route A from the fitted curve, route B from the dispersion relation.
    pub a: RouteValues,
    /// Route A from the fitted curve, route B from the gauge-invariant inner-product formula.
    pub d: RouteValues,
    /// `d` from `k₀²⟨Φ̃₀, Dφ₀' + 2k₀D∂_{ζk}φ⟩` alone.
    pub d_inner_only: f64,
    /// Route A `k₀²⟨Φ̃₀, f_p⟩`, route B `−½k₀²ω''`.
    pub nu: RouteValues,
    /// Five-point stencil value of `Im λ_c'(0)`.
    pub a_stencil: f64,
    pub f_p: Vec<f64>,
    pub a_h_fp: Vec<Complex64>,
    pub fit_window: f64,
}

impl ModulationCoefficients {
    pub fn a(&self) -> f64 {
        self.a.route_b
    }

    pub fn d(&self) -> f64 {
        self.d.route_a
    }

    pub fn nu(&self) -> f64 {
        self.nu.route_b
    }
}

/// Least-squares `(a, d)` from `Im λ = aξ + c₃ξ³` and `−Re λ = dξ² + c₄ξ⁴` on `0 < ξ ≤ window`.
pub fn fit_curve(curve: &SpectralCurve, window: f64) -> Result<(f64, f64)> {
    let pts: Vec<(f64, Complex64)> = curve
        .xis
        .iter()
        .zip(&curve.lambda_c)
        .filter(|(x, _)| **x > 0.0 && **x <= window * (1.0 + 1e-12))
        .map(|(x, l)| (*x, *l))
        .collect();
    if pts.len() < 3 {
        return Err(Error::InsufficientSamples { need: 3, have: pts.len() });
    }
    let lsq = |ys: Vec<(f64, f64)>| -> Result<f64> {
        // y = c0 + c1 x² with x = ξ
        let mut ata = [0.0; 4];
        let mut atb = [0.0; 2];
        for (x, y) in ys {
            let r = [1.0, x * x / (window * window)];
            for i in 0..2 {
                atb[i] += r[i] * y;
                for j in 0..2 {
                    ata[i * 2 + j] += r[i] * r[j];
                }
            }
        }
        Ok(linalg::solve_real(&ata, 2, &atb)?[0])
    };
    let a = lsq(pts.iter().map(|(x, l)| (*x, l.im / x)).collect())?;
    let d = lsq(pts.iter().map(|(x, l)| (*x, -l.re / (x * x))).collect())?;
    Ok((a, d))
}

/// `f_p = ½f''(φ₀)(∂_kφ, ∂_kφ) + ω'∂_{ζk}φ + D(φ₀'' + 2k₀∂_{ζζk}φ)`.
pub fn compute_fp(sys: &RDSystem, wave: &WaveProfile, kd: &KDerivatives, omega1: f64) -> Vec<f64> {
    let hess = sys.hess_field(&wave.phi, &kd.dk_phi, &kd.dk_phi);
    let inner: Vec<f64> = wave.d2phi.iter().zip(&kd.dzzk_phi).map(|(a, b)| a + 2.0 * wave.k * b).collect();
    let dd = sys.apply_d(&inner);
    (0..wave.phi.len()).map(|i| 0.5 * hess[i] + omega1 * kd.dzk_phi[i] + dd[i]).collect()
}

/// Fourier coefficients `c_j/(2πij)` (j ≠ 0, FFT order) of the zero-mean antiderivative of
/// `Φ̃₀*g`.
pub fn antiderivative_coefficients(g: &[f64], adjoint0: &[f64], n_comp: usize) -> Vec<Complex64> {
    let n = g.len() / n_comp;
    let f = Fourier::new(n, 1.0);
    let mut h = vec![0.0; n];
    for c in 0..n_comp {
        for i in 0..n {
            h[i] += adjoint0[c * n + i] * g[c * n + i];
        }
    }
    let mut c = f.forward(&h);
    for (j, cj) in c.iter_mut().enumerate() {
        let w = f.wavenumbers()[j];
        *cj = if j == 0 || f.is_nyquist(j) { Complex64::new(0.0, 0.0) } else { *cj / (I * w) / n as f64 };
    }
    c
}

/// `A_h(g)` sampled on the profile grid.
pub fn antiderivative_operator(g: &[f64], adjoint0: &[f64], n_comp: usize) -> Vec<f64> {
    let n = g.len() / n_comp;
    let c: Vec<Complex64> = antiderivative_coefficients(g, adjoint0, n_comp).into_iter().map(|z| z * n as f64).collect();
    Fourier::new(n, 1.0).inverse_real(c)
}

/// Both routes for `a`, `d`, `ν`. `curve` should resolve `0 < ξ ≤ fit_window`.
pub fn modulation_coefficients(
    sys: &RDSystem,
    wave: &WaveProfile,
    curve: &SpectralCurve,
    disp: &Dispersion,
    kd: &KDerivatives,
    fit_window: f64,
) -> Result<ModulationCoefficients> {
    let n = wave.n_grid;
    let k = wave.k;
    let ad = &curve.adjoint0;
    let (a_fit, d_fit) = fit_curve(curve, fit_window)?;
    let a_b = wave.omega - k * disp.omega1;
    let inner: Vec<f64> = wave.dphi.iter().zip(&kd.dzk_phi).map(|(p, q)| p + 2.0 * k * q).collect();
    let d_inner_only = k * k * spectral::inner_real(ad, &sys.apply_d(&inner), n);
    let d_b = d_inner_only + k * k * disp.omega1 * spectral::inner_real(ad, &kd.dk_phi, n);
    let f_p = compute_fp(sys, wave, kd, disp.omega1);
    let nu_fp = k * k * spectral::inner_real(ad, &f_p, n);
    let nu_b = -0.5 * k * k * disp.omega2;
    let a_h_fp = antiderivative_coefficients(&f_p, ad, sys.n);
    // five-point stencil from the first two positive grid points (assumed equispaced)
    let a_stencil = if curve.xis.len() >= 3 {
        let h = curve.xis[1];
        (16.0 * curve.lambda_c[1].im - 2.0 * curve.lambda_c[2].im) / (12.0 * h)
    } else {
        f64::NAN
    };
    Ok(ModulationCoefficients {
        k0: k,
        omega0: wave.omega,
        omega1: disp.omega1,
        omega2: disp.omega2,
        a: RouteValues::new(a_fit, a_b),
        d: RouteValues::new(d_fit, d_b),
        d_inner_only,
        nu: RouteValues::new(nu_fp, nu_b),
        a_stencil,
        f_p,
        a_h_fp,
        fit_window,
    })
}

/// Everything downstream modules need about one wave train.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WaveAnalysis {
    pub wave: WaveProfile,
    pub dispersion: Dispersion,
    pub derivatives: KDerivatives,
    pub coefficients: ModulationCoefficients,
    pub fit_curve: SpectralCurve,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AnalysisOptions {
    pub dk: f64,
    pub fit_window: f64,
    pub fit_points: usize,
    pub continuation: wavetrain::ContinuationOptions,
    pub curve: CurveOptions,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            dk: 1e-3,
            fit_window: 0.05,
            fit_points: 8,
            continuation: wavetrain::ContinuationOptions::default(),
            curve: CurveOptions::default(),
        }
    }
}

pub fn analyze(sys: &RDSystem, wave: &WaveProfile, opts: &AnalysisOptions) -> Result<WaveAnalysis> {
    let fam = wavetrain::continue_family(sys, wave, opts.dk, 2, &opts.continuation)?;
    if let Some((index, k)) = fam.failure {
        return Err(Error::ContinuationFailure { index, k });
    }
    let dispersion = wavetrain::dispersion_derivatives(&fam)?;
    let h = opts.fit_window / opts.fit_points as f64;
    let xis: Vec<f64> = (0..=opts.fit_points).map(|j| j as f64 * h).collect();
    let curve = critical_curve(sys, wave, &xis, &opts.curve)?;
    let derivatives = wavetrain::k_derivatives(&fam, &curve.adjoint0, opts.continuation.align_tol)?;
    let coefficients = modulation_coefficients(sys, wave, &curve, &dispersion, &derivatives, opts.fit_window)?;
    Ok(WaveAnalysis { wave: wave.clone(), dispersion, derivatives, coefficients, fit_curve: curve })
}

/// Route-A `(a, d)` at each wavenumber of a sweep, continuing the wave train along it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoefficientRow {
    pub k: f64,
    pub omega: f64,
    pub a: f64,
    pub d: f64,
}

/// `(ω, a, d)` along the family at the given wavenumbers, each wave seeded from the previous
/// one (order `ks` outward from the start wave).
pub fn coefficient_table(
    sys: &RDSystem,
    start: &WaveProfile,
    ks: &[f64],
    fit_window: f64,
    solver: &SolverOptions,
) -> Result<Vec<CoefficientRow>> {
    let mut prev = start.clone();
    let mut out = vec![];
    let xis: Vec<f64> = (0..=6).map(|j| j as f64 * fit_window / 6.0).collect();
    for &k in ks {
        let w = wavetrain::wave_at(sys, k, &prev, 1, solver)?;
        let c = critical_curve(sys, &w, &xis, &CurveOptions::default())?;
        let (a, d) = fit_curve(&c, fit_window)?;
        out.push(CoefficientRow { k, omega: w.omega, a, d });
        prev = w;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::preset;
    use crate::wavetrain::{initial_guess, wave_at, GuessKind};

    fn gl(k: f64) -> (RDSystem, WaveProfile) {
        let sys = preset("real-ginzburg-landau").unwrap();
        let g = initial_guess(&sys, GuessKind::Harmonic { amplitude: 0.9 }, &[0.0, 0.0], 32).unwrap();
        let w = wave_at(&sys, k, &g, 1, &SolverOptions::default()).unwrap();
        (sys, w)
    }

    #[test]
    fn translational_kernel_and_conjugate_symmetry() {
        let (sys, w) = gl(0.05);
        let op = BlochOperator::new(&sys, &w);
        let dp = spectral::to_complex(&w.dphi);
        assert!(spectral::sup_c(&op.apply(0.0, &dp)) < 1e-8);
        let mut a = spectrum(&op, 0.7).unwrap();
        let mut b: Vec<Complex64> = spectrum(&op, -0.7).unwrap().into_iter().map(|z| z.conj()).collect();
        let key = |z: &Complex64, w: &Complex64| (z.re, z.im).partial_cmp(&(w.re, w.im)).unwrap();
        a.sort_by(key);
        b.sort_by(key);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).norm() < 1e-10);
        }
    }

    #[test]
    fn ginzburg_landau_stability() {
        let (sys, w) = gl(0.05);
        let r = stability_report(&sys, &w, &StabilityOptions::default()).unwrap();
        assert!(r.certified(), "{r:?}");
        assert!(r.lambda0.norm() < 1e-8);
        let (sys, w) = gl(0.12);
        let r = stability_report(&sys, &w, &StabilityOptions::default()).unwrap();
        assert!(!r.d2_holds);
        assert!(r.d2_witness < 1.0);
    }

    #[test]
    fn ginzburg_landau_coefficients() {
        let (sys, w) = gl(0.05);
        let an = analyze(&sys, &w, &AnalysisOptions::default()).unwrap();
        let c = &an.coefficients;
        assert!(c.a.route_a.abs() < 1e-6 && c.a.route_b.abs() < 1e-6, "{:?}", c.a);
        assert!(c.nu.route_a.abs() < 1e-6 && c.nu.route_b.abs() < 1e-6, "{:?}", c.nu);
        assert!(c.d.route_a > 0.0 && c.d.discrepancy < 1e-3, "{:?}", c.d);
        assert!((an.derivatives.gauge_value - 1.0).abs() < 1e-12);
        // analytic family: q = 2πk, |φ| = √(1−q²), d_phys = (1−3q²)/(1−q²), d = k² d_phys
        let q = 2.0 * PI * 0.05;
        let d_exact = 0.05f64.powi(2) * (1.0 - 3.0 * q * q) / (1.0 - q * q);
        assert!((c.d.route_a - d_exact).abs() / d_exact < 1e-4, "{} vs {d_exact}", c.d.route_a);
    }

    #[test]
    fn curve_normalisation_and_kernel() {
        let (sys, w) = gl(0.05);
        let xis: Vec<f64> = (0..=6).map(|j| 0.05 * j as f64).collect();
        let c = critical_curve(&sys, &w, &xis, &CurveOptions::default()).unwrap();
        assert!(c.alignment0 < 1e-8);
        for j in 0..c.len() {
            let s = spectral::inner_c(&c.phi_adj[j], &c.phi[j], w.n_grid);
            assert!((s - 1.0).norm() < 1e-12);
            assert!(c.residuals[j] < 1e-8 && c.adjoint_residuals[j] < 1e-8);
        }
        let d0: Vec<f64> = c.phi[0].iter().zip(&w.dphi).map(|(a, b)| (a - b).norm()).collect();
        assert!(spectral::sup(&d0) < 1e-8);
        assert!(c.lambda_c[0].norm() < 1e-8);
    }

    #[test]
    fn antiderivative_identities() {
        let (_, w) = gl(0.05);
        let n = w.n_grid;
        let ad: Vec<f64> = w.dphi.iter().map(|v| v / spectral::inner_real(&w.dphi, &w.dphi, n)).collect();
        let g: Vec<f64> = (0..2 * n).map(|i| ((i * 13) % 7) as f64 / 7.0 - 0.4).collect();
        let ah = antiderivative_operator(&g, &ad, 2);
        let f = Fourier::new(n, 1.0);
        let dah = f.deriv(&ah, 1);
        let prod: Vec<f64> = (0..n).map(|i| ad[i] * g[i] + ad[n + i] * g[n + i]).collect();
        let mean = prod.iter().sum::<f64>() / n as f64;
        let cn = f.forward(&prod)[n / 2].re / n as f64;
        for i in 0..n {
            let nyq = cn * if i % 2 == 0 { 1.0 } else { -1.0 };
            assert!((dah[i] - (prod[i] - mean - nyq)).abs() < 1e-10);
        }
        let l2 = (prod.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
        assert!(spectral::sup(&ah) <= l2 / (2.0 * 3f64.sqrt()) + 1e-12);
        let constant: Vec<f64> = (0..2 * n).map(|i| if i < n { 1.0 } else { 0.0 }).collect();
        let flat = vec![1.0; 2 * n];
        assert!(spectral::sup(&antiderivative_operator(&constant, &flat, 2)) < 1e-14);
    }
}
