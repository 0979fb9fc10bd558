//! Wave-train profiles `k²Dφ'' + ωφ' + f(φ) = 0` on the unit circle, their continuation
//! in the wavenumber and the dispersion data of the family.

use crate::error::{Error, Result};
use crate::linalg::{self, CMat};
use crate::model::RDSystem;
use crate::spectral::{self, Fourier};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WaveProfile {
    pub k: f64,
    pub omega: f64,
    pub n_grid: usize,
    pub n_comp: usize,
    /// Stacked component blocks of length `n_grid`.
    pub phi: Vec<f64>,
    pub dphi: Vec<f64>,
    pub d2phi: Vec<f64>,
    pub d3phi: Vec<f64>,
    pub residual: f64,
    pub newton_history: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 40 }
    }
}

impl WaveProfile {
    pub fn from_samples(k: f64, omega: f64, n_comp: usize, phi: Vec<f64>) -> Self {
        let n_grid = phi.len() / n_comp;
        let f = Fourier::new(n_grid, 1.0);
        let d = |m| spectral::blockwise(&phi, n_comp, |x| f.deriv(x, m));
        let (dphi, d2phi, d3phi) = (d(1), d(2), d(3));
        Self { k, omega, n_grid, n_comp, phi, dphi, d2phi, d3phi, residual: f64::NAN, newton_history: vec![] }
    }

    pub fn component(&self, c: usize) -> &[f64] {
        &self.phi[c * self.n_grid..(c + 1) * self.n_grid]
    }

    pub fn zeta(&self) -> Vec<f64> {
        spectral::grid(self.n_grid, 1.0)
    }

    pub fn amplitude_range(&self) -> f64 {
        (0..self.n_comp)
            .map(|c| {
                let x = self.component(c);
                let (lo, hi) = x.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
                hi - lo
            })
            .fold(0.0, f64::max)
    }

    pub fn is_nonconstant(&self) -> bool {
        self.amplitude_range() > 1e-8
    }

    /// Band-limited resampling onto `m` points.
    pub fn resample(&self, m: usize) -> WaveProfile {
        let phi = resample_field(&self.phi, self.n_comp, m);
        let mut w = WaveProfile::from_samples(self.k, self.omega, self.n_comp, phi);
        w.residual = self.residual;
        w
    }

    /// The translate `φ(· + s)`.
    pub fn shifted(&self, s: f64) -> WaveProfile {
        let phi = shift_field(&self.phi, self.n_comp, s);
        let mut w = WaveProfile::from_samples(self.k, self.omega, self.n_comp, phi);
        w.residual = self.residual;
        w
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["zeta".to_string()];
        header.extend((1..=self.n_comp).map(|c| format!("phi{c}")));
        w.write_record(&header)?;
        for (i, z) in self.zeta().iter().enumerate() {
            let mut row = vec![format!("{z:.17e}")];
            row.extend((0..self.n_comp).map(|c| format!("{:.17e}", self.phi[c * self.n_grid + i])));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn sidecar(&self) -> serde_json::Value {
        serde_json::json!({ "k": self.k, "omega": self.omega, "N": self.n_grid, "residual": self.residual })
    }
}

pub fn resample_field(x: &[f64], n_comp: usize, m: usize) -> Vec<f64> {
    let n = x.len() / n_comp;
    let f = Fourier::new(n, 1.0);
    let g = Fourier::new(m, 1.0);
    let mut out = Vec::with_capacity(m * n_comp);
    for c in 0..n_comp {
        let cx = f.forward(&x[c * n..(c + 1) * n]);
        let mut cy = vec![Complex64::new(0.0, 0.0); m];
        let half = n.min(m) / 2;
        for j in 0..half {
            cy[j] = cx[j];
            if j > 0 {
                cy[m - j] = cx[n - j];
            }
        }
        if n.min(m) % 2 == 0 {
            // split or fold the Nyquist mode symmetrically
            let nyq = if n <= m { cx[n / 2] * 0.5 } else { (cx[half] + cx[n - half]) * 0.5 };
            if n < m {
                cy[half] = nyq;
                cy[m - half] = nyq;
            } else if n > m {
                cy[half] = nyq * 2.0;
            } else {
                cy[half] = cx[half];
            }
        }
        let scale = m as f64 / n as f64;
        for v in cy.iter_mut() {
            *v *= scale;
        }
        out.extend(g.inverse_real(cy));
    }
    out
}

/// `x(· + s)` for each periodic block.
pub fn shift_field(x: &[f64], n_comp: usize, s: f64) -> Vec<f64> {
    let n = x.len() / n_comp;
    let f = Fourier::new(n, 1.0);
    spectral::blockwise(x, n_comp, |b| {
        let mut c = f.forward(b);
        for (j, cj) in c.iter_mut().enumerate() {
            let kj = if f.is_nyquist(j) { 0.0 } else { f.wavenumbers()[j] };
            *cj *= Complex64::from_polar(1.0, kj * s);
        }
        if n % 2 == 0 {
            let j = n / 2;
            c[j] *= (f.wavenumbers()[j] * s).cos();
        }
        f.inverse_real(c)
    })
}

/// Shift `s` minimising `‖x(· + s) − reference‖`, and the remaining distance (sup norm).
pub fn align(x: &[f64], reference: &[f64], n_comp: usize) -> (f64, f64) {
    let n = x.len() / n_comp;
    let f = Fourier::new(n, 1.0);
    // coarse: cross-correlation of the first harmonics
    let mut corr = Complex64::new(0.0, 0.0);
    for c in 0..n_comp {
        let a = f.forward(&x[c * n..(c + 1) * n]);
        let b = f.forward(&reference[c * n..(c + 1) * n]);
        corr += b[1] * a[1].conj();
    }
    let mut s = -corr.arg() / (2.0 * PI);
    if corr.norm() == 0.0 {
        s = 0.0;
    }
    // scan a few candidates to avoid a wrong local branch, then Newton on the derivative
    let dist = |s: f64| {
        let y = shift_field(x, n_comp, s);
        y.iter().zip(reference).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
    };
    let mut best = (dist(s), s);
    for j in 1..16 {
        let c = s + j as f64 / 16.0;
        let d = dist(c);
        if d < best.0 {
            best = (d, c);
        }
    }
    s = best.1;
    for _ in 0..30 {
        let y = shift_field(x, n_comp, s);
        let dy = spectral::blockwise(&y, n_comp, |b| f.deriv(b, 1));
        let d2y = spectral::blockwise(&y, n_comp, |b| f.deriv(b, 2));
        let g: f64 = dy.iter().zip(y.iter().zip(reference)).map(|(d, (a, b))| d * (a - b)).sum();
        let h: f64 = d2y.iter().zip(y.iter().zip(reference)).map(|(d, (a, b))| d * (a - b)).sum::<f64>()
            + dy.iter().map(|d| d * d).sum::<f64>();
        if h <= 0.0 {
            break;
        }
        let step = g / h;
        s -= step;
        if step.abs() < 1e-15 {
            break;
        }
    }
    s -= s.round();
    let y = shift_field(x, n_comp, s);
    let d = y.iter().zip(reference).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    (s, d)
}

pub fn profile_residual(sys: &RDSystem, k: f64, omega: f64, phi: &[f64]) -> Vec<f64> {
    let n = sys.n;
    let npts = phi.len() / n;
    let f = Fourier::new(npts, 1.0);
    let d1 = spectral::blockwise(phi, n, |x| f.deriv(x, 1));
    let d2 = spectral::blockwise(phi, n, |x| f.deriv(x, 2));
    let dd2 = sys.apply_d(&d2);
    let r = sys.f_field(phi);
    (0..phi.len()).map(|i| k * k * dd2[i] + omega * d1[i] + r[i]).collect()
}

/// Newton iteration on `(φ, ω)` closed by `⟨φ_ref', φ − φ_ref⟩ = 0` with `φ_ref = guess`.
pub fn solve_wavetrain(sys: &RDSystem, k: f64, guess: &WaveProfile, opts: &SolverOptions) -> Result<WaveProfile> {
    solve_with_reference(sys, k, &guess.phi, guess.omega, &guess.phi, opts)
}

/// Newton iteration started at `(start, omega)` with the phase condition taken against `reference`.
pub fn solve_with_reference(
    sys: &RDSystem,
    k: f64,
    start: &[f64],
    omega: f64,
    reference: &[f64],
    opts: &SolverOptions,
) -> Result<WaveProfile> {
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidParameter("tolerance must be positive".into()));
    }
    let n = sys.n;
    if start.len() % n != 0 || start.len() != reference.len() || start.is_empty() {
        return Err(Error::DimensionMismatch { expected: reference.len(), got: start.len() });
    }
    let npts = start.len() / n;
    let f = Fourier::new(npts, 1.0);
    if !WaveProfile::from_samples(k, omega, n, start.to_vec()).is_nonconstant() {
        return Err(Error::ConstantCollapse);
    }
    let dref = spectral::blockwise(reference, n, |x| f.deriv(x, 1));
    let d1m = f.deriv_matrix(1);
    let d2m = f.deriv_matrix(2);
    let size = n * npts + 1;
    let mut phi = start.to_vec();
    let mut omega = omega;
    let mut history = Vec::new();
    for iter in 0..=opts.max_iter {
        let res = profile_residual(sys, k, omega, &phi);
        let diff: Vec<f64> = phi.iter().zip(reference).map(|(a, b)| a - b).collect();
        let phase = spectral::inner_real(&dref, &diff, npts);
        let rn = spectral::sup(&res).max(phase.abs());
        history.push(rn);
        let w = WaveProfile::from_samples(k, omega, n, phi.clone());
        if !w.is_nonconstant() {
            return Err(Error::ConstantCollapse);
        }
        if !rn.is_finite() {
            return Err(Error::NewtonDivergence { iterations: iter, residual: rn });
        }
        if rn < opts.tol {
            let mut out = w;
            out.residual = rn;
            out.newton_history = history;
            return Ok(out);
        }
        if iter == opts.max_iter {
            break;
        }
        let jac = sys.jac_field(&phi);
        let mut a = vec![0.0; size * size];
        for p in 0..n {
            for q in 0..n {
                let dpq = sys.d(p, q) * k * k;
                for i in 0..npts {
                    let row = (p * npts + i) * size + q * npts;
                    for j in 0..npts {
                        let mut v = dpq * d2m[i * npts + j];
                        if p == q {
                            v += omega * d1m[i * npts + j];
                        }
                        a[row + j] = v;
                    }
                    a[row + i] += jac[(p * n + q) * npts + i];
                }
            }
            for i in 0..npts {
                a[(p * npts + i) * size + size - 1] = w.dphi[p * npts + i];
                a[(size - 1) * size + p * npts + i] = dref[p * npts + i] / npts as f64;
            }
        }
        let mut rhs: Vec<f64> = res.iter().map(|v| -v).collect();
        rhs.push(-phase);
        let dx = match linalg::solve_real(&a, size, &rhs) {
            Ok(dx) => dx,
            Err(_) => return Err(Error::NewtonDivergence { iterations: iter, residual: rn }),
        };
        for i in 0..n * npts {
            phi[i] += dx[i];
        }
        omega += dx[size - 1];
    }
    Err(Error::NewtonDivergence { iterations: opts.max_iter, residual: *history.last().unwrap() })
}


/// Estimated convergence order from the last three residuals of a Newton history.
pub fn convergence_order(history: &[f64]) -> Option<f64> {
    let h: Vec<f64> = history.iter().copied().filter(|v| *v > 1e-14).collect();
    if h.len() < 3 {
        return None;
    }
    let (a, b, c) = (h[h.len() - 3], h[h.len() - 2], h[h.len() - 1]);
    Some((c / b).ln() / (b / a).ln())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum GuessKind {
    /// `u* + A·(first harmonic)` oriented by the linearisation at the equilibrium.
    Harmonic { amplitude: f64 },
    /// Relax the kinetics onto its limit cycle and sample one period.
    LimitCycle,
}

/// Initial profile at `k = 0` (limit cycle) or a harmonic ansatz.
pub fn initial_guess(sys: &RDSystem, kind: GuessKind, equilibrium: &[f64], n_grid: usize) -> Result<WaveProfile> {
    let n = sys.n;
    if equilibrium.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: equilibrium.len() });
    }
    let jac = sys.evaluate_jacobian(equilibrium)?;
    let jm = CMat::from_fn(n, n, |i, j| Complex64::new(jac[i * n + j], 0.0));
    let ev = linalg::eigenvalues(&jm).ok_or(Error::EigenFailure(0.0))?;
    let osc = ev.iter().copied().filter(|z| z.im > 1e-12).max_by(|a, b| a.re.partial_cmp(&b.re).unwrap());
    let zeta = spectral::grid(n_grid, 1.0);
    match kind {
        GuessKind::Harmonic { amplitude } => {
            let mut phi = vec![0.0; n * n_grid];
            let mut omega = 0.0;
            match osc {
                Some(mu) => {
                    let (_, x, _) = linalg::eigenpair_near(&jm, mu, 3)?;
                    let m = x.iter().map(|z| z.norm()).fold(0.0, f64::max);
                    omega = mu.im / (2.0 * PI);
                    for c in 0..n {
                        for (i, z) in zeta.iter().enumerate() {
                            let e = Complex64::from_polar(1.0, -2.0 * PI * z);
                            phi[c * n_grid + i] = equilibrium[c] + amplitude * (x[c] / m * e).re;
                        }
                    }
                }
                None => {
                    for (i, z) in zeta.iter().enumerate() {
                        phi[i] = equilibrium[0] + amplitude * (2.0 * PI * z).cos();
                        if n > 1 {
                            phi[n_grid + i] = equilibrium[1] + amplitude * (2.0 * PI * z).sin();
                        }
                    }
                }
            }
            Ok(WaveProfile::from_samples(0.0, omega, n, phi))
        }
        GuessKind::LimitCycle => {
            let mu = osc.ok_or_else(|| Error::InvalidParameter("equilibrium has no oscillatory mode".into()))?;
            let p0 = 2.0 * PI / mu.im;
            let dt = p0 / 400.0;
            let rhs = |u: &[f64]| sys.evaluate_reaction(u).unwrap();
            let rk4 = |u: &mut Vec<f64>, dt: f64| {
                let k1 = rhs(u);
                let t1: Vec<f64> = u.iter().zip(&k1).map(|(a, b)| a + 0.5 * dt * b).collect();
                let k2 = rhs(&t1);
                let t2: Vec<f64> = u.iter().zip(&k2).map(|(a, b)| a + 0.5 * dt * b).collect();
                let k3 = rhs(&t2);
                let t3: Vec<f64> = u.iter().zip(&k3).map(|(a, b)| a + dt * b).collect();
                let k4 = rhs(&t3);
                for i in 0..u.len() {
                    u[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
                }
            };
            let mut u: Vec<f64> = equilibrium.iter().map(|v| v + 0.1).collect();
            for _ in 0..(400 * 400) {
                rk4(&mut u, dt);
                if u.iter().any(|v| !v.is_finite() || v.abs() > 1e8) {
                    return Err(Error::BlowUp(0.0));
                }
            }
            // record several periods and locate upward crossings of the first component
            let level = equilibrium[0];
            let mut traj = vec![u.clone()];
            let steps = 400 * 12;
            for _ in 0..steps {
                rk4(&mut u, dt);
                traj.push(u.clone());
            }
            let mut crossings = vec![];
            for i in 1..traj.len() {
                let (a, b) = (traj[i - 1][0] - level, traj[i][0] - level);
                if a < 0.0 && b >= 0.0 {
                    crossings.push((i - 1) as f64 + a / (a - b));
                }
            }
            if crossings.len() < 3 {
                return Err(Error::InvalidParameter("no sustained oscillation found".into()));
            }
            let m = crossings.len();
            let period_steps = (crossings[m - 1] - crossings[0]) / (m - 1) as f64;
            let t0 = crossings[m - 1];
            let mut phi = vec![0.0; n * n_grid];
            for (i, z) in zeta.iter().enumerate() {
                let pos = t0 - z * period_steps;
                let j = pos.floor() as usize;
                let fr = pos - j as f64;
                for c in 0..n {
                    phi[c * n_grid + i] = (1.0 - fr) * traj[j][c] + fr * traj[j + 1][c];
                }
            }
            Ok(WaveProfile::from_samples(0.0, 1.0 / (period_steps * dt), n, phi))
        }
    }
}

/// Solve at `k`, continuing from the guess wavenumber in `steps` equal increments.
pub fn wave_at(sys: &RDSystem, k: f64, guess: &WaveProfile, steps: usize, opts: &SolverOptions) -> Result<WaveProfile> {
    let steps = steps.max(1);
    let mut cur = guess.clone();
    let k0 = guess.k;
    for s in 1..=steps {
        let ks = if steps == 1 { k } else { k0 + (k - k0) * s as f64 / steps as f64 };
        cur = solve_wavetrain(sys, ks, &cur, opts)?;
    }
    Ok(cur)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KDerivatives {
    pub raw_dk_phi: Vec<f64>,
    pub dk_phi: Vec<f64>,
    pub dzk_phi: Vec<f64>,
    pub dzzk_phi: Vec<f64>,
    pub dzzzk_phi: Vec<f64>,
    /// Multiple of φ₀' added to the raw derivative.
    pub gauge_shift: f64,
    /// `⟨Φ̃₀, ∂_kφ⟩` after correction.
    pub gauge_value: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WaveFamily {
    pub base: WaveProfile,
    pub dk: f64,
    pub half_count: usize,
    /// Samples ordered by `k₀ + (i − half_count)·dk`.
    pub samples: Vec<WaveProfile>,
    pub ks: Vec<f64>,
    pub omega_of_k: Vec<f64>,
    /// Index offset and wavenumber at which continuation failed, if it did.
    pub failure: Option<(isize, f64)>,
    pub derivatives: Option<KDerivatives>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ContinuationOptions {
    pub solver: SolverOptions,
    /// Largest sup-norm change allowed between neighbouring profiles.
    pub max_jump: f64,
    pub align_tol: f64,
}

impl Default for ContinuationOptions {
    fn default() -> Self {
        Self { solver: SolverOptions::default(), max_jump: 0.25, align_tol: 1e-6 }
    }
}

/// Profiles at `k₀ ± j·dk`, each seeded by its neighbour and phase-fixed against the base.
pub fn continue_family(sys: &RDSystem, base: &WaveProfile, dk: f64, half_count: usize, opts: &ContinuationOptions) -> Result<WaveFamily> {
    let h = half_count as isize;
    let mut up = vec![];
    let mut down = vec![];
    let mut failure = None;
    for (dir, store) in [(1isize, &mut up), (-1isize, &mut down)] {
        let mut prev = base.clone();
        for j in 1..=h {
            let k = base.k + (dir * j) as f64 * dk;
            // seed from the neighbour but phase-fix against the base profile
            let res = solve_with_reference(sys, k, &prev.phi, prev.omega, &base.phi, &opts.solver);
            match res {
                Ok(w) => {
                    let jump = w.phi.iter().zip(&prev.phi).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
                    if jump > opts.max_jump {
                        failure.get_or_insert((dir * j, k));
                        break;
                    }
                    prev = w.clone();
                    store.push(w);
                }
                Err(_) => {
                    failure.get_or_insert((dir * j, k));
                    break;
                }
            }
        }
    }
    let m = up.len().min(down.len());
    let mut samples: Vec<WaveProfile> = down[..m].iter().rev().cloned().collect();
    samples.push(base.clone());
    samples.extend(up[..m].iter().cloned());
    let ks: Vec<f64> = (0..samples.len()).map(|i| base.k + (i as f64 - m as f64) * dk).collect();
    let omega_of_k = samples.iter().map(|w| w.omega).collect();
    Ok(WaveFamily { base: base.clone(), dk, half_count: m, samples, ks, omega_of_k, failure, derivatives: None })
}


impl WaveFamily {
    /// Largest `|⟨φ₀', φ_j − φ₀⟩|` over the samples.
    pub fn alignment_defect(&self) -> f64 {
        let b = &self.base;
        self.samples
            .iter()
            .map(|w| {
                let diff: Vec<f64> = w.phi.iter().zip(&b.phi).map(|(x, y)| x - y).collect();
                spectral::inner_real(&b.dphi, &diff, b.n_grid).abs()
            })
            .fold(0.0, f64::max)
    }

    fn sample(&self, offset: isize) -> &WaveProfile {
        &self.samples[(self.half_count as isize + offset) as usize]
    }

    fn require(&self, h: usize) -> Result<()> {
        if self.half_count < h {
            return Err(Error::InsufficientSamples { need: 2 * h + 1, have: self.samples.len() });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Dispersion {
    pub omega: f64,
    pub omega1: f64,
    pub omega2: f64,
    /// Differences between the two stencil widths.
    pub err1: f64,
    pub err2: f64,
}

/// `ω'(k₀)` and `ω''(k₀)` by Richardson extrapolation of the ±h and ±2h central differences.
pub fn dispersion_derivatives(family: &WaveFamily) -> Result<Dispersion> {
    family.require(2)?;
    let h = family.dk;
    let w = |j: isize| family.sample(j).omega;
    let (c1h, c1h2) = ((w(1) - w(-1)) / (2.0 * h), (w(2) - w(-2)) / (4.0 * h));
    let (c2h, c2h2) = ((w(1) - 2.0 * w(0) + w(-1)) / (h * h), (w(2) - 2.0 * w(0) + w(-2)) / (4.0 * h * h));
    Ok(Dispersion {
        omega: w(0),
        omega1: (4.0 * c1h - c1h2) / 3.0,
        omega2: (4.0 * c2h - c2h2) / 3.0,
        err1: (c1h - c1h2).abs(),
        err2: (c2h - c2h2).abs(),
    })
}

/// Derivatives at `k0` from an arbitrary table `(k_i, ω_i)` by a local quartic fit on the five
/// nearest entries; the error estimate compares with a quadratic fit on the three nearest.
pub fn dispersion_from_table(ks: &[f64], omegas: &[f64], k0: f64) -> Result<Dispersion> {
    if ks.len() != omegas.len() {
        return Err(Error::DimensionMismatch { expected: ks.len(), got: omegas.len() });
    }
    if ks.len() < 5 {
        return Err(Error::InsufficientSamples { need: 5, have: ks.len() });
    }
    let mut idx: Vec<usize> = (0..ks.len()).collect();
    idx.sort_by(|&a, &b| (ks[a] - k0).abs().partial_cmp(&(ks[b] - k0).abs()).unwrap());
    let fit = |m: usize, deg: usize| -> Result<Vec<f64>> {
        let sel = &idx[..m];
        let scale = sel.iter().map(|&i| (ks[i] - k0).abs()).fold(0.0, f64::max).max(1e-300);
        let p = deg + 1;
        let mut ata = vec![0.0; p * p];
        let mut atb = vec![0.0; p];
        for &i in sel {
            let x = (ks[i] - k0) / scale;
            let pw: Vec<f64> = (0..p).map(|e| x.powi(e as i32)).collect();
            for r in 0..p {
                atb[r] += pw[r] * omegas[i];
                for c in 0..p {
                    ata[r * p + c] += pw[r] * pw[c];
                }
            }
        }
        let c = linalg::solve_real(&ata, p, &atb)?;
        Ok(c.iter().enumerate().map(|(e, v)| v / scale.powi(e as i32)).collect())
    };
    let q = fit(5, 4)?;
    let l = fit(3, 2)?;
    Ok(Dispersion {
        omega: q[0],
        omega1: q[1],
        omega2: 2.0 * q[2],
        err1: (q[1] - l[1]).abs(),
        err2: (2.0 * q[2] - 2.0 * l[2]).abs(),
    })
}

/// `∂_kφ` at the base wavenumber and its ζ-derivatives, normalised so that
/// `⟨Φ̃₀, ∂_kφ⟩ = 1` by adding a multiple of `φ₀'`. `adjoint` is the left kernel vector
/// at ξ = 0 normalised by `⟨Φ̃₀, φ₀'⟩ = 1`.
pub fn k_derivatives(family: &WaveFamily, adjoint: &[f64], align_tol: f64) -> Result<KDerivatives> {
    family.require(2)?;
    let defect = family.alignment_defect();
    if defect > align_tol {
        return Err(Error::Misaligned(defect));
    }
    let h = family.dk;
    let base = &family.base;
    let s = |j: isize| &family.sample(j).phi;
    let raw: Vec<f64> = (0..base.phi.len())
        .map(|i| {
            let a = (s(1)[i] - s(-1)[i]) / (2.0 * h);
            let b = (s(2)[i] - s(-2)[i]) / (4.0 * h);
            (4.0 * a - b) / 3.0
        })
        .collect();
    let n = base.n_grid;
    let c = 1.0 - spectral::inner_real(adjoint, &raw, n);
    let dk: Vec<f64> = raw.iter().zip(&base.dphi).map(|(r, d)| r + c * d).collect();
    let f = Fourier::new(n, 1.0);
    let d = |m| spectral::blockwise(&dk, base.n_comp, |x| f.deriv(x, m));
    let gauge_value = spectral::inner_real(adjoint, &dk, n);
    Ok(KDerivatives {
        dzk_phi: d(1),
        dzzk_phi: d(2),
        dzzzk_phi: d(3),
        raw_dk_phi: raw,
        dk_phi: dk,
        gauge_shift: c,
        gauge_value,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{preset, preset_equilibrium, preset_with, PresetParams};

    fn gl_wave(k: f64, n: usize) -> WaveProfile {
        let sys = preset("real-ginzburg-landau").unwrap();
        let g = initial_guess(&sys, GuessKind::Harmonic { amplitude: 0.9 }, &[0.0, 0.0], n).unwrap();
        wave_at(&sys, k, &g, 1, &SolverOptions::default()).unwrap()
    }

    #[test]
    fn ginzburg_landau_amplitude_and_frequency() {
        let k = 0.05;
        let w = gl_wave(k, 32);
        assert!(w.residual < 1e-10);
        let r = (1.0 - (2.0 * PI * k).powi(2)).sqrt();
        for i in 0..w.n_grid {
            let m = (w.phi[i].powi(2) + w.phi[w.n_grid + i].powi(2)).sqrt();
            assert!((m - r).abs() < 1e-8);
        }
        assert!(w.omega.abs() < 1e-9);
        let order = convergence_order(&w.newton_history).unwrap();
        assert!(order > 1.6, "order {order}");
    }

    #[test]
    fn constant_guess_collapses() {
        let sys = preset("real-ginzburg-landau").unwrap();
        let g = WaveProfile::from_samples(0.0, 0.0, 2, vec![0.0; 64]);
        assert_eq!(solve_wavetrain(&sys, 0.05, &g, &SolverOptions::default()).unwrap_err(), Error::ConstantCollapse);
    }

    #[test]
    fn resample_and_shift_roundtrip() {
        let w = gl_wave(0.05, 32);
        let up = w.resample(64).resample(32);
        assert!(up.phi.iter().zip(&w.phi).all(|(a, b)| (a - b).abs() < 1e-12));
        let s = w.shifted(0.137);
        let (shift, dist) = align(&s.phi, &w.phi, 2);
        assert!(dist < 1e-10);
        assert!((shift + 0.137).abs() < 1e-10 || (shift + 0.137 - shift.signum()).abs() < 1e-10);
    }

    #[test]
    fn brusselator_from_limit_cycle() {
        let p = PresetParams { b: 2.2, ..Default::default() };
        let sys = preset_with("brusselator", &p).unwrap();
        let eq = preset_equilibrium("brusselator", &p).unwrap();
        let g = initial_guess(&sys, GuessKind::LimitCycle, &eq, 64).unwrap();
        let w = wave_at(&sys, 0.02, &g, 4, &SolverOptions::default()).unwrap();
        assert!(w.residual < 1e-10);
        assert!((w.omega - 0.157362).abs() < 2e-5, "omega {}", w.omega);
        let fam = continue_family(&sys, &w, 1e-3, 2, &ContinuationOptions::default()).unwrap();
        let disp = dispersion_derivatives(&fam).unwrap();
        assert!((disp.omega1 - 0.034841).abs() < 1e-4, "{disp:?}");
        assert!((disp.omega2 - 1.26877).abs() < 1e-2, "{disp:?}");
        let tab = dispersion_from_table(&fam.ks, &fam.omega_of_k, w.k).unwrap();
        assert!((tab.omega1 - disp.omega1).abs() < 1e-8);
        assert!((tab.omega2 - disp.omega2).abs() < 1e-5);
    }

    #[test]
    fn table_derivatives_of_polynomial() {
        let ks: Vec<f64> = (0..7).map(|i| 0.1 + 0.01 * i as f64).collect();
        let om: Vec<f64> = ks.iter().map(|k| 1.0 + 2.0 * k - 3.0 * k * k + k.powi(3)).collect();
        let d = dispersion_from_table(&ks, &om, 0.13).unwrap();
        assert!((d.omega1 - (2.0 - 6.0 * 0.13 + 3.0 * 0.13 * 0.13)).abs() < 1e-9);
        assert!((d.omega2 - (-6.0 + 6.0 * 0.13)).abs() < 1e-7);
    }
}
