//! Full reaction-diffusion simulations around a wave train: perturbed initial data, time
//! integration in the co-moving frame, extraction of the phase modulation `γ(ζ,t)`, measured
//! decay rates, and the comparisons with the Hamilton-Jacobi prediction.

use crate::bloch::WaveAnalysis;
use crate::error::{Error, Result};
use crate::fit::{self, SlopeFit};
use crate::model::RDSystem;
use crate::phase_dynamics::{erf_paper, hj_solve, Boundary, HjCoefficients, Line};
use crate::spectral::{self, Fourier};
use crate::stepper::Etdrk4;
use crate::wavetrain::{resample_field, shift_field};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::path::Path;

/// `periods` unit cells with `per_period` samples each, on `ζ_i = −L/2 + i/M`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Domain {
    pub periods: usize,
    pub per_period: usize,
}

impl Domain {
    pub fn new(periods: usize, per_period: usize) -> Result<Self> {
        if periods < 2 || per_period < 8 || per_period % 2 != 0 {
            return Err(Error::InvalidParameter("domain needs >= 2 periods and an even per-period count >= 8".into()));
        }
        Ok(Self { periods, per_period })
    }

    pub fn npts(&self) -> usize {
        self.periods * self.per_period
    }

    pub fn length(&self) -> f64 {
        self.periods as f64
    }

    pub fn h(&self) -> f64 {
        1.0 / self.per_period as f64
    }

    pub fn zeta(&self) -> Vec<f64> {
        self.line().zeta()
    }

    pub fn line(&self) -> Line {
        Line { n: self.npts(), length: self.length() }
    }

    pub fn fourier(&self) -> Fourier {
        Fourier::new(self.npts(), self.length())
    }

    /// Repeat a unit-cell field (stacked blocks, any resolution) over the domain.
    pub fn tile(&self, cell: &[f64], n_comp: usize) -> Vec<f64> {
        let m = self.per_period;
        let mut r = resample_field(cell, n_comp, m);
        let offset = (-0.5 * self.length()).rem_euclid(1.0);
        if offset != 0.0 {
            r = shift_field(&r, n_comp, offset);
        }
        let n = self.npts();
        let mut out = vec![0.0; n_comp * n];
        for c in 0..n_comp {
            for i in 0..n {
                out[c * n + i] = r[c * m + i % m];
            }
        }
        out
    }
}

fn deriv_stacked(f: &Fourier, x: &[f64], n_comp: usize, order: u32) -> Vec<f64> {
    spectral::blockwise(x, n_comp, |b| f.deriv(b, order))
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

const TAYLOR_ORDER: usize = 24;

/// Evaluation of a band-limited periodic field off the grid by Taylor expansion about the
/// nearest grid point, with spectrally computed derivatives.
#[derive(Debug, Clone)]
struct Taylor {
    n: usize,
    h: f64,
    x0: f64,
    derivs: Vec<Vec<f64>>,
    scale: Vec<f64>,
}

impl Taylor {
    fn new(x: &[f64], n_comp: usize, f: &Fourier, x0: f64) -> Self {
        let n = x.len() / n_comp;
        let derivs: Vec<Vec<f64>> =
            (0..=TAYLOR_ORDER as u32 + 2).map(|m| if m == 0 { x.to_vec() } else { deriv_stacked(f, x, n_comp, m) }).collect();
        let scale = derivs.iter().map(|d| spectral::sup(d)).collect();
        Self { n, h: f.period() / n as f64, x0, derivs, scale }
    }

    /// Grid index and Taylor weights `r^m/m!` for the point `x`, truncated once the terms
    /// fall below round-off for every derivative order up to `extra`.
    fn weights(&self, x: f64, extra: usize) -> (usize, Vec<f64>) {
        let s = (x - self.x0) / self.h;
        let q = s.round();
        let r = (s - q) * self.h;
        let idx = (q as i64).rem_euclid(self.n as i64) as usize;
        let mut w = vec![1.0];
        let base = self.scale[0].max(1e-300);
        for m in 1..=TAYLOR_ORDER {
            let next = w[m - 1] * r / m as f64;
            let big = (0..=extra).map(|e| self.scale[m + e]).fold(0.0, f64::max);
            if r == 0.0 || next.abs() * big < 1e-17 * base.max(self.scale[extra]) {
                break;
            }
            w.push(next);
        }
        (idx, w)
    }

    fn eval(&self, idx: usize, w: &[f64], comp: usize, deriv: usize) -> f64 {
        let k = comp * self.n + idx;
        w.iter().enumerate().map(|(m, c)| c * self.derivs[m + deriv][k]).sum()
    }

    fn at(&self, x: f64, comp: usize, deriv: usize) -> f64 {
        let (i, w) = self.weights(x, deriv);
        self.eval(i, &w, comp, deriv)
    }
}

/// Wave-train data sampled on a simulation domain.
#[derive(Debug, Clone)]
pub struct WaveData {
    pub domain: Domain,
    pub n_comp: usize,
    pub k0: f64,
    pub omega0: f64,
    /// `ω'(k₀)`.
    pub omega1: f64,
    pub coeffs: HjCoefficients,
    pub phi: Vec<f64>,
    pub dphi: Vec<f64>,
    pub d2phi: Vec<f64>,
    pub dk_phi: Vec<f64>,
    pub dzk_phi: Vec<f64>,
    pub adjoint: Vec<f64>,
    pub f_p: Vec<f64>,
    jac0: Vec<f64>,
    fourier: Fourier,
    phi_t: Taylor,
    dk_t: Taylor,
}

impl WaveData {
    pub fn new(sys: &RDSystem, an: &WaveAnalysis, domain: Domain) -> Result<Self> {
        let w = &an.wave;
        let n = w.n_comp;
        let tile = |x: &[f64]| domain.tile(x, n);
        let f = domain.fourier();
        let phi = tile(&w.phi);
        let dk_phi = tile(&an.derivatives.dk_phi);
        let x0 = -0.5 * domain.length();
        let c = &an.coefficients;
        Ok(Self {
            domain,
            n_comp: n,
            k0: w.k,
            omega0: w.omega,
            omega1: an.dispersion.omega1,
            coeffs: HjCoefficients { a: c.a(), d: c.d(), nu: c.nu() },
            dphi: deriv_stacked(&f, &phi, n, 1),
            d2phi: deriv_stacked(&f, &phi, n, 2),
            dzk_phi: deriv_stacked(&f, &dk_phi, n, 1),
            adjoint: tile(&an.fit_curve.adjoint0),
            f_p: tile(&c.f_p),
            jac0: sys.jac_field(&phi),
            phi_t: Taylor::new(&phi, n, &f, x0),
            dk_t: Taylor::new(&dk_phi, n, &f, x0),
            phi,
            dk_phi,
            fourier: f,
        })
    }

    fn npts(&self) -> usize {
        self.domain.npts()
    }

    /// `φ₀(ζ_i + p_i) + k₀q_i∂_kφ(ζ_i + p_i)` for each grid point: the wave train with local
    /// phase `p` and relative wavenumber offset `q`, to first order in `q`.
    fn modulated(&self, p: &[f64], q: Option<&[f64]>) -> Vec<f64> {
        let n = self.npts();
        let z = self.domain.zeta();
        let mut out = vec![0.0; self.n_comp * n];
        for i in 0..n {
            let (idx, w) = self.phi_t.weights(z[i] + p[i], 0);
            for c in 0..self.n_comp {
                out[c * n + i] = self.phi_t.eval(idx, &w, c, 0);
                if let Some(q) = q {
                    out[c * n + i] += self.k0 * q[i] * self.dk_t.eval(idx, &w, c, 0);
                }
            }
        }
        out
    }

    fn jac_apply(&self, v: &[f64]) -> Vec<f64> {
        let (n, m) = (self.n_comp, self.npts());
        let mut out = vec![0.0; v.len()];
        for a in 0..n {
            for b in 0..n {
                let e = &self.jac0[(a * n + b) * m..(a * n + b + 1) * m];
                for p in 0..m {
                    out[a * m + p] += e[p] * v[b * m + p];
                }
            }
        }
        out
    }
}

/// `max_{j ≤ 2} ‖∂_ζ^j v‖∞`.
pub fn w2_norm(v: &[f64], n_comp: usize, domain: &Domain) -> f64 {
    let f = domain.fourier();
    (0..=2u32).map(|j| if j == 0 { spectral::sup(v) } else { spectral::sup(&deriv_stacked(&f, v, n_comp, j)) }).fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PerturbationKind {
    PhaseFront,
    WavenumberModulated,
    AdditiveRandom,
    AdditiveCustom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerturbationSpec {
    pub kind: PerturbationKind,
    /// Target `E₀ = ‖v₀‖_{W^{2,∞}}`; the shape is rescaled to reach it. `None` keeps the
    /// plateaus (or the unit-sup additive field) as given.
    pub amplitude: Option<f64>,
    pub gamma_minus: f64,
    pub gamma_plus: f64,
    /// Interface scale `w` of the ramps `erf((ζ − ζ_f)/w)`; 0 selects `√d`.
    pub width: f64,
    pub seed: u64,
    /// Gaussian smoothing length of the random field.
    pub smoothing: f64,
    pub custom: Option<Vec<f64>>,
}

impl Default for PerturbationSpec {
    fn default() -> Self {
        Self {
            kind: PerturbationKind::PhaseFront,
            amplitude: None,
            gamma_minus: 0.0,
            gamma_plus: 1e-3,
            width: 0.0,
            seed: 0,
            smoothing: 1.0,
            custom: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InitialData {
    pub u0: Vec<f64>,
    pub v0: Vec<f64>,
    pub gamma0: Vec<f64>,
    pub e0: f64,
}

/// Periodic plateau profile: `γ₋` outside, `γ₊` on `|ζ| < L/4`, joined by two ramps.
pub fn plateau_phase(domain: &Domain, gamma_minus: f64, gamma_plus: f64, width: f64) -> Vec<f64> {
    let q = domain.length() / 4.0;
    domain
        .zeta()
        .iter()
        .map(|&z| gamma_minus + (gamma_plus - gamma_minus) * (erf_paper((z + q) / width) - erf_paper((z - q) / width)))
        .collect()
}

fn random_field(domain: &Domain, n_comp: usize, seed: u64, smoothing: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = domain.npts();
    let f = domain.fourier();
    let raw: Vec<f64> = (0..n_comp * n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let v = spectral::blockwise(&raw, n_comp, |b| {
        let mut c = f.forward(b);
        for (j, z) in c.iter_mut().enumerate() {
            let k = f.wavenumbers()[j];
            *z *= (-0.5 * (k * smoothing).powi(2)).exp();
        }
        f.inverse_real(c)
    });
    let s = spectral::sup(&v);
    v.iter().map(|x| x / s).collect()
}

pub fn build_initial_data(wd: &WaveData, spec: &PerturbationSpec, gate: f64) -> Result<InitialData> {
    let dom = wd.domain;
    let n = dom.npts();
    let width = if spec.width > 0.0 { spec.width } else { wd.coeffs.d.sqrt() };
    let additive: Option<Vec<f64>> = match spec.kind {
        PerturbationKind::AdditiveRandom => Some(random_field(&dom, wd.n_comp, spec.seed, spec.smoothing)),
        PerturbationKind::AdditiveCustom => {
            let c = spec.custom.clone().ok_or_else(|| Error::InvalidParameter("additive-custom needs custom samples".into()))?;
            if c.len() != wd.n_comp * n {
                return Err(Error::DimensionMismatch { expected: wd.n_comp * n, got: c.len() });
            }
            Some(c)
        }
        _ => None,
    };
    let make = |s: f64| -> InitialData {
        if let Some(shape) = &additive {
            let v0: Vec<f64> = shape.iter().map(|x| s * x).collect();
            let u0 = wd.phi.iter().zip(&v0).map(|(a, b)| a + b).collect();
            let e0 = w2_norm(&v0, wd.n_comp, &dom);
            return InitialData { u0, v0, gamma0: vec![0.0; n], e0 };
        }
        let gamma0 = plateau_phase(&dom, s * spec.gamma_minus, s * spec.gamma_plus, width);
        let u0 = if spec.kind == PerturbationKind::WavenumberModulated {
            let q = wd.fourier.deriv(&gamma0, 1);
            wd.modulated(&gamma0, Some(&q))
        } else {
            wd.modulated(&gamma0, None)
        };
        let v0: Vec<f64> = u0.iter().zip(&wd.phi).map(|(a, b)| a - b).collect();
        let e0 = w2_norm(&v0, wd.n_comp, &dom);
        InitialData { u0, v0, gamma0, e0 }
    };
    let data = match spec.amplitude {
        None => make(1.0),
        Some(e) if !(e >= 0.0) => return Err(Error::InvalidParameter(format!("amplitude must be non-negative, got {e}"))),
        Some(e) if e == 0.0 => make(0.0),
        Some(e) => {
            let mut s = 1.0;
            let mut d = make(s);
            if !(d.e0 > 0.0) {
                return Err(Error::InvalidParameter("perturbation shape is zero; cannot reach the amplitude".into()));
            }
            for _ in 0..40 {
                s *= e / d.e0;
                d = make(s);
                if ((d.e0 - e) / e).abs() < 1e-12 {
                    break;
                }
            }
            d
        }
    };
    if data.e0 > gate {
        return Err(Error::SmallnessGate { e0: data.e0, gate });
    }
    Ok(data)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimOptions {
    pub t_end: f64,
    pub dt: f64,
    /// First snapshot time and ratio of the geometric schedule.
    pub t_first: f64,
    pub ratio: f64,
    /// Each snapshot `t` is bracketed by `t ± pair_offset` (at least one step) for time
    /// derivatives. Keep `|a|·pair_offset` well below the width of the phase structures.
    pub pair_offset: f64,
    /// Horizon of the step-halving check; 0 disables it.
    pub halving_until: f64,
    /// Blow-up threshold relative to `max(1, ‖u₀‖∞)`.
    pub blow_up_cap: f64,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self { t_end: 200.0, dt: 0.01, t_first: 0.5, ratio: 1.25, pair_offset: 0.005, halving_until: 5.0, blow_up_cap: 1e3 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trajectory {
    pub domain: Domain,
    pub n_comp: usize,
    pub k0: f64,
    pub omega0: f64,
    pub times: Vec<f64>,
    pub snapshots: Vec<Vec<f64>>,
    /// Indices `(t − h, t, t + h)` of each reporting time.
    pub centers: Vec<[usize; 3]>,
    pub dt: f64,
    pub scheme: String,
    pub halving_time: f64,
    /// Sup difference at `halving_time` between runs with `dt` and `dt/2`.
    pub halving_error: f64,
    pub blow_up: bool,
}

fn integrate(st: &Etdrk4, sys: &RDSystem, u: &mut Vec<f64>, steps: usize, cap: f64, t_start: f64) -> Result<()> {
    let nonlin = |x: &[f64]| sys.f_field(x);
    for s in 0..steps {
        st.step(u, &nonlin);
        if s % 64 == 63 || s + 1 == steps {
            let m = spectral::sup(u);
            if !m.is_finite() || m > cap {
                return Err(Error::BlowUp(t_start + (s + 1) as f64 * st.dt));
            }
        }
    }
    Ok(())
}

/// Explicit-reaction stability bound: `dt·max‖f'(u₀)‖` must stay inside the ETDRK4 region.
fn check_time_step(sys: &RDSystem, u0: &[f64], dt: f64) -> Result<()> {
    let n = sys.n;
    let m = u0.len() / n;
    let jac = sys.jac_field(u0);
    let mut rho: f64 = 0.0;
    for p in 0..m {
        for a in 0..n {
            let row: f64 = (0..n).map(|b| jac[(a * n + b) * m + p].abs()).sum();
            rho = rho.max(row);
        }
    }
    if rho * dt > 2.5 {
        return Err(Error::InvalidParameter(format!("time step {dt} too large for the explicit reaction (|f'| up to {rho:.3e})")));
    }
    Ok(())
}

pub fn simulate(sys: &RDSystem, wd: &WaveData, u0: &[f64], opts: &SimOptions) -> Result<Trajectory> {
    let dom = wd.domain;
    let n = dom.npts();
    if u0.len() != wd.n_comp * n {
        return Err(Error::DimensionMismatch { expected: wd.n_comp * n, got: u0.len() });
    }
    if !(opts.t_end > 0.0) || !(opts.ratio > 1.0) || !(opts.t_first > 0.0) || !(opts.pair_offset > 0.0) {
        return Err(Error::InvalidParameter("simulation schedule needs positive times and ratio > 1".into()));
    }
    check_time_step(sys, u0, opts.dt)?;
    let dt = opts.dt;
    let steps_of = |t: f64| (t / dt).round().max(0.0) as usize;
    let mut targets: Vec<usize> = vec![0];
    let mut centers = vec![];
    for t in fit::geometric_times(opts.t_first, opts.ratio, opts.t_end) {
        let c = steps_of(t);
        let h = steps_of(opts.pair_offset).max(1);
        if c < h || c <= *targets.last().unwrap() {
            continue;
        }
        let base = targets.len();
        let minus = c - h;
        if minus > *targets.last().unwrap() {
            targets.extend([minus, c, c + h]);
            centers.push([base, base + 1, base + 2]);
        } else if minus == *targets.last().unwrap() {
            targets.extend([c, c + h]);
            centers.push([base - 1, base, base + 1]);
        }
    }
    let cap = opts.blow_up_cap * spectral::sup(u0).max(1.0);
    let st = Etdrk4::new(&sys.diffusion, wd.n_comp, wd.k0, wd.omega0, n, dom.length(), dt)?;
    let mut u = u0.to_vec();
    let mut snapshots = vec![u.clone()];
    let mut done = 0;
    for &s in &targets[1..] {
        integrate(&st, sys, &mut u, s - done, cap, done as f64 * dt)?;
        done = s;
        snapshots.push(u.clone());
    }
    let (mut halving_time, mut halving_error) = (0.0, 0.0);
    if opts.halving_until > 0.0 {
        let s = steps_of(opts.halving_until.min(opts.t_end)).max(1);
        let fine = Etdrk4::new(&sys.diffusion, wd.n_comp, wd.k0, wd.omega0, n, dom.length(), dt / 2.0)?;
        let (mut a, mut b) = (u0.to_vec(), u0.to_vec());
        integrate(&st, sys, &mut a, s, cap, 0.0)?;
        integrate(&fine, sys, &mut b, 2 * s, cap, 0.0)?;
        halving_time = s as f64 * dt;
        halving_error = sup_diff(&a, &b);
    }
    Ok(Trajectory {
        domain: dom,
        n_comp: wd.n_comp,
        k0: wd.k0,
        omega0: wd.omega0,
        times: targets.iter().map(|&s| s as f64 * dt).collect(),
        snapshots,
        centers,
        dt,
        scheme: "etdrk4: exact linear part, explicit reaction".into(),
        halving_time,
        halving_error,
        blow_up: false,
    })
}

impl Trajectory {
    /// One CSV per snapshot (`zeta, u0, u1, …`) and a JSON manifest.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let z = self.domain.zeta();
        let n = self.domain.npts();
        let mut files = vec![];
        for (s, u) in self.snapshots.iter().enumerate() {
            let name = format!("snapshot_{s:04}.csv");
            let mut w = csv::Writer::from_path(dir.join(&name))?;
            let mut head = vec!["zeta".to_string()];
            head.extend((0..self.n_comp).map(|c| format!("u{c}")));
            w.write_record(&head)?;
            for i in 0..n {
                let mut row = vec![format!("{:.17e}", z[i])];
                row.extend((0..self.n_comp).map(|c| format!("{:.17e}", u[c * n + i])));
                w.write_record(&row)?;
            }
            w.flush()?;
            files.push(name);
        }
        let manifest = serde_json::json!({
            "domain": self.domain,
            "n_comp": self.n_comp,
            "k0": self.k0,
            "omega0": self.omega0,
            "times": self.times,
            "centers": self.centers,
            "files": files,
            "dt": self.dt,
            "scheme": self.scheme,
            "halving_time": self.halving_time,
            "halving_error": self.halving_error,
            "blow_up": self.blow_up,
        });
        std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)?;
        let get = |k: &str| m.get(k).cloned().ok_or_else(|| Error::Io(format!("manifest lacks {k}")));
        let domain: Domain = serde_json::from_value(get("domain")?)?;
        let n_comp: usize = serde_json::from_value(get("n_comp")?)?;
        let files: Vec<String> = serde_json::from_value(get("files")?)?;
        let n = domain.npts();
        let mut snapshots = vec![];
        for f in &files {
            let mut r = csv::Reader::from_path(dir.join(f))?;
            let mut u = vec![0.0; n_comp * n];
            for (i, rec) in r.records().enumerate() {
                let rec = rec?;
                for c in 0..n_comp {
                    u[c * n + i] = rec[c + 1].parse().map_err(|e| Error::Io(format!("{f}: {e}")))?;
                }
            }
            snapshots.push(u);
        }
        Ok(Self {
            domain,
            n_comp,
            k0: serde_json::from_value(get("k0")?)?,
            omega0: serde_json::from_value(get("omega0")?)?,
            times: serde_json::from_value(get("times")?)?,
            snapshots,
            centers: serde_json::from_value(get("centers")?)?,
            dt: serde_json::from_value(get("dt")?)?,
            scheme: serde_json::from_value(get("scheme")?)?,
            halving_time: serde_json::from_value(get("halving_time")?)?,
            halving_error: serde_json::from_value(get("halving_error")?)?,
            blow_up: serde_json::from_value(get("blow_up")?)?,
        })
    }
}

/// Averaging window of the phase extraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Window {
    /// No averaging; suitable when the profile curve is traversed at constant speed.
    Pointwise,
    /// Trapezoidal average over exactly one period.
    Period,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractOptions {
    pub window: Window,
    pub tol: f64,
    pub max_iter: usize,
    /// Shift `γ` so that the windowed `Φ̃₀`-projection of `v` equals `k₀γ_ζ`, matching the
    /// gauge of `∂_kφ`.
    pub align_gauge: bool,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        Self { window: Window::Period, tol: 1e-13, max_iter: 30, align_gauge: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormRow {
    pub t: f64,
    pub unmodulated: f64,
    pub modulated: f64,
    pub wavenumber_corrected: f64,
    pub gamma: f64,
    pub gamma_z: f64,
    pub gamma_zz: f64,
    pub gamma_t: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhaseDiagnostics {
    pub domain: Domain,
    pub times: Vec<f64>,
    pub gamma: Vec<Vec<f64>>,
    pub gamma_z: Vec<Vec<f64>>,
    pub gamma_zz: Vec<Vec<f64>>,
    pub gamma_t: Vec<Vec<f64>>,
    pub norms: Vec<NormRow>,
    /// `γ` extracted from the initial snapshot.
    pub initial_gamma: Vec<f64>,
    /// Largest fraction of points at which Newton refinement did not converge.
    pub newton_failures: f64,
}

impl PhaseDiagnostics {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.norms {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Index of the reporting time closest to `t`.
    pub fn index_near(&self, t: f64) -> usize {
        let mut best = 0;
        for (i, s) in self.times.iter().enumerate() {
            if (s - t).abs() < (self.times[best] - t).abs() {
                best = i;
            }
        }
        best
    }
}

/// Running trapezoidal average over one period (`M + 1` points, half weights at the ends).
fn period_average(x: &[f64], m: usize) -> Vec<f64> {
    let n = x.len();
    let half = m / 2;
    let mut out = vec![0.0; n];
    let mut s: f64 = (0..=2 * half).map(|j| x[(j + n - half) % n]).sum::<f64>();
    for i in 0..n {
        let lo = x[(i + n - half) % n];
        let hi = x[(i + half) % n];
        out[i] = (s - 0.5 * (lo + hi)) / m as f64;
        s += x[(i + half + 1) % n] - lo;
    }
    out
}

struct Extractor<'a> {
    wd: &'a WaveData,
    opts: ExtractOptions,
    zeta: Vec<f64>,
    /// First Fourier coefficient of each component of `φ₀`.
    harmonic: Vec<Complex64>,
}

impl<'a> Extractor<'a> {
    fn new(wd: &'a WaveData, opts: ExtractOptions) -> Self {
        let n = wd.npts();
        let m = wd.domain.per_period;
        let zeta = wd.domain.zeta();
        let harmonic = (0..wd.n_comp)
            .map(|c| (0..m).map(|j| wd.phi[c * n + j] * Complex64::from_polar(1.0, -2.0 * PI * zeta[j])).sum::<Complex64>() / m as f64)
            .collect();
        Self { wd, opts, zeta, harmonic }
    }

    fn coarse(&self, u: &[f64]) -> Result<Vec<f64>> {
        let n = self.wd.npts();
        let m = self.wd.domain.per_period;
        let mut re = vec![0.0; n];
        let mut im = vec![0.0; n];
        for c in 0..self.wd.n_comp {
            let w = self.harmonic[c].conj();
            for i in 0..n {
                let z = w * u[c * n + i] * Complex64::from_polar(1.0, -2.0 * PI * self.zeta[i]);
                re[i] += z.re;
                im[i] += z.im;
            }
        }
        let (re, im) = (period_average(&re, m), period_average(&im, m));
        let mut g: Vec<f64> = (0..n).map(|i| im[i].atan2(re[i]) / (2.0 * PI)).collect();
        for i in 1..n {
            let jump = g[i] - g[i - 1];
            let wrapped = jump - jump.round();
            if wrapped.abs() > 0.25 {
                return Err(Error::Extraction(format!("phase jump {wrapped:.3} between neighbours at zeta = {:.4}", self.zeta[i])));
            }
            g[i] = g[i - 1] + wrapped;
        }
        let winding = g[n - 1] - g[0];
        if (winding - winding.round()).abs() < 0.25 && winding.round() != 0.0 {
            return Err(Error::Extraction(format!("phase winds {} times around the domain", winding.round())));
        }
        Ok(g)
    }

    fn newton(&self, ut: &Taylor, i: usize, mut g: f64) -> (f64, bool) {
        let wd = self.wd;
        let n = wd.npts();
        let m = wd.domain.per_period;
        let window: Vec<(usize, f64)> = match self.opts.window {
            Window::Pointwise => vec![(i, 1.0)],
            Window::Period => (0..=m)
                .map(|j| {
                    let w = if j == 0 || j == m { 0.5 } else { 1.0 };
                    ((i + n + j - m / 2) % n, w / m as f64)
                })
                .collect(),
        };
        for _ in 0..self.opts.max_iter {
            let s = g / wd.domain.h();
            let q = s.round();
            let (_, w) = ut.weights(self.zeta[0] - g + q * wd.domain.h(), 2);
            let (mut f1, mut f2) = (0.0, 0.0);
            for &(j, wt) in &window {
                let idx = (j as i64 - q as i64).rem_euclid(n as i64) as usize;
                for c in 0..wd.n_comp {
                    let u0 = ut.eval(idx, &w, c, 0);
                    let u1 = ut.eval(idx, &w, c, 1);
                    let u2 = ut.eval(idx, &w, c, 2);
                    let r = u0 - wd.phi[c * n + j];
                    f1 -= wt * u1 * r;
                    f2 += wt * (u1 * u1 + u2 * r);
                }
            }
            if !(f2 > 0.0) {
                return (g, false);
            }
            let step = f1 / f2;
            g -= step;
            if step.abs() < self.opts.tol {
                return (g, true);
            }
        }
        (g, false)
    }

    /// `u(ζ_i − γ_i) − φ₀(ζ_i)`.
    fn modulated_perturbation(&self, ut: &Taylor, gamma: &[f64]) -> Vec<f64> {
        let wd = self.wd;
        let n = wd.npts();
        let mut v = vec![0.0; wd.n_comp * n];
        for i in 0..n {
            let (idx, w) = ut.weights(self.zeta[i] - gamma[i], 0);
            for c in 0..wd.n_comp {
                v[c * n + i] = ut.eval(idx, &w, c, 0) - wd.phi[c * n + i];
            }
        }
        v
    }

    fn align(&self, ut: &Taylor, gamma: &mut [f64]) -> Result<()> {
        let wd = self.wd;
        let n = wd.npts();
        let f = &wd.fourier;
        let sym = f.symbol(1);
        // symbol of the windowed projection linearised about a slowly varying shift
        let window: Vec<f64> = match self.opts.window {
            Window::Pointwise => vec![1.0; n],
            Window::Period => {
                let mut e = vec![0.0; n];
                e[0] = 1.0;
                f.forward(&period_average(&e, wd.domain.per_period)).iter().map(|z| z.re).collect()
            }
        };
        for _ in 0..self.opts.max_iter {
            let v = self.modulated_perturbation(ut, gamma);
            let mut q: Vec<f64> = (0..n).map(|i| (0..wd.n_comp).map(|c| wd.adjoint[c * n + i] * v[c * n + i]).sum()).collect();
            if self.opts.window == Window::Period {
                q = period_average(&q, wd.domain.per_period);
            }
            let gz = f.deriv(gamma, 1);
            let r: Vec<f64> = (0..n).map(|i| q[i] - wd.k0 * gz[i]).collect();
            let mut c = f.forward(&r);
            for (j, z) in c.iter_mut().enumerate() {
                let d = window[j] + wd.k0 * sym[j];
                *z = if d.norm() > 1e-12 { *z / d } else { Complex64::new(0.0, 0.0) };
            }
            let delta = f.inverse_real(c);
            for (g, d) in gamma.iter_mut().zip(&delta) {
                *g += d;
            }
            if spectral::sup(&delta) < self.opts.tol.max(1e-15) {
                return Ok(());
            }
        }
        Err(Error::Extraction("gauge alignment did not converge".into()))
    }

    fn extract(&self, u: &[f64], reference: Option<&[f64]>) -> Result<(Vec<f64>, f64)> {
        let wd = self.wd;
        let n = wd.npts();
        let ut = Taylor::new(u, wd.n_comp, &wd.fourier, self.zeta[0]);
        let coarse = self.coarse(u)?;
        let mut failures = 0;
        let mut gamma: Vec<f64> = (0..n)
            .map(|i| {
                let (g, ok) = self.newton(&ut, i, coarse[i]);
                if !ok {
                    failures += 1;
                }
                g
            })
            .collect();
        let frac = failures as f64 / n as f64;
        if frac > 0.01 {
            return Err(Error::Extraction(format!("Newton refinement failed at {:.2}% of points", 100.0 * frac)));
        }
        if self.opts.align_gauge {
            self.align(&ut, &mut gamma)?;
        }
        if gamma.iter().any(|g| !g.is_finite()) {
            return Err(Error::Extraction("non-finite phase".into()));
        }
        let target = reference.map(|r| r.iter().zip(&gamma).map(|(a, b)| a - b).sum::<f64>() / n as f64).unwrap_or_else(|| -gamma.iter().sum::<f64>() / n as f64);
        let shift = target.round();
        for g in gamma.iter_mut() {
            *g += shift;
        }
        Ok((gamma, frac))
    }
}

/// Extract `γ` on every snapshot (branch fixed by `gamma0` at `t = 0`, then by continuity in
/// time), its derivatives at the reporting times, and the norm series.
pub fn extract_phase(traj: &Trajectory, wd: &WaveData, gamma0: Option<&[f64]>, opts: &ExtractOptions) -> Result<PhaseDiagnostics> {
    if traj.domain != wd.domain {
        return Err(Error::InvalidParameter("trajectory and wave data use different domains".into()));
    }
    let ex = Extractor::new(wd, *opts);
    let n = wd.npts();
    let f = &wd.fourier;
    let mut gammas: Vec<Vec<f64>> = Vec::with_capacity(traj.snapshots.len());
    let mut worst: f64 = 0.0;
    for u in &traj.snapshots {
        let reference = gammas.last().map(|g| g.as_slice()).or(gamma0);
        let (g, frac) = ex.extract(u, reference)?;
        worst = worst.max(frac);
        gammas.push(g);
    }
    let mut out = PhaseDiagnostics {
        domain: wd.domain,
        times: vec![],
        gamma: vec![],
        gamma_z: vec![],
        gamma_zz: vec![],
        gamma_t: vec![],
        norms: vec![],
        initial_gamma: gammas[0].clone(),
        newton_failures: worst,
    };
    for &[m, c, p] in &traj.centers {
        let t = traj.times[c];
        let g = gammas[c].clone();
        let gz = f.deriv(&g, 1);
        let gzz = f.deriv(&g, 2);
        if spectral::sup(&gz) >= 1.0 {
            return Err(Error::Extraction(format!("|gamma_z| reached 1 at t = {t}")));
        }
        let gt: Vec<f64> = (0..n).map(|i| (gammas[p][i] - gammas[m][i]) / (traj.times[p] - traj.times[m])).collect();
        let u = &traj.snapshots[c];
        let ut = Taylor::new(u, wd.n_comp, f, ex.zeta[0]);
        let v = ex.modulated_perturbation(&ut, &g);
        let corrected: Vec<f64> = (0..wd.n_comp * n).map(|k| v[k] - wd.k0 * gz[k % n] * wd.dk_phi[k]).collect();
        out.norms.push(NormRow {
            t,
            unmodulated: sup_diff(u, &wd.phi),
            modulated: spectral::sup(&v),
            wavenumber_corrected: spectral::sup(&corrected),
            gamma: spectral::sup(&g),
            gamma_z: spectral::sup(&gz),
            gamma_zz: spectral::sup(&gzz),
            gamma_t: spectral::sup(&gt),
        });
        out.times.push(t);
        out.gamma.push(g);
        out.gamma_z.push(gz);
        out.gamma_zz.push(gzz);
        out.gamma_t.push(gt);
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecayFit {
    pub name: String,
    pub bare: SlopeFit,
    pub log_corrected: SlopeFit,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecayReport {
    pub t_min: f64,
    pub t_max: f64,
    pub fits: Vec<DecayFit>,
}

impl DecayReport {
    pub fn get(&self, name: &str) -> Option<&DecayFit> {
        self.fits.iter().find(|f| f.name == name)
    }
}

pub const NORM_NAMES: [&str; 7] = ["unmodulated", "modulated", "wavenumber_corrected", "gamma", "gamma_z", "gamma_zz", "gamma_t"];

fn norm_value(r: &NormRow, name: &str) -> f64 {
    match name {
        "unmodulated" => r.unmodulated,
        "modulated" => r.modulated,
        "wavenumber_corrected" => r.wavenumber_corrected,
        "gamma" => r.gamma,
        "gamma_z" => r.gamma_z,
        "gamma_zz" => r.gamma_zz,
        _ => r.gamma_t,
    }
}

/// Bare and log-corrected log-log fits of every norm series over `[t_min, t_max]`.
pub fn measure_decay(diag: &PhaseDiagnostics, t_min: f64, t_max: f64) -> Result<DecayReport> {
    if !(t_max >= 10.0 * t_min) {
        return Err(Error::Fit(format!("fit window [{t_min}, {t_max}] is shorter than one decade")));
    }
    let t: Vec<f64> = diag.norms.iter().map(|r| r.t).collect();
    let mut fits = vec![];
    for name in NORM_NAMES {
        let y: Vec<f64> = diag.norms.iter().map(|r| norm_value(r, name)).collect();
        fits.push(DecayFit {
            name: name.to_string(),
            bare: fit::power_fit(&t, &y, t_min, t_max)?,
            log_corrected: fit::log_corrected_fit(&t, &y, t_min, t_max)?,
        });
    }
    Ok(DecayReport { t_min, t_max, fits })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HjComparison {
    pub times: Vec<f64>,
    /// `‖γ − γ̆‖∞` and `‖∂_ζ(γ − γ̆)‖∞`.
    pub err0: Vec<f64>,
    pub err1: Vec<f64>,
    pub ratio: Vec<f64>,
}

impl HjComparison {
    /// Whether `‖γ − γ̆‖/‖γ‖` decreases along the sampled times in `[t_lo, t_hi]`.
    pub fn ratio_decreasing(&self, t_lo: f64, t_hi: f64) -> bool {
        let r: Vec<f64> = self.times.iter().zip(&self.ratio).filter(|(t, _)| **t >= t_lo && **t <= t_hi).map(|(_, r)| *r).collect();
        r.windows(2).all(|w| w[1] <= w[0])
    }

    pub fn value_near(&self, t: f64) -> (f64, f64) {
        let mut best = 0;
        for (i, s) in self.times.iter().enumerate() {
            if (s - t).abs() < (self.times[best] - t).abs() {
                best = i;
            }
        }
        (self.err0[best], self.err1[best])
    }
}

/// `Φ̃₀*v₀` pointwise.
pub fn hj_initial_phase(wd: &WaveData, v0: &[f64]) -> Vec<f64> {
    let n = wd.npts();
    (0..n).map(|i| (0..wd.n_comp).map(|c| wd.adjoint[c * n + i] * v0[c * n + i]).sum()).collect()
}

pub fn compare_to_hj(diag: &PhaseDiagnostics, v0: &[f64], wd: &WaveData) -> Result<HjComparison> {
    let g0 = hj_initial_phase(wd, v0);
    let line = wd.domain.line();
    let mut out = HjComparison { times: vec![], err0: vec![], err1: vec![], ratio: vec![] };
    for (k, &t) in diag.times.iter().enumerate() {
        let hj = hj_solve(&g0, &line, t, &wd.coeffs, Boundary::Periodic)?;
        let e0 = sup_diff(&diag.gamma[k], &hj.gamma);
        let e1 = sup_diff(&diag.gamma_z[k], &hj.gamma_z);
        let norm = spectral::sup(&diag.gamma[k]);
        out.times.push(t);
        out.err0.push(e0);
        out.err1.push(e1);
        out.ratio.push(if norm > 0.0 { e0 / norm } else { 0.0 });
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InverseMap {
    pub psi_inv: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
    pub contraction: f64,
}

/// `ψ_t⁻¹` for `ψ_t(ζ) = ζ − γ(ζ)` by the fixed-point iteration `ζ_{m+1} = ζ + γ(ζ_m)`.
pub fn invert_phase_map(gamma: &[f64], domain: &Domain) -> Result<InverseMap> {
    let n = domain.npts();
    if gamma.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: gamma.len() });
    }
    let f = domain.fourier();
    let contraction = spectral::sup(&f.deriv(gamma, 1));
    if contraction >= 1.0 {
        return Err(Error::Contraction(contraction));
    }
    let z = domain.zeta();
    let gt = Taylor::new(gamma, 1, &f, z[0]);
    let mut x: Vec<f64> = z.iter().zip(gamma).map(|(a, b)| a + b).collect();
    let mut iterations = 0;
    for it in 1..=200 {
        let next: Vec<f64> = (0..n).map(|i| z[i] + gt.at(x[i], 0, 0)).collect();
        let change = sup_diff(&next, &x);
        x = next;
        iterations = it;
        if change < 1e-14 * (1.0 + spectral::sup(gamma)) {
            break;
        }
    }
    let residual = (0..n).map(|i| (x[i] - z[i] - gt.at(x[i], 0, 0)).abs()).fold(0.0, f64::max);
    Ok(InverseMap { psi_inv: x, residual, iterations, contraction })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorollaryRow {
    pub t: f64,
    pub residual: f64,
    /// `sup|ψ⁻¹ − ζ − γ(1 + γ_ζ)|` and its bound `(‖γ_ζ‖² + ½‖γ_ζζ‖‖γ‖)‖γ‖`.
    pub defect1: f64,
    pub bound1: f64,
    /// `sup|γ_ζ(ψ⁻¹) − γ_ζ|` and its bound `‖γ_ζζ‖‖γ‖`.
    pub defect2: f64,
    pub bound2: f64,
    /// `‖u − φ₀(· + γ)‖∞`.
    pub plain: f64,
    /// `‖u − φ(· + γ(1 + γ_ζ); k₀(1 + γ_ζ))‖∞`.
    pub corrected: f64,
    /// Whether both defect inequalities hold at every grid point.
    pub pointwise_ok: bool,
}

pub fn corollary_check(traj: &Trajectory, diag: &PhaseDiagnostics, wd: &WaveData) -> Result<Vec<CorollaryRow>> {
    let dom = wd.domain;
    let n = dom.npts();
    let z = dom.zeta();
    let mut rows = vec![];
    for (k, &[_, c, _]) in traj.centers.iter().enumerate() {
        let g = &diag.gamma[k];
        let gz = &diag.gamma_z[k];
        let inv = invert_phase_map(g, &dom)?;
        let (ng, ngz, ngzz) = (spectral::sup(g), spectral::sup(gz), spectral::sup(&diag.gamma_zz[k]));
        let bound1 = (ngz * ngz + 0.5 * ngzz * ng) * ng;
        let bound2 = ngzz * ng;
        let gzt = Taylor::new(gz, 1, &wd.fourier, z[0]);
        let tol = |b: f64| b * (1.0 + 1e-9) + 1e-14;
        let (mut defect1, mut defect2, mut ok) = (0.0f64, 0.0f64, true);
        for i in 0..n {
            let d1 = (inv.psi_inv[i] - z[i] - g[i] * (1.0 + gz[i])).abs();
            let d2 = (gzt.at(inv.psi_inv[i], 0, 0) - gz[i]).abs();
            ok &= d1 <= tol(bound1) && d2 <= tol(bound2);
            defect1 = defect1.max(d1);
            defect2 = defect2.max(d2);
        }
        let u = &traj.snapshots[c];
        let plain = sup_diff(u, &wd.modulated(g, None));
        let p: Vec<f64> = (0..n).map(|i| g[i] * (1.0 + gz[i])).collect();
        let corrected = sup_diff(u, &wd.modulated(&p, Some(gz)));
        rows.push(CorollaryRow { t: traj.times[c], residual: inv.residual, defect1, bound1, defect2, bound2, plain, corrected, pointwise_ok: ok });
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NonlinearityKind {
    Q,
    R,
    S,
    Qp,
    Rp,
    Sp,
}

/// Modulation fields on the simulation domain; derivatives are spectral.
#[derive(Debug, Clone)]
pub struct ModulationFields {
    pub v: Vec<f64>,
    pub gamma: Vec<f64>,
    pub gamma_z: Vec<f64>,
    pub gamma_zz: Vec<f64>,
    pub gamma_zzz: Vec<f64>,
    pub gamma_t: Vec<f64>,
}

impl ModulationFields {
    pub fn new(wd: &WaveData, v: Vec<f64>, gamma: Vec<f64>, gamma_t: Vec<f64>) -> Result<Self> {
        let n = wd.npts();
        if v.len() != wd.n_comp * n || gamma.len() != n || gamma_t.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: gamma.len() });
        }
        let f = &wd.fourier;
        Ok(Self { gamma_z: f.deriv(&gamma, 1), gamma_zz: f.deriv(&gamma, 2), gamma_zzz: f.deriv(&gamma, 3), v, gamma, gamma_t })
    }
}

fn pointwise(n_comp: usize, x: &[f64], s: &[f64]) -> Vec<f64> {
    let n = s.len();
    (0..n_comp * n).map(|k| x[k] * s[k % n]).collect()
}

fn add_scaled(acc: &mut [f64], x: &[f64], c: f64) {
    for (a, b) in acc.iter_mut().zip(x) {
        *a += c * b;
    }
}

pub fn nonlinearity_eval(kind: NonlinearityKind, sys: &RDSystem, wd: &WaveData, m: &ModulationFields) -> Result<Vec<f64>> {
    let n = wd.npts();
    let nc = wd.n_comp;
    let g = &m.gamma_z;
    if spectral::sup(g) > 0.5 {
        return Err(Error::InvalidParameter("nonlinearity needs |gamma_z| <= 1/2".into()));
    }
    let k2 = wd.k0 * wd.k0;
    let gp = &m.gamma_zz;
    let inv: Vec<f64> = g.iter().map(|x| 1.0 / (1.0 - x)).collect();
    let sq: Vec<f64> = g.iter().map(|x| x * x).collect();
    let sq_inv: Vec<f64> = (0..n).map(|i| sq[i] * inv[i]).collect();
    let f3 = || {
        let up: Vec<f64> = wd.phi.iter().zip(&m.v).map(|(a, b)| a + b).collect();
        let fu = sys.f_field(&up);
        let f0 = sys.f_field(&wd.phi);
        let jv = wd.jac_apply(&m.v);
        (0..fu.len()).map(|k| fu[k] - f0[k] - jv[k]).collect::<Vec<f64>>()
    };
    let z = || -> Vec<f64> { (0..nc * n).map(|k| m.v[k] - wd.k0 * wd.dk_phi[k] * g[k % n]).collect() };
    // k₀²/(1−g)·D(gᵖφ₀' − g'v − gg'v/(1−g))
    let diffusive = |power: i32| {
        let inner: Vec<f64> = (0..nc * n).map(|k| {
            let i = k % n;
            g[i].powi(power) * wd.dphi[k] - gp[i] * m.v[k] - g[i] * gp[i] * inv[i] * m.v[k]
        }).collect();
        let d = sys.apply_d(&inner);
        (0..nc * n).map(|k| k2 * inv[k % n] * d[k]).collect::<Vec<f64>>()
    };
    let s_like = |w: &[f64]| {
        let inner: Vec<f64> = (0..nc * n).map(|k| 2.0 * g[k % n] * w[k] + sq_inv[k % n] * m.v[k]).collect();
        sys.apply_d(&inner).iter().map(|x| k2 * x).collect::<Vec<f64>>()
    };
    Ok(match kind {
        NonlinearityKind::Q => {
            let one_minus: Vec<f64> = g.iter().map(|x| 1.0 - x).collect();
            pointwise(nc, &f3(), &one_minus)
        }
        NonlinearityKind::R => {
            let mut r = diffusive(2);
            let c: Vec<f64> = (0..n).map(|i| -m.gamma_t[i] + wd.omega0 * g[i]).collect();
            add_scaled(&mut r, &pointwise(nc, &m.v, &c), 1.0);
            r
        }
        NonlinearityKind::S => s_like(&m.v),
        NonlinearityKind::Qp => {
            let f3 = f3();
            let z = z();
            let mut q: Vec<f64> = (0..nc * n).map(|k| f3[k] * (1.0 - g[k % n])).collect();
            add_scaled(&mut q, &sys.hess_field(&wd.phi, &m.v, &m.v), -0.5);
            add_scaled(&mut q, &sys.hess_field(&wd.phi, &z, &z), 0.5);
            add_scaled(&mut q, &pointwise(nc, &sys.hess_field(&wd.phi, &z, &wd.dk_phi), g), wd.k0);
            let ggp: Vec<f64> = (0..n).map(|i| g[i] * gp[i]).collect();
            add_scaled(&mut q, &pointwise(nc, &wd.dk_phi, &ggp), 2.0 * k2 * wd.omega1);
            let lin: Vec<f64> = (0..nc * n)
                .map(|k| {
                    let i = k % n;
                    ggp[i] * (wd.dphi[k] + 4.0 * wd.k0 * wd.dzk_phi[k])
                        + 2.0 * wd.k0 * (gp[i] * gp[i] + g[i] * m.gamma_zzz[i]) * wd.dk_phi[k]
                })
                .collect();
            add_scaled(&mut q, &sys.apply_d(&lin), 2.0 * k2);
            q
        }
        NonlinearityKind::Rp => {
            let a = wd.omega0 - wd.k0 * wd.omega1;
            let mut r = diffusive(3);
            let tilde: Vec<f64> = (0..n).map(|i| -(m.gamma_t[i] - a * g[i])).collect();
            add_scaled(&mut r, &pointwise(nc, &m.v, &tilde), 1.0);
            add_scaled(&mut r, &pointwise(nc, &z(), g), wd.k0 * wd.omega1);
            r
        }
        NonlinearityKind::Sp => s_like(&z()),
    })
}

fn assemble(f: &Fourier, nc: usize, q: Vec<f64>, r: &[f64], s: &[f64]) -> Vec<f64> {
    let mut out = q;
    add_scaled(&mut out, &deriv_stacked(f, r, nc, 1), 1.0);
    add_scaled(&mut out, &deriv_stacked(f, s, nc, 2), 1.0);
    out
}

/// `N = Q + ∂R + ∂²S`.
pub fn full_nonlinearity(sys: &RDSystem, wd: &WaveData, m: &ModulationFields) -> Result<Vec<f64>> {
    use NonlinearityKind::*;
    let q = nonlinearity_eval(Q, sys, wd, m)?;
    Ok(assemble(&wd.fourier, wd.n_comp, q, &nonlinearity_eval(R, sys, wd, m)?, &nonlinearity_eval(S, sys, wd, m)?))
}

/// `sup|N − k₀²f_pγ_ζ² − N_p|`.
pub fn fp_decomposition_check(sys: &RDSystem, wd: &WaveData, m: &ModulationFields) -> Result<f64> {
    use NonlinearityKind::*;
    let full = full_nonlinearity(sys, wd, m)?;
    let q = nonlinearity_eval(Qp, sys, wd, m)?;
    let np = assemble(&wd.fourier, wd.n_comp, q, &nonlinearity_eval(Rp, sys, wd, m)?, &nonlinearity_eval(Sp, sys, wd, m)?);
    let n = wd.npts();
    let k2 = wd.k0 * wd.k0;
    Ok((0..full.len()).map(|k| (full[k] - k2 * wd.f_p[k] * m.gamma_z[k % n].powi(2) - np[k]).abs()).fold(0.0, f64::max))
}

/// Defect of `(∂_t − L₀)[v + φ₀'γ − γ_ζv] = N(v, γ, γ_t)` when `u` is defined by
/// `u(ζ − γ(ζ)) = φ₀(ζ) + v(ζ)` and evolves by the reaction-diffusion system.
pub fn modulation_residual_check(sys: &RDSystem, wd: &WaveData, m: &ModulationFields) -> Result<f64> {
    let n = wd.npts();
    let nc = wd.n_comp;
    let f = &wd.fourier;
    let k2 = wd.k0 * wd.k0;
    let g = &m.gamma_z;
    let vz = deriv_stacked(f, &m.v, nc, 1);
    let vzz = deriv_stacked(f, &m.v, nc, 2);
    let uy: Vec<f64> = (0..nc * n).map(|k| (wd.dphi[k] + vz[k]) / (1.0 - g[k % n])).collect();
    let uyy: Vec<f64> =
        (0..nc * n).map(|k| (wd.d2phi[k] + vzz[k] + uy[k] * m.gamma_zz[k % n]) / (1.0 - g[k % n]).powi(2)).collect();
    let u: Vec<f64> = wd.phi.iter().zip(&m.v).map(|(a, b)| a + b).collect();
    let fu = sys.f_field(&u);
    let duyy = sys.apply_d(&uyy);
    let vt: Vec<f64> = (0..nc * n).map(|k| k2 * duyy[k] + wd.omega0 * uy[k] + fu[k] - uy[k] * m.gamma_t[k % n]).collect();
    let gt_z = f.deriv(&m.gamma_t, 1);
    let w: Vec<f64> = (0..nc * n).map(|k| m.v[k] + wd.dphi[k] * m.gamma[k % n] - g[k % n] * m.v[k]).collect();
    let wt: Vec<f64> =
        (0..nc * n).map(|k| vt[k] + wd.dphi[k] * m.gamma_t[k % n] - gt_z[k % n] * m.v[k] - g[k % n] * vt[k]).collect();
    let wzz = sys.apply_d(&deriv_stacked(f, &w, nc, 2));
    let wz = deriv_stacked(f, &w, nc, 1);
    let jw = wd.jac_apply(&w);
    let nl = full_nonlinearity(sys, wd, m)?;
    Ok((0..nc * n).map(|k| (wt[k] - k2 * wzz[k] - wd.omega0 * wz[k] - jw[k] - nl[k]).abs()).fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bloch::{analyze, AnalysisOptions};
    use crate::model::preset;
    use crate::wavetrain::{initial_guess, wave_at, GuessKind, SolverOptions};
    use std::sync::OnceLock;

    pub(super) fn gl() -> &'static (RDSystem, WaveAnalysis) {
        static GL: OnceLock<(RDSystem, WaveAnalysis)> = OnceLock::new();
        GL.get_or_init(|| {
            let sys = preset("real-ginzburg-landau").unwrap();
            let g = initial_guess(&sys, GuessKind::Harmonic { amplitude: 0.9 }, &[0.0, 0.0], 32).unwrap();
            let w = wave_at(&sys, 0.05, &g, 1, &SolverOptions::default()).unwrap();
            let an = analyze(&sys, &w, &AnalysisOptions::default()).unwrap();
            (sys, an)
        })
    }

    pub(super) fn data(periods: usize, m: usize) -> (&'static RDSystem, WaveData) {
        let (sys, an) = gl();
        (sys, WaveData::new(sys, an, Domain::new(periods, m).unwrap()).unwrap())
    }

    fn smooth(domain: &Domain, amp: f64, phase: f64, harmonic: f64) -> Vec<f64> {
        domain.zeta().iter().map(|z| amp * (2.0 * PI * harmonic * z / domain.length() + phase).sin()).collect()
    }

    #[test]
    fn tiling_and_off_grid_evaluation() {
        let (_, wd) = data(6, 32);
        let (_, an) = gl();
        let n = wd.npts();
        let cell = resample_field(&an.wave.phi, 2, 32);
        for i in 0..n {
            assert!((wd.phi[i] - cell[(i + 3 * 32) % 32]).abs() < 1e-12);
        }
        let odd = Domain::new(5, 32).unwrap();
        let t = odd.tile(&an.wave.phi, 2);
        let z = odd.zeta();
        let r = (an.wave.phi[0].powi(2) + an.wave.phi[32].powi(2)).sqrt();
        for i in 0..odd.npts() {
            let ang = (an.wave.phi[32].atan2(an.wave.phi[0])) + 2.0 * PI * z[i];
            assert!((t[i] - r * ang.cos()).abs() < 1e-9, "{i}");
        }
        for &s in &[0.0123, -0.4, 0.77, 3.3] {
            let shifted = wd.domain.tile(&shift_field(&an.wave.phi, 2, s), 2);
            let zz = wd.domain.zeta();
            for i in (0..n).step_by(7) {
                assert!((wd.phi_t.at(zz[i] + s, 1, 0) - shifted[n + i]).abs() < 1e-11);
            }
        }
    }

    #[test]
    fn initial_data_scaling_and_gate() {
        let (_, wd) = data(8, 32);
        let zero = build_initial_data(&wd, &PerturbationSpec { amplitude: Some(0.0), ..Default::default() }, 1.0).unwrap();
        assert_eq!(zero.e0, 0.0);
        assert!(sup_diff(&zero.u0, &wd.phi) == 0.0);
        let spec = |d: f64| PerturbationSpec { gamma_plus: d, width: 0.3, ..Default::default() };
        let a = build_initial_data(&wd, &spec(2e-3), 1.0).unwrap();
        let b = build_initial_data(&wd, &spec(1e-3), 1.0).unwrap();
        assert!((a.e0 / b.e0 - 2.0).abs() < 1e-2, "{}", a.e0 / b.e0);
        let c = build_initial_data(&wd, &PerturbationSpec { amplitude: Some(0.02), ..spec(1e-3) }, 1.0).unwrap();
        assert!((c.e0 - 0.02).abs() < 1e-9);
        assert!(matches!(build_initial_data(&wd, &spec(0.1), 0.05), Err(Error::SmallnessGate { .. })));
        let r1 = build_initial_data(&wd, &PerturbationSpec { kind: PerturbationKind::AdditiveRandom, seed: 4, amplitude: Some(0.01), ..Default::default() }, 1.0).unwrap();
        let r2 = build_initial_data(&wd, &PerturbationSpec { kind: PerturbationKind::AdditiveRandom, seed: 4, amplitude: Some(0.01), ..Default::default() }, 1.0).unwrap();
        assert_eq!(r1.u0, r2.u0);
    }

    #[test]
    fn wavenumber_modulated_data_follow_the_local_wavenumber() {
        let (_, wd) = data(16, 32);
        let spec = PerturbationSpec { kind: PerturbationKind::WavenumberModulated, gamma_plus: 0.2, width: 1.0, ..Default::default() };
        let d = build_initial_data(&wd, &spec, 100.0).unwrap();
        let n = wd.npts();
        let z = wd.domain.zeta();
        let gz = wd.fourier.deriv(&d.gamma0, 1);
        let mut crossings = vec![];
        for i in 1..n {
            let (a, b) = (d.u0[i - 1], d.u0[i]);
            if a < 0.0 && b >= 0.0 {
                crossings.push((z[i - 1] + (z[i] - z[i - 1]) * a / (a - b), gz[i]));
            }
        }
        assert_eq!(crossings.len(), 16);
        // consecutive crossings are one local period 1/(1 + γ_ζ) apart
        for w in crossings.windows(2) {
            let local = 0.5 * (w[0].1 + w[1].1);
            assert!(((w[1].0 - w[0].0) * (1.0 + local) - 1.0).abs() < 5e-3, "{:?}", w);
        }
    }

    #[test]
    fn equilibrium_translate_and_halving() {
        let (sys, wd) = data(8, 32);
        let opts = SimOptions { t_end: 4.0, dt: 0.05, halving_until: 4.0, ..Default::default() };
        let tr = simulate(sys, &wd, &wd.phi, &opts).unwrap();
        assert!(tr.snapshots.iter().all(|u| sup_diff(u, &wd.phi) < 1e-8));
        let s = 0.0173;
        let shifted = shift_field(&wd.phi, 2, s);
        let tr = simulate(sys, &wd, &shifted, &opts).unwrap();
        assert!(sup_diff(tr.snapshots.last().unwrap(), &shifted) < 1e-8);
        let d = build_initial_data(&wd, &PerturbationSpec { amplitude: Some(0.05), ..Default::default() }, 1.0).unwrap();
        let tr = simulate(sys, &wd, &d.u0, &opts).unwrap();
        assert!(tr.halving_error < 1e-6, "{}", tr.halving_error);
        assert!(tr.times.windows(2).all(|w| w[1] > w[0]));
        assert!(simulate(sys, &wd, &wd.phi, &SimOptions { dt: 5.0, ..opts }).is_err());
    }

    #[test]
    fn extraction_of_translates_and_fronts() {
        let (_, wd) = data(16, 32);
        for window in [Window::Pointwise, Window::Period] {
            let opts = ExtractOptions { window, ..Default::default() };
            let ex = Extractor::new(&wd, opts);
            let (g, _) = ex.extract(&wd.phi, None).unwrap();
            assert!(spectral::sup(&g) < 1e-12);
            let s = 0.031;
            let (g, _) = ex.extract(&wd.domain.tile(&shift_field(&gl().1.wave.phi, 2, s), 2), None).unwrap();
            assert!(g.iter().all(|x| (x - s).abs() < 1e-11), "{window:?} {:e}", g.iter().map(|x| (x - s).abs()).fold(0.0, f64::max));
            let c = HjCoefficients { a: 0.0, ..wd.coeffs };
            let z = wd.domain.zeta();
            let front: Vec<f64> = z.iter().map(|&x| crate::phase_dynamics::front_solution(0.0, 0.02, x, 0.0, &HjCoefficients { d: 4.0, ..c })).collect();
            let front = {
                // make it periodic by mirroring across ±L/2
                let l = wd.domain.length();
                z.iter().zip(&front).map(|(x, f)| f - 0.02 * erf_paper((x - l / 4.0) / 2.0)).collect::<Vec<f64>>()
            };
            let u = wd.modulated(&front, None);
            let (g, _) = ex.extract(&u, None).unwrap();
            let err = (0..z.len()).filter(|&i| z[i].abs() < 3.0).map(|i| (g[i] - front[i]).abs()).fold(0.0, f64::max);
            assert!(err < 1e-3, "{err}");
        }
    }

    #[test]
    fn inverse_map_and_taylor_defects() {
        let dom = Domain::new(8, 32).unwrap();
        let c = vec![0.37; dom.npts()];
        let inv = invert_phase_map(&c, &dom).unwrap();
        assert!(inv.psi_inv.iter().zip(dom.zeta()).all(|(p, z)| (p - z - 0.37).abs() < 1e-13));
        let g = smooth(&dom, 0.3, 0.4, 3.0);
        let inv = invert_phase_map(&g, &dom).unwrap();
        assert!(inv.residual < 1e-10 && inv.contraction < 1.0);
        let big = smooth(&dom, 1.2, 0.0, 1.0);
        assert!(invert_phase_map(&big, &dom).is_ok());
        let steep = smooth(&dom, 2.0, 0.0, 8.0);
        assert!(matches!(invert_phase_map(&steep, &dom), Err(Error::Contraction(_))));
    }

    pub(super) fn manufactured(wd: &WaveData, eps: f64) -> ModulationFields {
        let dom = wd.domain;
        let n = dom.npts();
        let a = smooth(&dom, 1.0, 0.3, 1.0);
        let b = smooth(&dom, 1.0, 1.1, 2.0);
        let v: Vec<f64> = (0..2 * n).map(|k| eps * if k < n { a[k] * wd.phi[k] } else { b[k % n] + 0.3 }).collect();
        let gamma = smooth(&dom, 0.4 * eps, 0.2, 1.0);
        let gamma_t = smooth(&dom, 0.7 * eps, -0.5, 2.0);
        ModulationFields::new(wd, v, gamma, gamma_t).unwrap()
    }

    #[test]
    fn nonlinearity_identities() {
        let (sys, wd) = data(8, 32);
        let n = wd.npts();
        let m = ModulationFields::new(&wd, vec![0.0; 2 * n], vec![0.3; n], vec![0.0; n]).unwrap();
        for k in [NonlinearityKind::Q, NonlinearityKind::R, NonlinearityKind::S] {
            assert!(spectral::sup(&nonlinearity_eval(k, sys, &wd, &m).unwrap()) < 1e-14);
        }
        let m = manufactured(&wd, 0.1);
        assert!(fp_decomposition_check(sys, &wd, &m).unwrap() < 1e-6);
        assert!(modulation_residual_check(sys, &wd, &m).unwrap() < 1e-6);
        let q1 = spectral::sup(&nonlinearity_eval(NonlinearityKind::Q, sys, &wd, &manufactured(&wd, 0.02)).unwrap());
        let q2 = spectral::sup(&nonlinearity_eval(NonlinearityKind::Q, sys, &wd, &manufactured(&wd, 0.01)).unwrap());
        assert!((q1 / q2 - 4.0).abs() < 0.2, "{}", q1 / q2);
        let steep = ModulationFields::new(&wd, vec![0.0; 2 * n], smooth(&wd.domain, 1.0, 0.0, 1.0), vec![0.0; n]).unwrap();
        assert!(nonlinearity_eval(NonlinearityKind::Q, sys, &wd, &steep).is_err());
    }

    #[test]
    fn zero_data_give_zero_hj_error_and_short_fits_fail() {
        let (sys, wd) = data(8, 32);
        let tr = simulate(sys, &wd, &wd.phi, &SimOptions { t_end: 12.0, dt: 0.05, halving_until: 0.0, ..Default::default() }).unwrap();
        let diag = extract_phase(&tr, &wd, None, &ExtractOptions { window: Window::Pointwise, ..Default::default() }).unwrap();
        let cmp = compare_to_hj(&diag, &vec![0.0; 2 * wd.npts()], &wd).unwrap();
        assert!(cmp.err0.iter().all(|e| *e < 1e-10));
        assert!(measure_decay(&diag, 2.0, 12.0).is_err());
        let rows = corollary_check(&tr, &diag, &wd).unwrap();
        assert!(rows.iter().all(|r| r.residual < 1e-10 && r.pointwise_ok));
    }

    #[test]
    fn trajectory_round_trip() {
        let (sys, wd) = data(4, 16);
        let tr = simulate(sys, &wd, &wd.phi, &SimOptions { t_end: 1.0, dt: 0.05, halving_until: 0.0, ..Default::default() }).unwrap();
        let dir = std::env::temp_dir().join(format!("wavemod-traj-{}", std::process::id()));
        tr.write(&dir).unwrap();
        let back = Trajectory::read(&dir).unwrap();
        assert_eq!(back.times, tr.times);
        assert!(back.snapshots.iter().zip(&tr.snapshots).all(|(a, b)| sup_diff(a, b) == 0.0));
        std::fs::remove_dir_all(&dir).ok();
    }
}
