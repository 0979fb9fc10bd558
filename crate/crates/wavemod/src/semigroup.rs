//! Decomposition of the linearised semigroup `e^{L₀t}` about a wave train on an L-periodic
//! domain. The Bloch frequencies are `ξ_m = 2πm/L`; every component is evaluated mode by
//! mode, so each tag is exact up to roundoff on L-periodic data.

use crate::bloch::{critical_curve, BlochOperator, CurveOptions, WaveAnalysis};
use crate::error::{Error, Result};
use crate::fit::{self, SlopeFit};
use crate::linalg::EigenBasis;
use crate::model::RDSystem;
use crate::quadrature;
use crate::spectral::{self, Fourier};
use crate::stepper::Etdrk4;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// `C^∞` transition from 0 (s ≤ 0) to 1 (s ≥ 1).
pub fn smoothstep(s: f64) -> f64 {
    if s <= 0.0 {
        0.0
    } else if s >= 1.0 {
        1.0
    } else {
        let a = (-1.0 / s).exp();
        let b = (-1.0 / (1.0 - s)).exp();
        a / (a + b)
    }
}

pub fn smoothstep_derivative(s: f64) -> f64 {
    if s <= 0.0 || s >= 1.0 {
        0.0
    } else {
        let a = (-1.0 / s).exp();
        let b = (-1.0 / (1.0 - s)).exp();
        a * b * (1.0 / (s * s) + 1.0 / ((1.0 - s) * (1.0 - s))) / ((a + b) * (a + b))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cutoffs {
    pub xi0: f64,
}

impl Cutoffs {
    /// 1 on `|ξ| ≤ ξ₀/2`, 0 on `|ξ| ≥ ξ₀`.
    pub fn rho(&self, xi: f64) -> f64 {
        1.0 - smoothstep((xi.abs() - 0.5 * self.xi0) / (0.5 * self.xi0))
    }

    /// 0 on `[0, 1]`, 1 on `[2, ∞)`.
    pub fn chi(&self, t: f64) -> f64 {
        smoothstep(t - 1.0)
    }

    pub fn chi_dot(&self, t: f64) -> f64 {
        smoothstep_derivative(t - 1.0)
    }
}

/// Convective heat kernel `e^{−|x+at|²/(4dt)}/√(4πdt)`.
pub fn heat_kernel(x: f64, t: f64, a: f64, d: f64) -> Result<f64> {
    if !(t > 0.0) || !(d > 0.0) {
        return Err(Error::InvalidParameter("heat kernel needs t > 0 and d > 0".into()));
    }
    let y = x + a * t;
    Ok((-y * y / (4.0 * d * t)).exp() / (4.0 * PI * d * t).sqrt())
}

/// `(H, H_t, H_x, H_xx)` in closed form.
pub fn heat_kernel_jet(x: f64, t: f64, a: f64, d: f64) -> Result<[f64; 4]> {
    let h = heat_kernel(x, t, a, d)?;
    let y = x + a * t;
    let hx = -y / (2.0 * d * t) * h;
    let hxx = (y * y / (4.0 * d * d * t * t) - 1.0 / (2.0 * d * t)) * h;
    let ht = (y * y / (4.0 * d * t * t) - a * y / (2.0 * d * t) - 1.0 / (2.0 * t)) * h;
    Ok([h, ht, hx, hxx])
}

/// Largest grid frequency up to which the critical eigenvalue stays isolated.
pub fn separated_window(sys: &RDSystem, wave: &crate::wavetrain::WaveProfile, xis: &[f64]) -> Result<f64> {
    let mut grid = xis.to_vec();
    loop {
        match critical_curve(sys, wave, &grid, &CurveOptions::default()) {
            Ok(c) => return Ok(c.xi0),
            Err(Error::ContinuationAmbiguity(x)) => {
                grid.retain(|g| *g < x);
                if grid.len() < 2 {
                    return Err(Error::ContinuationAmbiguity(x));
                }
            }
            Err(e) => return Err(e),
        }
    }
}

/// `L` periods of `M` points each, with the Bloch transform over the period index.
#[derive(Debug, Clone)]
pub struct PeriodicDomain {
    pub n_comp: usize,
    pub per_period: usize,
    pub periods: usize,
    big: Fourier,
    over_periods: Fourier,
}

impl PeriodicDomain {
    pub fn new(n_comp: usize, per_period: usize, periods: usize) -> Self {
        Self {
            n_comp,
            per_period,
            periods,
            big: Fourier::new(per_period * periods, periods as f64),
            over_periods: Fourier::new(periods, periods as f64),
        }
    }

    pub fn npts(&self) -> usize {
        self.per_period * self.periods
    }

    pub fn length(&self) -> f64 {
        self.periods as f64
    }

    pub fn grid(&self) -> Vec<f64> {
        spectral::grid(self.npts(), self.length())
    }

    pub fn fourier(&self) -> &Fourier {
        &self.big
    }

    /// Signed index of Bloch mode `m` (FFT order); `ξ_m ∈ [−π, π)`.
    pub fn signed(&self, m: usize) -> isize {
        if 2 * m < self.periods {
            m as isize
        } else {
            m as isize - self.periods as isize
        }
    }

    pub fn xi(&self, m: usize) -> f64 {
        2.0 * PI * self.signed(m) as f64 / self.periods as f64
    }

    /// Repeat a 1-periodic stacked field over all periods.
    pub fn periodize(&self, x: &[f64]) -> Vec<f64> {
        let m = self.per_period;
        let blocks = x.len() / m;
        let mut out = Vec::with_capacity(blocks * self.npts());
        for c in 0..blocks {
            for _ in 0..self.periods {
                out.extend_from_slice(&x[c * m..(c + 1) * m]);
            }
        }
        out
    }

    /// `v̌_m(ζ) = Σ_p e^{−iξ_m(ζ+p)} v(ζ+p)` on the unit-period grid, for every `m`.
    pub fn analyze(&self, v: &[f64]) -> Vec<Vec<Complex64>> {
        let (m, l, n) = (self.per_period, self.periods, self.n_comp);
        let big = self.npts();
        let mut out = vec![vec![Complex64::new(0.0, 0.0); n * m]; l];
        let mut buf = vec![Complex64::new(0.0, 0.0); l];
        for c in 0..n {
            for i in 0..m {
                for p in 0..l {
                    buf[p] = Complex64::new(v[c * big + i + p * m], 0.0);
                }
                self.over_periods.forward_in_place(&mut buf);
                let z = i as f64 / m as f64;
                for (q, w) in buf.iter().enumerate() {
                    out[q][c * m + i] = Complex64::from_polar(1.0, -self.xi(q) * z) * w;
                }
            }
        }
        out
    }

    /// Inverse of [`analyze`](Self::analyze): `u(ζ) = (1/L) Σ_m e^{iξ_mζ} ǔ_m(ζ)`, real part.
    pub fn synthesize(&self, parts: &[Vec<Complex64>]) -> Vec<f64> {
        let (m, l) = (self.per_period, self.periods);
        let n = parts[0].len() / m;
        let big = self.npts();
        let mut out = vec![0.0; n * big];
        let mut buf = vec![Complex64::new(0.0, 0.0); l];
        for c in 0..n {
            for i in 0..m {
                let z = i as f64 / m as f64;
                for q in 0..l {
                    buf[q] = Complex64::from_polar(1.0, self.xi(q) * z) * parts[q][c * m + i];
                }
                self.over_periods.inverse_in_place(&mut buf);
                for p in 0..l {
                    out[c * big + i + p * m] = buf[p].re;
                }
            }
        }
        out
    }

    /// `(1/L) Σ_m b_m e^{iξ_mζ}` on the full grid.
    pub fn scalar_series(&self, b: &[Complex64]) -> Vec<f64> {
        let big = self.npts();
        let mut spec = vec![Complex64::new(0.0, 0.0); big];
        for (q, bq) in b.iter().enumerate() {
            let s = self.signed(q);
            let j = if s >= 0 { s as usize } else { (big as isize + s) as usize };
            spec[j] += bq * self.per_period as f64;
        }
        self.big.inverse_real(spec)
    }

    pub fn deriv(&self, x: &[f64], order: u32) -> Vec<f64> {
        spectral::blockwise(x, x.len() / self.npts(), |b| self.big.deriv(b, order))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Tag {
    /// Exact action via per-mode eigendecompositions.
    Full,
    /// Time-stepped action.
    FullStepper,
    Se,
    Sc,
    Sr,
    Sp(u8),
    Sh(u8),
    SrTilde(u8),
}

impl Tag {
    pub fn is_scalar(&self) -> bool {
        matches!(self, Tag::Sp(_) | Tag::Sh(_) | Tag::SrTilde(_))
    }

    pub fn parse(s: &str) -> Result<Tag> {
        let idx = |p: &str| -> Result<u8> {
            let i: u8 = s[p.len()..].parse().map_err(|_| Error::InvalidParameter(format!("unknown propagator tag `{s}`")))?;
            if i > 2 {
                return Err(Error::InvalidParameter(format!("unknown propagator tag `{s}`")));
            }
            Ok(i)
        };
        match s {
            "full" => Ok(Tag::Full),
            "full-stepper" => Ok(Tag::FullStepper),
            "S_e" => Ok(Tag::Se),
            "S_c" => Ok(Tag::Sc),
            "S_r" => Ok(Tag::Sr),
            _ if s.starts_with("S_p") => Ok(Tag::Sp(idx("S_p")?)),
            _ if s.starts_with("S_h") => Ok(Tag::Sh(idx("S_h")?)),
            _ if s.starts_with("S~_r") => Ok(Tag::SrTilde(idx("S~_r")?)),
            _ => Err(Error::InvalidParameter(format!("unknown propagator tag `{s}`"))),
        }
    }
}

/// `∂_ζ^zeta (∂_t − a∂_ζ)^transport` applied to a propagator output.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Deriv {
    /// Order of `∂_ζ`.
    pub zeta: u32,
    /// Power of `∂_t − a∂_ζ`.
    pub transport: u32,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SemigroupOptions {
    pub periods: usize,
    /// Frequency cutoff; taken from the critical curve when absent.
    pub xi0: Option<f64>,
    pub dt: f64,
}

impl Default for SemigroupOptions {
    fn default() -> Self {
        Self { periods: 64, xi0: None, dt: 0.01 }
    }
}

#[derive(Debug, Clone)]
struct Critical {
    lambda: Complex64,
    phi: Vec<Complex64>,
    /// `∂^iΦ̃_ξ` for i = 0, 1, 2.
    adj: [Vec<Complex64>; 3],
}

pub struct Semigroup {
    pub domain: PeriodicDomain,
    pub cutoffs: Cutoffs,
    pub a: f64,
    pub d: f64,
    pub k0: f64,
    pub omega0: f64,
    pub dt: f64,
    sys: RDSystem,
    jac: Vec<f64>,
    dphi: Vec<f64>,
    dk_phi: Vec<f64>,
    adjoint0: [Vec<f64>; 3],
    /// Indexed by `q = |m|` for `ξ = 2πq/L`, `q = 0..=L/2`.
    crit: Vec<Option<Critical>>,
    eig: Vec<EigenBasis>,
    crit_index: Vec<Option<usize>>,
}

fn conj_vec(v: &[Complex64]) -> Vec<Complex64> {
    v.iter().map(|z| z.conj()).collect()
}

impl Semigroup {
    pub fn new(sys: &RDSystem, analysis: &WaveAnalysis, opts: &SemigroupOptions) -> Result<Self> {
        let wave = &analysis.wave;
        let (n, m, l) = (sys.n, wave.n_grid, opts.periods);
        if l < 4 || l % 2 != 0 {
            return Err(Error::InvalidParameter("periods must be even and at least 4".into()));
        }
        let domain = PeriodicDomain::new(n, m, l);
        let qs: Vec<f64> = (0..=l / 2).map(|q| 2.0 * PI * q as f64 / l as f64).collect();
        let xi0 = match opts.xi0 {
            Some(x) => x,
            None => separated_window(sys, wave, &qs)?,
        };
        if !(xi0 > 0.0) {
            return Err(Error::Hypothesis("empty low-frequency window".into()));
        }
        let cutoffs = Cutoffs { xi0 };
        let inside: Vec<f64> = qs.iter().copied().filter(|x| *x < xi0).collect();
        let curve = critical_curve(sys, wave, &inside, &CurveOptions::default())?;
        let f = Fourier::new(m, 1.0);
        let dz = |v: &[Complex64], k: u32| -> Vec<Complex64> {
            let mut out = Vec::with_capacity(v.len());
            for c in 0..n {
                out.extend(f.deriv_complex(&v[c * m..(c + 1) * m], k));
            }
            out
        };
        let mut crit: Vec<Option<Critical>> = vec![None; qs.len()];
        for (j, _) in inside.iter().enumerate() {
            let y = &curve.phi_adj[j];
            crit[j] = Some(Critical { lambda: curve.lambda_c[j], phi: curve.phi[j].clone(), adj: [y.clone(), dz(y, 1), dz(y, 2)] });
        }
        let op = BlochOperator::new(sys, wave);
        let eig: Vec<Result<EigenBasis>> = qs.par_iter().map(|&xi| EigenBasis::new(&op.matrix(xi))).collect();
        let eig: Vec<EigenBasis> = eig.into_iter().collect::<Result<_>>()?;
        let crit_index = crit
            .iter()
            .zip(&eig)
            .map(|(c, e)| {
                c.as_ref().map(|c| {
                    (0..e.values.len()).min_by(|&i, &j| (e.values[i] - c.lambda).norm().partial_cmp(&(e.values[j] - c.lambda).norm()).unwrap()).unwrap()
                })
            })
            .collect();
        let ad = &curve.adjoint0;
        let adr = |k: u32| spectral::blockwise(ad, n, |x| f.deriv(x, k));
        Ok(Self {
            domain,
            cutoffs,
            a: analysis.coefficients.a(),
            d: analysis.coefficients.d(),
            k0: wave.k,
            omega0: wave.omega,
            dt: opts.dt,
            sys: sys.clone(),
            jac: sys.jac_field(&wave.phi),
            dphi: wave.dphi.clone(),
            dk_phi: analysis.derivatives.dk_phi.clone(),
            adjoint0: [ad.clone(), adr(1), adr(2)],
            crit,
            eig,
            crit_index,
        })
    }

    pub fn npts(&self) -> usize {
        self.domain.npts()
    }

    pub fn n_comp(&self) -> usize {
        self.domain.n_comp
    }

    pub fn adjoint0(&self) -> &[f64] {
        &self.adjoint0[0]
    }

    pub fn dk_phi(&self) -> &[f64] {
        &self.dk_phi
    }

    fn mode(&self, m: usize) -> (usize, bool, f64) {
        let s = self.domain.signed(m);
        (s.unsigned_abs(), s < 0, self.domain.xi(m))
    }

    fn critical(&self, m: usize) -> Option<(Complex64, Vec<Complex64>, [Vec<Complex64>; 3])> {
        let (q, neg, _) = self.mode(m);
        self.crit[q].as_ref().map(|c| {
            if neg {
                (c.lambda.conj(), conj_vec(&c.phi), [conj_vec(&c.adj[0]), conj_vec(&c.adj[1]), conj_vec(&c.adj[2])])
            } else {
                (c.lambda, c.phi.clone(), c.adj.clone())
            }
        })
    }

    /// `⟨∂^iΦ̃_{ξ_m}, v̌_m⟩` for modes inside the cutoff window (0 elsewhere).
    pub fn coefficients(&self, v: &[f64], i: usize) -> Vec<Complex64> {
        let parts = self.domain.analyze(v);
        let m = self.domain.per_period;
        (0..self.domain.periods)
            .map(|q| match self.critical(q) {
                Some((_, _, adj)) if self.cutoffs.rho(self.domain.xi(q)) > 0.0 => spectral::inner_c(&adj[i], &parts[q], m),
                _ => Complex64::new(0.0, 0.0),
            })
            .collect()
    }

    fn check_input(&self, v: &[f64]) -> Result<()> {
        let expected = self.n_comp() * self.npts();
        if v.len() != expected {
            return Err(Error::DimensionMismatch { expected, got: v.len() });
        }
        Ok(())
    }

    pub fn apply(&self, tag: Tag, v: &[f64], t: f64) -> Result<Vec<f64>> {
        self.apply_deriv(tag, v, t, Deriv::default())
    }

    pub fn apply_deriv(&self, tag: Tag, v: &[f64], t: f64, deriv: Deriv) -> Result<Vec<f64>> {
        self.check_input(v)?;
        if t < 0.0 {
            return Err(Error::InvalidParameter("negative time".into()));
        }
        if !tag.is_scalar() && deriv.transport > 0 {
            return Err(Error::InvalidParameter("(∂_t − a∂) only for scalar propagators".into()));
        }
        let out = match tag {
            Tag::Sp(i) => self.principal(v, t, i as usize, deriv)?,
            Tag::Sh(i) => self.heat_part(v, t, i as usize, deriv),
            Tag::SrTilde(i) => {
                let p = self.principal(v, t, i as usize, deriv)?;
                let h = self.heat_part(v, t, i as usize, deriv);
                p.iter().zip(&h).map(|(a, b)| a - b).collect()
            }
            Tag::Sc => self.critical_part(v, t),
            Tag::Sr => self.remainder(v, t)?,
            Tag::Full => self.modal(v, t, false),
            Tag::Se => self.modal(v, t, true),
            Tag::FullStepper => self.stepped(v, t)?,
        };
        if !tag.is_scalar() && deriv.zeta > 0 {
            return Ok(self.domain.deriv(&out, deriv.zeta));
        }
        Ok(out)
    }

    fn principal(&self, v: &[f64], t: f64, i: usize, deriv: Deriv) -> Result<Vec<f64>> {
        let chi = self.cutoffs.chi(t);
        if deriv.transport > 1 && t < 2.0 {
            return Err(Error::InvalidParameter("(∂_t − a∂)^l with l > 1 needs t ≥ 2".into()));
        }
        let chi_dot = self.cutoffs.chi_dot(t);
        let c = self.coefficients(v, i);
        let b: Vec<Complex64> = (0..self.domain.periods)
            .map(|q| {
                let xi = self.domain.xi(q);
                match self.critical(q) {
                    Some((lam, _, _)) if c[q] != Complex64::new(0.0, 0.0) => {
                        let growth = (lam * t).exp();
                        let temporal = match deriv.transport {
                            0 => Complex64::new(chi, 0.0),
                            1 => chi_dot + chi * (lam - I * self.a * xi),
                            l => chi * (lam - I * self.a * xi).powu(l),
                        };
                        self.cutoffs.rho(xi) * growth * temporal * (I * xi).powu(deriv.zeta) * c[q]
                    }
                    _ => Complex64::new(0.0, 0.0),
                }
            })
            .collect();
        Ok(self.domain.scalar_series(&b))
    }

    fn heat_part(&self, v: &[f64], t: f64, i: usize, deriv: Deriv) -> Vec<f64> {
        let big = self.npts();
        let n = self.n_comp();
        let w8 = self.domain.periodize(&self.adjoint0[i]);
        let mut w = vec![0.0; big];
        for c in 0..n {
            for p in 0..big {
                w[p] += w8[c * big + p] * v[c * big + p];
            }
        }
        self.heat_flow(&w, t, deriv)
    }

    /// `∂^j (d∂²)^l e^{(d∂² + a∂)t}` applied to a scalar field.
    pub fn heat_flow(&self, w: &[f64], t: f64, deriv: Deriv) -> Vec<f64> {
        let f = self.domain.fourier();
        let mut spec = f.forward(w);
        let s1 = f.symbol(1);
        let s2 = f.symbol(2);
        let sj = f.symbol(deriv.zeta);
        for (idx, z) in spec.iter_mut().enumerate() {
            let gen = self.d * s2[idx] + self.a * s1[idx];
            *z *= (gen * t).exp() * sj[idx] * (self.d * s2[idx]).powu(deriv.transport);
        }
        f.inverse_real(spec)
    }

    fn critical_part(&self, v: &[f64], t: f64) -> Vec<f64> {
        let chi = self.cutoffs.chi(t);
        let parts = self.domain.analyze(v);
        let m = self.domain.per_period;
        let zero = vec![Complex64::new(0.0, 0.0); self.n_comp() * m];
        let out: Vec<Vec<Complex64>> = (0..self.domain.periods)
            .map(|q| {
                let xi = self.domain.xi(q);
                let r = self.cutoffs.rho(xi);
                match self.critical(q) {
                    Some((lam, phi, adj)) if r > 0.0 && chi > 0.0 => {
                        let c = spectral::inner_c(&adj[0], &parts[q], m) * chi * r * (lam * t).exp();
                        phi.iter().map(|p| p * c).collect()
                    }
                    _ => zero.clone(),
                }
            })
            .collect();
        self.domain.synthesize(&out)
    }

    fn remainder(&self, v: &[f64], t: f64) -> Result<Vec<f64>> {
        let sc = self.critical_part(v, t);
        let sp = self.principal(v, t, 0, Deriv::default())?;
        let dsp = self.principal(v, t, 0, Deriv { zeta: 1, transport: 0 })?;
        let big = self.npts();
        let dphi = self.domain.periodize(&self.dphi);
        let dk = self.domain.periodize(&self.dk_phi);
        Ok((0..sc.len()).map(|i| sc[i] - dphi[i] * sp[i % big] - self.k0 * dk[i] * dsp[i % big]).collect())
    }

    fn modal(&self, v: &[f64], t: f64, exclude_critical: bool) -> Vec<f64> {
        let chi = self.cutoffs.chi(t);
        let parts = self.domain.analyze(v);
        let out: Vec<Vec<Complex64>> = (0..self.domain.periods)
            .map(|q| {
                let (idx, neg, xi) = self.mode(q);
                let e = &self.eig[idx];
                let w = if neg { conj_vec(&parts[q]) } else { parts[q].clone() };
                let mut c = e.coords(&w);
                for (j, cj) in c.iter_mut().enumerate() {
                    let mut g = (e.values[j] * t).exp();
                    if exclude_critical && self.crit_index[idx] == Some(j) {
                        g *= 1.0 - chi * self.cutoffs.rho(xi);
                    }
                    *cj *= g;
                }
                let r = e.combine(&c);
                if neg {
                    conj_vec(&r)
                } else {
                    r
                }
            })
            .collect();
        self.domain.synthesize(&out)
    }

    fn stepped(&self, v: &[f64], t: f64) -> Result<Vec<f64>> {
        let n = self.n_comp();
        let big = self.npts();
        let st = Etdrk4::new(&self.sys.diffusion, n, self.k0, self.omega0, big, self.domain.length(), self.dt)?;
        let jac = self.domain.periodize(&self.jac);
        let lin = |u: &[f64]| {
            let mut out = vec![0.0; u.len()];
            for p in 0..n {
                for q in 0..n {
                    let jb = &jac[(p * n + q) * big..(p * n + q + 1) * big];
                    for i in 0..big {
                        out[p * big + i] += jb[i] * u[q * big + i];
                    }
                }
            }
            out
        };
        let mut u = v.to_vec();
        st.advance(&mut u, t, &lin)?;
        Ok(u)
    }

    /// `sup |full − S_e − S_c| / sup |v|` with the full action time-stepped.
    pub fn decomposition_defect(&self, v: &[f64], t: f64) -> Result<f64> {
        let full = self.apply(Tag::FullStepper, v, t)?;
        let se = self.apply(Tag::Se, v, t)?;
        let sc = self.apply(Tag::Sc, v, t)?;
        let diff: Vec<f64> = (0..full.len()).map(|i| full[i] - se[i] - sc[i]).collect();
        Ok(spectral::sup(&diff) / spectral::sup(v))
    }

    /// Largest defect of `∂S_p⁰ − S_p⁰∂ = S_p¹` and `∂²S_p⁰ − S_p⁰∂² = 2∂S_p¹ − S_p²`,
    /// relative to `‖v‖_{W^{2,∞}}`.
    pub fn commutator_check(&self, v: &[f64], ts: &[f64]) -> Result<f64> {
        let dv = self.domain.deriv(v, 1);
        let d2v = self.domain.deriv(v, 2);
        let scale = spectral::sup(v).max(spectral::sup(&dv)).max(spectral::sup(&d2v));
        let mut worst: f64 = 0.0;
        for &t in ts {
            let sp = |w: &[f64], i: u8, j: u32| self.apply_deriv(Tag::Sp(i), w, t, Deriv { zeta: j, transport: 0 });
            let first: Vec<f64> = {
                let (a, b, c) = (sp(v, 0, 1)?, sp(&dv, 0, 0)?, sp(v, 1, 0)?);
                (0..a.len()).map(|i| a[i] - b[i] - c[i]).collect()
            };
            let second: Vec<f64> = {
                let (a, b, c, e) = (sp(v, 0, 2)?, sp(&d2v, 0, 0)?, sp(v, 1, 1)?, sp(v, 2, 0)?);
                (0..a.len()).map(|i| a[i] - b[i] - 2.0 * c[i] + e[i]).collect()
            };
            worst = worst.max(spectral::sup(&first)).max(spectral::sup(&second));
        }
        Ok(worst / scale)
    }

    /// Defect of `S_h⁰(g v) = e^{(d∂²+a∂)t}(⟨Φ̃₀, g⟩v − A_h(g)v') + ∂e^{(d∂²+a∂)t}(A_h(g)v)` for a
    /// 1-periodic `g` and scalar `v`, relative to `‖g‖∞‖v‖_{W^{1,∞}}`.
    pub fn expansion_check(&self, g: &[f64], v: &[f64], t: f64) -> Result<f64> {
        let n = self.n_comp();
        let m = self.domain.per_period;
        let big = self.npts();
        if g.len() != n * m || v.len() != big {
            return Err(Error::DimensionMismatch { expected: n * m, got: g.len() });
        }
        let gp = self.domain.periodize(g);
        let gv: Vec<f64> = (0..n * big).map(|i| gp[i] * v[i % big]).collect();
        let lhs = self.apply(Tag::Sh(0), &gv, t)?;
        let ah = self.domain.periodize(&crate::bloch::antiderivative_operator(g, &self.adjoint0[0], n));
        let mean = spectral::inner_real(&self.adjoint0[0], g, m);
        let dv = self.domain.deriv(v, 1);
        let first: Vec<f64> = (0..big).map(|i| mean * v[i] - ah[i] * dv[i]).collect();
        let second: Vec<f64> = (0..big).map(|i| ah[i] * v[i]).collect();
        let r1 = self.heat_flow(&first, t, Deriv::default());
        let r2 = self.heat_flow(&second, t, Deriv { zeta: 1, transport: 0 });
        let diff: Vec<f64> = (0..big).map(|i| lhs[i] - r1[i] - r2[i]).collect();
        Ok(spectral::sup(&diff) / (spectral::sup(g) * spectral::sup(v).max(spectral::sup(&dv))))
    }
}

/// Smooth L-periodic double step `½(tanh((ζ−L/4)/w) − tanh((ζ−3L/4)/w))`.
pub fn double_step(domain: &PeriodicDomain, width: f64) -> Vec<f64> {
    let l = domain.length();
    domain
        .grid()
        .iter()
        .map(|&z| 0.5 * (((z - 0.25 * l) / width).tanh() - ((z - 0.75 * l) / width).tanh()))
        .collect()
}

/// Modulated fronts of two widths plus seeded random trigonometric polynomials with
/// wavelengths of at least four periods, each with unit sup norm.
pub fn test_functions(sg: &Semigroup, seed: u64, random_count: usize) -> Vec<(String, Vec<f64>)> {
    let dom = &sg.domain;
    let (n, big) = (sg.n_comp(), sg.npts());
    let mut out = vec![];
    let mut push = |name: String, v: Vec<f64>| {
        let m = spectral::sup(&v);
        if m > 0.0 {
            out.push((name, v.into_iter().map(|x| x / m).collect()));
        }
    };
    let dphi = dom.periodize(&sg.dphi);
    let ad = dom.periodize(&sg.adjoint0[0]);
    for width in [1.0, 0.1] {
        let s = double_step(dom, width);
        push(format!("front-dphi-w{width}"), (0..n * big).map(|i| s[i % big] * dphi[i]).collect());
        push(format!("front-adjoint-w{width}"), (0..n * big).map(|i| s[i % big] * ad[i]).collect());
        for c in 0..n {
            push(format!("front-e{c}-w{width}"), (0..n * big).map(|i| if i / big == c { s[i % big] } else { 0.0 }).collect());
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let l = dom.periods;
    let grid = dom.grid();
    for r in 0..random_count {
        let mut v = vec![0.0; n * big];
        for c in 0..n {
            for j in 1..=(l / 4).max(1) {
                let (p, q): (f64, f64) = (StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng));
                let kj = 2.0 * PI * j as f64 / l as f64;
                for (i, z) in grid.iter().enumerate() {
                    v[c * big + i] += p * (kj * z).cos() + q * (kj * z).sin();
                }
            }
        }
        push(format!("random-{r}"), v);
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeResult {
    pub tag: Tag,
    pub deriv: Deriv,
    pub ts: Vec<f64>,
    /// `max_v ‖·‖∞ / ‖v‖∞` over the test family.
    pub norms: Vec<f64>,
    pub fit: SlopeFit,
}

pub fn decay_rate_probe(
    sg: &Semigroup,
    tag: Tag,
    deriv: Deriv,
    funcs: &[(String, Vec<f64>)],
    ts: &[f64],
    t_min: f64,
    t_max: f64,
) -> Result<ProbeResult> {
    let norms: Vec<Result<f64>> = ts
        .par_iter()
        .map(|&t| {
            let mut best: f64 = 0.0;
            for (_, v) in funcs {
                let out = sg.apply_deriv(tag, v, t, deriv)?;
                best = best.max(spectral::sup(&out) / spectral::sup(v));
            }
            Ok(best)
        })
        .collect();
    let norms: Vec<f64> = norms.into_iter().collect::<Result<_>>()?;
    let fit = fit::power_fit(ts, &norms, t_min, t_max)?;
    Ok(ProbeResult { tag, deriv, ts: ts.to_vec(), norms, fit })
}

/// Chebyshev-Lobatto interpolant of `λ_c` and `Φ̃_ξ` on `[0, ξ₀]`, extended to negative
/// frequencies by conjugation.
#[derive(Debug, Clone)]
pub struct CurveInterpolant {
    pub xi0: f64,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    lambda: Vec<Complex64>,
    adj: Vec<[Vec<Complex64>; 3]>,
    n_comp: usize,
    n_grid: usize,
}

impl CurveInterpolant {
    pub fn new(sys: &RDSystem, wave: &crate::wavetrain::WaveProfile, xi0: f64, degree: usize) -> Result<Self> {
        let nodes: Vec<f64> = (0..=degree).map(|j| 0.5 * xi0 * (1.0 - (PI * j as f64 / degree as f64).cos())).collect();
        let curve = critical_curve(sys, wave, &nodes, &CurveOptions::default())?;
        let weights = (0..=degree)
            .map(|j| {
                let s = if j % 2 == 0 { 1.0 } else { -1.0 };
                if j == 0 || j == degree {
                    0.5 * s
                } else {
                    s
                }
            })
            .collect();
        let m = wave.n_grid;
        let f = Fourier::new(m, 1.0);
        let n = sys.n;
        let dz = |v: &[Complex64], k: u32| -> Vec<Complex64> {
            let mut out = Vec::with_capacity(v.len());
            for c in 0..n {
                out.extend(f.deriv_complex(&v[c * m..(c + 1) * m], k));
            }
            out
        };
        let adj = curve.phi_adj.iter().map(|y| [y.clone(), dz(y, 1), dz(y, 2)]).collect();
        Ok(Self { xi0, nodes, weights, lambda: curve.lambda_c, adj, n_comp: n, n_grid: m })
    }

    fn basis(&self, x: f64) -> Vec<f64> {
        let x = x.abs();
        if let Some(j) = self.nodes.iter().position(|&n| (n - x).abs() < 1e-15) {
            let mut b = vec![0.0; self.nodes.len()];
            b[j] = 1.0;
            return b;
        }
        let terms: Vec<f64> = self.nodes.iter().zip(&self.weights).map(|(n, w)| w / (x - n)).collect();
        let s: f64 = terms.iter().sum();
        terms.into_iter().map(|t| t / s).collect()
    }

    pub fn lambda(&self, xi: f64) -> Complex64 {
        let b = self.basis(xi);
        let v: Complex64 = b.iter().zip(&self.lambda).map(|(w, l)| l * w).sum();
        if xi < 0.0 {
            v.conj()
        } else {
            v
        }
    }

    /// `∂^iΦ̃_ξ(ζ̃)` at the given point for each node.
    fn adjoint_nodes_at(&self, i: usize, zeta: f64) -> Vec<Vec<Complex64>> {
        let m = self.n_grid;
        let f = Fourier::new(m, 1.0);
        let z = zeta.rem_euclid(1.0);
        self.adj
            .iter()
            .map(|a| {
                (0..self.n_comp)
                    .map(|c| {
                        let re: Vec<f64> = a[i][c * m..(c + 1) * m].iter().map(|v| v.re).collect();
                        let im: Vec<f64> = a[i][c * m..(c + 1) * m].iter().map(|v| v.im).collect();
                        Complex64::new(f.interpolate(&re, &[z])[0], f.interpolate(&im, &[z])[0])
                    })
                    .collect()
            })
            .collect()
    }
}

/// `G_p^i(x, x̃, t) = χ(t)/2π ∫ ρ(ξ) e^{iξ(x−x̃)} e^{λ_c(ξ)t} ∂^iΦ̃_ξ(x̃)* dξ` (one row entry per
/// component).
pub fn greens_principal(
    interp: &CurveInterpolant,
    cutoffs: &Cutoffs,
    i: usize,
    x: f64,
    xt: f64,
    t: f64,
    tol: f64,
) -> Result<Vec<Complex64>> {
    let chi = cutoffs.chi(t);
    let n = interp.n_comp;
    if chi == 0.0 {
        return Ok(vec![Complex64::new(0.0, 0.0); n]);
    }
    let at = interp.adjoint_nodes_at(i, xt);
    let integrand = |xi: f64| -> Vec<Complex64> {
        let b = interp.basis(xi);
        let lam = interp.lambda(xi);
        let w = cutoffs.rho(xi) * (I * xi * (x - xt) + lam * t).exp();
        (0..n)
            .map(|c| {
                let y: Complex64 = b.iter().zip(&at).map(|(bj, a)| a[c] * bj).sum();
                let y = if xi < 0.0 { y.conj() } else { y };
                w * y.conj()
            })
            .collect()
    };
    let (v, _) = quadrature::integrate_adaptive(&integrand, -cutoffs.xi0, cutoffs.xi0, 16, tol, 1 << 14)?;
    Ok(v.into_iter().map(|z| z * chi / (2.0 * PI)).collect())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OscillatoryBound {
    pub m: u32,
    pub max_ratio: f64,
    pub mu: f64,
    /// `(t, max over x of the ratio)`.
    pub per_time: Vec<(f64, f64)>,
}

/// Ratio of `|∫ e^{tλ(ξ)} ξ^m ρ(ξ) e^{iξx} dξ|` to `t^{−(m+1)/2}(1 + (x+at)⁴/t²)^{−1}` over a grid
/// of times and offsets `y = x + at`.
pub fn oscillatory_bound_check<F: Fn(f64) -> Complex64 + Sync>(
    lambda: &F,
    cutoffs: &Cutoffs,
    m: u32,
    ts: &[f64],
    offsets: &[f64],
) -> Result<OscillatoryBound> {
    let xi0 = cutoffs.xi0;
    let h = 1e-4 * xi0;
    let a = ((lambda(h) - lambda(-h)) / (2.0 * h)).im;
    let re_slope = ((lambda(h) - lambda(-h)) / (2.0 * h)).re;
    if re_slope.abs() > 1e-6 * (1.0 + a.abs()) {
        return Err(Error::Hypothesis(format!("λ'(0) is not imaginary (real part {re_slope:e})")));
    }
    let mut mu = f64::INFINITY;
    for j in 1..=200 {
        let xi = xi0 * j as f64 / 200.0 * 0.999;
        mu = mu.min(-lambda(xi).re / (xi * xi));
    }
    if !(mu > 0.0) {
        return Err(Error::Hypothesis(format!("Re λ(ξ) ≤ −μξ² fails (μ = {mu:e})")));
    }
    let per_time: Vec<Result<(f64, f64)>> = ts
        .par_iter()
        .map(|&t| {
            let integrand = |xi: f64| -> Vec<Complex64> {
                let g = cutoffs.rho(xi) * xi.powi(m as i32) * (t * (lambda(xi) - I * a * xi)).exp();
                offsets.iter().map(|y| g * (I * xi * y).exp()).collect()
            };
            let (v, _) = quadrature::integrate_adaptive(&integrand, -xi0, xi0, 16, 1e-10, 1 << 14)?;
            let best = v
                .iter()
                .zip(offsets)
                .map(|(z, y)| z.norm() / (t.powf(-0.5 * (m as f64 + 1.0)) / (1.0 + y.powi(4) / (t * t))))
                .fold(0.0, f64::max);
            Ok((t, best))
        })
        .collect();
    let per_time: Vec<(f64, f64)> = per_time.into_iter().collect::<Result<_>>()?;
    let max_ratio = per_time.iter().map(|p| p.1).fold(0.0, f64::max);
    Ok(OscillatoryBound { m, max_ratio, mu, per_time })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bloch::{analyze, AnalysisOptions};
    use crate::model::preset;
    use crate::wavetrain::{initial_guess, wave_at, GuessKind, SolverOptions};

    fn gl_semigroup(periods: usize) -> Semigroup {
        let sys = preset("real-ginzburg-landau").unwrap();
        let g = initial_guess(&sys, GuessKind::Harmonic { amplitude: 0.9 }, &[0.0, 0.0], 16).unwrap();
        let w = wave_at(&sys, 0.05, &g, 1, &SolverOptions::default()).unwrap();
        let an = analyze(&sys, &w, &AnalysisOptions::default()).unwrap();
        Semigroup::new(&sys, &an, &SemigroupOptions { periods, xi0: None, dt: 0.01 }).unwrap()
    }

    #[test]
    fn cutoff_supports() {
        let c = Cutoffs { xi0: 2.0 };
        assert_eq!(c.rho(0.99), 1.0);
        assert_eq!(c.rho(2.0), 0.0);
        assert_eq!(c.chi(1.0), 0.0);
        assert_eq!(c.chi(2.0), 1.0);
        for j in 0..=100 {
            let s = j as f64 / 100.0;
            assert!((0.0..=1.0).contains(&smoothstep(s)));
            let h = 1e-6;
            let fd = (smoothstep(s + h) - smoothstep(s - h)) / (2.0 * h);
            assert!((fd - smoothstep_derivative(s)).abs() < 1e-6);
        }
    }

    #[test]
    fn heat_kernel_properties() {
        let (a, d, t) = (0.7, 0.3, 2.0);
        let (x, w) = quadrature::gauss_legendre(40);
        let mut s = 0.0;
        for p in 0..40 {
            let c = -30.0 + (p as f64 + 0.5) * 1.5 - a * t;
            for (xj, wj) in x.iter().zip(&w) {
                s += 0.75 * wj * heat_kernel(c + 0.75 * xj, t, a, d).unwrap();
            }
        }
        assert!((s - 1.0).abs() < 1e-10);
        let peak = heat_kernel(-a * t, t, a, d).unwrap();
        assert!(peak > heat_kernel(-a * t + 1e-3, t, a, d).unwrap());
        for &x in &[-3.0, -1.4, 0.0, 0.5] {
            let [_, ht, hx, hxx] = heat_kernel_jet(x, t, a, d).unwrap();
            assert!((ht - d * hxx - a * hx).abs() < 1e-8);
        }
        assert!(heat_kernel(0.0, 0.0, a, d).is_err());
    }

    #[test]
    fn bloch_transform_roundtrip() {
        let dom = PeriodicDomain::new(2, 8, 6);
        let v: Vec<f64> = (0..2 * dom.npts()).map(|i| ((i * 7) % 11) as f64 - 5.0).collect();
        let back = dom.synthesize(&dom.analyze(&v));
        assert!(v.iter().zip(&back).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn translational_mode_and_small_time() {
        let sg = gl_semigroup(16);
        let dphi = sg.domain.periodize(&sg.dphi);
        let out = sg.apply(Tag::Full, &dphi, 7.0).unwrap();
        assert!(out.iter().zip(&dphi).all(|(a, b)| (a - b).abs() < 1e-9));
        let st = sg.apply(Tag::FullStepper, &dphi, 3.0).unwrap();
        assert!(st.iter().zip(&dphi).all(|(a, b)| (a - b).abs() < 1e-9));
        let funcs = test_functions(&sg, 3, 1);
        let v = &funcs.last().unwrap().1;
        for i in 0..3 {
            let sp = sg.apply(Tag::Sp(i), v, 0.8).unwrap();
            assert!(spectral::sup(&sp) == 0.0);
            let rt = sg.apply(Tag::SrTilde(i), v, 0.8).unwrap();
            let sh = sg.apply(Tag::Sh(i), v, 0.8).unwrap();
            assert!(rt.iter().zip(&sh).all(|(a, b)| (a + b).abs() < 1e-14));
        }
    }

    #[test]
    fn decomposition_and_commutators() {
        let sg = gl_semigroup(16);
        let funcs = test_functions(&sg, 7, 1);
        for t in [2.0, 5.0] {
            for (_, v) in &funcs {
                let d = sg.decomposition_defect(v, t).unwrap();
                assert!(d < 1e-6, "t={t}: {d}");
            }
        }
        let grid = sg.domain.grid();
        let l = sg.domain.length();
        let big = sg.npts();
        let v: Vec<f64> = (0..2 * big).map(|i| (-(grid[i % big] - 0.5 * l).powi(2) / 8.0).exp() * if i < big { 1.0 } else { 0.5 }).collect();
        assert!(sg.commutator_check(&v, &[2.0, 10.0]).unwrap() < 1e-6);
    }

    #[test]
    fn generator_consistency() {
        let sg = gl_semigroup(8);
        let big = sg.npts();
        let v = test_functions(&sg, 5, 1).pop().unwrap().1;
        let (n, k, om) = (2, sg.k0, sg.omega0);
        let d2 = sg.domain.deriv(&v, 2);
        let d1 = sg.domain.deriv(&v, 1);
        let jac = sg.domain.periodize(&sg.jac);
        let mut lv = vec![0.0; v.len()];
        for p in 0..n {
            for q in 0..n {
                for i in 0..big {
                    lv[p * big + i] += k * k * sg.sys.d(p, q) * d2[q * big + i] + jac[(p * n + q) * big + i] * v[q * big + i];
                }
            }
            for i in 0..big {
                lv[p * big + i] += om * d1[p * big + i];
            }
        }
        let err = |t: f64| {
            let out = sg.apply(Tag::Full, &v, t).unwrap();
            (0..v.len()).map(|i| (out[i] - v[i] - t * lv[i]).abs()).fold(0.0, f64::max)
        };
        let r = err(2e-3) / err(1e-3);
        assert!((r - 4.0).abs() < 0.2, "ratio {r}");
        let bounded: Vec<f64> = [1.0, 10.0, 100.0].iter().map(|&t| spectral::sup(&sg.apply(Tag::Full, &v, t).unwrap())).collect();
        assert!(bounded.iter().all(|b| *b < 10.0));
    }

    #[test]
    fn heat_expansion_identity() {
        let sg = gl_semigroup(16);
        let grid = sg.domain.grid();
        let l = sg.domain.length();
        let v: Vec<f64> = grid.iter().map(|z| (-(z - 0.5 * l).powi(2) / 10.0).exp()).collect();
        let g: Vec<f64> = sg.dphi.iter().map(|x| x + 0.3).collect();
        assert!(sg.expansion_check(&g, &v, 3.0).unwrap() < 1e-6);
    }

    #[test]
    fn greens_function_matches_bloch_sum() {
        let sys = preset("real-ginzburg-landau").unwrap();
        let g = initial_guess(&sys, GuessKind::Harmonic { amplitude: 0.9 }, &[0.0, 0.0], 16).unwrap();
        let w = wave_at(&sys, 0.05, &g, 1, &SolverOptions::default()).unwrap();
        let an = analyze(&sys, &w, &AnalysisOptions::default()).unwrap();
        let sg = Semigroup::new(&sys, &an, &SemigroupOptions { periods: 64, xi0: None, dt: 0.01 }).unwrap();
        let interp = CurveInterpolant::new(&sys, &w, sg.cutoffs.xi0, 24).unwrap();
        let big = sg.npts();
        let grid = sg.domain.grid();
        let l = sg.domain.length();
        let v: Vec<f64> = (0..2 * big).map(|i| (-(grid[i % big] - 0.5 * l).powi(2)).exp() * if i < big { 1.0 } else { -0.4 }).collect();
        let t = 3.0;
        let sp = sg.apply(Tag::Sp(0), &v, t).unwrap();
        let h = l / big as f64;
        for &x in &[0.5 * l, 0.5 * l + 1.25] {
            let mut s = Complex64::new(0.0, 0.0);
            for (p, xt) in grid.iter().enumerate() {
                if (xt - 0.5 * l).abs() > 6.0 {
                    continue;
                }
                let row = greens_principal(&interp, &sg.cutoffs, 0, x, *xt, t, 1e-10).unwrap();
                s += (row[0] * v[p] + row[1] * v[big + p]) * h;
            }
            let idx = (x / h).round() as usize;
            assert!((s.re - sp[idx]).abs() < 1e-4 * sp[idx].abs(), "{} vs {}", s.re, sp[idx]);
            assert!(s.im.abs() < 1e-8);
        }
        let z = greens_principal(&interp, &sg.cutoffs, 0, 1.0, 0.2, 0.5, 1e-10).unwrap();
        assert!(z.iter().all(|c| c.norm() == 0.0));
        let a = greens_principal(&interp, &sg.cutoffs, 1, 1.3, 0.2, 4.0, 1e-10).unwrap();
        let b = greens_principal(&interp, &sg.cutoffs, 1, 2.3, 1.2, 4.0, 1e-10).unwrap();
        assert!(a.iter().zip(&b).all(|(p, q)| (p - q).norm() < 1e-9));
    }

    #[test]
    fn oscillatory_bound_for_model_symbol() {
        let c = Cutoffs { xi0: 1.0 };
        let lam = |xi: f64| Complex64::new(-xi * xi, 0.0);
        let ts = fit::geometric_times(1.0, 1.5, 100.0);
        let ys: Vec<f64> = (-40..=40).map(|j| j as f64).collect();
        let r = oscillatory_bound_check(&lam, &c, 0, &ts, &ys).unwrap();
        let ts2 = fit::geometric_times(1.0, 1.5f64.sqrt(), 100.0);
        let ys2: Vec<f64> = (-80..=80).map(|j| 0.5 * j as f64).collect();
        let r2 = oscillatory_bound_check(&lam, &c, 0, &ts2, &ys2).unwrap();
        assert!(r.max_ratio.is_finite() && (r2.max_ratio / r.max_ratio - 1.0).abs() < 0.2);
        // at y = 0 the integral tends to √(π/t)
        let late = oscillatory_bound_check(&lam, &c, 0, &[400.0], &[0.0]).unwrap();
        assert!((late.max_ratio - PI.sqrt()).abs() < 1e-6);
        let bad = |xi: f64| Complex64::new(xi * xi, 0.0);
        assert!(oscillatory_bound_check(&bad, &c, 0, &ts, &ys).is_err());
        let tilted = |xi: f64| Complex64::new(0.1 * xi - xi * xi, 0.0);
        assert!(oscillatory_bound_check(&tilted, &c, 0, &ts, &ys).is_err());
    }
}
