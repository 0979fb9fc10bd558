//! Reaction-diffusion systems `u_t = D u_xx + f(u)` with polynomial reactions.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// `coef * prod_j u_j^{exps[j]}`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Monomial {
    pub coef: f64,
    pub exps: Vec<u32>,
}

/// Reaction in the fixed polynomial-coefficient format: one list of monomials per component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyReaction {
    pub components: Vec<Vec<Monomial>>,
}

#[inline]
fn powi(x: f64, e: u32) -> f64 {
    match e {
        0 => 1.0,
        1 => x,
        2 => x * x,
        3 => x * x * x,
        _ => x.powi(e as i32),
    }
}

impl Monomial {
    pub fn new(coef: f64, exps: &[u32]) -> Self {
        Self { coef, exps: exps.to_vec() }
    }

    fn eval(&self, u: &[f64]) -> f64 {
        self.exps.iter().zip(u).fold(self.coef, |p, (&e, &x)| p * powi(x, e))
    }

    fn d1(&self, u: &[f64], a: usize) -> f64 {
        let ea = self.exps[a];
        if ea == 0 {
            return 0.0;
        }
        let mut p = self.coef * ea as f64;
        for (j, (&e, &x)) in self.exps.iter().zip(u).enumerate() {
            p *= if j == a { powi(x, e - 1) } else { powi(x, e) };
        }
        p
    }

    fn d2(&self, u: &[f64], a: usize, b: usize) -> f64 {
        let mut e = self.exps.clone();
        let mut c = self.coef;
        for k in [a, b] {
            if e[k] == 0 {
                return 0.0;
            }
            c *= e[k] as f64;
            e[k] -= 1;
        }
        e.iter().zip(u).fold(c, |p, (&ej, &x)| p * powi(x, ej))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RDSystem {
    pub name: String,
    pub n: usize,
    /// Row-major n×n diffusion matrix.
    pub diffusion: Vec<f64>,
    pub reaction: PolyReaction,
}

impl RDSystem {
    pub fn new(name: &str, diffusion: Vec<f64>, reaction: PolyReaction) -> Result<Self> {
        let n = reaction.components.len();
        if n == 0 {
            return Err(Error::InvalidParameter("system needs at least one component".into()));
        }
        if diffusion.len() != n * n {
            return Err(Error::DimensionMismatch { expected: n * n, got: diffusion.len() });
        }
        for comp in &reaction.components {
            for m in comp {
                if m.exps.len() != n {
                    return Err(Error::DimensionMismatch { expected: n, got: m.exps.len() });
                }
            }
        }
        let sys = Self { name: name.to_string(), n, diffusion, reaction };
        sys.check_diffusion()?;
        Ok(sys)
    }

    fn check_diffusion(&self) -> Result<()> {
        let n = self.n;
        let d = &self.diffusion;
        for i in 0..n {
            for j in 0..n {
                if (d[i * n + j] - d[j * n + i]).abs() > 1e-14 * (1.0 + d[i * n + j].abs()) {
                    return Err(Error::InvalidParameter("diffusion matrix is not symmetric".into()));
                }
            }
        }
        // Cholesky succeeds iff the symmetric matrix is positive definite.
        let mut l = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let s: f64 = (0..j).map(|k| l[i * n + k] * l[j * n + k]).sum();
                if i == j {
                    let v = d[i * n + i] - s;
                    if v <= 0.0 {
                        return Err(Error::InvalidParameter(
                            "diffusion matrix is not positive definite".into(),
                        ));
                    }
                    l[i * n + i] = v.sqrt();
                } else {
                    l[i * n + j] = (d[i * n + j] - s) / l[j * n + j];
                }
            }
        }
        Ok(())
    }

    pub fn d(&self, i: usize, j: usize) -> f64 {
        self.diffusion[i * self.n + j]
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.n {
            Err(Error::DimensionMismatch { expected: self.n, got: len })
        } else {
            Ok(())
        }
    }

    pub fn evaluate_reaction(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.check_len(u.len())?;
        let mut out = vec![0.0; self.n];
        self.f_into(u, &mut out);
        Ok(out)
    }

    pub fn evaluate_jacobian(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.check_len(u.len())?;
        let mut out = vec![0.0; self.n * self.n];
        self.jac_into(u, &mut out);
        Ok(out)
    }

    pub fn evaluate_hessian_bilinear(&self, u: &[f64], v: &[f64], w: &[f64]) -> Result<Vec<f64>> {
        self.check_len(u.len())?;
        self.check_len(v.len())?;
        self.check_len(w.len())?;
        let mut out = vec![0.0; self.n];
        self.hess_into(u, v, w, &mut out);
        Ok(out)
    }

    /// Unchecked evaluation used in inner loops.
    pub fn f_into(&self, u: &[f64], out: &mut [f64]) {
        for (o, comp) in out.iter_mut().zip(&self.reaction.components) {
            *o = comp.iter().map(|m| m.eval(u)).sum();
        }
    }

    pub fn jac_into(&self, u: &[f64], out: &mut [f64]) {
        let n = self.n;
        for (i, comp) in self.reaction.components.iter().enumerate() {
            for j in 0..n {
                out[i * n + j] = comp.iter().map(|m| m.d1(u, j)).sum();
            }
        }
    }

    pub fn hess_into(&self, u: &[f64], v: &[f64], w: &[f64], out: &mut [f64]) {
        let n = self.n;
        for (i, comp) in self.reaction.components.iter().enumerate() {
            let mut s = 0.0;
            for a in 0..n {
                for b in 0..n {
                    let c = v[a] * w[b];
                    if c != 0.0 {
                        s += c * comp.iter().map(|m| m.d2(u, a, b)).sum::<f64>();
                    }
                }
            }
            out[i] = s;
        }
    }

    /// Reaction on a stacked field (component blocks of length `npts`).
    pub fn f_field(&self, u: &[f64]) -> Vec<f64> {
        let n = self.n;
        let npts = u.len() / n;
        let mut out = vec![0.0; u.len()];
        let mut ui = vec![0.0; n];
        let mut fi = vec![0.0; n];
        for p in 0..npts {
            for c in 0..n {
                ui[c] = u[c * npts + p];
            }
            self.f_into(&ui, &mut fi);
            for c in 0..n {
                out[c * npts + p] = fi[c];
            }
        }
        out
    }

    /// Jacobian samples on a stacked field: entry (i,j) at point p is `out[(i*n+j)*npts + p]`.
    pub fn jac_field(&self, u: &[f64]) -> Vec<f64> {
        let n = self.n;
        let npts = u.len() / n;
        let mut out = vec![0.0; n * n * npts];
        let mut ui = vec![0.0; n];
        let mut ji = vec![0.0; n * n];
        for p in 0..npts {
            for c in 0..n {
                ui[c] = u[c * npts + p];
            }
            self.jac_into(&ui, &mut ji);
            for e in 0..n * n {
                out[e * npts + p] = ji[e];
            }
        }
        out
    }

    /// `f''(u)(v,w)` on stacked fields.
    pub fn hess_field(&self, u: &[f64], v: &[f64], w: &[f64]) -> Vec<f64> {
        let n = self.n;
        let npts = u.len() / n;
        let mut out = vec![0.0; u.len()];
        let (mut ui, mut vi, mut wi, mut hi) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        for p in 0..npts {
            for c in 0..n {
                ui[c] = u[c * npts + p];
                vi[c] = v[c * npts + p];
                wi[c] = w[c * npts + p];
            }
            self.hess_into(&ui, &vi, &wi, &mut hi);
            for c in 0..n {
                out[c * npts + p] = hi[c];
            }
        }
        out
    }

    /// `D` applied pointwise to a stacked field.
    pub fn apply_d(&self, u: &[f64]) -> Vec<f64> {
        let n = self.n;
        let npts = u.len() / n;
        let mut out = vec![0.0; u.len()];
        for i in 0..n {
            for j in 0..n {
                let dij = self.d(i, j);
                if dij != 0.0 {
                    for p in 0..npts {
                        out[i * npts + p] += dij * u[j * npts + p];
                    }
                }
            }
        }
        out
    }
}

/// Preset parameters; unused fields are ignored by presets that do not need them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PresetParams {
    pub a: f64,
    pub b: f64,
    pub du: f64,
    pub dv: f64,
    pub rate: f64,
}

impl Default for PresetParams {
    fn default() -> Self {
        Self { a: 1.0, b: 3.0, du: 1.0, dv: 1.0, rate: 1.0 }
    }
}

pub fn preset(name: &str) -> Result<RDSystem> {
    let p = match name {
        "schnakenberg" => PresetParams { a: 0.05, b: 0.5, du: 1.0, dv: 1.0, rate: 1.0 },
        _ => PresetParams::default(),
    };
    preset_with(name, &p)
}

pub fn preset_with(name: &str, p: &PresetParams) -> Result<RDSystem> {
    let m = Monomial::new;
    match name {
        "real-ginzburg-landau" => RDSystem::new(
            name,
            vec![1.0, 0.0, 0.0, 1.0],
            PolyReaction {
                components: vec![
                    vec![m(1.0, &[1, 0]), m(-1.0, &[3, 0]), m(-1.0, &[1, 2])],
                    vec![m(1.0, &[0, 1]), m(-1.0, &[2, 1]), m(-1.0, &[0, 3])],
                ],
            },
        ),
        "brusselator" => {
            let r = p.rate;
            RDSystem::new(
                name,
                vec![p.du, 0.0, 0.0, p.dv],
                PolyReaction {
                    components: vec![
                        vec![m(r * p.a, &[0, 0]), m(-r * (p.b + 1.0), &[1, 0]), m(r, &[2, 1])],
                        vec![m(r * p.b, &[1, 0]), m(-r, &[2, 1])],
                    ],
                },
            )
        }
        "schnakenberg" => {
            let r = p.rate;
            RDSystem::new(
                name,
                vec![p.du, 0.0, 0.0, p.dv],
                PolyReaction {
                    components: vec![
                        vec![m(r * p.a, &[0, 0]), m(-r, &[1, 0]), m(r, &[2, 1])],
                        vec![m(r * p.b, &[0, 0]), m(-r, &[2, 1])],
                    ],
                },
            )
        }
        other => Err(Error::UnknownPreset(other.to_string())),
    }
}

/// Homogeneous steady state of a preset, when known in closed form.
pub fn preset_equilibrium(name: &str, p: &PresetParams) -> Option<Vec<f64>> {
    match name {
        "real-ginzburg-landau" => Some(vec![0.0, 0.0]),
        "brusselator" => Some(vec![p.a, p.b / p.a]),
        "schnakenberg" => {
            let s = p.a + p.b;
            Some(vec![s, p.b / (s * s)])
        }
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fd_jacobian(sys: &RDSystem, u: &[f64], h: f64) -> Vec<f64> {
        let n = sys.n;
        let mut out = vec![0.0; n * n];
        for j in 0..n {
            let mut up = u.to_vec();
            let mut um = u.to_vec();
            up[j] += h;
            um[j] -= h;
            let fp = sys.evaluate_reaction(&up).unwrap();
            let fm = sys.evaluate_reaction(&um).unwrap();
            for i in 0..n {
                out[i * n + j] = (fp[i] - fm[i]) / (2.0 * h);
            }
        }
        out
    }

    #[test]
    fn real_gl_values() {
        let s = preset("real-ginzburg-landau").unwrap();
        assert_eq!(s.evaluate_reaction(&[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(s.evaluate_reaction(&[1.0, 0.0]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(s.evaluate_reaction(&[2.0, 0.0]).unwrap(), vec![-6.0, 0.0]);
        assert_eq!(s.evaluate_jacobian(&[0.0, 0.0]).unwrap(), vec![1.0, 0.0, 0.0, 1.0]);
        let h = s.evaluate_hessian_bilinear(&[1.0, 0.0], &[1.0, 0.0], &[1.0, 0.0]).unwrap();
        assert_eq!(h, vec![-6.0, 0.0]);
        assert_eq!(s.n, 2);
        assert_eq!(s.diffusion, vec![1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn hessian_matches_second_differences() {
        let s = preset("real-ginzburg-landau").unwrap();
        let u = [1.0, 0.0];
        let e = 1e-4;
        let f = |x: f64| s.evaluate_reaction(&[x, 0.0]).unwrap()[0];
        let fd = (f(u[0] + e) - 2.0 * f(u[0]) + f(u[0] - e)) / (e * e);
        assert!((fd + 6.0).abs() < 1e-5);
    }

    #[test]
    fn brusselator_equilibrium() {
        for (a, b) in [(1.0, 3.0), (1.0, 2.2), (2.0, 5.5)] {
            let p = PresetParams { a, b, ..Default::default() };
            let s = preset_with("brusselator", &p).unwrap();
            let eq = preset_equilibrium("brusselator", &p).unwrap();
            assert_eq!(eq, vec![a, b / a]);
            let f = s.evaluate_reaction(&eq).unwrap();
            assert!(f.iter().all(|v| v.abs() < 1e-14));
        }
        let p = PresetParams { a: 0.1, b: 0.9, ..Default::default() };
        let s = preset_with("schnakenberg", &p).unwrap();
        let f = s.evaluate_reaction(&preset_equilibrium("schnakenberg", &p).unwrap()).unwrap();
        assert!(f.iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn unknown_preset_and_bad_inputs() {
        assert!(matches!(preset("unknown"), Err(Error::UnknownPreset(_))));
        let s = preset("brusselator").unwrap();
        assert!(matches!(
            s.evaluate_reaction(&[1.0]),
            Err(Error::DimensionMismatch { expected: 2, got: 1 })
        ));
        let p = PresetParams { du: -1.0, ..Default::default() };
        assert!(preset_with("brusselator", &p).is_err());
    }

    #[test]
    fn jacobian_ratio_test() {
        // Central-difference error is O(h^2) in the Jacobian, O(h^3) in the action.
        for name in ["real-ginzburg-landau", "brusselator", "schnakenberg"] {
            let s = preset(name).unwrap();
            let u = [0.7, -1.3];
            let dir = [0.6, 0.8];
            let err = |h: f64| {
                let up: Vec<f64> = u.iter().zip(&dir).map(|(a, b)| a + h * b).collect();
                let um: Vec<f64> = u.iter().zip(&dir).map(|(a, b)| a - h * b).collect();
                let fp = s.evaluate_reaction(&up).unwrap();
                let fm = s.evaluate_reaction(&um).unwrap();
                let j = s.evaluate_jacobian(&u).unwrap();
                (0..2)
                    .map(|i| {
                        let jh = h * (j[i * 2] * dir[0] + j[i * 2 + 1] * dir[1]);
                        (jh - (fp[i] - fm[i]) / 2.0).powi(2)
                    })
                    .sum::<f64>()
                    .sqrt()
            };
            let r = err(1e-2) / err(5e-3);
            assert!((r - 8.0).abs() < 0.5, "{name}: ratio {r}");
        }
    }

    proptest! {
        #[test]
        fn jacobian_matches_finite_differences(u0 in -2.0f64..2.0, u1 in -2.0f64..2.0, which in 0usize..3) {
            let name = ["real-ginzburg-landau", "brusselator", "schnakenberg"][which];
            let s = preset(name).unwrap();
            let u = [u0, u1];
            let j = s.evaluate_jacobian(&u).unwrap();
            let fd = fd_jacobian(&s, &u, 1e-5);
            let scale = j.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            for (a, b) in j.iter().zip(&fd) {
                prop_assert!((a - b).abs() < 1e-6 * scale);
            }
        }

        #[test]
        fn hessian_is_symmetric(u in prop::array::uniform2(-2.0f64..2.0),
                                v in prop::array::uniform2(-2.0f64..2.0),
                                w in prop::array::uniform2(-2.0f64..2.0),
                                which in 0usize..3) {
            let name = ["real-ginzburg-landau", "brusselator", "schnakenberg"][which];
            let s = preset(name).unwrap();
            let a = s.evaluate_hessian_bilinear(&u, &v, &w).unwrap();
            let b = s.evaluate_hessian_bilinear(&u, &w, &v).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()));
            }
        }

        #[test]
        fn hessian_matches_jacobian_differences(u in prop::array::uniform2(-2.0f64..2.0),
                                                v in prop::array::uniform2(-1.0f64..1.0),
                                                which in 0usize..3) {
            let name = ["real-ginzburg-landau", "brusselator", "schnakenberg"][which];
            let s = preset(name).unwrap();
            let h = 1e-5;
            let up = [u[0] + h * v[0], u[1] + h * v[1]];
            let um = [u[0] - h * v[0], u[1] - h * v[1]];
            let jp = s.evaluate_jacobian(&up).unwrap();
            let jm = s.evaluate_jacobian(&um).unwrap();
            let hv = s.evaluate_hessian_bilinear(&u, &v, &v).unwrap();
            for i in 0..2 {
                let fd = ((jp[i * 2] - jm[i * 2]) * v[0] + (jp[i * 2 + 1] - jm[i * 2 + 1]) * v[1]) / (2.0 * h);
                prop_assert!((fd - hv[i]).abs() < 1e-6 * (1.0 + hv[i].abs()));
            }
        }
    }
}
