//! Least-squares decay fits against `(1+t)`.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    /// Half-width of the 95% confidence interval of the slope.
    pub ci95: f64,
    pub points: usize,
}

fn line_fit(x: &[f64], y: &[f64]) -> Result<SlopeFit> {
    let n = x.len();
    if n < 3 {
        return Err(Error::Fit(format!("need at least 3 points, have {n}")));
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    if sxx <= 0.0 {
        return Err(Error::Fit("degenerate abscissae".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let r2 = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    let se = (sse / (n as f64 - 2.0) / sxx).sqrt();
    Ok(SlopeFit { slope, intercept, r2, ci95: 1.96 * se, points: n })
}

fn window(t: &[f64], y: &[f64], t_min: f64, t_max: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if t.len() != y.len() {
        return Err(Error::DimensionMismatch { expected: t.len(), got: y.len() });
    }
    let mut xs = vec![];
    let mut ys = vec![];
    for (&ti, &yi) in t.iter().zip(y) {
        if ti >= t_min && ti <= t_max {
            if !(yi > 0.0) || !yi.is_finite() {
                return Err(Error::Fit(format!("non-positive value {yi} at t = {ti}")));
            }
            xs.push(ti);
            ys.push(yi);
        }
    }
    Ok((xs, ys))
}

/// Fit `y ≈ c (1+t)^p` over `t ∈ [t_min, t_max]`.
pub fn power_fit(t: &[f64], y: &[f64], t_min: f64, t_max: f64) -> Result<SlopeFit> {
    let (ts, ys) = window(t, y, t_min, t_max)?;
    let x: Vec<f64> = ts.iter().map(|v| (1.0 + v).ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    line_fit(&x, &ly)
}

/// Fit `y ≈ c log(2+t) (1+t)^p`.
pub fn log_corrected_fit(t: &[f64], y: &[f64], t_min: f64, t_max: f64) -> Result<SlopeFit> {
    let (ts, ys) = window(t, y, t_min, t_max)?;
    let x: Vec<f64> = ts.iter().map(|v| (1.0 + v).ln()).collect();
    let ly: Vec<f64> = ts.iter().zip(&ys).map(|(t, v)| (v / (2.0 + t).ln()).ln()).collect();
    line_fit(&x, &ly)
}

/// Geometric time grid `t0, t0·r, t0·r², …` up to and including the last point `≤ t_end`.
pub fn geometric_times(t0: f64, ratio: f64, t_end: f64) -> Vec<f64> {
    let mut out = vec![];
    let mut t = t0;
    while t <= t_end * (1.0 + 1e-12) {
        out.push(t);
        t *= ratio;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn exact_power_law() {
        let t = geometric_times(1.0, 1.25, 200.0);
        let y: Vec<f64> = t.iter().map(|t| 3.0 * (1.0 + t).powf(-0.7)).collect();
        let f = power_fit(&t, &y, 4.0, 100.0).unwrap();
        assert!((f.slope + 0.7).abs() < 1e-12);
        assert!((f.r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn log_factor_is_removed() {
        let t = geometric_times(0.5, 1.25, 200.0);
        let y: Vec<f64> = t.iter().map(|t| (2.0 + t).ln() / (1.0 + t)).collect();
        assert!((log_corrected_fit(&t, &y, 10.0, 200.0).unwrap().slope + 1.0).abs() < 1e-12);
        assert!(power_fit(&t, &y, 10.0, 200.0).unwrap().slope > -0.85);
    }

    #[test]
    fn rejects_nonpositive() {
        let t = [1.0, 2.0, 3.0, 4.0];
        assert!(power_fit(&t, &[1.0, 0.0, 1.0, 1.0], 0.0, 10.0).is_err());
        assert!(power_fit(&t, &[1.0, 2.0], 0.0, 10.0).is_err());
    }

    proptest! {
        #[test]
        fn slope_is_scale_invariant(p in -2.0f64..1.0, c in 1e-6f64..1e6) {
            let t = geometric_times(1.0, 1.25, 100.0);
            let y: Vec<f64> = t.iter().map(|t| c * (1.0 + t).powf(p)).collect();
            let f = power_fit(&t, &y, 1.0, 100.0).unwrap();
            prop_assert!((f.slope - p).abs() < 1e-9);
        }
    }
}
