//! Log-log least squares with residual-bootstrap confidence intervals.

use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const BOOTSTRAP_RESAMPLES: usize = 200;
pub const BOOTSTRAP_SEED: u64 = 0xF17;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerFit {
    pub slope: f64,
    pub intercept: f64,
    /// 95% bootstrap interval for the slope
    pub ci: (f64, f64),
    pub points: usize,
}

/// Ordinary least squares `y = a + b x`; returns `(a, b)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let b = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (my - b * mx, b)
}

/// Fits `log y = a + b log x` with a seeded residual bootstrap.
pub fn power_law(x: &[f64], y: &[f64]) -> Result<PowerFit> {
    power_law_seeded(x, y, BOOTSTRAP_SEED)
}

pub fn power_law_seeded(x: &[f64], y: &[f64], seed: u64) -> Result<PowerFit> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch { expected: x.len(), got: y.len() });
    }
    if x.len() < 3 || x.iter().chain(y).any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::FitWindow(format!("need ≥ 3 positive finite points, got {}", x.len())));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let (a, b) = linear_fit(&lx, &ly);
    let fitted: Vec<f64> = lx.iter().map(|v| a + b * v).collect();
    let resid: Vec<f64> = ly.iter().zip(&fitted).map(|(l, f)| l - f).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut slopes = Vec::with_capacity(BOOTSTRAP_RESAMPLES);
    let mut yb = vec![0.0; ly.len()];
    for _ in 0..BOOTSTRAP_RESAMPLES {
        for (i, v) in yb.iter_mut().enumerate() {
            *v = fitted[i] + resid[rng.random_range(0..resid.len())];
        }
        slopes.push(linear_fit(&lx, &yb).1);
    }
    slopes.sort_by(|p, q| p.partial_cmp(q).unwrap());
    let q = |p: f64| slopes[((p * (slopes.len() - 1) as f64).round()) as usize];
    Ok(PowerFit { slope: b, intercept: a, ci: (q(0.025), q(0.975)), points: x.len() })
}

/// Running maximum from the right: the smallest nonincreasing majorant.
pub fn monotone_envelope(y: &[f64]) -> Vec<f64> {
    let mut out = y.to_vec();
    for i in (0..out.len().saturating_sub(1)).rev() {
        out[i] = out[i].max(out[i + 1]);
    }
    out
}

/// `n` geometrically spaced points from `a` to `b` inclusive.
pub fn geomspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![a];
    }
    let (la, lb) = (a.ln(), b.ln());
    (0..n).map(|i| (la + (lb - la) * i as f64 / (n - 1) as f64).exp()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn exact_power_law() {
        let x = geomspace(1.0, 100.0, 12);
        let y: Vec<f64> = x.iter().map(|t| 3.0 * t.powf(-1.5)).collect();
        let f = power_law(&x, &y).unwrap();
        assert_relative_eq!(f.slope, -1.5, epsilon = 1e-12);
        assert_relative_eq!(f.intercept, 3f64.ln(), epsilon = 1e-12);
        assert!((f.ci.1 - f.ci.0).abs() < 1e-10);
    }

    #[test]
    fn constant_series_has_zero_slope() {
        let x = geomspace(1.0, 10.0, 8);
        let f = power_law(&x, &[2.0; 8]).unwrap();
        assert!(f.slope.abs() < 1e-12);
        assert!(f.ci.0 <= 0.0 + 1e-12 && f.ci.1 >= -1e-12);
    }

    #[test]
    fn noisy_power_law_covers_truth() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = geomspace(1.0, 1000.0, 40);
        let y: Vec<f64> = x
            .iter()
            .map(|t| t.powf(-0.8) * (1.0 + 0.01 * (rng.random::<f64>() * 2.0 - 1.0) * 3f64.sqrt()))
            .collect();
        let f = power_law(&x, &y).unwrap();
        assert!(f.ci.0 <= -0.8 && -0.8 <= f.ci.1, "{f:?}");
    }

    #[test]
    fn rejects_short_or_nonpositive() {
        assert!(power_law(&[1.0, 2.0], &[1.0, 2.0]).is_err());
        assert!(power_law(&[1.0, 2.0, 3.0], &[1.0, 0.0, 2.0]).is_err());
    }

    #[test]
    fn envelope_is_nonincreasing_majorant() {
        let e = monotone_envelope(&[3.0, 1.0, 2.0, 0.5, 0.7]);
        assert_eq!(e, vec![3.0, 2.0, 2.0, 0.7, 0.7]);
    }
}
