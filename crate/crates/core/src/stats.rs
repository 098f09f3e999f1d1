//! Small-sample statistics for the paired comparison harness: Student-t
//! confidence intervals with the quantile computed from scratch.
//!
//! The quantile inverts the regularized incomplete beta function: for
//! `t >= 0` with `x = df / (df + t^2)`,
//! `P(T <= t) = 1 - I_x(df/2, 1/2) / 2`, so the two-sided multiplier at
//! level `p` solves `I_x(df/2, 1/2) = 2(1 - p)` and is
//! `t = sqrt(df (1 - x) / x)`. The incomplete beta uses the modified Lentz
//! continued fraction; the inversion is bisection polished to ~1e-12, well
//! inside the 1e-6 target.

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("need at least {need} samples, got {got}")]
    InsufficientSamples { need: usize, got: usize },
    #[error("confidence level must lie strictly between 0 and 1")]
    BadLevel,
}

/// ln Gamma(x) for x > 0 (Lanczos, g = 7, 9 coefficients).
pub fn ln_gamma(x: f64) -> f64 {
    const COEFFS: [f64; 8] = [
        676.5203681218851,
        -1259.1392167224028,
        771.32342877765313,
        -176.61502916214059,
        12.507343278686905,
        -0.13857109526572012,
        9.9843695780195716e-6,
        1.5056327351493116e-7,
    ];
    if x < 0.5 {
        // Reflection formula.
        return std::f64::consts::PI.ln()
            - (std::f64::consts::PI * x).sin().ln()
            - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = 0.99999999999980993;
    for (i, c) in COEFFS.iter().enumerate() {
        acc += c / (x + i as f64 + 1.0);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Continued fraction for the incomplete beta (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITER: usize = 300;
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta `I_x(a, b)`.
pub fn reg_inc_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front =
        ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

/// Two-sided Student-t multiplier: the `(1 + level) / 2` quantile with `df`
/// degrees of freedom.
pub fn t_quantile(df: usize, level: f64) -> Result<f64, StatsError> {
    if !(level > 0.0 && level < 1.0) {
        return Err(StatsError::BadLevel);
    }
    if df == 0 {
        return Err(StatsError::InsufficientSamples { need: 2, got: 1 });
    }
    let nu = df as f64;
    let target = 1.0 - level; // I_x(nu/2, 1/2) at the quantile
    // I_x is decreasing in t through x = nu / (nu + t^2); bisection on x.
    let f = |x: f64| reg_inc_beta(nu / 2.0, 0.5, x) - target;
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        // I_x is increasing in x.
        if f(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let x = 0.5 * (lo + hi);
    Ok((nu * (1.0 - x) / x).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConfidenceInterval {
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
    pub level: f64,
    pub n: usize,
}

/// Mean with a two-sided t interval: `mean +- t_{n-1,(1+level)/2} s/sqrt(n)`.
pub fn confidence_interval(samples: &[f64], level: f64) -> Result<ConfidenceInterval, StatsError> {
    let n = samples.len();
    if n < 2 {
        return Err(StatsError::InsufficientSamples { need: 2, got: n });
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(StatsError::BadLevel);
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    let var = samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0);
    let stderr = (var / n as f64).sqrt();
    let t = t_quantile(n - 1, level)?;
    Ok(ConfidenceInterval { mean, lo: mean - t * stderr, hi: mean + t * stderr, level, n })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn t_multipliers_match_tables() {
        // df = 9, 95%: 2.262157; df = 2: 4.302653; df = 29: 2.045230.
        assert!((t_quantile(9, 0.95).unwrap() - 2.2621571629).abs() < 1e-6);
        assert!((t_quantile(2, 0.95).unwrap() - 4.3026527297).abs() < 1e-6);
        assert!((t_quantile(29, 0.95).unwrap() - 2.0452296421).abs() < 1e-6);
        assert!((t_quantile(9, 0.99).unwrap() - 3.2498355416).abs() < 1e-6);
    }

    #[test]
    fn interval_on_tiny_sample_matches_hand_computation() {
        let ci = confidence_interval(&[1.0, 2.0, 3.0], 0.95).unwrap();
        assert!((ci.lo - (-0.4841377117)).abs() < 1e-6, "lo {}", ci.lo);
        assert!((ci.hi - 4.4841377117).abs() < 1e-6, "hi {}", ci.hi);
    }

    #[test]
    fn zero_variance_collapses_to_the_mean() {
        let ci = confidence_interval(&[2.5; 10], 0.95).unwrap();
        assert_eq!((ci.lo, ci.hi), (2.5, 2.5));
    }

    #[test]
    fn insufficient_samples_rejected() {
        assert_eq!(
            confidence_interval(&[1.0], 0.95).unwrap_err(),
            StatsError::InsufficientSamples { need: 2, got: 1 }
        );
    }

    #[test]
    fn incomplete_beta_endpoints() {
        assert_eq!(reg_inc_beta(2.0, 3.0, 0.0), 0.0);
        assert_eq!(reg_inc_beta(2.0, 3.0, 1.0), 1.0);
        // I_x(1, 1) = x.
        for x in [0.1, 0.5, 0.9] {
            assert!((reg_inc_beta(1.0, 1.0, x) - x).abs() < 1e-12);
        }
    }
}
