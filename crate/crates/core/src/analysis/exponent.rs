//! Power-law exponents `σ²(t) ∝ t^α` from log-log least squares.
//!
//! Confidence intervals come from a circular moving-block bootstrap of the
//! log-log residuals, which keeps the serial correlation of neighbouring time
//! samples.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MIN_WINDOW_POINTS: usize = 5;
/// Default start of fit windows; earlier times are the initial transient.
pub const DEFAULT_T_MIN: f64 = 2.0;
pub const DEFAULT_BOOTSTRAP: usize = 2000;

#[derive(Debug, Error)]
pub enum ExponentError {
    #[error("window holds {0} points, need at least {MIN_WINDOW_POINTS}")]
    WindowTooShort(usize),
    #[error("non-positive value {value} at t = {t}")]
    NonPositive { t: f64, value: f64 },
    #[error("{times} times but {values} values")]
    LengthMismatch { times: usize, values: usize },
    #[error("all times in the window coincide")]
    Degenerate,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitWindow {
    pub t_min: f64,
    pub t_max: f64,
}

impl FitWindow {
    pub fn new(t_min: f64, t_max: f64) -> Self { Self { t_min, t_max } }

    pub fn contains(&self, t: f64) -> bool { t >= self.t_min && t <= self.t_max }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExponentFit {
    pub alpha: f64,
    /// `ln A` in `σ² ≈ A t^α`.
    pub intercept: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_points: usize,
    pub window: FitWindow,
    pub residual_rms: f64,
}

fn ols(x: &[f64], y: &[f64]) -> Result<(f64, f64), ExponentError> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx <= 0.0 {
        return Err(ExponentError::Degenerate);
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

/// Fits `ln σ² = ln A + α ln t` over the window with a seeded block bootstrap
/// (95% percentile interval).
pub fn fit_exponent_with(
    times: &[f64],
    values: &[f64],
    window: FitWindow,
    resamples: usize,
    seed: u64,
) -> Result<ExponentFit, ExponentError> {
    if times.len() != values.len() {
        return Err(ExponentError::LengthMismatch { times: times.len(), values: values.len() });
    }
    let mut lx = Vec::new();
    let mut ly = Vec::new();
    for (&t, &v) in times.iter().zip(values) {
        if !window.contains(t) {
            continue;
        }
        if !(v > 0.0 && t > 0.0) {
            return Err(ExponentError::NonPositive { t, value: v });
        }
        lx.push(t.ln());
        ly.push(v.ln());
    }
    let n = lx.len();
    if n < MIN_WINDOW_POINTS {
        return Err(ExponentError::WindowTooShort(n));
    }
    let (alpha, intercept) = ols(&lx, &ly)?;
    let resid: Vec<f64> = lx.iter().zip(&ly).map(|(x, y)| y - (intercept + alpha * x)).collect();
    let residual_rms = (resid.iter().map(|r| r * r).sum::<f64>() / n as f64).sqrt();

    let block = ((n as f64).cbrt().round() as usize).max(2).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut slopes = Vec::with_capacity(resamples);
    let mut ystar = vec![0.0; n];
    for _ in 0..resamples {
        let mut filled = 0;
        while filled < n {
            let start = rng.gen_range(0..n);
            for j in 0..block.min(n - filled) {
                let r = resid[(start + j) % n];
                ystar[filled] = intercept + alpha * lx[filled] + r;
                filled += 1;
            }
        }
        slopes.push(ols(&lx, &ystar)?.0);
    }
    let (ci_low, ci_high) = if slopes.is_empty() {
        (alpha, alpha)
    } else {
        slopes.sort_by(f64::total_cmp);
        let q = |p: f64| slopes[((p * (slopes.len() - 1) as f64).round() as usize).min(slopes.len() - 1)];
        (q(0.025).min(alpha), q(0.975).max(alpha))
    };
    Ok(ExponentFit { alpha, intercept, ci_low, ci_high, n_points: n, window, residual_rms })
}

pub fn fit_exponent(times: &[f64], values: &[f64], window: FitWindow) -> Result<ExponentFit, ExponentError> {
    fit_exponent_with(times, values, window, DEFAULT_BOOTSTRAP, 0)
}
