//! Cubic smoothing splines with generalized cross-validation.
//!
//! The fit is split into a least-squares cubic `p(t)` and a natural smoothing
//! spline `g(t)` of the residuals, minimizing
//!
//! ```text
//!   Σ (y_i - p(t_i) - g(t_i))² + λ ∫ g''(t)² dt
//! ```
//!
//! so cubics are reproduced exactly at any `λ` and the free ends do not pull
//! the curvature to zero. `g` follows the Reinsch construction: with the
//! banded matrices `Q` (n × n-2) and `R` (n-2 × n-2) built from the knot
//! spacings, the fitted residual values are `(I + λ Q R⁻¹ Qᵀ)⁻¹ r`. GCV uses
//! the eigendecomposition of `K = Q R⁻¹ Qᵀ`, which makes every trial `λ`
//! cost `O(n)`.

use ndarray::{Array1, Array2};
use ndarray_linalg::{Eigh, Inverse, QR, UPLO};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MIN_POINTS: usize = 10;

#[derive(Debug, Error)]
pub enum SplineError {
    #[error("need at least {MIN_POINTS} points, got {0}")]
    TooFewPoints(usize),
    #[error("{times} times but {values} values")]
    LengthMismatch { times: usize, values: usize },
    #[error("times must be strictly increasing (index {0})")]
    NonMonotone(usize),
    #[error("non-finite input at index {0}")]
    NonFinite(usize),
    #[error("smoothing parameter must be finite and non-negative, got {0}")]
    InvalidLambda(f64),
    #[error("derivative order {0} is not supported")]
    Order(usize),
    #[error("linear algebra failure: {0}")]
    Linalg(String),
}

type SplineResult<T> = Result<T, SplineError>;

fn linalg(e: ndarray_linalg::error::LinalgError) -> SplineError { SplineError::Linalg(e.to_string()) }

/// Piecewise cubic; on `[knots[i], knots[i+1]]` the value is
/// `a + b s + c s² + d s³` with `s = t - knots[i]` and `coeffs[i] = [a, b, c, d]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplineModel {
    pub knots: Vec<f64>,
    pub coeffs: Vec<[f64; 4]>,
    pub lambda: f64,
    /// Trace of the hat matrix (effective degrees of freedom).
    pub edf: f64,
}

impl SplineModel {
    fn interval(&self, t: f64) -> usize {
        let n = self.knots.len();
        match self.knots.binary_search_by(|k| k.total_cmp(&t)) {
            Ok(i) => i.min(n - 2),
            Err(0) => 0,
            Err(i) => (i - 1).min(n - 2),
        }
    }

    /// Value (`order = 0`) or derivative of order 1..=3 at `t`. Outside the
    /// knot range the end pieces are extended.
    pub fn eval(&self, t: f64, order: usize) -> SplineResult<f64> {
        let i = self.interval(t);
        let [a, b, c, d] = self.coeffs[i];
        let s = t - self.knots[i];
        Ok(match order {
            0 => a + s * (b + s * (c + s * d)),
            1 => b + s * (2.0 * c + 3.0 * s * d),
            2 => 2.0 * c + 6.0 * s * d,
            3 => 6.0 * d,
            other => return Err(SplineError::Order(other)),
        })
    }

    /// Derivative of order 1 or 2 at every knot.
    pub fn derivative(&self, order: usize) -> SplineResult<Vec<f64>> {
        if !(1..=2).contains(&order) {
            return Err(SplineError::Order(order));
        }
        self.knots.iter().map(|&t| self.eval(t, order)).collect()
    }

    pub fn fitted(&self) -> Vec<f64> { self.knots.iter().map(|&t| self.eval(t, 0).unwrap_or(f64::NAN)).collect() }
}

fn validate(times: &[f64], values: &[f64]) -> SplineResult<()> {
    if times.len() != values.len() {
        return Err(SplineError::LengthMismatch { times: times.len(), values: values.len() });
    }
    if times.len() < MIN_POINTS {
        return Err(SplineError::TooFewPoints(times.len()));
    }
    for (i, (t, y)) in times.iter().zip(values).enumerate() {
        if !t.is_finite() || !y.is_finite() {
            return Err(SplineError::NonFinite(i));
        }
    }
    if let Some(i) = times.windows(2).position(|w| w[1] <= w[0]) {
        return Err(SplineError::NonMonotone(i + 1));
    }
    Ok(())
}

/// Least-squares cubic in the scaled variable `u = (t - t_mid)/t_half`.
struct CubicTrend {
    mid: f64,
    half: f64,
    coef: [f64; 4],
    /// Orthonormal basis of the cubic column space at the knots.
    basis: Array2<f64>,
}

impl CubicTrend {
    fn fit(times: &[f64], values: &[f64]) -> SplineResult<Self> {
        let n = times.len();
        let mid = 0.5 * (times[0] + times[n - 1]);
        let half = 0.5 * (times[n - 1] - times[0]);
        let v = Array2::from_shape_fn((n, 4), |(i, j)| ((times[i] - mid) / half).powi(j as i32));
        let (q, r) = v.qr().map_err(linalg)?;
        let qty = q.t().dot(&Array1::from_vec(values.to_vec()));
        // back substitution on the 4×4 triangle
        let mut coef = [0.0; 4];
        for i in (0..4).rev() {
            let tail: f64 = (i + 1..4).map(|j| r[[i, j]] * coef[j]).sum();
            coef[i] = (qty[i] - tail) / r[[i, i]];
        }
        Ok(Self { mid, half, coef, basis: q })
    }

    /// `[p, p', p'', p''']` at `t`.
    fn taylor(&self, t: f64) -> [f64; 4] {
        let u = (t - self.mid) / self.half;
        let [c0, c1, c2, c3] = self.coef;
        let h = self.half;
        [
            c0 + u * (c1 + u * (c2 + u * c3)),
            (c1 + u * (2.0 * c2 + 3.0 * u * c3)) / h,
            (2.0 * c2 + 6.0 * u * c3) / (h * h),
            6.0 * c3 / (h * h * h),
        ]
    }
}

/// Reinsch `Q` and `R` for the knot spacings.
fn reinsch_matrices(times: &[f64]) -> (Array2<f64>, Array2<f64>) {
    let n = times.len();
    let h: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();
    let mut q = Array2::zeros((n, n - 2));
    let mut r = Array2::zeros((n - 2, n - 2));
    for j in 1..n - 1 {
        let c = j - 1;
        q[[j - 1, c]] = 1.0 / h[j - 1];
        q[[j, c]] = -1.0 / h[j - 1] - 1.0 / h[j];
        q[[j + 1, c]] = 1.0 / h[j];
        r[[c, c]] = (h[j - 1] + h[j]) / 3.0;
        if c + 1 < n - 2 {
            r[[c, c + 1]] = h[j] / 6.0;
            r[[c + 1, c]] = h[j] / 6.0;
        }
    }
    (q, r)
}

/// Second derivatives at the interior knots of the natural cubic spline
/// interpolating `g`.
fn natural_second_derivatives(q: &Array2<f64>, r_inv: &Array2<f64>, g: &Array1<f64>) -> Vec<f64> {
    let gamma = r_inv.dot(&q.t().dot(g));
    let mut out = Vec::with_capacity(g.len());
    out.push(0.0);
    out.extend(gamma.iter());
    out.push(0.0);
    out
}

struct Spectral {
    eig: Array1<f64>,
    /// `Uᵀ r` for the detrended data.
    ur: Array1<f64>,
    /// Squared norms of the rows of `Uᵀ B` (overlap with the cubic space).
    ub: Array1<f64>,
}

impl Spectral {
    fn shrink(&self, lambda: f64) -> impl Iterator<Item = f64> + '_ {
        self.eig.iter().map(move |&k| 1.0 / (1.0 + lambda * k.max(0.0)))
    }

    fn gcv(&self, lambda: f64) -> (f64, f64, f64) {
        let n = self.eig.len() as f64;
        let mut rss = 0.0;
        let mut tr_s = 0.0;
        let mut tr_sp = 0.0;
        for ((s, ur), ub) in self.shrink(lambda).zip(&self.ur).zip(&self.ub) {
            rss += ((1.0 - s) * ur).powi(2);
            tr_s += s;
            tr_sp += s * ub;
        }
        let edf = 4.0 + tr_s - tr_sp;
        (n * rss / (n - edf).powi(2), rss, edf)
    }
}

/// GCV-optimal `λ`: a log grid over the spectrum's natural scale, then a
/// golden-section refinement in `log λ`.
fn choose_lambda(spec: &Spectral, data_scale: f64) -> f64 {
    let positive: Vec<f64> = spec.eig.iter().copied().filter(|&k| k > 1e-12 * spec.eig[spec.eig.len() - 1]).collect();
    let scale = if positive.is_empty() { 1.0 } else { 1.0 / positive[positive.len() / 2] };
    let n = spec.eig.len() as f64;
    let total: f64 = spec.ur.iter().map(|v| v * v).sum();
    if total <= 1e-26 * data_scale.max(f64::MIN_POSITIVE) {
        // data is a cubic to rounding; any λ reproduces it
        return 0.0;
    }
    let score = |log_l: f64| {
        let (g, _, edf) = spec.gcv(scale * 10f64.powf(log_l));
        if n - edf < 1e-3 {
            f64::INFINITY
        } else {
            g
        }
    };
    let grid: Vec<f64> = (0..=200).map(|i| -10.0 + 0.1 * i as f64).collect();
    let scores: Vec<f64> = grid.iter().map(|&g| score(g)).collect();
    let best = scores.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).map(|(i, _)| i).unwrap_or(0);
    let (mut lo, mut hi) = (grid[best.saturating_sub(1)], grid[(best + 1).min(grid.len() - 1)]);
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = hi - phi * (hi - lo);
    let mut x2 = lo + phi * (hi - lo);
    let (mut f1, mut f2) = (score(x1), score(x2));
    for _ in 0..40 {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - phi * (hi - lo);
            f1 = score(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + phi * (hi - lo);
            f2 = score(x2);
        }
    }
    let refined = 0.5 * (lo + hi);
    let log_l = if score(refined) <= scores[best] { refined } else { grid[best] };
    scale * 10f64.powf(log_l)
}

/// Fits a smoothing spline; `lambda = None` selects it by GCV.
pub fn spline_fit(times: &[f64], values: &[f64], lambda: Option<f64>) -> SplineResult<SplineModel> {
    validate(times, values)?;
    if let Some(l) = lambda {
        if !(l.is_finite() && l >= 0.0) {
            return Err(SplineError::InvalidLambda(l));
        }
    }
    let n = times.len();
    let trend = CubicTrend::fit(times, values)?;
    let y = Array1::from_vec(values.to_vec());
    let p_y = trend.basis.dot(&trend.basis.t().dot(&y));
    let resid = &y - &p_y;

    let (q, r) = reinsch_matrices(times);
    let r_inv = r.inv().map_err(linalg)?;
    let k = q.dot(&r_inv).dot(&q.t());
    let (eig, u) = k.eigh(UPLO::Upper).map_err(linalg)?;
    let ur = u.t().dot(&resid);
    let ub = u.t().dot(&trend.basis).mapv(|v| v * v).sum_axis(ndarray::Axis(1));
    let spec = Spectral { eig, ur, ub };

    let data_scale: f64 = y.iter().map(|v| v * v).sum();
    let lambda = match lambda {
        Some(l) => l,
        None => choose_lambda(&spec, data_scale),
    };
    let shrunk: Array1<f64> = spec.shrink(lambda).zip(&spec.ur).map(|(s, v)| s * v).collect();
    let g = u.dot(&shrunk);
    let (_, _, edf) = spec.gcv(lambda);

    let gamma = natural_second_derivatives(&q, &r_inv, &g);
    let mut coeffs = Vec::with_capacity(n - 1);
    for i in 0..n - 1 {
        let h = times[i + 1] - times[i];
        let a = g[i];
        let c = gamma[i] / 2.0;
        let d = (gamma[i + 1] - gamma[i]) / (6.0 * h);
        let b = (g[i + 1] - g[i]) / h - h * (2.0 * gamma[i] + gamma[i + 1]) / 6.0;
        let [p0, p1, p2, p3] = trend.taylor(times[i]);
        coeffs.push([a + p0, b + p1, c + p2 / 2.0, d + p3 / 6.0]);
    }
    Ok(SplineModel { knots: times.to_vec(), coeffs, lambda, edf })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoStage {
    pub d1: Vec<f64>,
    pub d2: Vec<f64>,
    pub lambda1: f64,
    pub lambda2: f64,
}

/// Lag-one autocorrelation of the mean-removed first differences. White
/// noise gives `-1/2`; noise correlated over several samples pushes it up
/// towards zero or beyond.
fn difference_autocorrelation(values: &[f64]) -> f64 {
    let d: Vec<f64> = values.windows(2).map(|w| w[1] - w[0]).collect();
    let mean = d.iter().sum::<f64>() / d.len() as f64;
    let c: Vec<f64> = d.iter().map(|v| v - mean).collect();
    let var: f64 = c.iter().map(|v| v * v).sum();
    if var <= 0.0 {
        return -0.5;
    }
    c.windows(2).map(|w| w[0] * w[1]).sum::<f64>() / var
}

/// Smallest thinning step whose first differences look uncorrelated
/// (autocorrelation below half the white-noise value), keeping at least
/// `2 · MIN_POINTS` samples.
pub fn decorrelation_step(values: &[f64]) -> usize {
    let max_step = (values.len() / (2 * MIN_POINTS)).max(1);
    (1..=max_step)
        .find(|&m| {
            let thinned: Vec<f64> = values.iter().step_by(m).copied().collect();
            thinned.len() < 4 || difference_autocorrelation(&thinned) < -0.25
        })
        .unwrap_or(max_step)
}

/// GCV `λ` that tolerates serially correlated noise: GCV on the series
/// thinned by [`decorrelation_step`], scaled back by the ratio of sample
/// counts since the residual sum grows with the number of points.
pub fn select_lambda(times: &[f64], values: &[f64]) -> SplineResult<f64> {
    validate(times, values)?;
    let m = decorrelation_step(values);
    if m == 1 {
        return Ok(spline_fit(times, values, None)?.lambda);
    }
    let t: Vec<f64> = times.iter().step_by(m).copied().collect();
    let v: Vec<f64> = values.iter().step_by(m).copied().collect();
    let thinned = spline_fit(&t, &v, None)?;
    Ok(thinned.lambda * times.len() as f64 / t.len() as f64)
}

/// First derivative of a spline fit, and second derivative from a second
/// spline fitted to that first-derivative series. Both stages use the same
/// `λ`; without one it comes from [`select_lambda`] on the data. `λ` carries
/// units of time³ only, so it sets the same smoothing scale in both stages,
/// whereas GCV on the already smooth first derivative would interpolate it.
pub fn two_stage_derivatives(times: &[f64], values: &[f64], lambda: Option<f64>) -> SplineResult<TwoStage> {
    let lambda = match lambda {
        Some(l) => l,
        None => select_lambda(times, values)?,
    };
    let first = spline_fit(times, values, Some(lambda))?;
    let d1 = first.derivative(1)?;
    let second = spline_fit(times, &d1, Some(lambda))?;
    let d2 = second.derivative(1)?;
    Ok(TwoStage { d1, d2, lambda1: first.lambda, lambda2: second.lambda })
}
