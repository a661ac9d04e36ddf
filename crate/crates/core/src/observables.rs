//! Up-spin density, its moments, and the spreading function of a melting
//! domain wall.
//!
//! Positions use the centered coordinate `x_i = i - (L + 1)/2` for 1-based
//! sites `i = 1..L`, so a profile that is odd under reflection has `⟨x⟩ = 0`
//! after full melting and `⟨x²⟩ = (L² - 1)/12` at all times.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::spline::{self, SplineError};

/// Rows whose density sums differ from one by more than this are rejected.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-4;

/// Up-spin probability at the right end (or down-spin probability at the left
/// end) that marks the wall front reaching the boundary.
pub const BOUNDARY_THRESHOLD: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum ObservablesError {
    #[error("profile row {row} has {len} entries, expected {sites}")]
    RowLength { row: usize, len: usize, sites: usize },
    #[error("density row {row} sums to {sum}, not 1")]
    Unnormalized { row: usize, sum: f64 },
    #[error("{times} times but {rows} profile rows")]
    Mismatch { times: usize, rows: usize },
    #[error("need at least {need} time points, got {got}")]
    TooFewPoints { need: usize, got: usize },
    #[error("empty series")]
    Empty,
    #[error(transparent)]
    Spline(#[from] SplineError),
}

type ObsResult<T> = Result<T, ObservablesError>;

/// `x_i` for zero-based sites `0..sites`.
pub fn centered_coordinates(sites: usize) -> Vec<f64> {
    let mid = (sites as f64 + 1.0) / 2.0;
    (1..=sites).map(|i| i as f64 - mid).collect()
}

/// `f_i = (⟨Z_i⟩ + 1) / L`.
pub fn spin_density(z: &[f64]) -> Vec<f64> {
    let l = z.len() as f64;
    z.iter().map(|zi| (zi + 1.0) / l).collect()
}

/// `(⟨x⟩, ⟨x²⟩)` of a density over the centered grid.
pub fn moments(f: &[f64]) -> (f64, f64) {
    let x = centered_coordinates(f.len());
    let m1 = f.iter().zip(&x).map(|(fi, xi)| fi * xi).sum();
    let m2 = f.iter().zip(&x).map(|(fi, xi)| fi * xi * xi).sum();
    (m1, m2)
}

/// `(⟨x⟩, ⟨x²⟩)` straight from a `⟨Z_i⟩` profile.
pub fn profile_moments(z: &[f64]) -> (f64, f64) { moments(&spin_density(z)) }

/// `⟨Z_i⟩ + ⟨Z_{L-1-i}⟩` for the first `L/2` sites; zero for a profile that
/// is odd under reflection.
pub fn antisymmetry_residuals(z: &[f64]) -> Vec<f64> {
    let n = z.len();
    (0..n / 2).map(|i| z[i] + z[n - 1 - i]).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpreadingSeries {
    pub sites: usize,
    pub times: Vec<f64>,
    /// `σ̃²(t) - σ̃²(t₀)` with `σ̃² = ⟨x²⟩ - ⟨x⟩²`.
    pub sigma2: Vec<f64>,
    /// `⟨x⟩₀² - ⟨x⟩ₜ²`, which equals `sigma2` when `⟨x²⟩` is conserved.
    pub sigma2_alt: Vec<f64>,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
}

impl SpreadingSeries {
    pub fn len(&self) -> usize { self.times.len() }

    pub fn is_empty(&self) -> bool { self.times.is_empty() }

    /// Restricts to `t_min ≤ t ≤ t_max`.
    pub fn window(&self, t_min: f64, t_max: f64) -> SpreadingSeries {
        let keep: Vec<usize> = (0..self.len()).filter(|&i| self.times[i] >= t_min && self.times[i] <= t_max).collect();
        let pick = |v: &[f64]| keep.iter().map(|&i| v[i]).collect::<Vec<_>>();
        SpreadingSeries {
            sites: self.sites,
            times: pick(&self.times),
            sigma2: pick(&self.sigma2),
            sigma2_alt: pick(&self.sigma2_alt),
            first_moment: pick(&self.first_moment),
            second_moment: pick(&self.second_moment),
        }
    }
}

/// Spreading function of a series of normalized densities; the first row is
/// the reference time.
pub fn spreading(times: &[f64], densities: &[Vec<f64>]) -> ObsResult<SpreadingSeries> {
    if times.len() != densities.len() {
        return Err(ObservablesError::Mismatch { times: times.len(), rows: densities.len() });
    }
    let sites = densities.first().ok_or(ObservablesError::Empty)?.len();
    let mut first = Vec::with_capacity(times.len());
    let mut second = Vec::with_capacity(times.len());
    for (row, f) in densities.iter().enumerate() {
        if f.len() != sites {
            return Err(ObservablesError::RowLength { row, len: f.len(), sites });
        }
        let sum: f64 = f.iter().sum();
        if (sum - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(ObservablesError::Unnormalized { row, sum });
        }
        let (m1, m2) = moments(f);
        first.push(m1);
        second.push(m2);
    }
    let var0 = second[0] - first[0] * first[0];
    let sigma2 = first.iter().zip(&second).map(|(m1, m2)| (m2 - m1 * m1) - var0).collect();
    let sigma2_alt = first.iter().map(|m1| first[0] * first[0] - m1 * m1).collect();
    Ok(SpreadingSeries {
        sites,
        times: times.to_vec(),
        sigma2,
        sigma2_alt,
        first_moment: first,
        second_moment: second,
    })
}

/// [`spreading`] applied to `⟨Z_i⟩` rows.
pub fn spreading_from_profiles(times: &[f64], profiles: &[Vec<f64>]) -> ObsResult<SpreadingSeries> {
    let densities: Vec<Vec<f64>> = profiles.iter().map(|z| spin_density(z)).collect();
    spreading(times, &densities)
}

/// First time at which the wall front reaches either chain end, if any.
pub fn boundary_arrival(times: &[f64], profiles: &[Vec<f64>]) -> Option<f64> {
    times.iter().zip(profiles).find_map(|(&t, z)| {
        let left_down = (1.0 - z.first()?) / 2.0;
        let right_up = (1.0 + z.last()?) / 2.0;
        (left_down > BOUNDARY_THRESHOLD || right_up > BOUNDARY_THRESHOLD).then_some(t)
    })
}

/// Largest deviation of `|⟨Z_i⟩|` from one over sites outside the cone
/// `|x_i| ≤ v_max·t + margin`; zero when no site lies outside.
pub fn light_cone_leak(z: &[f64], t: f64, v_max: f64, margin: f64) -> f64 {
    centered_coordinates(z.len())
        .iter()
        .zip(z)
        .filter(|(x, _)| x.abs() > v_max * t + margin)
        .map(|(_, zi)| 1.0 - zi.abs())
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegimeDerivatives {
    pub times: Vec<f64>,
    pub d1: Vec<f64>,
    pub d2: Vec<f64>,
    pub lambda1: f64,
    pub lambda2: f64,
}

/// Smoothed `dσ²/dt` and `d²σ²/dt²` by the two-stage spline method.
pub fn regime_derivatives(times: &[f64], sigma2: &[f64]) -> ObsResult<RegimeDerivatives> {
    if times.len() < spline::MIN_POINTS {
        return Err(ObservablesError::TooFewPoints { need: spline::MIN_POINTS, got: times.len() });
    }
    let two = spline::two_stage_derivatives(times, sigma2, None)?;
    Ok(RegimeDerivatives { times: times.to_vec(), d1: two.d1, d2: two.d2, lambda1: two.lambda1, lambda2: two.lambda2 })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Ballistic,
    Diffusive,
    Indeterminate,
}

/// Summary statistics behind [`classify_regime`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegimeEvidence {
    pub d1_start: f64,
    pub d1_mid: f64,
    pub d1_end: f64,
    pub d2_start: f64,
    pub d2_end: f64,
    pub d2_mean: f64,
    pub d2_min: f64,
    pub d1_min: f64,
}

fn edge_means(v: &[f64]) -> (f64, f64, f64) {
    let n = v.len();
    let k = (n / 10).max(1);
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let mid_lo = n / 2 - k / 2;
    (mean(&v[..k]), mean(&v[mid_lo..mid_lo + k]), mean(&v[n - k..]))
}

pub fn regime_evidence(d1: &[f64], d2: &[f64]) -> RegimeEvidence {
    let (d1_start, d1_mid, d1_end) = edge_means(d1);
    let (d2_start, _, d2_end) = edge_means(d2);
    RegimeEvidence {
        d1_start,
        d1_mid,
        d1_end,
        d2_start,
        d2_end,
        d2_mean: d2.iter().sum::<f64>() / d2.len() as f64,
        d2_min: d2.iter().copied().fold(f64::INFINITY, f64::min),
        d1_min: d1.iter().copied().fold(f64::INFINITY, f64::min),
    }
}

/// Ballistic: `σ²″` stays positive and does not decay, i.e. its minimum is
/// above a tenth of its mean and its final value keeps a quarter of its
/// initial one. Diffusive: `σ²′` stays positive and levels off (final value
/// within 15% of the midpoint value) while `σ²″` falls below a tenth of its
/// initial value, or `σ²′` changes by less than a tenth of its mean over the
/// window. Start, middle and end values are averages over a tenth of the
/// window.
pub fn classify_regime(d1: &[f64], d2: &[f64]) -> Regime {
    if d1.len() < 3 || d1.len() != d2.len() {
        return Regime::Indeterminate;
    }
    let e = regime_evidence(d1, d2);
    let ballistic = e.d2_min > 0.0 && e.d2_min > 0.1 * e.d2_mean && e.d2_end >= 0.25 * e.d2_start;
    if ballistic {
        return Regime::Ballistic;
    }
    let d1_mean = d1.iter().sum::<f64>() / d1.len() as f64;
    let d1_flat = (e.d1_end - e.d1_start).abs() <= 0.1 * d1_mean;
    let d2_decays = (e.d2_start > 0.0 && e.d2_end < 0.1 * e.d2_start) || d1_flat;
    let diffusive = e.d1_min > 0.0 && d2_decays && e.d1_end <= 1.15 * e.d1_mid;
    if diffusive {
        Regime::Diffusive
    } else {
        Regime::Indeterminate
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn wall(sites: usize) -> Vec<f64> {
        (0..sites).map(|i| if i < sites / 2 { 1.0 } else { -1.0 }).collect()
    }

    #[test]
    fn wall_density() {
        let f = spin_density(&wall(8));
        assert_eq!(f, vec![0.25, 0.25, 0.25, 0.25, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn flat_density() {
        let f = spin_density(&[0.0; 10]);
        assert!(f.iter().all(|&v| (v - 0.1).abs() < 1e-15));
    }

    #[test]
    fn coordinates_are_centered() {
        assert_eq!(centered_coordinates(4), vec![-1.5, -0.5, 0.5, 1.5]);
        assert_eq!(centered_coordinates(3), vec![-1.0, 0.0, 1.0]);
    }

    #[test]
    fn initial_spreading_is_zero() {
        let s = spreading_from_profiles(&[0.0], &[wall(8)]).unwrap();
        assert_eq!(s.sigma2, vec![0.0]);
        assert_eq!(s.sigma2_alt, vec![0.0]);
    }

    #[test]
    fn one_spin_hop_across_the_wall() {
        let f0 = vec![0.25, 0.25, 0.25, 0.25, 0.0, 0.0, 0.0, 0.0];
        let f1 = vec![0.25, 0.25, 0.25, 0.0, 0.25, 0.0, 0.0, 0.0];
        let s = spreading(&[0.0, 1.0], &[f0.clone(), f1.clone()]).unwrap();
        // hand evaluation on the grid x = -3.5..3.5
        let x = centered_coordinates(8);
        let m1_0: f64 = f0.iter().zip(&x).map(|(f, x)| f * x).sum();
        let m1_1: f64 = f1.iter().zip(&x).map(|(f, x)| f * x).sum();
        let m2_0: f64 = f0.iter().zip(&x).map(|(f, x)| f * x * x).sum();
        let m2_1: f64 = f1.iter().zip(&x).map(|(f, x)| f * x * x).sum();
        assert_eq!(m1_0, -2.0);
        assert_eq!(m1_1 - m1_0, 0.25);
        assert_eq!(s.first_moment, vec![m1_0, m1_1]);
        let direct = (m2_1 - m1_1 * m1_1) - (m2_0 - m1_0 * m1_0);
        assert!((s.sigma2[1] - direct).abs() < 1e-14);
        assert!((s.sigma2_alt[1] - (m1_0 * m1_0 - m1_1 * m1_1)).abs() < 1e-14);
        // the second moment is unchanged here, so both forms coincide
        assert_eq!(m2_0, m2_1);
        assert!((s.sigma2[1] - s.sigma2_alt[1]).abs() < 1e-14);
        assert!((s.sigma2[1] - 0.9375).abs() < 1e-14);
    }

    #[test]
    fn rejects_unnormalized_rows() {
        let f = vec![0.3, 0.3, 0.3, 0.3];
        assert!(matches!(spreading(&[0.0], &[f]), Err(ObservablesError::Unnormalized { .. })));
        assert!(spreading(&[0.0, 1.0], &[vec![0.5, 0.5]]).is_err());
    }

    #[test]
    fn boundary_arrival_time() {
        let times = [0.0, 1.0, 2.0];
        let mut z1 = wall(6);
        z1[5] = -0.9999;
        let mut z2 = wall(6);
        z2[5] = -0.99;
        assert_eq!(boundary_arrival(&times, &[wall(6), z1, z2]), Some(2.0));
        assert_eq!(boundary_arrival(&times[..1], &[wall(6)]), None);
    }

    #[test]
    fn light_cone() {
        let mut z = wall(20);
        z[10] = 0.2;
        assert_eq!(light_cone_leak(&z, 0.0, 2.0, 4.0), 0.0);
        z[0] = 0.9;
        assert!((light_cone_leak(&z, 0.0, 2.0, 4.0) - 0.1).abs() < 1e-15);
    }

    fn grid(a: f64, b: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn quadratic_has_constant_second_derivative() {
        let t = grid(0.0, 10.0, 101);
        let y: Vec<f64> = t.iter().map(|t| t * t).collect();
        let d = regime_derivatives(&t, &y).unwrap();
        assert!(d.d2.iter().all(|v| (v - 2.0).abs() < 0.02));
        assert_eq!(classify_regime(&d.d1, &d.d2), Regime::Ballistic);
    }

    #[test]
    fn linear_has_vanishing_second_derivative() {
        let t = grid(0.0, 10.0, 101);
        let d = regime_derivatives(&t, &t).unwrap();
        assert!(d.d1.iter().all(|v| (v - 1.0).abs() < 0.01));
        assert!(d.d2.iter().zip(&d.d1).all(|(a, b)| a.abs() < 0.02 * b));
        assert_eq!(classify_regime(&d.d1, &d.d2), Regime::Diffusive);
    }

    #[test]
    fn critical_power_law_is_neither() {
        let t = grid(1.0, 50.0, 200);
        let y: Vec<f64> = t.iter().map(|t| t.powf(1.3)).collect();
        let d = regime_derivatives(&t, &y).unwrap();
        assert_eq!(classify_regime(&d.d1, &d.d2), Regime::Indeterminate);
    }

    #[test]
    fn sqrt_growth_is_diffusive_after_transient() {
        // ballistic start crossing over to linear growth
        let t = grid(0.0, 30.0, 151);
        let y: Vec<f64> = t.iter().map(|t| t * t / (1.0 + t)).collect();
        let d = regime_derivatives(&t[50..], &y[50..]).unwrap();
        assert_eq!(classify_regime(&d.d1, &d.d2), Regime::Diffusive);
    }

    #[test]
    fn too_few_points() {
        assert!(regime_derivatives(&[0.0, 1.0, 2.0], &[0.0, 1.0, 4.0]).is_err());
    }

    proptest! {
        #[test]
        fn density_is_normalized_for_conserving_profiles(
            raw in proptest::collection::vec(-1.0f64..1.0, 4..40)
        ) {
            // shift to Σ z = 0 while staying inside [-1, 1]
            let mean = raw.iter().sum::<f64>() / raw.len() as f64;
            let scale = 1.0 / (1.0 + mean.abs());
            let z: Vec<f64> = raw.iter().map(|v| (v - mean) * scale).collect();
            let total: f64 = spin_density(&z).iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
        }

        #[test]
        fn antisymmetric_profiles_keep_second_moment(
            half in proptest::collection::vec(-1.0f64..1.0, 2..20)
        ) {
            let mut z = half.clone();
            z.extend(half.iter().rev().map(|v| -v));
            let l = z.len() as f64;
            let (_, m2) = profile_moments(&z);
            prop_assert!((m2 - (l * l - 1.0) / 12.0).abs() < 1e-10);
            prop_assert!(antisymmetry_residuals(&z).iter().all(|r| r.abs() < 1e-15));
        }

        #[test]
        fn identity_between_spreading_forms(
            half_a in proptest::collection::vec(-1.0f64..1.0, 3..12),
        ) {
            let mut z = half_a.clone();
            z.extend(half_a.iter().rev().map(|v| -v));
            let s = spreading_from_profiles(&[0.0, 1.0], &[{
                let n = z.len();
                (0..n).map(|i| if i < n / 2 { 1.0 } else { -1.0 }).collect()
            }, z]).unwrap();
            prop_assert!((s.sigma2[1] - s.sigma2_alt[1]).abs() < 1e-10);
        }
    }
}
