//! Scaling-collapse quality for spreading curves and steady-state entropies.
//!
//! Every point is rescaled to `(x, y)` and compared with a master curve
//! estimated from the *other* datasets only, by Gaussian-kernel local linear
//! regression at the point's `x`. The bandwidth is 1.5 times the median
//! positive spacing of `x` within a dataset, widened where needed so that at
//! least five other-dataset points lie within the three-bandwidth cutoff.
//! Points without other-dataset neighbours on both sides would be
//! extrapolated; they are unsupported and left out. Each squared residual is
//! divided by `1 + Σ l_k²`, the variance the smoother adds to it, and the mean
//! over supported points is divided by the supported fraction, so parameters
//! cannot lower the cost by pulling curves apart. If fewer than 30% of the
//! points are supported the cost is infinite.
//!
//! Dynamical collapse: `x = (p - p_c) t^{1/η}` and `y = ln(σ² t^{-β})`, so the
//! residuals are relative deviations. Entropy collapse:
//! `x = (p - p̃_c) L^{1/ν}` and `y = S(p, L) - S(p̃_c, L)`, with the cost
//! divided by the variance of `y` to make it scale free.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const BANDWIDTH_FACTOR: f64 = 1.5;
pub const SUPPORT_RADIUS: f64 = 3.0;
pub const MIN_NEIGHBOURS: usize = 5;
pub const MIN_SUPPORTED_FRACTION: f64 = 0.3;

#[derive(Debug, Error, PartialEq)]
pub enum CollapseError {
    #[error("rescaled x values have no spread")]
    DegenerateRange,
    #[error("dataset at p = {p}: {times} times but {values} values")]
    LengthMismatch { p: f64, times: usize, values: usize },
    #[error("need at least {need} distinct {what}, got {got}")]
    TooFewDatasets { what: &'static str, need: usize, got: usize },
    #[error("critical point {p_c} lies outside the sampled p range [{lo}, {hi}] for L = {sites}")]
    OutsideRange { p_c: f64, lo: f64, hi: f64, sites: usize },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("bounds do not enclose the initial guess for {0}")]
    InitOutsideBounds(&'static str),
}

/// `σ²(t)` at one monitoring rate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpreadingDataset {
    pub p: f64,
    pub times: Vec<f64>,
    pub sigma2: Vec<f64>,
}

/// Steady-state entropies at one system size, sorted by `p`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyDataset {
    pub sites: usize,
    pub p: Vec<f64>,
    pub entropy: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollapseParams {
    pub p_c: f64,
    pub beta: f64,
    pub eta: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyParams {
    pub p_c: f64,
    pub nu: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub cost: f64,
    pub supported_fraction: f64,
    pub n_points: usize,
    /// Fewer than two datasets: any parameters collapse trivially.
    pub degenerate: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RescaledPoint {
    pub group: f64,
    pub t: f64,
    pub x: f64,
    pub y: f64,
}

fn check_dynamic_params(params: &CollapseParams) -> Result<(), CollapseError> {
    if !(params.eta > 0.0 && params.eta.is_finite()) || !params.beta.is_finite() || !params.p_c.is_finite() {
        return Err(CollapseError::InvalidParams(format!("{params:?}")));
    }
    Ok(())
}

/// Rescaled points sorted by `(p, t)`.
pub fn rescale_spreading(
    datasets: &[SpreadingDataset],
    params: &CollapseParams,
) -> Result<Vec<RescaledPoint>, CollapseError> {
    check_dynamic_params(params)?;
    let mut pts = Vec::new();
    for d in datasets {
        if d.times.len() != d.sigma2.len() {
            return Err(CollapseError::LengthMismatch { p: d.p, times: d.times.len(), values: d.sigma2.len() });
        }
        for (&t, &s) in d.times.iter().zip(&d.sigma2) {
            if t > 0.0 && s > 0.0 {
                pts.push(RescaledPoint {
                    group: d.p,
                    t,
                    x: (d.p - params.p_c) * t.powf(1.0 / params.eta),
                    y: s.ln() - params.beta * t.ln(),
                });
            }
        }
    }
    pts.sort_by(|a, b| a.group.total_cmp(&b.group).then(a.t.total_cmp(&b.t)));
    Ok(pts)
}

fn distinct(values: impl Iterator<Item = f64>) -> usize {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v.len()
}

fn bandwidth(points: &[RescaledPoint]) -> Result<f64, CollapseError> {
    let mut spacings = Vec::new();
    let mut by_group: Vec<&RescaledPoint> = points.iter().collect();
    by_group.sort_by(|a, b| a.group.total_cmp(&b.group).then(a.x.total_cmp(&b.x)));
    for w in by_group.windows(2) {
        if w[0].group == w[1].group {
            let dx = w[1].x - w[0].x;
            if dx > 0.0 {
                spacings.push(dx);
            }
        }
    }
    if spacings.is_empty() {
        return Err(CollapseError::DegenerateRange);
    }
    spacings.sort_by(f64::total_cmp);
    let m = spacings.len();
    let median = if m % 2 == 1 { spacings[m / 2] } else { 0.5 * (spacings[m / 2 - 1] + spacings[m / 2]) };
    Ok(BANDWIDTH_FACTOR * median)
}

/// Distance to the `k`-th nearest point of another dataset, scanning outward
/// from `pos` in the x-sorted order.
fn foreign_knn_distance(points: &[RescaledPoint], order: &[usize], xs: &[f64], pos: usize, p: &RescaledPoint, k: usize) -> f64 {
    let (mut l, mut r) = (pos, pos);
    let mut found = 0;
    let mut last = f64::INFINITY;
    while found < k && (l > 0 || r < xs.len()) {
        let dl = if l > 0 { p.x - xs[l - 1] } else { f64::INFINITY };
        let dr = if r < xs.len() { xs[r] - p.x } else { f64::INFINITY };
        let (idx, d) = if dl <= dr {
            l -= 1;
            (order[l], dl)
        } else {
            r += 1;
            (order[r - 1], dr)
        };
        if points[idx].group != p.group {
            found += 1;
            last = d;
        }
    }
    last
}

/// Mean squared residual from the leave-own-dataset-out master curve, and the
/// supported fraction.
fn master_curve_residuals(points: &[RescaledPoint]) -> Result<(f64, f64), CollapseError> {
    let h = bandwidth(points)?;
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| points[a].x.total_cmp(&points[b].x).then(a.cmp(&b)));
    let xs: Vec<f64> = order.iter().map(|&i| points[i].x).collect();
    let mut sse = 0.0;
    let mut supported = 0usize;
    for p in points {
        let pos = xs.partition_point(|&x| x < p.x);
        let hp = h.max(foreign_knn_distance(points, &order, &xs, pos, p, MIN_NEIGHBOURS) / SUPPORT_RADIUS);
        if !hp.is_finite() {
            continue;
        }
        let reach = SUPPORT_RADIUS * hp;
        let lo = xs.partition_point(|&x| x < p.x - reach);
        let hi = xs.partition_point(|&x| x <= p.x + reach);
        let (mut s0, mut s1, mut s2, mut t0, mut t1) = (0.0, 0.0, 0.0, 0.0, 0.0);
        let (mut q0, mut q1, mut q2) = (0.0, 0.0, 0.0);
        let (mut left, mut right) = (false, false);
        for &k in &order[lo..hi] {
            let q = &points[k];
            if q.group == p.group {
                continue;
            }
            let dx = q.x - p.x;
            left |= dx <= 0.0;
            right |= dx >= 0.0;
            let w = (-0.5 * (dx / hp).powi(2)).exp();
            s0 += w;
            s1 += w * dx;
            s2 += w * dx * dx;
            t0 += w * q.y;
            t1 += w * dx * q.y;
            q0 += w * w;
            q1 += w * w * dx;
            q2 += w * w * dx * dx;
        }
        // extrapolating off the end of the other curves is not evidence either way
        if !(left && right) || s0 <= 0.0 {
            continue;
        }
        // the fitted value is Σ l_k y_k; Σ l_k² is the variance it adds to the residual
        let det = s0 * s2 - s1 * s1;
        let (fit, leverage) = if det > 1e-10 * s0 * s2.max(f64::MIN_POSITIVE) {
            ((s2 * t0 - s1 * t1) / det, (s2 * s2 * q0 - 2.0 * s1 * s2 * q1 + s1 * s1 * q2) / (det * det))
        } else {
            (t0 / s0, q0 / (s0 * s0))
        };
        sse += (p.y - fit).powi(2) / (1.0 + leverage);
        supported += 1;
    }
    let fraction = supported as f64 / points.len() as f64;
    if supported == 0 || fraction < MIN_SUPPORTED_FRACTION {
        return Ok((f64::INFINITY, fraction));
    }
    Ok((sse / supported as f64 / fraction, fraction))
}

/// Collapse cost of spreading curves under `σ² = t^β F[(p - p_c) t^{1/η}]`.
pub fn collapse_cost(datasets: &[SpreadingDataset], params: &CollapseParams) -> Result<CostReport, CollapseError> {
    let points = rescale_spreading(datasets, params)?;
    let groups = distinct(points.iter().map(|p| p.group));
    if groups < 2 {
        return Ok(CostReport { cost: 0.0, supported_fraction: 1.0, n_points: points.len(), degenerate: true });
    }
    let (cost, supported_fraction) = master_curve_residuals(&points)?;
    Ok(CostReport { cost, supported_fraction, n_points: points.len(), degenerate: false })
}

/// Linear interpolation of `S(p)` at `p_c`.
fn interpolate(d: &EntropyDataset, p_c: f64) -> Result<f64, CollapseError> {
    let lo = d.p.first().copied().unwrap_or(f64::NAN);
    let hi = d.p.last().copied().unwrap_or(f64::NAN);
    if !(p_c >= lo && p_c <= hi) {
        return Err(CollapseError::OutsideRange { p_c, lo, hi, sites: d.sites });
    }
    let j = d.p.partition_point(|&p| p < p_c);
    if j < d.p.len() && d.p[j] == p_c {
        return Ok(d.entropy[j]);
    }
    let (p0, p1) = (d.p[j - 1], d.p[j]);
    let w = (p_c - p0) / (p1 - p0);
    Ok(d.entropy[j - 1] * (1.0 - w) + d.entropy[j] * w)
}

fn check_entropy_datasets(datasets: &[EntropyDataset]) -> Result<(), CollapseError> {
    let sizes = distinct(datasets.iter().map(|d| d.sites as f64));
    if sizes < 2 {
        return Err(CollapseError::TooFewDatasets { what: "system sizes", need: 2, got: sizes });
    }
    for d in datasets {
        if d.p.len() != d.entropy.len() {
            return Err(CollapseError::LengthMismatch { p: f64::NAN, times: d.p.len(), values: d.entropy.len() });
        }
        if distinct(d.p.iter().copied()) < 3 {
            return Err(CollapseError::TooFewDatasets { what: "p values per size", need: 3, got: d.p.len() });
        }
        if d.p.windows(2).any(|w| w[1] <= w[0]) {
            return Err(CollapseError::InvalidParams(format!("p values for L = {} must increase", d.sites)));
        }
    }
    Ok(())
}

pub fn rescale_entropy(
    datasets: &[EntropyDataset],
    params: &EntropyParams,
) -> Result<Vec<RescaledPoint>, CollapseError> {
    if !(params.nu > 0.0 && params.nu.is_finite()) {
        return Err(CollapseError::InvalidParams(format!("{params:?}")));
    }
    check_entropy_datasets(datasets)?;
    let mut sorted: Vec<&EntropyDataset> = datasets.iter().collect();
    sorted.sort_by_key(|d| d.sites);
    let mut pts = Vec::new();
    for d in sorted {
        let s_c = interpolate(d, params.p_c)?;
        let scale = (d.sites as f64).powf(1.0 / params.nu);
        for (&p, &s) in d.p.iter().zip(&d.entropy) {
            pts.push(RescaledPoint { group: d.sites as f64, t: p, x: (p - params.p_c) * scale, y: s - s_c });
        }
    }
    Ok(pts)
}

/// Collapse cost of `S(p, L) - S(p̃_c, L) = g[(p - p̃_c) L^{1/ν}]`.
pub fn entropy_collapse_cost(
    datasets: &[EntropyDataset],
    params: &EntropyParams,
) -> Result<CostReport, CollapseError> {
    let points = rescale_entropy(datasets, params)?;
    let n = points.len() as f64;
    let mean = points.iter().map(|p| p.y).sum::<f64>() / n;
    let var = points.iter().map(|p| (p.y - mean).powi(2)).sum::<f64>() / n;
    let (raw, supported_fraction) = master_curve_residuals(&points)?;
    let cost = if var > 0.0 { raw / var } else { 0.0 };
    Ok(CostReport { cost, supported_fraction, n_points: points.len(), degenerate: var == 0.0 })
}

/// `true` when every size carries the same entropy curve, so `ν` is
/// unconstrained.
pub fn size_independent(datasets: &[EntropyDataset]) -> bool {
    let Some(first) = datasets.first() else { return true };
    let scale = first.entropy.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-300);
    datasets.iter().all(|d| {
        d.p == first.p && d.entropy.iter().zip(&first.entropy).all(|(a, b)| (a - b).abs() <= 1e-12 * scale)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gaussian_master(x: f64) -> f64 { (-x * x).exp() }

    fn synthetic(params: &CollapseParams, f: impl Fn(f64) -> f64) -> Vec<SpreadingDataset> {
        let times: Vec<f64> = (0..60).map(|i| 10f64.powf(i as f64 / 59.0 * 2.0)).collect();
        [0.05, 0.10, 0.15, 0.20, 0.25, 0.30]
            .iter()
            .map(|&p| SpreadingDataset {
                p,
                times: times.clone(),
                sigma2: times
                    .iter()
                    .map(|&t| t.powf(params.beta) * f((p - params.p_c) * t.powf(1.0 / params.eta)))
                    .collect(),
            })
            .collect()
    }

    #[test]
    fn true_parameters_beat_perturbed_ones() {
        let truth = CollapseParams { p_c: 0.15, beta: 1.3, eta: 2.5 };
        let data = synthetic(&truth, gaussian_master);
        let at = |p: CollapseParams| collapse_cost(&data, &p).unwrap().cost;
        let best = at(truth);
        assert!(best < at(CollapseParams { beta: 1.0, ..truth }));
        assert!(best < at(CollapseParams { p_c: 0.25, ..truth }));
        assert!(best < 1e-4);
    }

    #[test]
    fn relabeling_is_exactly_invariant() {
        let truth = CollapseParams { p_c: 0.15, beta: 1.3, eta: 2.5 };
        let data = synthetic(&truth, gaussian_master);
        let mut shuffled = data.clone();
        shuffled.reverse();
        shuffled.swap(1, 3);
        let probe = CollapseParams { p_c: 0.17, beta: 1.2, eta: 2.1 };
        assert_eq!(collapse_cost(&data, &probe).unwrap(), collapse_cost(&shuffled, &probe).unwrap());
    }

    #[test]
    fn single_dataset_is_degenerate() {
        let truth = CollapseParams { p_c: 0.15, beta: 1.3, eta: 2.5 };
        let data = synthetic(&truth, gaussian_master);
        let one = &data[2..3];
        for probe in [truth, CollapseParams { p_c: 0.3, beta: 1.9, eta: 1.0 }] {
            let r = collapse_cost(one, &probe).unwrap();
            assert!(r.degenerate);
            assert_eq!(r.cost, 0.0);
        }
    }

    #[test]
    fn degenerate_x_range_is_an_error() {
        let data = vec![
            SpreadingDataset { p: 0.2, times: vec![1.0], sigma2: vec![1.0] },
            SpreadingDataset { p: 0.3, times: vec![1.0], sigma2: vec![1.0] },
        ];
        let params = CollapseParams { p_c: 0.1, beta: 1.5, eta: 2.0 };
        assert_eq!(collapse_cost(&data, &params), Err(CollapseError::DegenerateRange));
    }

    #[test]
    fn separated_curves_are_unsupported() {
        // short, disjoint x ranges: every point would be extrapolated
        let times: Vec<f64> = (0..11).map(|i| 1.0 + 0.01 * i as f64).collect();
        let data: Vec<SpreadingDataset> = [0.2, 0.4]
            .iter()
            .map(|&p| SpreadingDataset { p, times: times.clone(), sigma2: times.clone() })
            .collect();
        let r = collapse_cost(&data, &CollapseParams { p_c: 0.1, beta: 1.0, eta: 1.0 }).unwrap();
        assert!(r.cost.is_infinite());
        assert_eq!(r.supported_fraction, 0.0);
    }

    fn entropy_data(p_c: f64, nu: f64) -> Vec<EntropyDataset> {
        [12usize, 16, 20, 24]
            .iter()
            .map(|&l| {
                let p: Vec<f64> = (0..11).map(|i| 0.05 + 0.02 * i as f64).collect();
                let entropy = p
                    .iter()
                    .map(|&p| 1.0 + 0.05 * l as f64 + (-(p - p_c) * (l as f64).powf(1.0 / nu)).tanh())
                    .collect();
                EntropyDataset { sites: l, p, entropy }
            })
            .collect()
    }

    #[test]
    fn entropy_cost_prefers_generating_parameters() {
        let data = entropy_data(0.15, 1.2);
        let at = |p_c, nu| entropy_collapse_cost(&data, &EntropyParams { p_c, nu }).unwrap().cost;
        let best = at(0.15, 1.2);
        assert!(best < at(0.12, 1.2));
        assert!(best < at(0.15, 2.5));
        assert!(best < 1e-2);
    }

    #[test]
    fn entropy_interpolation_range() {
        let data = entropy_data(0.15, 1.2);
        let err = entropy_collapse_cost(&data, &EntropyParams { p_c: 0.5, nu: 1.2 }).unwrap_err();
        assert!(matches!(err, CollapseError::OutsideRange { .. }));
        assert!(entropy_collapse_cost(&data[..1], &EntropyParams { p_c: 0.15, nu: 1.2 }).is_err());
    }

    #[test]
    fn identical_sizes_are_flagged() {
        let mut data = entropy_data(0.15, 1.2);
        assert!(!size_independent(&data));
        for d in data.iter_mut().skip(1) {
            d.entropy = data_first_entropy();
        }
        data[0].entropy = data_first_entropy();
        assert!(size_independent(&data));
        // ν no longer matters
        let a = entropy_collapse_cost(&data, &EntropyParams { p_c: 0.15, nu: 1.0 }).unwrap().cost;
        let b = entropy_collapse_cost(&data, &EntropyParams { p_c: 0.15, nu: 50.0 }).unwrap().cost;
        assert!(b <= a);
    }

    fn data_first_entropy() -> Vec<f64> { (0..11).map(|i| 2.0 - 0.1 * i as f64).collect() }

    #[test]
    fn volume_and_area_phases_collapse_differently() {
        // volume side: S ∝ L; area side: S independent of L
        let p: Vec<f64> = (0..9).map(|i| 0.02 + 0.01 * i as f64).collect();
        let volume: Vec<EntropyDataset> = [12usize, 16, 20]
            .iter()
            .map(|&l| EntropyDataset { sites: l, p: p.clone(), entropy: p.iter().map(|q| 0.2 * l as f64 * (1.0 - 5.0 * q)).collect() })
            .collect();
        let area: Vec<EntropyDataset> = [12usize, 16, 20]
            .iter()
            .map(|&l| EntropyDataset { sites: l, p: p.clone(), entropy: p.iter().map(|q| 1.5 * (1.0 - 5.0 * q)).collect() })
            .collect();
        let params = EntropyParams { p_c: 0.06, nu: 1.2 };
        let cv = entropy_collapse_cost(&volume, &params).unwrap().cost;
        let ca = entropy_collapse_cost(&area, &params).unwrap().cost;
        assert!(cv.is_finite() && ca.is_finite());
        assert!((cv - ca).abs() > 1e-3 * cv.max(ca));
        assert!(size_independent(&area));
        assert!(!size_independent(&volume));
    }
}
