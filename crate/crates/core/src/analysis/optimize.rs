//! Bounded minimization of collapse costs: nested grid search followed by a
//! clamped Nelder–Mead polish.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::collapse::{
    collapse_cost, entropy_collapse_cost, size_independent, CollapseError, CollapseParams, EntropyDataset,
    EntropyParams, SpreadingDataset,
};

/// Distance from a bound, as a fraction of the range, that counts as hitting it.
pub const BOUND_TOLERANCE: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self { Self { lo, hi } }

    fn clamp(&self, v: f64) -> f64 { v.clamp(self.lo, self.hi) }

    fn width(&self) -> f64 { self.hi - self.lo }

    fn contains(&self, v: f64) -> bool { v >= self.lo && v <= self.hi }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollapseBounds {
    pub p_c: Interval,
    pub beta: Interval,
    pub eta: Interval,
}

impl Default for CollapseBounds {
    /// `1 ≤ β ≤ 2` brackets the ballistic and diffusive limits.
    fn default() -> Self {
        Self { p_c: Interval::new(0.0, 1.0), beta: Interval::new(1.0, 2.0), eta: Interval::new(0.5, 6.0) }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyBounds {
    pub p_c: Interval,
    pub nu: Interval,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchOptions {
    /// Grid points per parameter at each level.
    pub grid_points: usize,
    pub levels: usize,
    /// Best first-level grid points refined independently.
    pub starts: usize,
    pub nelder_mead_iters: usize,
    /// Points per parameter in the reported landscape slices.
    pub slice_points: usize,
}

impl Default for SearchOptions {
    fn default() -> Self { Self { grid_points: 9, levels: 3, starts: 8, nelder_mead_iters: 300, slice_points: 21 } }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandscapeSlice {
    pub param: String,
    pub values: Vec<f64>,
    pub costs: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Minimum {
    pub point: Vec<f64>,
    pub cost: f64,
    pub hit_bounds: Vec<String>,
    pub landscape: Vec<LandscapeSlice>,
    pub evaluations: usize,
}

fn grid_axis(iv: &Interval, n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![0.5 * (iv.lo + iv.hi)];
    }
    (0..n).map(|i| iv.lo + iv.width() * i as f64 / (n - 1) as f64).collect()
}

fn cartesian(axes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::new()];
    for axis in axes {
        out = out.iter().flat_map(|prefix| axis.iter().map(move |&v| [prefix.clone(), vec![v]].concat())).collect();
    }
    out
}

fn argmin(costs: &[f64]) -> usize {
    let mut best = 0;
    for (i, c) in costs.iter().enumerate() {
        if c.total_cmp(&costs[best]).is_lt() {
            best = i;
        }
    }
    best
}

/// Nelder–Mead with every vertex clamped into the box.
fn nelder_mead<F>(f: &F, start: &[f64], bounds: &[Interval], iters: usize, evals: &mut usize) -> (Vec<f64>, f64)
where
    F: Fn(&[f64]) -> f64,
{
    let n = start.len();
    let clamp = |x: Vec<f64>| -> Vec<f64> { x.iter().zip(bounds).map(|(v, b)| b.clamp(*v)).collect() };
    let mut simplex: Vec<Vec<f64>> = vec![start.to_vec()];
    for (d, b) in bounds.iter().enumerate() {
        let mut v = start.to_vec();
        let step = 0.05 * b.width();
        v[d] = if v[d] + step <= b.hi { v[d] + step } else { v[d] - step };
        simplex.push(clamp(v));
    }
    let mut values: Vec<f64> = simplex.iter().map(|x| f(x)).collect();
    *evals += n + 1;
    for _ in 0..iters {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();
        let spread: f64 = (0..n)
            .map(|d| {
                let lo = simplex.iter().map(|x| x[d]).fold(f64::INFINITY, f64::min);
                let hi = simplex.iter().map(|x| x[d]).fold(f64::NEG_INFINITY, f64::max);
                (hi - lo) / bounds[d].width()
            })
            .fold(0.0, f64::max);
        if spread < 1e-7 {
            break;
        }
        let centroid: Vec<f64> = (0..n).map(|d| simplex[..n].iter().map(|x| x[d]).sum::<f64>() / n as f64).collect();
        let along = |coef: f64| -> Vec<f64> {
            clamp(centroid.iter().zip(&simplex[n]).map(|(c, w)| c + coef * (c - w)).collect())
        };
        let reflected = along(1.0);
        let fr = f(&reflected);
        *evals += 1;
        if fr < values[0] {
            let expanded = along(2.0);
            let fe = f(&expanded);
            *evals += 1;
            if fe < fr {
                simplex[n] = expanded;
                values[n] = fe;
            } else {
                simplex[n] = reflected;
                values[n] = fr;
            }
        } else if fr < values[n - 1] {
            simplex[n] = reflected;
            values[n] = fr;
        } else {
            let contracted = if fr < values[n] { along(0.5) } else { along(-0.5) };
            let fc = f(&contracted);
            *evals += 1;
            if fc < values[n].min(fr) {
                simplex[n] = contracted;
                values[n] = fc;
            } else {
                for i in 1..=n {
                    simplex[i] = clamp(simplex[0].iter().zip(&simplex[i]).map(|(a, b)| a + 0.5 * (b - a)).collect());
                    values[i] = f(&simplex[i]);
                    *evals += 1;
                }
            }
        }
    }
    let best = argmin(&values);
    (simplex[best].clone(), values[best])
}

/// Minimizes `f` over the box: a grid over the full box, then for each of the
/// `starts` best grid points, `levels - 1` refinements on a box of ±2 cells
/// around it followed by Nelder–Mead. Grid evaluations run in parallel; the
/// result does not depend on scheduling.
pub fn minimize<F>(f: F, names: &[&str], init: &[f64], bounds: &[Interval], opts: &SearchOptions) -> Minimum
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let mut evals = 1;
    let init_f = f(init);
    let axes: Vec<Vec<f64>> = bounds.iter().map(|b| grid_axis(b, opts.grid_points)).collect();
    let points = cartesian(&axes);
    let costs: Vec<f64> = points.par_iter().map(|x| f(x)).collect();
    evals += points.len();
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| costs[a].total_cmp(&costs[b]).then(a.cmp(&b)));
    let mut starts: Vec<(Vec<f64>, f64)> = vec![(init.to_vec(), init_f)];
    starts.extend(order.iter().take(opts.starts.max(1)).map(|&i| (points[i].clone(), costs[i])));

    let (mut best_x, mut best_f) = (init.to_vec(), init_f);
    for (start, start_f) in starts {
        let (mut x0, mut f0) = (start, start_f);
        let mut cells: Vec<f64> = bounds.iter().map(|b| b.width() / (opts.grid_points.max(2) - 1) as f64).collect();
        for _ in 1..opts.levels.max(1) {
            let boxes: Vec<Interval> = bounds
                .iter()
                .zip(&x0)
                .zip(&cells)
                .map(|((outer, &c), &cell)| Interval::new(outer.clamp(c - 2.0 * cell), outer.clamp(c + 2.0 * cell)))
                .collect();
            let axes: Vec<Vec<f64>> = boxes.iter().map(|b| grid_axis(b, opts.grid_points)).collect();
            let points = cartesian(&axes);
            let costs: Vec<f64> = points.par_iter().map(|x| f(x)).collect();
            evals += points.len();
            let i = argmin(&costs);
            if costs[i] < f0 {
                f0 = costs[i];
                x0 = points[i].clone();
            }
            cells = boxes.iter().map(|b| b.width() / (opts.grid_points.max(2) - 1) as f64).collect();
        }
        let (x, fx) = nelder_mead(&f, &x0, bounds, opts.nelder_mead_iters, &mut evals);
        if fx < f0 {
            x0 = x;
            f0 = fx;
        }
        if f0 < best_f {
            best_x = x0;
            best_f = f0;
        }
    }
    let hit_bounds = names
        .iter()
        .zip(bounds)
        .zip(&best_x)
        .filter(|((_, b), &v)| v - b.lo <= BOUND_TOLERANCE * b.width() || b.hi - v <= BOUND_TOLERANCE * b.width())
        .map(|((name, _), _)| name.to_string())
        .collect();
    let landscape = names
        .iter()
        .enumerate()
        .map(|(d, name)| {
            let values = grid_axis(&bounds[d], opts.slice_points);
            let costs = values
                .par_iter()
                .map(|&v| {
                    let mut x = best_x.clone();
                    x[d] = v;
                    f(&x)
                })
                .collect();
            LandscapeSlice { param: name.to_string(), values, costs }
        })
        .collect();
    evals += names.len() * opts.slice_points;
    Minimum { point: best_x, cost: best_f, hit_bounds, landscape, evaluations: evals }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollapseFit {
    pub params: CollapseParams,
    pub cost: f64,
    pub hit_bounds: Vec<String>,
    pub landscape: Vec<LandscapeSlice>,
    pub evaluations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyFit {
    pub params: EntropyParams,
    pub cost: f64,
    pub hit_bounds: Vec<String>,
    /// Every size carries the same curve, so `ν` is not determined.
    pub size_independent: bool,
    pub landscape: Vec<LandscapeSlice>,
    pub evaluations: usize,
}

fn distinct_count(values: impl Iterator<Item = f64>) -> usize {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v.len()
}

pub fn optimize_collapse(
    datasets: &[SpreadingDataset],
    init: &CollapseParams,
    bounds: &CollapseBounds,
    opts: &SearchOptions,
) -> Result<CollapseFit, CollapseError> {
    let groups = distinct_count(datasets.iter().map(|d| d.p));
    if groups < 3 {
        return Err(CollapseError::TooFewDatasets { what: "p values", need: 3, got: groups });
    }
    for (name, iv, v) in
        [("p_c", bounds.p_c, init.p_c), ("beta", bounds.beta, init.beta), ("eta", bounds.eta, init.eta)]
    {
        if !iv.contains(v) {
            return Err(CollapseError::InitOutsideBounds(name));
        }
    }
    // surface structural problems before the search
    collapse_cost(datasets, init)?;
    let cost = |x: &[f64]| {
        let params = CollapseParams { p_c: x[0], beta: x[1], eta: x[2] };
        collapse_cost(datasets, &params).map(|r| r.cost).unwrap_or(f64::INFINITY)
    };
    let m = minimize(
        cost,
        &["p_c", "beta", "eta"],
        &[init.p_c, init.beta, init.eta],
        &[bounds.p_c, bounds.beta, bounds.eta],
        opts,
    );
    Ok(CollapseFit {
        params: CollapseParams { p_c: m.point[0], beta: m.point[1], eta: m.point[2] },
        cost: m.cost,
        hit_bounds: m.hit_bounds,
        landscape: m.landscape,
        evaluations: m.evaluations,
    })
}

pub fn optimize_entropy_collapse(
    datasets: &[EntropyDataset],
    init: &EntropyParams,
    bounds: &EntropyBounds,
    opts: &SearchOptions,
) -> Result<EntropyFit, CollapseError> {
    for (name, iv, v) in [("p_c", bounds.p_c, init.p_c), ("nu", bounds.nu, init.nu)] {
        if !iv.contains(v) {
            return Err(CollapseError::InitOutsideBounds(name));
        }
    }
    entropy_collapse_cost(datasets, init)?;
    let cost = |x: &[f64]| {
        entropy_collapse_cost(datasets, &EntropyParams { p_c: x[0], nu: x[1] }).map(|r| r.cost).unwrap_or(f64::INFINITY)
    };
    let m = minimize(cost, &["p_c", "nu"], &[init.p_c, init.nu], &[bounds.p_c, bounds.nu], opts);
    Ok(EntropyFit {
        params: EntropyParams { p_c: m.point[0], nu: m.point[1] },
        cost: m.cost,
        hit_bounds: m.hit_bounds,
        size_independent: size_independent(datasets),
        landscape: m.landscape,
        evaluations: m.evaluations,
    })
}
