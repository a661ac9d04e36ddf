//! Late-time plateaus of ensemble-averaged series.

use serde::{Deserialize, Serialize};

/// Fraction of the horizon after which a series counts as stationary.
pub const PLATEAU_START: f64 = 0.6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Plateau {
    pub mean: f64,
    /// Mean of the per-time standard errors; samples inside the window are
    /// strongly correlated, so this is not divided by the point count.
    pub stderr: f64,
    pub t_start: f64,
    pub t_end: f64,
    pub n_points: usize,
}

/// Time average over `[0.6 T, T]` with `T` the last sampled time.
pub fn steady_state(times: &[f64], values: &[f64], stderr: &[f64]) -> Option<Plateau> {
    let t_end = *times.last()?;
    let t_start = PLATEAU_START * t_end;
    let idx: Vec<usize> = (0..times.len()).filter(|&i| times[i] >= t_start - 1e-9).collect();
    if idx.is_empty() {
        return None;
    }
    let n = idx.len() as f64;
    let mean = idx.iter().map(|&i| values[i]).sum::<f64>() / n;
    let err = idx.iter().map(|&i| stderr.get(i).copied().unwrap_or(0.0)).sum::<f64>() / n;
    Some(Plateau { mean, stderr: err, t_start, t_end, n_points: idx.len() })
}
