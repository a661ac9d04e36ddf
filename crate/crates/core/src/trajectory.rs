//! Monitored trajectories and their ensemble averages.
//!
//! A trajectory starts from the domain wall and repeats: one Trotter step,
//! observables (every `sample_every` steps), one measurement layer. Sampling
//! happens before the layer, so the recorded values are those at `t`, not
//! `t⁺`. A row at `t = 0` is always included.
//!
//! Ensembles reduce per-trajectory samples with a pairwise tree over the
//! trajectory index range whose shape depends only on `n_traj`, so the means
//! and standard errors are bit-identical for any worker count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{trotter_schedule, ChainSpec};
use crate::monitor::{measurement_layer, trajectory_rng, trajectory_seed, MeasurementRecord, MonitorSpec};
use crate::mps::{MpsState, DEFAULT_CHI_MAX, DEFAULT_SV_CUTOFF};
use crate::observables::{antisymmetry_residuals, profile_moments};
use crate::oracle::DenseState;
use crate::state::{domain_wall_pattern, ChainState};

/// A single SVD discarding more weight than this aborts the trajectory.
pub const ABORT_DISCARDED_WEIGHT: f64 = 0.01;
/// Largest tolerated fraction of aborted trajectories in an ensemble.
pub const MAX_ABORT_FRACTION: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    #[default]
    Mps,
    Dense,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub chain: ChainSpec,
    pub monitor: MonitorSpec,
    pub chi_max: usize,
    pub sv_cutoff: f64,
    pub horizon: f64,
    pub sample_every: usize,
    pub n_traj: usize,
    pub master_seed: u64,
    #[serde(default)]
    pub backend: Backend,
}

#[derive(Debug, Error)]
pub enum TrajectoryError {
    #[error("invalid run configuration: {0}")]
    Config(String),
    #[error("trajectory {k} aborted at step {step}: discarded weight {weight:e} exceeds {ABORT_DISCARDED_WEIGHT}")]
    Truncation { k: u64, step: usize, weight: f64 },
    #[error("trajectory {k} failed at step {step}: {source}")]
    Numerical {
        k: u64,
        step: usize,
        #[source]
        source: Box<crate::Error>,
    },
    #[error("{aborted} of {total} trajectories aborted (limit {limit}); first: {first}")]
    TooManyAborts { aborted: usize, total: usize, limit: usize, first: String },
    #[error("worker pool: {0}")]
    Pool(String),
}

impl RunConfig {
    /// Config with default truncation, unit sampling and the MPS backend.
    pub fn new(chain: ChainSpec, p_unit: f64, horizon: f64, n_traj: usize, master_seed: u64) -> crate::Result<Self> {
        let monitor = MonitorSpec::from_unit(p_unit, chain.dt)?;
        Ok(Self {
            chain,
            monitor,
            chi_max: DEFAULT_CHI_MAX,
            sv_cutoff: DEFAULT_SV_CUTOFF,
            horizon,
            sample_every: 1,
            n_traj,
            master_seed,
            backend: Backend::Mps,
        })
    }

    pub fn validate(&self) -> Result<(), TrajectoryError> {
        let bad = |m: String| Err(TrajectoryError::Config(m));
        if let Err(e) = self.chain.validate() {
            return bad(e.to_string());
        }
        if self.chain.sites % 2 != 0 {
            return bad(format!("domain wall needs an even number of sites, got {}", self.chain.sites));
        }
        if (self.monitor.dt - self.chain.dt).abs() > 1e-15 {
            return bad(format!("monitor dt {} differs from chain dt {}", self.monitor.dt, self.chain.dt));
        }
        if !(0.0..=1.0).contains(&self.monitor.p_step) || !(0.0..=1.0).contains(&self.monitor.p_unit) {
            return bad("measurement probabilities must lie in [0, 1]".into());
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return bad(format!("horizon must be positive, got {}", self.horizon));
        }
        if self.sample_every == 0 {
            return bad("sample_every must be at least 1".into());
        }
        if self.n_traj == 0 {
            return bad("n_traj must be at least 1".into());
        }
        if self.chi_max == 0 {
            return bad("chi_max must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.sv_cutoff) {
            return bad(format!("sv_cutoff must lie in [0, 1), got {}", self.sv_cutoff));
        }
        if self.backend == Backend::Dense && self.chain.sites > crate::oracle::MAX_DENSE_SITES {
            return bad(format!(
                "dense backend supports at most {} sites, got {}",
                crate::oracle::MAX_DENSE_SITES,
                self.chain.sites
            ));
        }
        Ok(())
    }

    /// `⌈T/δt⌉`, ignoring rounding noise in the ratio.
    pub fn n_steps(&self) -> usize { (self.horizon / self.chain.dt - 1e-9).ceil().max(1.0) as usize }

    pub fn sample_steps(&self) -> Vec<usize> { (0..=self.n_steps()).filter(|n| n % self.sample_every == 0).collect() }

    pub fn sample_times(&self) -> Vec<f64> {
        self.sample_steps().into_iter().map(|n| n as f64 * self.chain.dt).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryResult {
    pub k: u64,
    pub seed: u64,
    pub times: Vec<f64>,
    /// `⟨Z_i⟩`, one row per sampled time.
    pub z_profile: Vec<Vec<f64>>,
    /// Entanglement entropy across the middle bond.
    pub entropy_mid: Vec<f64>,
    pub record: MeasurementRecord,
    pub max_discarded_weight: f64,
    pub max_bond_dim: usize,
    /// Largest `|Σ_i ⟨Z_i⟩|` over samples.
    pub max_sector_error: f64,
    /// Largest `|⟨ψ|ψ⟩ - 1|` over samples.
    pub max_norm_error: f64,
}

fn fresh_state(config: &RunConfig) -> crate::Result<Box<dyn ChainState>> {
    let pattern = domain_wall_pattern(config.chain.sites);
    Ok(match config.backend {
        Backend::Mps => Box::new(MpsState::from_product_state(&pattern, config.chi_max, config.sv_cutoff)?),
        Backend::Dense => Box::new(DenseState::from_product_state(&pattern)?),
    })
}

/// Runs trajectory `k` on the configured backend.
pub fn run_trajectory(config: &RunConfig, k: u64) -> Result<TrajectoryResult, TrajectoryError> {
    config.validate()?;
    let mut state = fresh_state(config).map_err(|e| TrajectoryError::Numerical { k, step: 0, source: Box::new(e) })?;
    evolve(config, k, state.as_mut())
}

/// Runs trajectory `k` on a caller-supplied initial state.
pub fn evolve(config: &RunConfig, k: u64, state: &mut dyn ChainState) -> Result<TrajectoryResult, TrajectoryError> {
    let seed = trajectory_seed(config.master_seed, k);
    let mut rng = trajectory_rng(config.master_seed, k);
    let schedule = trotter_schedule(&config.chain);
    let n_steps = config.n_steps();
    let capacity = n_steps / config.sample_every + 1;
    let mut out = TrajectoryResult {
        k,
        seed,
        times: Vec::with_capacity(capacity),
        z_profile: Vec::with_capacity(capacity),
        entropy_mid: Vec::with_capacity(capacity),
        record: MeasurementRecord { rng_seed: seed, steps: Vec::with_capacity(n_steps) },
        max_discarded_weight: 0.0,
        max_bond_dim: 1,
        max_sector_error: 0.0,
        max_norm_error: 0.0,
    };
    let numerical = |step: usize| move |e: crate::Error| TrajectoryError::Numerical { k, step, source: Box::new(e) };
    sample(state, 0.0, &mut out).map_err(numerical(0))?;
    for step in 1..=n_steps {
        let weight = state.trotter_step(&schedule).map_err(numerical(step))?;
        out.max_discarded_weight = out.max_discarded_weight.max(weight);
        if weight > ABORT_DISCARDED_WEIGHT {
            return Err(TrajectoryError::Truncation { k, step, weight });
        }
        out.max_bond_dim = out.max_bond_dim.max(state.max_bond_dim());
        if step % config.sample_every == 0 {
            sample(state, step as f64 * config.chain.dt, &mut out).map_err(numerical(step))?;
        }
        let layer = measurement_layer(state, &config.monitor, &mut rng).map_err(numerical(step))?;
        out.record.steps.push(layer);
    }
    Ok(out)
}

fn sample(state: &mut dyn ChainState, t: f64, out: &mut TrajectoryResult) -> crate::Result<()> {
    let z = state.z_profile();
    let s = state.half_chain_entropy()?;
    out.max_sector_error = out.max_sector_error.max(z.iter().sum::<f64>().abs());
    out.max_norm_error = out.max_norm_error.max((state.norm_sqr() - 1.0).abs());
    out.times.push(t);
    out.z_profile.push(z);
    out.entropy_mid.push(s);
    Ok(())
}

/// Number of per-time quantities reduced over the ensemble for `sites` sites:
/// the profile, the entropy, `⟨x⟩`, `⟨x²⟩` and the `L/2` antisymmetry
/// residuals.
fn sample_width(sites: usize) -> usize { sites + 3 + sites / 2 }

fn flatten(result: &TrajectoryResult) -> Vec<f64> {
    let sites = result.z_profile.first().map_or(0, Vec::len);
    let mut v = Vec::with_capacity(result.times.len() * sample_width(sites));
    for (z, s) in result.z_profile.iter().zip(&result.entropy_mid) {
        let (m1, m2) = profile_moments(z);
        v.extend_from_slice(z);
        v.push(*s);
        v.push(m1);
        v.push(m2);
        v.extend(antisymmetry_residuals(z));
    }
    v
}

/// Streaming mean and sum of squared deviations, merged with Chan's
/// pairwise update.
#[derive(Clone, Debug)]
struct Accumulator {
    n: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
    aborted: Vec<String>,
    max_discarded_weight: f64,
    max_bond_dim: usize,
    max_sector_error: f64,
    max_norm_error: f64,
}

impl Accumulator {
    fn empty() -> Self {
        Self {
            n: 0,
            mean: Vec::new(),
            m2: Vec::new(),
            aborted: Vec::new(),
            max_discarded_weight: 0.0,
            max_bond_dim: 0,
            max_sector_error: 0.0,
            max_norm_error: 0.0,
        }
    }

    fn leaf(outcome: Result<TrajectoryResult, TrajectoryError>) -> Self {
        match outcome {
            Ok(r) => {
                let mean = flatten(&r);
                Self {
                    n: 1,
                    m2: vec![0.0; mean.len()],
                    mean,
                    aborted: Vec::new(),
                    max_discarded_weight: r.max_discarded_weight,
                    max_bond_dim: r.max_bond_dim,
                    max_sector_error: r.max_sector_error,
                    max_norm_error: r.max_norm_error,
                }
            }
            Err(e) => Self { aborted: vec![e.to_string()], ..Self::empty() },
        }
    }

    fn merge(mut a: Self, b: Self) -> Self {
        a.aborted.extend(b.aborted);
        a.max_discarded_weight = a.max_discarded_weight.max(b.max_discarded_weight);
        a.max_bond_dim = a.max_bond_dim.max(b.max_bond_dim);
        a.max_sector_error = a.max_sector_error.max(b.max_sector_error);
        a.max_norm_error = a.max_norm_error.max(b.max_norm_error);
        if b.n == 0 {
            return a;
        }
        if a.n == 0 {
            a.n = b.n;
            a.mean = b.mean;
            a.m2 = b.m2;
            return a;
        }
        let n = a.n + b.n;
        let (na, nb, nf) = (a.n as f64, b.n as f64, n as f64);
        for i in 0..a.mean.len() {
            let delta = b.mean[i] - a.mean[i];
            a.mean[i] += delta * nb / nf;
            a.m2[i] += b.m2[i] + delta * delta * na * nb / nf;
        }
        a.n = n;
        a
    }
}

fn reduce(config: &RunConfig, lo: u64, hi: u64) -> Accumulator {
    if hi - lo == 1 {
        return Accumulator::leaf(run_trajectory(config, lo));
    }
    let mid = lo + (hi - lo) / 2;
    let (a, b) = rayon::join(|| reduce(config, lo, mid), || reduce(config, mid, hi));
    Accumulator::merge(a, b)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSeries {
    pub sites: usize,
    pub times: Vec<f64>,
    /// Completed trajectories.
    pub n_traj: usize,
    pub aborted: usize,
    pub abort_messages: Vec<String>,
    pub mean_z: Vec<Vec<f64>>,
    pub stderr_z: Vec<Vec<f64>>,
    pub mean_entropy: Vec<f64>,
    pub stderr_entropy: Vec<f64>,
    pub mean_x: Vec<f64>,
    pub stderr_x: Vec<f64>,
    pub mean_x2: Vec<f64>,
    pub stderr_x2: Vec<f64>,
    /// `⟨Z_i⟩ + ⟨Z_{L-1-i}⟩` for `i < L/2`, averaged per trajectory.
    pub mean_antisym: Vec<Vec<f64>>,
    pub stderr_antisym: Vec<Vec<f64>>,
    pub max_discarded_weight: f64,
    pub max_bond_dim: usize,
    pub max_sector_error: f64,
    pub max_norm_error: f64,
}

/// Runs `n_traj` trajectories on `workers` threads and averages them.
pub fn run_ensemble(config: &RunConfig, workers: usize) -> Result<EnsembleSeries, TrajectoryError> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| TrajectoryError::Pool(e.to_string()))?;
    let acc = pool.install(|| reduce(config, 0, config.n_traj as u64));
    let total = config.n_traj;
    let aborted = acc.aborted.len();
    let limit = (MAX_ABORT_FRACTION * total as f64).floor() as usize;
    if aborted > limit || acc.n == 0 {
        return Err(TrajectoryError::TooManyAborts {
            aborted,
            total,
            limit,
            first: acc.aborted.first().cloned().unwrap_or_default(),
        });
    }
    Ok(unpack(config, acc))
}

fn unpack(config: &RunConfig, acc: Accumulator) -> EnsembleSeries {
    let sites = config.chain.sites;
    let width = sample_width(sites);
    let times = config.sample_times();
    let n = acc.n as f64;
    let stderr = |i: usize| if acc.n > 1 { (acc.m2[i] / (n - 1.0) / n).sqrt() } else { 0.0 };
    let mut s = EnsembleSeries {
        sites,
        times: times.clone(),
        n_traj: acc.n as usize,
        aborted: acc.aborted.len(),
        abort_messages: acc.aborted.clone(),
        mean_z: Vec::with_capacity(times.len()),
        stderr_z: Vec::with_capacity(times.len()),
        mean_entropy: Vec::new(),
        stderr_entropy: Vec::new(),
        mean_x: Vec::new(),
        stderr_x: Vec::new(),
        mean_x2: Vec::new(),
        stderr_x2: Vec::new(),
        mean_antisym: Vec::new(),
        stderr_antisym: Vec::new(),
        max_discarded_weight: acc.max_discarded_weight,
        max_bond_dim: acc.max_bond_dim,
        max_sector_error: acc.max_sector_error,
        max_norm_error: acc.max_norm_error,
    };
    for row in 0..times.len() {
        let base = row * width;
        let range = |a: usize, b: usize| base + a..base + b;
        s.mean_z.push(range(0, sites).map(|i| acc.mean[i]).collect());
        s.stderr_z.push(range(0, sites).map(stderr).collect());
        s.mean_entropy.push(acc.mean[base + sites]);
        s.stderr_entropy.push(stderr(base + sites));
        s.mean_x.push(acc.mean[base + sites + 1]);
        s.stderr_x.push(stderr(base + sites + 1));
        s.mean_x2.push(acc.mean[base + sites + 2]);
        s.stderr_x2.push(stderr(base + sites + 2));
        s.mean_antisym.push(range(sites + 3, width).map(|i| acc.mean[i]).collect());
        s.stderr_antisym.push(range(sites + 3, width).map(stderr).collect());
    }
    s
}

/// Runs trajectories `0..n_traj` sequentially and keeps each result.
pub fn run_trajectories(config: &RunConfig) -> Result<Vec<TrajectoryResult>, TrajectoryError> {
    config.validate()?;
    (0..config.n_traj as u64).map(|k| run_trajectory(config, k)).collect()
}

/// Same as [`run_trajectories`] but on the calling rayon pool.
pub fn run_trajectories_parallel(config: &RunConfig) -> Result<Vec<TrajectoryResult>, TrajectoryError> {
    config.validate()?;
    (0..config.n_traj as u64).into_par_iter().map(|k| run_trajectory(config, k)).collect()
}
