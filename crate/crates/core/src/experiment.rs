//! Experiment orchestration: ensembles over a `(L, p)` grid, manifests with
//! content hashes, and file-based analysis.
//!
//! An output directory holds one `manifest.json` plus, per grid point,
//! `profile_<stem>.csv` and `entropy_<stem>.csv` where the stem is
//! `L<sites>_p<p_unit>`. Analysis reads only these files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::collapse::{rescale_entropy, rescale_spreading, CollapseParams, EntropyDataset, EntropyParams};
use crate::analysis::exponent::{fit_exponent_with, ExponentFit, FitWindow, DEFAULT_BOOTSTRAP, DEFAULT_T_MIN};
use crate::analysis::optimize::{
    optimize_collapse, optimize_entropy_collapse, CollapseBounds, EntropyBounds, Interval, LandscapeSlice,
    SearchOptions,
};
use crate::analysis::steady::{steady_state, Plateau};
use crate::analysis::SpreadingDataset;
use crate::config::{ConfigError, ExperimentConfig};
use crate::io::{self, IoError, ProfileTable};
use crate::monitor::trajectory_seed;
use crate::observables::{
    boundary_arrival, classify_regime, regime_derivatives, regime_evidence, spreading_from_profiles, Regime,
    RegimeEvidence,
};
use crate::oracle::MAX_DENSE_SITES;
use crate::trajectory::{run_ensemble, run_trajectory, Backend, RunConfig, TrajectoryError};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TOOL_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));
/// Agreement required between the MPS and dense backends.
pub const ORACLE_TOLERANCE: f64 = 1e-8;
/// Relative rise of the collapse cost that bounds the reported intervals.
pub const CI_COST_RISE: f64 = 0.1;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Core(#[from] crate::Error),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("{0}")]
    Input(String),
}

impl From<TrajectoryError> for ExperimentError {
    fn from(e: TrajectoryError) -> Self { Self::Core(e.into()) }
}

impl ExperimentError {
    /// 2 for bad configuration or inputs, 3 when trajectories abort on
    /// truncation, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::Input(_) => 2,
            Self::Core(crate::Error::Trajectory(TrajectoryError::Config(_))) => 2,
            Self::Core(crate::Error::Trajectory(
                TrajectoryError::TooManyAborts { .. } | TrajectoryError::Truncation { .. },
            )) => 3,
            _ => 1,
        }
    }
}

pub type ExperimentResult<T> = Result<T, ExperimentError>;

pub fn run_stem(sites: usize, p_unit: f64) -> String { format!("L{sites}_p{p_unit}") }

pub fn profile_file(sites: usize, p_unit: f64) -> String { format!("profile_{}.csv", run_stem(sites, p_unit)) }

pub fn entropy_file(sites: usize, p_unit: f64) -> String { format!("entropy_{}.csv", run_stem(sites, p_unit)) }

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub sites: usize,
    pub p_unit: f64,
    pub run: RunConfig,
    /// Per-trajectory RNG seeds derived from the master seed.
    pub seeds: Vec<u64>,
    pub completed: usize,
    pub aborted: usize,
    pub max_discarded_weight: f64,
    pub max_bond_dim: usize,
    /// File name to content hash.
    pub outputs: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    pub command: String,
    pub config_path: Option<String>,
    pub out_dir: String,
    pub master_seed: u64,
    pub config: ExperimentConfig,
    pub runs: Vec<RunEntry>,
}

impl Manifest {
    pub fn new(command: &str, config: &ExperimentConfig, config_path: Option<&Path>, out_dir: &Path) -> Self {
        Self {
            tool_version: TOOL_VERSION.to_string(),
            command: command.to_string(),
            config_path: config_path.map(|p| p.display().to_string()),
            out_dir: out_dir.display().to_string(),
            master_seed: config.run.master_seed,
            config: config.clone(),
            runs: Vec::new(),
        }
    }

    pub fn load(dir: &Path) -> ExperimentResult<Self> {
        let path = dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Err(ExperimentError::Input(format!("{} not found", path.display())));
        }
        Ok(io::read_json(&path)?)
    }

    pub fn save(&self, dir: &Path) -> ExperimentResult<()> { Ok(io::write_json(&dir.join(MANIFEST_FILE), self)?) }

    pub fn entry(&self, sites: usize, p_unit: f64) -> Option<&RunEntry> {
        self.runs.iter().find(|r| r.sites == sites && r.p_unit == p_unit)
    }
}

/// `true` when every output of `entry` exists in `dir` with the recorded hash.
pub fn entry_is_complete(dir: &Path, entry: &RunEntry) -> bool {
    !entry.outputs.is_empty()
        && entry.outputs.iter().all(|(name, hash)| {
            io::read_file(&dir.join(name)).map(|b| io::content_hash(&b) == *hash).unwrap_or(false)
        })
}

fn write_output(dir: &Path, name: String, text: &str, outputs: &mut BTreeMap<String, String>) -> ExperimentResult<()> {
    io::write_file(&dir.join(&name), text.as_bytes())?;
    outputs.insert(name, io::content_hash(text.as_bytes()));
    Ok(())
}

fn seeds(run: &RunConfig) -> Vec<u64> { (0..run.n_traj as u64).map(|k| trajectory_seed(run.master_seed, k)).collect() }

#[derive(Clone, Debug, PartialEq)]
pub struct SweepReport {
    pub manifest: Manifest,
    pub ran: Vec<String>,
    pub skipped: Vec<String>,
}

/// Runs an ensemble at every grid point. With `resume`, grid points whose
/// previous manifest entry has the same run configuration and intact outputs
/// are kept as they are. The manifest is rewritten after every grid point.
pub fn run_sweep(
    config: &ExperimentConfig,
    config_path: Option<&Path>,
    out_dir: &Path,
    workers: usize,
    resume: bool,
) -> ExperimentResult<SweepReport> {
    config.validate()?;
    let previous = if resume { Manifest::load(out_dir).ok() } else { None };
    let command = if resume { "sweep" } else { "ensemble" };
    let mut manifest = Manifest::new(command, config, config_path, out_dir);
    let mut report = SweepReport { manifest: manifest.clone(), ran: Vec::new(), skipped: Vec::new() };
    for (sites, p_unit) in config.grid_points() {
        let run = config.run_config(sites, p_unit)?;
        let stem = run_stem(sites, p_unit);
        let reusable = previous
            .as_ref()
            .and_then(|m| m.entry(sites, p_unit))
            .filter(|e| e.run == run && entry_is_complete(out_dir, e));
        if let Some(e) = reusable {
            manifest.runs.push(e.clone());
            report.skipped.push(stem);
            continue;
        }
        let series = run_ensemble(&run, workers)?;
        let mut outputs = BTreeMap::new();
        write_output(out_dir, profile_file(sites, p_unit), &io::profile_csv(&series), &mut outputs)?;
        write_output(out_dir, entropy_file(sites, p_unit), &io::entropy_csv(&series), &mut outputs)?;
        manifest.runs.push(RunEntry {
            sites,
            p_unit,
            seeds: seeds(&run),
            run,
            completed: series.n_traj,
            aborted: series.aborted,
            max_discarded_weight: series.max_discarded_weight,
            max_bond_dim: series.max_bond_dim,
            outputs,
        });
        manifest.save(out_dir)?;
        report.ran.push(stem);
    }
    manifest.save(out_dir)?;
    report.manifest = manifest;
    Ok(report)
}

/// Single trajectories `0..n_traj` at every grid point: profile, entropy and
/// measurement record per trajectory.
pub fn run_evolve(
    config: &ExperimentConfig,
    config_path: Option<&Path>,
    out_dir: &Path,
    workers: usize,
) -> ExperimentResult<Manifest> {
    use rayon::prelude::*;
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| ExperimentError::from(TrajectoryError::Pool(e.to_string())))?;
    let mut manifest = Manifest::new("evolve", config, config_path, out_dir);
    for (sites, p_unit) in config.grid_points() {
        let run = config.run_config(sites, p_unit)?;
        let results: Vec<_> =
            pool.install(|| (0..run.n_traj as u64).into_par_iter().map(|k| run_trajectory(&run, k)).collect());
        let mut outputs = BTreeMap::new();
        let mut max_dw: f64 = 0.0;
        let mut max_chi = 0;
        for result in results {
            let r = result?;
            let stem = format!("traj_{}_k{}", run_stem(sites, p_unit), r.k);
            write_output(out_dir, format!("{stem}_z.csv"), &io::trajectory_profile_csv(&r), &mut outputs)?;
            write_output(out_dir, format!("{stem}_entropy.csv"), &io::trajectory_entropy_csv(&r), &mut outputs)?;
            let mut record = Vec::new();
            r.record.write_jsonl(&mut record).map_err(crate::Error::from)?;
            let record = String::from_utf8(record).expect("JSON is UTF-8");
            write_output(out_dir, format!("{stem}_record.jsonl"), &record, &mut outputs)?;
            max_dw = max_dw.max(r.max_discarded_weight);
            max_chi = max_chi.max(r.max_bond_dim);
        }
        manifest.runs.push(RunEntry {
            sites,
            p_unit,
            seeds: seeds(&run),
            completed: run.n_traj,
            run,
            aborted: 0,
            max_discarded_weight: max_dw,
            max_bond_dim: max_chi,
            outputs,
        });
    }
    manifest.save(out_dir)?;
    Ok(manifest)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleCheck {
    pub sites: usize,
    pub p_unit: f64,
    pub steps: usize,
    pub measurements: usize,
    pub records_match: bool,
    pub max_dev_z: f64,
    pub max_dev_entropy: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub tolerance: f64,
    pub checks: Vec<OracleCheck>,
    /// Grid sizes beyond the dense limit.
    pub skipped_sites: Vec<usize>,
    pub pass: bool,
}

/// Trajectory 0 at one grid point on both backends, untruncated, with a
/// shared RNG stream.
pub fn oracle_check_point(run: &RunConfig) -> ExperimentResult<OracleCheck> {
    let mut mps = run.clone();
    mps.backend = Backend::Mps;
    mps.sv_cutoff = 0.0;
    mps.chi_max = 1 << (run.chain.sites / 2);
    mps.n_traj = 1;
    let mut dense = mps.clone();
    dense.backend = Backend::Dense;
    let a = run_trajectory(&mps, 0)?;
    let b = run_trajectory(&dense, 0)?;
    let dev = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max);
    let max_dev_z = a.z_profile.iter().zip(&b.z_profile).map(|(x, y)| dev(x, y)).fold(0.0, f64::max);
    let max_dev_entropy = dev(&a.entropy_mid, &b.entropy_mid);
    let records_match = a.record == b.record;
    Ok(OracleCheck {
        sites: run.chain.sites,
        p_unit: run.monitor.p_unit,
        steps: run.n_steps(),
        measurements: a.record.measurement_count(),
        records_match,
        max_dev_z,
        max_dev_entropy,
        pass: records_match && max_dev_z < ORACLE_TOLERANCE && max_dev_entropy < ORACLE_TOLERANCE,
    })
}

pub fn run_oracle_check(config: &ExperimentConfig) -> ExperimentResult<OracleReport> {
    config.validate()?;
    let mut report = OracleReport { tolerance: ORACLE_TOLERANCE, checks: Vec::new(), skipped_sites: Vec::new(), pass: true };
    for (sites, p_unit) in config.grid_points() {
        if sites > MAX_DENSE_SITES {
            if !report.skipped_sites.contains(&sites) {
                report.skipped_sites.push(sites);
            }
            continue;
        }
        let check = oracle_check_point(&config.run_config(sites, p_unit)?)?;
        report.pass &= check.pass;
        report.checks.push(check);
    }
    if report.checks.is_empty() {
        return Err(ExperimentError::Input(format!("no grid size is within the dense limit of {MAX_DENSE_SITES} sites")));
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisOptions {
    pub t_min: f64,
    pub t_max: Option<f64>,
    pub sites: Option<usize>,
    pub p_unit: Option<f64>,
    pub bootstrap: usize,
    pub bootstrap_seed: u64,
    pub search: SearchOptions,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            t_min: DEFAULT_T_MIN,
            t_max: None,
            sites: None,
            p_unit: None,
            bootstrap: DEFAULT_BOOTSTRAP,
            bootstrap_seed: 0,
            search: SearchOptions::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisWindow {
    pub t_min: f64,
    pub t_max: f64,
    /// First time the front reached a chain end, if within the data.
    pub boundary_arrival: Option<f64>,
}

impl AnalysisWindow {
    pub fn fit_window(&self) -> FitWindow { FitWindow::new(self.t_min, self.t_max) }
}

/// `[t_min, t_max]` cut back to the last sample before the front reaches a
/// chain end.
pub fn analysis_window(profile: &ProfileTable, t_min: f64, t_max: Option<f64>) -> AnalysisWindow {
    let last = profile.times.last().copied().unwrap_or(0.0);
    let arrival = boundary_arrival(&profile.times, &profile.mean_z);
    let mut hi = t_max.unwrap_or(last).min(last);
    if let Some(ta) = arrival {
        let before = profile.times.iter().copied().filter(|&t| t < ta).fold(f64::NEG_INFINITY, f64::max);
        hi = hi.min(before);
    }
    AnalysisWindow { t_min, t_max: hi, boundary_arrival: arrival }
}

fn selected<'a>(manifest: &'a Manifest, opts: &AnalysisOptions) -> Vec<&'a RunEntry> {
    manifest
        .runs
        .iter()
        .filter(|r| opts.sites.is_none_or(|l| r.sites == l) && opts.p_unit.is_none_or(|p| r.p_unit == p))
        .collect()
}

/// Reads an input file after checking it against the manifest hash.
fn verified(dir: &Path, entry: &RunEntry, name: &str) -> ExperimentResult<PathBuf> {
    let path = dir.join(name);
    let expected = entry
        .outputs
        .get(name)
        .ok_or_else(|| ExperimentError::Input(format!("manifest has no entry for {name}")))?;
    let bytes = io::read_file(&path).map_err(|e| ExperimentError::Input(e.to_string()))?;
    if io::content_hash(&bytes) != *expected {
        return Err(ExperimentError::Input(format!("{} does not match its manifest hash", path.display())));
    }
    Ok(path)
}

fn load_profile(dir: &Path, entry: &RunEntry) -> ExperimentResult<ProfileTable> {
    Ok(io::read_profile_csv(&verified(dir, entry, &profile_file(entry.sites, entry.p_unit))?)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DerivativesReport {
    pub sites: usize,
    pub p_unit: f64,
    pub window: AnalysisWindow,
    pub n_points: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub regime: Regime,
    pub evidence: RegimeEvidence,
    /// Largest `|σ² - σ²_alt|` in the window.
    pub max_alt_deviation: f64,
}

fn require_runs<'a>(runs: Vec<&'a RunEntry>, dir: &Path) -> ExperimentResult<Vec<&'a RunEntry>> {
    if runs.is_empty() {
        return Err(ExperimentError::Input(format!("no run in {} matches the selection", dir.display())));
    }
    Ok(runs)
}

/// Spreading function and two-stage spline derivatives per run:
/// `spreading_<stem>.csv` and a `spreading_<stem>.json` sidecar.
pub fn analyze_derivatives(input: &Path, out: &Path, opts: &AnalysisOptions) -> ExperimentResult<Vec<DerivativesReport>> {
    let manifest = Manifest::load(input)?;
    let mut reports = Vec::new();
    for entry in require_runs(selected(&manifest, opts), input)? {
        let profile = load_profile(input, entry)?;
        let series = spreading_from_profiles(&profile.times, &profile.mean_z).map_err(crate::Error::from)?;
        let window = analysis_window(&profile, opts.t_min, opts.t_max);
        let w = series.window(window.t_min, window.t_max);
        let d = regime_derivatives(&w.times, &w.sigma2).map_err(crate::Error::from)?;
        let stem = run_stem(entry.sites, entry.p_unit);
        io::write_file(&out.join(format!("spreading_{stem}.csv")), io::spreading_csv(&series, Some(&d)).as_bytes())?;
        let report = DerivativesReport {
            sites: entry.sites,
            p_unit: entry.p_unit,
            window,
            n_points: w.len(),
            lambda1: d.lambda1,
            lambda2: d.lambda2,
            regime: classify_regime(&d.d1, &d.d2),
            evidence: regime_evidence(&d.d1, &d.d2),
            max_alt_deviation: w.sigma2.iter().zip(&w.sigma2_alt).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max),
        };
        io::write_json(&out.join(format!("spreading_{stem}.json")), &report)?;
        reports.push(report);
    }
    Ok(reports)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExponentReport {
    pub sites: usize,
    pub p_unit: f64,
    pub window: AnalysisWindow,
    pub fit: ExponentFit,
}

/// Power-law exponent of `σ²` per run: `exponent_<stem>.json`.
pub fn analyze_exponent(input: &Path, out: &Path, opts: &AnalysisOptions) -> ExperimentResult<Vec<ExponentReport>> {
    let manifest = Manifest::load(input)?;
    let mut reports = Vec::new();
    for entry in require_runs(selected(&manifest, opts), input)? {
        let profile = load_profile(input, entry)?;
        let series = spreading_from_profiles(&profile.times, &profile.mean_z).map_err(crate::Error::from)?;
        let window = analysis_window(&profile, opts.t_min, opts.t_max);
        let fit = fit_exponent_with(&series.times, &series.sigma2, window.fit_window(), opts.bootstrap, opts.bootstrap_seed)
            .map_err(crate::Error::from)?;
        let report = ExponentReport { sites: entry.sites, p_unit: entry.p_unit, window, fit };
        io::write_json(&out.join(format!("exponent_{}.json", run_stem(entry.sites, entry.p_unit))), &report)?;
        reports.push(report);
    }
    Ok(reports)
}

/// Range along a landscape slice, around the optimum, over which the cost
/// stays within [`CI_COST_RISE`] of the minimum.
pub fn slice_interval(slice: &LandscapeSlice, best: f64, best_cost: f64) -> [f64; 2] {
    let limit = best_cost + CI_COST_RISE * best_cost.abs().max(f64::MIN_POSITIVE);
    let n = slice.values.len();
    if n == 0 {
        return [best, best];
    }
    let centre = (0..n)
        .min_by(|&a, &b| (slice.values[a] - best).abs().total_cmp(&(slice.values[b] - best).abs()))
        .expect("non-empty slice");
    let ok = |i: usize| slice.costs[i] <= limit;
    let mut lo = centre;
    while lo > 0 && ok(lo - 1) {
        lo -= 1;
    }
    let mut hi = centre;
    while hi + 1 < n && ok(hi + 1) {
        hi += 1;
    }
    [slice.values[lo].min(best), slice.values[hi].max(best)]
}

fn intervals(landscape: &[LandscapeSlice], point: &[(&str, f64)], cost: f64) -> BTreeMap<String, [f64; 2]> {
    point
        .iter()
        .map(|&(name, v)| {
            let ci = landscape.iter().find(|s| s.param == name).map_or([v, v], |s| slice_interval(s, v, cost));
            (name.to_string(), ci)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollapseReport {
    pub params: CollapseParams,
    pub cost: f64,
    pub ci: BTreeMap<String, [f64; 2]>,
    pub window: FitWindow,
    pub sites: usize,
    pub p_values: Vec<f64>,
    pub hit_bounds: Vec<String>,
    pub evaluations: usize,
    pub landscape: Vec<LandscapeSlice>,
}

/// Dynamical collapse of `σ²(t)` over all rates at one size (the largest in
/// the selection unless `opts.sites` is set): `collapse_L<sites>.json` and
/// `collapse_L<sites>_rescaled.csv`. The window is shared by all rates and
/// ends before the earliest boundary arrival.
pub fn analyze_collapse(
    input: &Path,
    out: &Path,
    opts: &AnalysisOptions,
    bounds: &CollapseBounds,
) -> ExperimentResult<CollapseReport> {
    let manifest = Manifest::load(input)?;
    let runs = require_runs(selected(&manifest, opts), input)?;
    let sites = runs.iter().map(|r| r.sites).max().expect("non-empty");
    let mut runs: Vec<&RunEntry> = runs.into_iter().filter(|r| r.sites == sites).collect();
    runs.sort_by(|a, b| a.p_unit.total_cmp(&b.p_unit));
    let mut t_max = opts.t_max.unwrap_or(f64::INFINITY);
    let mut loaded = Vec::new();
    for entry in &runs {
        let profile = load_profile(input, entry)?;
        t_max = t_max.min(analysis_window(&profile, opts.t_min, opts.t_max).t_max);
        let series = spreading_from_profiles(&profile.times, &profile.mean_z).map_err(crate::Error::from)?;
        loaded.push((entry.p_unit, series));
    }
    let window = FitWindow::new(opts.t_min, t_max);
    let datasets: Vec<SpreadingDataset> = loaded
        .into_iter()
        .map(|(p, s)| {
            let w = s.window(window.t_min, window.t_max);
            SpreadingDataset { p, times: w.times, sigma2: w.sigma2 }
        })
        .collect();
    let init = CollapseParams {
        p_c: (0.5 * (bounds.p_c.lo + bounds.p_c.hi)),
        beta: 0.5 * (bounds.beta.lo + bounds.beta.hi),
        eta: 0.5 * (bounds.eta.lo + bounds.eta.hi),
    };
    let fit = optimize_collapse(&datasets, &init, bounds, &opts.search).map_err(crate::Error::from)?;
    let points = rescale_spreading(&datasets, &fit.params).map_err(crate::Error::from)?;
    io::write_file(&out.join(format!("collapse_L{sites}_rescaled.csv")), io::rescaled_csv(&points).as_bytes())?;
    let p = fit.params;
    let report = CollapseReport {
        ci: intervals(&fit.landscape, &[("p_c", p.p_c), ("beta", p.beta), ("eta", p.eta)], fit.cost),
        params: p,
        cost: fit.cost,
        window,
        sites,
        p_values: datasets.iter().map(|d| d.p).collect(),
        hit_bounds: fit.hit_bounds,
        evaluations: fit.evaluations,
        landscape: fit.landscape,
    };
    io::write_json(&out.join(format!("collapse_L{sites}.json")), &report)?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlateauEntry {
    pub sites: usize,
    pub p_unit: f64,
    pub plateau: Plateau,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyCollapseReport {
    pub params: EntropyParams,
    pub cost: f64,
    pub ci: BTreeMap<String, [f64; 2]>,
    pub window: FitWindow,
    pub size_independent: bool,
    pub hit_bounds: Vec<String>,
    pub plateaus: Vec<PlateauEntry>,
    pub evaluations: usize,
    pub landscape: Vec<LandscapeSlice>,
}

/// Late-time entropy plateau for every selected run.
pub fn entropy_plateaus(input: &Path, opts: &AnalysisOptions) -> ExperimentResult<Vec<PlateauEntry>> {
    let manifest = Manifest::load(input)?;
    let mut out = Vec::new();
    for entry in require_runs(selected(&manifest, opts), input)? {
        let path = verified(input, entry, &entropy_file(entry.sites, entry.p_unit))?;
        let table = io::read_entropy_csv(&path)?;
        let plateau = steady_state(&table.times, &table.mean, &table.stderr)
            .ok_or_else(|| ExperimentError::Input(format!("{} is empty", path.display())))?;
        out.push(PlateauEntry { sites: entry.sites, p_unit: entry.p_unit, plateau });
    }
    Ok(out)
}

/// Finite-size collapse of the steady-state entropy:
/// `entropy_collapse.json` and `entropy_collapse_rescaled.csv`. `bounds`
/// defaults to the common `p` range of all sizes and `0.3 ≤ ν ≤ 5`.
pub fn analyze_entropy_collapse(
    input: &Path,
    out: &Path,
    opts: &AnalysisOptions,
    bounds: Option<EntropyBounds>,
) -> ExperimentResult<EntropyCollapseReport> {
    let plateaus = entropy_plateaus(input, opts)?;
    let mut by_size: BTreeMap<usize, Vec<(f64, f64)>> = BTreeMap::new();
    for e in &plateaus {
        by_size.entry(e.sites).or_default().push((e.p_unit, e.plateau.mean));
    }
    let datasets: Vec<EntropyDataset> = by_size
        .into_iter()
        .map(|(sites, mut pts)| {
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            EntropyDataset { sites, p: pts.iter().map(|x| x.0).collect(), entropy: pts.iter().map(|x| x.1).collect() }
        })
        .collect();
    let bounds = match bounds {
        Some(b) => b,
        None => {
            let lo = datasets.iter().filter_map(|d| d.p.first().copied()).fold(f64::NEG_INFINITY, f64::max);
            let hi = datasets.iter().filter_map(|d| d.p.last().copied()).fold(f64::INFINITY, f64::min);
            if !(lo < hi) {
                return Err(ExperimentError::Input("sizes share no common range of p".into()));
            }
            EntropyBounds { p_c: Interval::new(lo, hi), nu: Interval::new(0.3, 5.0) }
        }
    };
    let init = EntropyParams { p_c: 0.5 * (bounds.p_c.lo + bounds.p_c.hi), nu: 0.5 * (bounds.nu.lo + bounds.nu.hi) };
    let fit = optimize_entropy_collapse(&datasets, &init, &bounds, &opts.search).map_err(crate::Error::from)?;
    let points = rescale_entropy(&datasets, &fit.params).map_err(crate::Error::from)?;
    io::write_file(&out.join("entropy_collapse_rescaled.csv"), io::rescaled_csv(&points).as_bytes())?;
    let window = plateaus
        .first()
        .map_or(FitWindow::new(0.0, 0.0), |p| FitWindow::new(p.plateau.t_start, p.plateau.t_end));
    let p = fit.params;
    let report = EntropyCollapseReport {
        ci: intervals(&fit.landscape, &[("p_c", p.p_c), ("nu", p.nu)], fit.cost),
        params: p,
        cost: fit.cost,
        window,
        size_independent: fit.size_independent,
        hit_bounds: fit.hit_bounds,
        plateaus,
        evaluations: fit.evaluations,
        landscape: fit.landscape,
    };
    io::write_json(&out.join("entropy_collapse.json"), &report)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(sites: &[usize], p: &[f64], horizon: f64, n_traj: usize) -> ExperimentConfig {
        let text = format!(
            "[chain]\ndelta = 0.5\ndt = 0.1\n[run]\nhorizon = {horizon}\nn_traj = {n_traj}\nmaster_seed = 11\n[grid]\nsites = {sites:?}\np_unit = {p:?}\n"
        );
        ExperimentConfig::from_toml_str(&text).unwrap()
    }

    #[test]
    fn sweep_writes_hashed_outputs_and_resumes() {
        let dir = tempfile::tempdir().unwrap();
        let c = config(&[6], &[0.0, 0.3], 1.0, 3);
        let r = run_sweep(&c, None, dir.path(), 1, false).unwrap();
        assert_eq!(r.ran.len(), 2);
        assert_eq!(r.manifest.runs.len(), 2);
        for e in &r.manifest.runs {
            assert!(entry_is_complete(dir.path(), e));
            assert_eq!(e.seeds.len(), 3);
        }
        let again = run_sweep(&c, None, dir.path(), 1, true).unwrap();
        assert_eq!(again.skipped.len(), 2);
        assert!(again.ran.is_empty());
        assert_eq!(again.manifest.runs, r.manifest.runs);

        // a tampered output is recomputed and restored
        let f = dir.path().join(profile_file(6, 0.3));
        std::fs::write(&f, "garbage").unwrap();
        let third = run_sweep(&c, None, dir.path(), 1, true).unwrap();
        assert_eq!(third.ran, vec!["L6_p0.3".to_string()]);
        assert_eq!(third.manifest.runs, r.manifest.runs);

        // a changed run configuration is not reused
        let c2 = c.clone().with_overrides(Some(12), None, None);
        let fourth = run_sweep(&c2, None, dir.path(), 1, true).unwrap();
        assert_eq!(fourth.ran.len(), 2);
    }

    #[test]
    fn analysis_needs_intact_inputs() {
        let dir = tempfile::tempdir().unwrap();
        let c = config(&[16], &[0.0], 3.0, 1);
        run_sweep(&c, None, dir.path(), 1, false).unwrap();
        let out = tempfile::tempdir().unwrap();
        let opts = AnalysisOptions { t_min: 0.2, bootstrap: 50, ..Default::default() };
        let reports = analyze_derivatives(dir.path(), out.path(), &opts).unwrap();
        assert_eq!(reports.len(), 1);
        assert!(out.path().join("spreading_L16_p0.csv").exists());
        std::fs::write(dir.path().join(profile_file(16, 0.0)), "t,site,mean_z,stderr_z\n").unwrap();
        let err = analyze_exponent(dir.path(), out.path(), &opts).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        let missing = analyze_exponent(out.path(), out.path(), &opts).unwrap_err();
        assert_eq!(missing.exit_code(), 2);
    }

    #[test]
    fn window_stops_before_boundary() {
        let profile = ProfileTable {
            times: vec![0.0, 1.0, 2.0, 3.0],
            mean_z: vec![vec![1.0, -1.0], vec![1.0, -1.0], vec![0.99, -0.99], vec![0.9, -0.9]],
            stderr_z: vec![vec![0.0; 2]; 4],
        };
        let w = analysis_window(&profile, 0.5, None);
        assert_eq!(w.boundary_arrival, Some(2.0));
        assert_eq!(w.t_max, 1.0);
        let w = analysis_window(&profile, 0.0, Some(0.5));
        assert_eq!(w.t_max, 0.5);
    }

    #[test]
    fn oracle_check_passes_small_chain() {
        let c = config(&[6, 30], &[0.9], 1.0, 1);
        let r = run_oracle_check(&c).unwrap();
        assert!(r.pass, "{r:?}");
        assert_eq!(r.skipped_sites, vec![30]);
        assert!(r.checks[0].measurements > 0);
    }

    #[test]
    fn evolve_writes_records() {
        let dir = tempfile::tempdir().unwrap();
        let c = config(&[4], &[0.5], 0.5, 2);
        let m = run_evolve(&c, None, dir.path(), 2).unwrap();
        assert_eq!(m.runs[0].outputs.len(), 6);
        let text = std::fs::read_to_string(dir.path().join("traj_L4_p0.5_k1_record.jsonl")).unwrap();
        assert_eq!(text.lines().count(), 5);
    }

    #[test]
    fn slice_interval_brackets_minimum() {
        let slice = LandscapeSlice {
            param: "x".into(),
            values: (0..11).map(|i| i as f64 / 10.0).collect(),
            costs: (0..11).map(|i| 1.0 + (i as f64 / 10.0 - 0.5).powi(2)).collect(),
        };
        let [lo, hi] = slice_interval(&slice, 0.5, 1.0);
        assert_eq!((lo, hi), (0.2, 0.8));
    }
}
