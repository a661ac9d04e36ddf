//! TOML experiment configuration.
//!
//! ```toml
//! [chain]
//! delta = 0.5
//! dt = 0.1
//!
//! [run]
//! horizon = 10.0
//! n_traj = 100
//! master_seed = 7
//!
//! [grid]
//! sites = [16]
//! p_unit = [0.0, 0.3]
//! ```
//!
//! Keys mirror [`RunConfig`]; `p_unit` is the rate per unit time, the per-step
//! probability is derived from it.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use toml::{Table, Value};

use crate::model::{ChainSpec, DEFAULT_DT};
use crate::monitor::MonitorSpec;
use crate::mps::{DEFAULT_CHI_MAX, DEFAULT_SV_CUTOFF};
use crate::trajectory::{Backend, RunConfig};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfigIssue {
    pub key: String,
    pub message: String,
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result { write!(f, "{}: {}", self.key, self.message) }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed TOML: {0}")]
    Syntax(String),
    #[error("invalid configuration:\n{}", list(.0))]
    Schema(Vec<ConfigIssue>),
}

fn list(issues: &[ConfigIssue]) -> String {
    issues.iter().map(|i| format!("  {i}")).collect::<Vec<_>>().join("\n")
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainSection {
    pub delta: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub horizon: f64,
    pub n_traj: usize,
    #[serde(default = "default_sample_every")]
    pub sample_every: usize,
    #[serde(default = "default_chi")]
    pub chi_max: usize,
    #[serde(default = "default_cutoff")]
    pub sv_cutoff: f64,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub backend: Backend,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub sites: Vec<usize>,
    pub p_unit: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub chain: ChainSection,
    pub run: RunSection,
    pub grid: GridSection,
}

fn default_dt() -> f64 { DEFAULT_DT }
fn default_sample_every() -> usize { 1 }
fn default_chi() -> usize { DEFAULT_CHI_MAX }
fn default_cutoff() -> f64 { DEFAULT_SV_CUTOFF }

#[derive(Clone, Copy)]
enum Kind {
    Float,
    UInt,
    Backend,
    FloatList,
    UIntList,
}

struct Field {
    section: &'static str,
    key: &'static str,
    kind: Kind,
    required: bool,
}

const SCHEMA: &[Field] = &[
    Field { section: "chain", key: "delta", kind: Kind::Float, required: true },
    Field { section: "chain", key: "dt", kind: Kind::Float, required: false },
    Field { section: "run", key: "horizon", kind: Kind::Float, required: true },
    Field { section: "run", key: "n_traj", kind: Kind::UInt, required: true },
    Field { section: "run", key: "sample_every", kind: Kind::UInt, required: false },
    Field { section: "run", key: "chi_max", kind: Kind::UInt, required: false },
    Field { section: "run", key: "sv_cutoff", kind: Kind::Float, required: false },
    Field { section: "run", key: "master_seed", kind: Kind::UInt, required: false },
    Field { section: "run", key: "backend", kind: Kind::Backend, required: false },
    Field { section: "grid", key: "sites", kind: Kind::UIntList, required: true },
    Field { section: "grid", key: "p_unit", kind: Kind::FloatList, required: true },
];

const SECTIONS: &[&str] = &["chain", "run", "grid"];

/// Integers are accepted where floats are expected and rewritten in place.
fn check_kind(value: &mut Value, kind: Kind) -> Result<(), String> {
    fn float(v: &mut Value) -> Result<f64, String> {
        match *v {
            Value::Float(x) => Ok(x),
            Value::Integer(i) => {
                *v = Value::Float(i as f64);
                Ok(i as f64)
            }
            _ => Err(format!("expected a number, found {}", v.type_str())),
        }
    }
    fn uint(v: &Value) -> Result<i64, String> {
        match *v {
            Value::Integer(i) if i >= 0 => Ok(i),
            Value::Integer(i) => Err(format!("expected a non-negative integer, found {i}")),
            _ => Err(format!("expected an integer, found {}", v.type_str())),
        }
    }
    match kind {
        Kind::Float => {
            let x = float(value)?;
            if !x.is_finite() {
                return Err(format!("expected a finite number, found {x}"));
            }
        }
        Kind::UInt => {
            uint(value)?;
        }
        Kind::Backend => match value.as_str() {
            Some("mps" | "dense") => {}
            Some(other) => return Err(format!("expected \"mps\" or \"dense\", found \"{other}\"")),
            None => return Err(format!("expected a string, found {}", value.type_str())),
        },
        Kind::FloatList | Kind::UIntList => {
            let Value::Array(items) = value else {
                return Err(format!("expected an array, found {}", value.type_str()));
            };
            if items.is_empty() {
                return Err("must not be empty".into());
            }
            for (i, item) in items.iter_mut().enumerate() {
                let r = match kind {
                    Kind::FloatList => float(item).map(drop),
                    _ => uint(item).map(drop),
                };
                r.map_err(|e| format!("element {i}: {e}"))?;
            }
        }
    }
    Ok(())
}

fn issue(key: impl Into<String>, message: impl Into<String>) -> ConfigIssue {
    ConfigIssue { key: key.into(), message: message.into() }
}

/// Structural checks: unknown, missing and mistyped keys.
fn check_structure(table: &mut Table) -> Vec<ConfigIssue> {
    let mut issues = Vec::new();
    for name in table.keys() {
        if !SECTIONS.contains(&name.as_str()) {
            issues.push(issue(name.as_str(), "unknown section"));
        }
    }
    for &section in SECTIONS {
        let Some(value) = table.get_mut(section) else {
            issues.push(issue(section, "missing section"));
            continue;
        };
        let Value::Table(entries) = value else {
            issues.push(issue(section, "expected a table"));
            continue;
        };
        for key in entries.keys() {
            if !SCHEMA.iter().any(|f| f.section == section && f.key == key) {
                issues.push(issue(format!("{section}.{key}"), "unknown key"));
            }
        }
        for field in SCHEMA.iter().filter(|f| f.section == section) {
            let path = format!("{section}.{}", field.key);
            match entries.get_mut(field.key) {
                None if field.required => issues.push(issue(path, "missing required key")),
                None => {}
                Some(v) => {
                    if let Err(e) = check_kind(v, field.kind) {
                        issues.push(issue(path, e));
                    }
                }
            }
        }
    }
    issues
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let mut table: Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Syntax(e.to_string()))?;
        let issues = check_structure(&mut table);
        if !issues.is_empty() {
            return Err(ConfigError::Schema(issues));
        }
        let config: ExperimentConfig =
            Value::Table(table).try_into().map_err(|e: toml::de::Error| ConfigError::Syntax(e.to_string()))?;
        let issues = config.value_issues();
        if !issues.is_empty() {
            return Err(ConfigError::Schema(issues));
        }
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String { toml::to_string(self).expect("config serializes") }

    /// Range checks on already well-typed values.
    pub fn value_issues(&self) -> Vec<ConfigIssue> {
        let mut out = Vec::new();
        let c = &self.chain;
        if !c.delta.is_finite() {
            out.push(issue("chain.delta", "must be finite"));
        }
        if !(c.dt > 0.0 && c.dt.is_finite()) {
            out.push(issue("chain.dt", format!("must be positive, got {}", c.dt)));
        }
        let r = &self.run;
        if !(r.horizon > 0.0 && r.horizon.is_finite()) {
            out.push(issue("run.horizon", format!("must be positive, got {}", r.horizon)));
        }
        if r.n_traj == 0 {
            out.push(issue("run.n_traj", "must be at least 1"));
        }
        if r.sample_every == 0 {
            out.push(issue("run.sample_every", "must be at least 1"));
        }
        if r.chi_max == 0 {
            out.push(issue("run.chi_max", "must be at least 1"));
        }
        if !(0.0..1.0).contains(&r.sv_cutoff) {
            out.push(issue("run.sv_cutoff", format!("must lie in [0, 1), got {}", r.sv_cutoff)));
        }
        if r.master_seed > i64::MAX as u64 {
            out.push(issue("run.master_seed", "must fit in a signed 64-bit integer"));
        }
        for (i, &l) in self.grid.sites.iter().enumerate() {
            if l < 2 || l % 2 != 0 {
                out.push(issue(format!("grid.sites[{i}]"), format!("must be even and at least 2, got {l}")));
            } else if r.backend == Backend::Dense && l > crate::oracle::MAX_DENSE_SITES {
                out.push(issue(
                    format!("grid.sites[{i}]"),
                    format!("dense backend supports at most {} sites, got {l}", crate::oracle::MAX_DENSE_SITES),
                ));
            }
        }
        for (i, &p) in self.grid.p_unit.iter().enumerate() {
            if !(0.0..=1.0).contains(&p) {
                out.push(issue(format!("grid.p_unit[{i}]"), format!("must lie in [0, 1], got {p}")));
            }
        }
        if has_duplicates(self.grid.sites.iter().map(|&l| l as f64)) {
            out.push(issue("grid.sites", "contains duplicates"));
        }
        if has_duplicates(self.grid.p_unit.iter().copied()) {
            out.push(issue("grid.p_unit", "contains duplicates"));
        }
        out
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let issues = self.value_issues();
        if issues.is_empty() { Ok(()) } else { Err(ConfigError::Schema(issues)) }
    }

    /// Run configuration for one grid point.
    pub fn run_config(&self, sites: usize, p_unit: f64) -> crate::Result<RunConfig> {
        let chain = ChainSpec::new(sites, self.chain.delta, self.chain.dt)?;
        let monitor = MonitorSpec::from_unit(p_unit, self.chain.dt)?;
        let r = &self.run;
        let config = RunConfig {
            chain,
            monitor,
            chi_max: r.chi_max,
            sv_cutoff: r.sv_cutoff,
            horizon: r.horizon,
            sample_every: r.sample_every,
            n_traj: r.n_traj,
            master_seed: r.master_seed,
            backend: r.backend,
        };
        config.validate()?;
        Ok(config)
    }

    /// Grid points in file order: sizes outer, rates inner.
    pub fn grid_points(&self) -> Vec<(usize, f64)> {
        self.grid.sites.iter().flat_map(|&l| self.grid.p_unit.iter().map(move |&p| (l, p))).collect()
    }

    /// Applies command-line overrides.
    pub fn with_overrides(mut self, seed: Option<u64>, n_traj: Option<usize>, chi_max: Option<usize>) -> Self {
        if let Some(s) = seed {
            self.run.master_seed = s;
        }
        if let Some(n) = n_traj {
            self.run.n_traj = n;
        }
        if let Some(c) = chi_max {
            self.run.chi_max = c;
        }
        self
    }
}

fn has_duplicates(values: impl Iterator<Item = f64>) -> bool {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    v.windows(2).any(|w| w[0] == w[1])
}
