//! Plain-text result files and content hashes.
//!
//! Floats are written with Rust's shortest round-trip formatting, so reading
//! a file back reproduces the in-memory values exactly and identical results
//! give identical bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::observables::{RegimeDerivatives, SpreadingSeries};
use crate::trajectory::{EnsembleSeries, TrajectoryResult};

pub const PROFILE_HEADER: &str = "t,site,mean_z,stderr_z";
pub const ENTROPY_HEADER: &str = "t,mean_entropy,stderr_entropy";
pub const SPREADING_HEADER: &str = "t,sigma2,sigma2_alt,d1,d2";
pub const RESCALED_HEADER: &str = "group,t,x,y";

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Fs {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}:{line}: {message}")]
    Parse { file: String, line: usize, message: String },
    #[error("{path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

pub type IoResult<T> = Result<T, IoError>;

/// Hex SHA-256 of `blob <len>\0<bytes>`, the object id git would assign.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn read_file(path: &Path) -> IoResult<Vec<u8>> {
    fs::read(path).map_err(|source| IoError::Fs { path: path.display().to_string(), source })
}

pub fn read_text(path: &Path) -> IoResult<String> {
    fs::read_to_string(path).map_err(|source| IoError::Fs { path: path.display().to_string(), source })
}

/// Writes through a temporary sibling and renames, so a crash never leaves a
/// truncated file under the final name.
pub fn write_file(path: &Path, bytes: &[u8]) -> IoResult<()> {
    let fs_err = |source| IoError::Fs { path: path.display().to_string(), source };
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(fs_err)?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, bytes).map_err(fs_err)?;
    fs::rename(&tmp, path).map_err(fs_err)
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> IoResult<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|source| IoError::Json { path: path.display().to_string(), source })?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> IoResult<T> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|source| IoError::Json { path: path.display().to_string(), source })
}

/// One row per `(t, site)`, sites 1-based.
pub fn profile_csv(series: &EnsembleSeries) -> String {
    let mut s = String::with_capacity(series.times.len() * series.sites * 48);
    s.push_str(PROFILE_HEADER);
    s.push('\n');
    for (i, t) in series.times.iter().enumerate() {
        for site in 0..series.sites {
            let _ = writeln!(s, "{t},{},{},{}", site + 1, series.mean_z[i][site], series.stderr_z[i][site]);
        }
    }
    s
}

pub fn entropy_csv(series: &EnsembleSeries) -> String {
    let mut s = String::from(ENTROPY_HEADER);
    s.push('\n');
    for (i, t) in series.times.iter().enumerate() {
        let _ = writeln!(s, "{t},{},{}", series.mean_entropy[i], series.stderr_entropy[i]);
    }
    s
}

/// `σ²` series with spline derivatives; `d1`/`d2` are empty when the
/// derivatives were not computed.
pub fn spreading_csv(series: &SpreadingSeries, derivatives: Option<&RegimeDerivatives>) -> String {
    let mut s = String::from(SPREADING_HEADER);
    s.push('\n');
    for i in 0..series.len() {
        let t = series.times[i];
        let _ = write!(s, "{t},{},{},", series.sigma2[i], series.sigma2_alt[i]);
        let d = derivatives.and_then(|d| d.times.iter().position(|&u| u == t).map(|j| (d.d1[j], d.d2[j])));
        match d {
            Some((d1, d2)) => {
                let _ = writeln!(s, "{d1},{d2}");
            }
            None => s.push_str(",\n"),
        }
    }
    s
}

/// Single-trajectory profile, `t,site,z`.
pub fn trajectory_profile_csv(result: &TrajectoryResult) -> String {
    let mut s = String::from("t,site,z\n");
    for (t, row) in result.times.iter().zip(&result.z_profile) {
        for (i, z) in row.iter().enumerate() {
            let _ = writeln!(s, "{t},{},{z}", i + 1);
        }
    }
    s
}

pub fn trajectory_entropy_csv(result: &TrajectoryResult) -> String {
    let mut s = String::from("t,entropy\n");
    for (t, e) in result.times.iter().zip(&result.entropy_mid) {
        let _ = writeln!(s, "{t},{e}");
    }
    s
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProfileTable {
    pub times: Vec<f64>,
    pub mean_z: Vec<Vec<f64>>,
    pub stderr_z: Vec<Vec<f64>>,
}

impl ProfileTable {
    pub fn sites(&self) -> usize { self.mean_z.first().map_or(0, Vec::len) }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EntropyTable {
    pub times: Vec<f64>,
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
}

fn rows<'a>(file: &'a str, text: &'a str, header: &str, width: usize) -> IoResult<Vec<(usize, Vec<&'a str>)>> {
    let perr = |line: usize, message: String| IoError::Parse { file: file.to_string(), line, message };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == header => {}
        other => {
            return Err(perr(1, format!("expected header `{header}`, found `{}`", other.map_or("", |(_, h)| h))))
        }
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != width {
            return Err(perr(i + 1, format!("expected {width} columns, found {}", cells.len())));
        }
        out.push((i + 1, cells));
    }
    Ok(out)
}

fn num<T: std::str::FromStr>(file: &str, line: usize, cell: &str) -> IoResult<T> {
    cell.parse()
        .map_err(|_| IoError::Parse { file: file.to_string(), line, message: format!("bad number `{cell}`") })
}

/// Parses a profile CSV; rows must be grouped by time with sites `1..=L` in
/// order.
pub fn parse_profile_csv(file: &str, text: &str) -> IoResult<ProfileTable> {
    let mut table = ProfileTable { times: Vec::new(), mean_z: Vec::new(), stderr_z: Vec::new() };
    for (line, cells) in rows(file, text, PROFILE_HEADER, 4)? {
        let t: f64 = num(file, line, cells[0])?;
        let site: usize = num(file, line, cells[1])?;
        let (m, e): (f64, f64) = (num(file, line, cells[2])?, num(file, line, cells[3])?);
        if site == 1 {
            table.times.push(t);
            table.mean_z.push(Vec::new());
            table.stderr_z.push(Vec::new());
        }
        let (Some(&last_t), Some(row)) = (table.times.last(), table.mean_z.last_mut()) else {
            return Err(IoError::Parse { file: file.into(), line, message: "first row must be site 1".into() });
        };
        if last_t != t || row.len() + 1 != site {
            return Err(IoError::Parse { file: file.into(), line, message: format!("unexpected (t, site) = ({t}, {site})") });
        }
        row.push(m);
        table.stderr_z.last_mut().expect("row pushed with mean").push(e);
    }
    let sites = table.sites();
    if let Some(i) = table.mean_z.iter().position(|r| r.len() != sites) {
        return Err(IoError::Parse { file: file.into(), line: 0, message: format!("time {} has a short row", table.times[i]) });
    }
    Ok(table)
}

pub fn parse_entropy_csv(file: &str, text: &str) -> IoResult<EntropyTable> {
    let mut table = EntropyTable { times: Vec::new(), mean: Vec::new(), stderr: Vec::new() };
    for (line, cells) in rows(file, text, ENTROPY_HEADER, 3)? {
        table.times.push(num(file, line, cells[0])?);
        table.mean.push(num(file, line, cells[1])?);
        table.stderr.push(num(file, line, cells[2])?);
    }
    Ok(table)
}

pub fn read_profile_csv(path: &Path) -> IoResult<ProfileTable> {
    parse_profile_csv(&path.display().to_string(), &read_text(path)?)
}

pub fn read_entropy_csv(path: &Path) -> IoResult<EntropyTable> {
    parse_entropy_csv(&path.display().to_string(), &read_text(path)?)
}

pub fn rescaled_csv(points: &[crate::analysis::collapse::RescaledPoint]) -> String {
    let mut s = String::from(RESCALED_HEADER);
    s.push('\n');
    for p in points {
        let _ = writeln!(s, "{},{},{},{}", p.group, p.t, p.x, p.y);
    }
    s
}
