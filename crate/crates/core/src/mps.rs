//! Matrix product states with a single orthogonality center.
//!
//! Each site carries a rank-3 tensor `A[l, s, r]` with physical index `s ∈ {↑, ↓}`
//! stored in row-major order, so that the left-fused matrix `(l·s, r)` and
//! the right-fused matrix `(l, s·r)` are both plain reshapes.
//!
//! ```text
//!   A[0] --- A[1] --- ... --- A[c] --- ... --- A[L-1]
//!    |        |                |                 |
//!   left-isometric         center          right-isometric
//! ```
//!
//! Two-site gates contract a bond into a `(2χ_l, 2χ_r)` matrix, apply the gate
//! on the physical legs, and split it again by SVD. The smallest singular
//! values are dropped as long as their squared sum stays within
//! `sv_cutoff · Σλ²`, at most `chi_max` are kept, and the kept spectrum is
//! renormalized so the state stays unit-norm.

use std::io::{Read, Write};

use ndarray::{s, Array1, Array2, Array3, ArrayView2};
use ndarray_linalg::{JobSvd, QR, SVD, SVDDC};
use num_complex::Complex64 as C64;
use thiserror::Error;

use crate::model::TwoSiteGate;
use crate::state::{entropy_from_schmidt, ChainState, Spin};

pub const DEFAULT_CHI_MAX: usize = 350;
pub const DEFAULT_SV_CUTOFF: f64 = 1e-10;

const SNAPSHOT_MAGIC: &[u8; 4] = b"MXZS";
const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum MpsError {
    #[error("cannot build an MPS from an empty pattern")]
    EmptyPattern,
    #[error("an MPS needs at least 2 sites, got {0}")]
    TooFewSites(usize),
    #[error("site {site} out of range for {sites} sites")]
    SiteOutOfRange { site: usize, sites: usize },
    #[error("bond {bond} out of range for {sites} sites")]
    BondOutOfRange { bond: usize, sites: usize },
    #[error("invalid truncation settings: chi_max = {chi_max}, sv_cutoff = {sv_cutoff}")]
    InvalidTruncation { chi_max: usize, sv_cutoff: f64 },
    #[error("dense vector of length {len} is not 2^{sites}")]
    DenseShape { len: usize, sites: usize },
    #[error("state has zero norm")]
    ZeroNorm,
    #[error("projection onto {outcome:?} at site {site} has vanishing weight {weight:e}")]
    VanishingProjection { site: usize, outcome: Spin, weight: f64 },
    #[error("linear algebra failure: {0}")]
    Linalg(String),
    #[error("snapshot: {0}")]
    Snapshot(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type MpsResult<T> = Result<T, MpsError>;

/// Outcome of one SVD split.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TruncationReport {
    pub bond: usize,
    /// Σ of dropped squared singular values over the total weight.
    pub discarded_weight: f64,
    pub new_dim: usize,
}

#[derive(Clone, Debug)]
struct SchmidtCache {
    version: u64,
    values: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct MpsState {
    tensors: Vec<Array3<C64>>,
    center: usize,
    chi_max: usize,
    sv_cutoff: f64,
    schmidt: Vec<Option<SchmidtCache>>,
    // bumped by every non-gauge modification; stamps the Schmidt cache
    version: u64,
}

impl MpsState {
    pub fn from_product_state(pattern: &[Spin], chi_max: usize, sv_cutoff: f64) -> MpsResult<Self> {
        if pattern.is_empty() {
            return Err(MpsError::EmptyPattern);
        }
        if pattern.len() < 2 {
            return Err(MpsError::TooFewSites(pattern.len()));
        }
        check_truncation(chi_max, sv_cutoff)?;
        let tensors = pattern
            .iter()
            .map(|spin| {
                let mut t = Array3::zeros((1, 2, 1));
                t[[0, spin.index(), 0]] = C64::new(1.0, 0.0);
                t
            })
            .collect();
        let bonds = pattern.len() - 1;
        let mut state = Self {
            tensors,
            center: 0,
            chi_max,
            sv_cutoff,
            schmidt: vec![None; bonds],
            version: 0,
        };
        for b in 0..bonds {
            state.schmidt[b] = Some(SchmidtCache { version: 0, values: vec![1.0] });
        }
        Ok(state)
    }

    /// Left-to-right SVD decomposition of a dense amplitude vector (site 0 is
    /// the most significant bit, `↑ = 0`). The vector is normalized first.
    pub fn from_dense(amps: &[C64], sites: usize, chi_max: usize, sv_cutoff: f64) -> MpsResult<Self> {
        if sites < 2 {
            return Err(MpsError::TooFewSites(sites));
        }
        if amps.len() != 1usize << sites {
            return Err(MpsError::DenseShape { len: amps.len(), sites });
        }
        check_truncation(chi_max, sv_cutoff)?;
        let norm = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(MpsError::ZeroNorm);
        }
        let mut rest = Array2::from_shape_vec((2, amps.len() / 2), amps.iter().map(|a| a / norm).collect())
            .expect("shape matches length");
        let mut tensors = Vec::with_capacity(sites);
        let mut schmidt = vec![None; sites - 1];
        let mut left = 1;
        for site in 0..sites - 1 {
            let (u, s, vt) = svd(&rest)?;
            let (keep, _, kept_weight) = truncation_rank(&s, chi_max, sv_cutoff)?;
            let scale = kept_weight.sqrt();
            let values: Vec<f64> = s.iter().take(keep).map(|v| v / scale).collect();
            tensors.push(reshape3(u.slice(s![.., ..keep]).to_owned(), left, keep));
            let mut sv = vt.slice(s![..keep, ..]).to_owned();
            for (mut row, v) in sv.rows_mut().into_iter().zip(&values) {
                row.mapv_inplace(|x| x * *v);
            }
            schmidt[site] = Some(SchmidtCache { version: 0, values });
            let cols = sv.ncols();
            left = keep;
            rest = standard(sv).into_shape_with_order((keep * 2, cols / 2)).expect("contiguous");
        }
        let last = reshape3(rest, left, 1);
        tensors.push(last);
        Ok(Self { tensors, center: sites - 1, chi_max, sv_cutoff, schmidt, version: 0 })
    }

    pub fn len(&self) -> usize { self.tensors.len() }

    pub fn is_empty(&self) -> bool { self.tensors.is_empty() }

    pub fn ortho_center(&self) -> usize { self.center }

    pub fn chi_max(&self) -> usize { self.chi_max }

    pub fn sv_cutoff(&self) -> f64 { self.sv_cutoff }

    /// Dimensions of the `L - 1` internal bonds.
    pub fn bond_dims(&self) -> Vec<usize> {
        self.tensors[..self.len() - 1].iter().map(|t| t.shape()[2]).collect()
    }

    pub fn tensor(&self, site: usize) -> &Array3<C64> { &self.tensors[site] }

    fn check_site(&self, site: usize) -> MpsResult<()> {
        if site >= self.len() {
            return Err(MpsError::SiteOutOfRange { site, sites: self.len() });
        }
        Ok(())
    }

    fn check_bond(&self, bond: usize) -> MpsResult<()> {
        if bond + 1 >= self.len() {
            return Err(MpsError::BondOutOfRange { bond, sites: self.len() });
        }
        Ok(())
    }

    /// Gauge transformation moving the orthogonality center by QR sweeps.
    pub fn move_ortho_center(&mut self, target: usize) -> MpsResult<()> {
        self.check_site(target)?;
        while self.center < target {
            self.shift_center_right()?;
        }
        while self.center > target {
            self.shift_center_left()?;
        }
        Ok(())
    }

    fn shift_center_right(&mut self) -> MpsResult<()> {
        let i = self.center;
        let (l, _, r) = dims(&self.tensors[i]);
        let (q, rmat) = left_fused(&self.tensors[i]).qr().map_err(linalg)?;
        let k = q.ncols();
        self.tensors[i] = reshape3(q, l, k);
        let next = &self.tensors[i + 1];
        let (_, _, r2) = dims(next);
        let merged = rmat.dot(&right_fused(next));
        debug_assert_eq!(rmat.ncols(), r);
        self.tensors[i + 1] = reshape3(merged, k, r2);
        self.center = i + 1;
        Ok(())
    }

    fn shift_center_left(&mut self) -> MpsResult<()> {
        let i = self.center;
        let (_, _, r) = dims(&self.tensors[i]);
        // A = R† Q† from the QR of A†
        let adj = right_fused(&self.tensors[i]).t().mapv(|z| z.conj());
        let (q, rmat) = adj.qr().map_err(linalg)?;
        let k = q.ncols();
        let qd = q.t().mapv(|z| z.conj());
        self.tensors[i] = reshape3(qd, k, r);
        let prev = &self.tensors[i - 1];
        let (l0, _, _) = dims(prev);
        let rd = rmat.t().mapv(|z| z.conj());
        let merged = left_fused(prev).dot(&rd);
        self.tensors[i - 1] = reshape3(merged, l0, k);
        self.center = i - 1;
        Ok(())
    }

    /// Contracts a gate into bond `gate.bond`, splits by truncated SVD, and
    /// renormalizes. The center is carried across the bond in the direction it
    /// arrived from, so left-to-right and right-to-left sweeps need no extra
    /// gauge moves.
    pub fn apply_gate(&mut self, gate: &TwoSiteGate) -> MpsResult<TruncationReport> {
        let b = gate.bond;
        self.check_bond(b)?;
        let from_left = self.center <= b;
        self.move_ortho_center(if from_left { b } else { b + 1 })?;

        let (l, _, _) = dims(&self.tensors[b]);
        let (_, _, r) = dims(&self.tensors[b + 1]);
        let mut theta = left_fused(&self.tensors[b]).dot(&right_fused(&self.tensors[b + 1]));
        apply_two_site(&mut theta, &gate.matrix, l, r);

        let (u, s, vt) = svd(&theta)?;
        let (keep, discarded, kept_weight) = truncation_rank(&s, self.chi_max, self.sv_cutoff)?;
        let scale = kept_weight.sqrt();
        let values: Vec<f64> = s.iter().take(keep).map(|v| v / scale).collect();
        let mut u = u.slice(s![.., ..keep]).to_owned();
        let mut vt = vt.slice(s![..keep, ..]).to_owned();
        if from_left {
            for (mut row, v) in vt.rows_mut().into_iter().zip(&values) {
                row.mapv_inplace(|x| x * *v);
            }
        } else {
            for (mut col, v) in u.columns_mut().into_iter().zip(&values) {
                col.mapv_inplace(|x| x * *v);
            }
        }
        self.tensors[b] = reshape3(u, l, keep);
        self.tensors[b + 1] = reshape3(vt, keep, r);
        self.center = if from_left { b + 1 } else { b };
        self.version += 1;
        self.schmidt[b] = Some(SchmidtCache { version: self.version, values });
        Ok(TruncationReport { bond: b, discarded_weight: discarded, new_dim: keep })
    }

    /// Schmidt values across bond `cut` (between sites `cut` and `cut + 1`),
    /// descending. Served from the cache when it is current and the center is
    /// adjacent to the cut; otherwise recomputed at the center.
    pub fn schmidt_values(&mut self, cut: usize) -> MpsResult<Vec<f64>> {
        self.check_bond(cut)?;
        let adjacent = self.center == cut || self.center == cut + 1;
        if let Some(cache) = &self.schmidt[cut] {
            if adjacent && cache.version == self.version {
                return Ok(cache.values.clone());
            }
        }
        self.move_ortho_center(cut)?;
        let m = left_fused(&self.tensors[cut]);
        let s = singular_values(&m.to_owned())?;
        let values: Vec<f64> = s.into_iter().filter(|&v| v > 0.0).collect();
        self.schmidt[cut] = Some(SchmidtCache { version: self.version, values: values.clone() });
        Ok(values)
    }

    pub fn entanglement_entropy(&mut self, cut: usize) -> MpsResult<f64> {
        Ok(entropy_from_schmidt(&self.schmidt_values(cut)?))
    }

    fn local_weights(&self, site: usize) -> (f64, f64) {
        let t = &self.tensors[site];
        let up: f64 = t.slice(s![.., 0, ..]).iter().map(|z| z.norm_sqr()).sum();
        let down: f64 = t.slice(s![.., 1, ..]).iter().map(|z| z.norm_sqr()).sum();
        (up, down)
    }

    pub fn prob_up(&mut self, site: usize) -> MpsResult<f64> {
        self.move_ortho_center(site)?;
        let (up, down) = self.local_weights(site);
        if up + down == 0.0 {
            return Err(MpsError::ZeroNorm);
        }
        Ok(up / (up + down))
    }

    pub fn expect_z(&mut self, site: usize) -> MpsResult<f64> {
        Ok(2.0 * self.prob_up(site)? - 1.0)
    }

    /// `⟨Z_i⟩` for all sites, sweeping the center from the nearer end.
    pub fn z_profile(&mut self) -> MpsResult<Vec<f64>> {
        let n = self.len();
        let mut out = vec![0.0; n];
        if self.center <= n / 2 {
            for site in 0..n {
                out[site] = self.expect_z(site)?;
            }
        } else {
            for site in (0..n).rev() {
                out[site] = self.expect_z(site)?;
            }
        }
        Ok(out)
    }

    /// Projects `site` onto `outcome`; returns the pre-measurement probability.
    pub fn project(&mut self, site: usize, outcome: Spin) -> MpsResult<f64> {
        self.move_ortho_center(site)?;
        let (up, down) = self.local_weights(site);
        let total = up + down;
        let weight = match outcome {
            Spin::Up => up,
            Spin::Down => down,
        };
        if total == 0.0 || weight / total < 1e-300 {
            return Err(MpsError::VanishingProjection { site, outcome, weight });
        }
        let scale = 1.0 / weight.sqrt();
        let t = &mut self.tensors[site];
        t.slice_mut(s![.., outcome.flipped().index(), ..]).fill(C64::new(0.0, 0.0));
        t.mapv_inplace(|z| z * scale);
        self.version += 1;
        Ok(weight / total)
    }

    /// `⟨ψ|ψ⟩` by full transfer-matrix contraction, independent of the gauge.
    pub fn norm_sqr(&self) -> f64 {
        let mut env = Array2::from_elem((1, 1), C64::new(1.0, 0.0));
        for t in &self.tensors {
            let (_, _, r) = dims(t);
            let mut next = Array2::<C64>::zeros((r, r));
            for phys in 0..2 {
                let m: ArrayView2<C64> = t.slice(s![.., phys, ..]);
                let tmp: Array2<C64> = env.dot(&m);
                let md: Array2<C64> = m.t().mapv(|z| z.conj());
                next = next + md.dot(&tmp);
            }
            env = next;
        }
        env[[0, 0]].re
    }

    /// Largest deviation from the left (right) isometry condition over the
    /// tensors left (right) of the center.
    pub fn isometry_error(&self) -> f64 {
        let mut worst = 0.0_f64;
        for (i, t) in self.tensors.iter().enumerate() {
            let gram = if i < self.center {
                let m = left_fused(t);
                m.t().mapv(|z| z.conj()).dot(&m)
            } else if i > self.center {
                let m = right_fused(t);
                m.dot(&m.t().mapv(|z| z.conj()))
            } else {
                continue;
            };
            for ((r, c), v) in gram.indexed_iter() {
                let target = if r == c { 1.0 } else { 0.0 };
                worst = worst.max((v - C64::new(target, 0.0)).norm());
            }
        }
        worst
    }

    /// Full amplitude vector; site 0 is the most significant bit.
    pub fn to_dense(&self) -> Vec<C64> {
        let mut psi = Array2::from_elem((1, 1), C64::new(1.0, 0.0));
        for t in &self.tensors {
            let (l, _, r) = dims(t);
            let rows = psi.nrows();
            let next = psi.dot(&right_fused(t));
            debug_assert_eq!(psi.ncols(), l);
            psi = standard(next).into_shape_with_order((rows * 2, r)).expect("contiguous");
        }
        psi.into_iter().collect()
    }

    /// Writes a versioned little-endian snapshot: magic, format version, L,
    /// chi_max, sv_cutoff, center, the `L + 1` bond dimensions (edges
    /// included), then each tensor as row-major `(re, im)` f64 pairs.
    pub fn write_snapshot<W: Write>(&self, mut w: W) -> MpsResult<()> {
        w.write_all(SNAPSHOT_MAGIC)?;
        w.write_all(&SNAPSHOT_VERSION.to_le_bytes())?;
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        w.write_all(&(self.chi_max as u64).to_le_bytes())?;
        w.write_all(&self.sv_cutoff.to_le_bytes())?;
        w.write_all(&(self.center as u64).to_le_bytes())?;
        w.write_all(&(self.tensors[0].shape()[0] as u64).to_le_bytes())?;
        for t in &self.tensors {
            w.write_all(&(t.shape()[2] as u64).to_le_bytes())?;
        }
        for t in &self.tensors {
            for z in t.iter() {
                w.write_all(&z.re.to_le_bytes())?;
                w.write_all(&z.im.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_snapshot<R: Read>(mut r: R) -> MpsResult<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != SNAPSHOT_MAGIC {
            return Err(MpsError::Snapshot("bad magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != SNAPSHOT_VERSION {
            return Err(MpsError::Snapshot(format!("unsupported format version {version}")));
        }
        let sites = read_u64(&mut r)? as usize;
        if !(2..=4096).contains(&sites) {
            return Err(MpsError::Snapshot(format!("implausible site count {sites}")));
        }
        let chi_max = read_u64(&mut r)? as usize;
        let sv_cutoff = read_f64(&mut r)?;
        check_truncation(chi_max, sv_cutoff)?;
        let center = read_u64(&mut r)? as usize;
        if center >= sites {
            return Err(MpsError::Snapshot(format!("center {center} out of range")));
        }
        let mut bonds = Vec::with_capacity(sites + 1);
        for _ in 0..=sites {
            bonds.push(read_u64(&mut r)? as usize);
        }
        if bonds[0] != 1 || bonds[sites] != 1 || bonds.iter().any(|&d| d == 0 || d > 1 << 20) {
            return Err(MpsError::Snapshot("invalid bond dimensions".into()));
        }
        let mut tensors = Vec::with_capacity(sites);
        for i in 0..sites {
            let (l, rr) = (bonds[i], bonds[i + 1]);
            let mut data = Vec::with_capacity(l * 2 * rr);
            for _ in 0..l * 2 * rr {
                let re = read_f64(&mut r)?;
                let im = read_f64(&mut r)?;
                data.push(C64::new(re, im));
            }
            tensors.push(Array3::from_shape_vec((l, 2, rr), data).expect("shape matches"));
        }
        Ok(Self { tensors, center, chi_max, sv_cutoff, schmidt: vec![None; sites - 1], version: 1 })
    }
}

impl ChainState for MpsState {
    fn sites(&self) -> usize { self.len() }

    fn apply_gate(&mut self, gate: &TwoSiteGate) -> crate::Result<f64> {
        Ok(MpsState::apply_gate(self, gate)?.discarded_weight)
    }

    fn prob_up(&mut self, site: usize) -> crate::Result<f64> { Ok(MpsState::prob_up(self, site)?) }

    fn project(&mut self, site: usize, outcome: Spin) -> crate::Result<f64> {
        Ok(MpsState::project(self, site, outcome)?)
    }

    fn z_profile(&mut self) -> Vec<f64> {
        MpsState::z_profile(self).expect("sites in range")
    }

    fn entanglement_entropy(&mut self, cut: usize) -> crate::Result<f64> {
        Ok(MpsState::entanglement_entropy(self, cut)?)
    }

    fn norm_sqr(&self) -> f64 { MpsState::norm_sqr(self) }

    fn max_bond_dim(&self) -> usize { self.bond_dims().into_iter().max().unwrap_or(1) }
}

fn check_truncation(chi_max: usize, sv_cutoff: f64) -> MpsResult<()> {
    if chi_max == 0 || !(0.0..1.0).contains(&sv_cutoff) {
        return Err(MpsError::InvalidTruncation { chi_max, sv_cutoff });
    }
    Ok(())
}

fn linalg(e: ndarray_linalg::error::LinalgError) -> MpsError { MpsError::Linalg(e.to_string()) }

fn dims(t: &Array3<C64>) -> (usize, usize, usize) {
    let sh = t.shape();
    (sh[0], sh[1], sh[2])
}

fn left_fused(t: &Array3<C64>) -> ArrayView2<'_, C64> {
    let (l, p, r) = dims(t);
    t.view().into_shape_with_order((l * p, r)).expect("standard layout")
}

fn right_fused(t: &Array3<C64>) -> ArrayView2<'_, C64> {
    let (l, p, r) = dims(t);
    t.view().into_shape_with_order((l, p * r)).expect("standard layout")
}

fn standard(m: Array2<C64>) -> Array2<C64> {
    if m.is_standard_layout() { m } else { m.as_standard_layout().into_owned() }
}

fn reshape3(m: Array2<C64>, l: usize, r: usize) -> Array3<C64> {
    standard(m).into_shape_with_order((l, 2, r)).expect("contiguous")
}

/// Applies `gate` to the physical legs of `theta` viewed as `(l, 2, 2, r)`.
fn apply_two_site(theta: &mut Array2<C64>, gate: &crate::model::Mat4, l: usize, r: usize) {
    for a in 0..l {
        for c in 0..r {
            let idx = [(2 * a, c), (2 * a, r + c), (2 * a + 1, c), (2 * a + 1, r + c)];
            let v = idx.map(|ij| theta[ij]);
            for (row, &ij) in gate.iter().zip(&idx) {
                theta[ij] = row[0] * v[0] + row[1] * v[1] + row[2] * v[2] + row[3] * v[3];
            }
        }
    }
}

/// Thin SVD with a divide-and-conquer first attempt and a QR-iteration
/// fallback.
fn svd(m: &Array2<C64>) -> MpsResult<(Array2<C64>, Array1<f64>, Array2<C64>)> {
    if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(MpsError::Linalg("non-finite entries in SVD input".into()));
    }
    if let Ok((Some(u), s, Some(vt))) = m.svddc(JobSvd::Some) {
        return Ok((u, s, vt));
    }
    let k = m.nrows().min(m.ncols());
    match m.svd(true, true) {
        Ok((Some(u), s, Some(vt))) => {
            Ok((u.slice(s![.., ..k]).to_owned(), s, vt.slice(s![..k, ..]).to_owned()))
        }
        Ok(_) => Err(MpsError::Linalg("SVD returned no singular vectors".into())),
        Err(e) => Err(linalg(e)),
    }
}

fn singular_values(m: &Array2<C64>) -> MpsResult<Vec<f64>> {
    match m.svddc(JobSvd::None) {
        Ok((_, s, _)) => Ok(s.to_vec()),
        Err(_) => m.svd(false, false).map(|(_, s, _)| s.to_vec()).map_err(linalg),
    }
}

/// Number of values to keep, discarded weight fraction, and kept weight.
fn truncation_rank(s: &Array1<f64>, chi_max: usize, cutoff: f64) -> MpsResult<(usize, f64, f64)> {
    let largest = s.first().copied().unwrap_or(0.0);
    if largest <= 0.0 || !largest.is_finite() {
        return Err(MpsError::ZeroNorm);
    }
    let total: f64 = s.iter().map(|v| v * v).sum();
    let budget = cutoff * total;
    let mut keep = s.len();
    let mut tail = 0.0;
    while keep > 1 {
        let w = s[keep - 1] * s[keep - 1];
        if tail + w > budget {
            break;
        }
        tail += w;
        keep -= 1;
    }
    let keep = keep.min(chi_max);
    let kept: f64 = s.iter().take(keep).map(|v| v * v).sum();
    let dropped: f64 = s.iter().skip(keep).map(|v| v * v).sum();
    Ok((keep, dropped / total, kept))
}

fn read_u32<R: Read>(r: &mut R) -> MpsResult<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> MpsResult<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> MpsResult<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{bond_gate, trotter_schedule, ChainSpec, Mat4};
    use crate::state::domain_wall_pattern;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random_dense(sites: usize, seed: u64) -> Vec<C64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v: Vec<C64> = (0..1usize << sites)
            .map(|_| C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5))
            .collect();
        let n = v.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        v.into_iter().map(|a| a / n).collect()
    }

    /// Independent dense contraction: apply a 4×4 matrix to sites (b, b+1).
    fn dense_apply(psi: &[C64], sites: usize, bond: usize, g: &Mat4) -> Vec<C64> {
        let hi = sites - 1 - bond;
        let lo = hi - 1;
        let mut out = vec![C64::new(0.0, 0.0); psi.len()];
        for (idx, o) in out.iter_mut().enumerate() {
            let row = (((idx >> hi) & 1) << 1) | ((idx >> lo) & 1);
            let base = idx & !(1 << hi) & !(1 << lo);
            for col in 0..4 {
                let src = base | ((col >> 1) << hi) | ((col & 1) << lo);
                *o += g[row][col] * psi[src];
            }
        }
        out
    }

    fn max_diff(a: &[C64], b: &[C64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
    }

    /// Aligns the global phase of `b` to `a` before comparing.
    fn max_diff_up_to_phase(a: &[C64], b: &[C64]) -> f64 {
        let overlap: C64 = a.iter().zip(b).map(|(x, y)| x.conj() * y).sum();
        let phase = overlap / overlap.norm();
        a.iter().zip(b).map(|(x, y)| (x * phase - y).norm()).fold(0.0, f64::max)
    }

    #[test]
    fn product_state_basics() {
        let mut mps = MpsState::from_product_state(&[Spin::Up, Spin::Down], 8, 1e-10).unwrap();
        assert_eq!(mps.z_profile().unwrap(), vec![1.0, -1.0]);
        assert_eq!(mps.bond_dims(), vec![1]);
        assert_eq!(mps.entanglement_entropy(0).unwrap(), 0.0);
    }

    #[test]
    fn domain_wall_profile_and_entropy() {
        let mut mps = MpsState::from_product_state(&domain_wall_pattern(8), 16, 1e-10).unwrap();
        assert_eq!(mps.z_profile().unwrap(), vec![1.0, 1.0, 1.0, 1.0, -1.0, -1.0, -1.0, -1.0]);
        for cut in 0..7 {
            assert_eq!(mps.entanglement_entropy(cut).unwrap(), 0.0);
        }
        assert!(mps.bond_dims().iter().all(|&d| d == 1));
        assert!((mps.norm_sqr() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn construction_errors() {
        assert!(matches!(MpsState::from_product_state(&[], 4, 1e-10), Err(MpsError::EmptyPattern)));
        assert!(matches!(MpsState::from_product_state(&[Spin::Up], 4, 1e-10), Err(MpsError::TooFewSites(1))));
        assert!(MpsState::from_product_state(&[Spin::Up, Spin::Up], 0, 1e-10).is_err());
    }

    #[test]
    fn identity_gate_discards_nothing() {
        let dense = random_dense(6, 3);
        let mut mps = MpsState::from_dense(&dense, 6, 64, 1e-12).unwrap();
        let before = mps.z_profile().unwrap();
        for b in 0..5 {
            let rep = mps.apply_gate(&TwoSiteGate::identity(b)).unwrap();
            assert!(rep.discarded_weight < 1e-20);
        }
        let after = mps.z_profile().unwrap();
        for (x, y) in before.iter().zip(&after) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn two_site_wall_rotates_as_cos_2t() {
        let spec = ChainSpec::new(2, 0.5, 0.1).unwrap();
        let mut mps = MpsState::from_product_state(&[Spin::Up, Spin::Down], 4, 1e-10).unwrap();
        mps.apply_gate(&bond_gate(&spec, 0, 0.3).unwrap()).unwrap();
        let z = mps.expect_z(0).unwrap();
        assert!((z - 0.825_336).abs() < 1e-6);
        assert!((z - (0.6f64).cos()).abs() < 1e-13);
    }

    #[test]
    fn bell_like_pair_has_ln2_entropy() {
        let spec = ChainSpec::new(2, 0.0, 0.1).unwrap();
        let mut mps = MpsState::from_product_state(&[Spin::Up, Spin::Down], 4, 1e-10).unwrap();
        // cos(π/4)|↑↓⟩ - i sin(π/4)|↓↑⟩
        mps.apply_gate(&bond_gate(&spec, 0, PI / 4.0).unwrap()).unwrap();
        assert!((mps.entanglement_entropy(0).unwrap() - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn wall_at_pi_over_8_entropy() {
        let spec = ChainSpec::new(2, 0.5, 0.1).unwrap();
        let mut mps = MpsState::from_product_state(&[Spin::Up, Spin::Down], 4, 1e-10).unwrap();
        mps.apply_gate(&bond_gate(&spec, 0, PI / 8.0).unwrap()).unwrap();
        let c2 = (PI / 8.0).cos().powi(2);
        let s2 = 1.0 - c2;
        let expect = -(c2 * c2.ln() + s2 * s2.ln());
        assert!((c2 - 0.853_553).abs() < 1e-6);
        assert!((expect - 0.416_497).abs() < 1e-5);
        assert!((mps.entanglement_entropy(0).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn gate_application_matches_dense_contraction() {
        for sites in [4usize, 6, 8] {
            let spec = ChainSpec::new(sites, 0.5, 0.1).unwrap();
            let mut psi = random_dense(sites, sites as u64);
            let mut mps = MpsState::from_dense(&psi, sites, usize::MAX, 0.0).unwrap();
            for (k, b) in [0, sites / 2, sites - 2, 1, sites / 2 - 1].into_iter().enumerate() {
                let g = bond_gate(&spec, b, 0.37 + 0.1 * k as f64).unwrap();
                mps.apply_gate(&g).unwrap();
                psi = dense_apply(&psi, sites, b, &g.matrix);
            }
            assert!(max_diff(&mps.to_dense(), &psi) < 1e-10, "L={sites}");
        }
    }

    #[test]
    fn from_dense_round_trip() {
        let psi = random_dense(7, 11);
        let mps = MpsState::from_dense(&psi, 7, usize::MAX, 0.0).unwrap();
        assert!(max_diff(&mps.to_dense(), &psi) < 1e-12);
        assert_eq!(mps.bond_dims(), vec![2, 4, 8, 8, 4, 2]);
        assert!(mps.isometry_error() < 1e-12);
    }

    #[test]
    fn center_moves_preserve_state() {
        let psi = random_dense(6, 5);
        let mut mps = MpsState::from_dense(&psi, 6, usize::MAX, 0.0).unwrap();
        let before = mps.to_dense();
        for target in [0, 5, 3, 1, 4] {
            mps.move_ortho_center(target).unwrap();
            assert_eq!(mps.ortho_center(), target);
            assert!(mps.isometry_error() < 1e-10);
            assert!(max_diff(&mps.to_dense(), &before) < 1e-10);
        }
    }

    #[test]
    fn center_round_trip_keeps_local_expectations() {
        let spec = ChainSpec::new(8, 0.5, 0.1).unwrap();
        let sched = trotter_schedule(&spec);
        let mut mps = MpsState::from_product_state(&domain_wall_pattern(8), 64, 1e-12).unwrap();
        for _ in 0..5 {
            for g in &sched.gates {
                mps.apply_gate(g).unwrap();
            }
        }
        mps.move_ortho_center(0).unwrap();
        let z0: Vec<f64> = (0..8).map(|i| mps.clone().expect_z(i).unwrap()).collect();
        mps.move_ortho_center(7).unwrap();
        mps.move_ortho_center(4).unwrap();
        let z1 = mps.z_profile().unwrap();
        for (a, b) in z0.iter().zip(&z1) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn product_state_moves_are_exact() {
        let mut mps = MpsState::from_product_state(&domain_wall_pattern(6), 8, 1e-10).unwrap();
        let before = mps.to_dense();
        mps.move_ortho_center(5).unwrap();
        mps.move_ortho_center(2).unwrap();
        assert!(max_diff_up_to_phase(&before, &mps.to_dense()) < 1e-15);
        assert!(mps.bond_dims().iter().all(|&d| d == 1));
    }

    #[test]
    fn entropy_matches_dense_reduced_density_matrix() {
        let sites = 8;
        let psi = random_dense(sites, 21);
        let mut mps = MpsState::from_dense(&psi, sites, usize::MAX, 0.0).unwrap();
        for cut in 0..sites - 1 {
            let rows = 1usize << (cut + 1);
            let cols = psi.len() / rows;
            let m = Array2::from_shape_vec((rows, cols), psi.clone()).unwrap();
            let sv = singular_values(&m).unwrap();
            let dense_s = entropy_from_schmidt(&sv);
            assert!((mps.entanglement_entropy(cut).unwrap() - dense_s).abs() < 1e-8);
        }
    }

    #[test]
    fn schmidt_cache_tracks_modifications() {
        let spec = ChainSpec::new(6, 0.5, 0.1).unwrap();
        let mut mps = MpsState::from_product_state(&domain_wall_pattern(6), 32, 1e-12).unwrap();
        for g in &trotter_schedule(&spec).gates {
            mps.apply_gate(g).unwrap();
        }
        let cached = mps.schmidt_values(2).unwrap();
        mps.project(2, Spin::Up).unwrap();
        let fresh = mps.schmidt_values(2).unwrap();
        assert_ne!(cached, fresh);
        let sum: f64 = fresh.iter().map(|v| v * v).sum();
        assert!((sum - 1.0).abs() < 1e-10);
        assert!(fresh.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn truncation_caps_bond_and_renormalizes() {
        let spec = ChainSpec::new(10, 0.5, 0.1).unwrap();
        let psi = random_dense(10, 8);
        let mut mps = MpsState::from_dense(&psi, 10, 4, 1e-10).unwrap();
        assert!(mps.bond_dims().iter().all(|&d| d <= 4));
        let mut total_discarded = 0.0;
        for g in &trotter_schedule(&spec).gates {
            let rep = mps.apply_gate(g).unwrap();
            assert!(rep.new_dim <= 4 && rep.new_dim >= 1);
            assert!((0.0..1.0).contains(&rep.discarded_weight));
            total_discarded += rep.discarded_weight;
            assert!((mps.norm_sqr() - 1.0).abs() < 1e-10);
        }
        assert!(total_discarded > 0.0);
    }

    #[test]
    fn projection_sets_local_z() {
        let spec = ChainSpec::new(2, 0.5, 0.1).unwrap();
        let mut mps = MpsState::from_product_state(&[Spin::Up, Spin::Down], 4, 1e-10).unwrap();
        mps.apply_gate(&bond_gate(&spec, 0, PI / 4.0).unwrap()).unwrap();
        let p = mps.project(0, Spin::Down).unwrap();
        assert!((p - 0.5).abs() < 1e-12);
        assert_eq!(mps.expect_z(0).unwrap(), -1.0);
        assert!((mps.expect_z(1).unwrap() - 1.0).abs() < 1e-12);
        assert!((mps.norm_sqr() - 1.0).abs() < 1e-12);
        assert!(matches!(mps.project(0, Spin::Up), Err(MpsError::VanishingProjection { .. })));
    }

    #[test]
    fn snapshot_round_trip() {
        let spec = ChainSpec::new(6, 0.5, 0.1).unwrap();
        let mut mps = MpsState::from_product_state(&domain_wall_pattern(6), 32, 1e-12).unwrap();
        for g in &trotter_schedule(&spec).gates {
            mps.apply_gate(g).unwrap();
        }
        let mut buf = Vec::new();
        mps.write_snapshot(&mut buf).unwrap();
        let restored = MpsState::read_snapshot(buf.as_slice()).unwrap();
        assert_eq!(restored.bond_dims(), mps.bond_dims());
        assert_eq!(restored.ortho_center(), mps.ortho_center());
        assert_eq!(restored.to_dense(), mps.to_dense());
        buf[0] = b'X';
        assert!(MpsState::read_snapshot(buf.as_slice()).is_err());
    }

    #[test]
    fn bond_and_site_ranges() {
        let mut mps = MpsState::from_product_state(&domain_wall_pattern(4), 8, 1e-10).unwrap();
        assert!(mps.apply_gate(&TwoSiteGate::identity(3)).is_err());
        assert!(mps.entanglement_entropy(3).is_err());
        assert!(mps.move_ortho_center(4).is_err());
    }
}
