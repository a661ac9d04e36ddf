//! Dense state-vector reference simulator.
//!
//! Amplitudes are indexed with site 0 as the most significant bit and `↑ = 0`,
//! the same convention as [`crate::mps::MpsState::to_dense`].

use ndarray::{Array1, Array2};
use ndarray_linalg::{Eigh, JobSvd, SVDDC, UPLO};
use num_complex::Complex64 as C64;
use thiserror::Error;

use crate::model::{ChainSpec, Mat4, TrotterSchedule, TwoSiteGate};
use crate::state::{entropy_from_schmidt, ChainState, Spin};

/// Largest chain held as a dense vector (2^22 amplitudes, 64 MiB).
pub const MAX_DENSE_SITES: usize = 22;
/// Largest chain for which the full Hamiltonian is diagonalized.
pub const MAX_EXACT_SITES: usize = 10;
/// Largest subsystem for averaged reduced density matrices.
pub const MAX_SUBSYSTEM: usize = 6;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("{sites} sites exceeds the dense limit of {max}")]
    TooManySites { sites: usize, max: usize },
    #[error("a chain needs at least 2 sites, got {0}")]
    TooFewSites(usize),
    #[error("subsystem of {size} sites exceeds the limit of {max}")]
    SubsystemTooLarge { size: usize, max: usize },
    #[error("subsystem sites must be distinct, ascending and in range")]
    InvalidSubsystem,
    #[error("site {site} out of range for {sites} sites")]
    SiteOutOfRange { site: usize, sites: usize },
    #[error("amplitude vector of length {len} is not 2^{sites}")]
    DenseShape { len: usize, sites: usize },
    #[error("state has zero norm")]
    ZeroNorm,
    #[error("projection onto {outcome:?} at site {site} has vanishing weight {weight:e}")]
    VanishingProjection { site: usize, outcome: Spin, weight: f64 },
    #[error("no trajectories accumulated")]
    Empty,
    #[error("linear algebra failure: {0}")]
    Linalg(String),
}

type OracleResult<T> = Result<T, OracleError>;

fn linalg(e: ndarray_linalg::error::LinalgError) -> OracleError { OracleError::Linalg(e.to_string()) }

fn check_sites(sites: usize, max: usize) -> OracleResult<()> {
    if sites < 2 {
        return Err(OracleError::TooFewSites(sites));
    }
    if sites > max {
        return Err(OracleError::TooManySites { sites, max });
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseState {
    amps: Vec<C64>,
    sites: usize,
}

impl DenseState {
    pub fn from_product_state(pattern: &[Spin]) -> OracleResult<Self> {
        check_sites(pattern.len(), MAX_DENSE_SITES)?;
        let sites = pattern.len();
        let mut amps = vec![C64::new(0.0, 0.0); 1 << sites];
        let idx = pattern.iter().fold(0usize, |acc, s| (acc << 1) | s.index());
        amps[idx] = C64::new(1.0, 0.0);
        Ok(Self { amps, sites })
    }

    /// Normalizes the input.
    pub fn from_amplitudes(amps: Vec<C64>, sites: usize) -> OracleResult<Self> {
        check_sites(sites, MAX_DENSE_SITES)?;
        if amps.len() != 1 << sites {
            return Err(OracleError::DenseShape { len: amps.len(), sites });
        }
        let mut state = Self { amps, sites };
        state.normalize()?;
        Ok(state)
    }

    pub fn amplitudes(&self) -> &[C64] { &self.amps }

    pub fn len(&self) -> usize { self.sites }

    pub fn is_empty(&self) -> bool { false }

    fn normalize(&mut self) -> OracleResult<()> {
        let n = self.norm_sqr().sqrt();
        if n == 0.0 || !n.is_finite() {
            return Err(OracleError::ZeroNorm);
        }
        self.amps.iter_mut().for_each(|a| *a /= n);
        Ok(())
    }

    fn bit(&self, site: usize) -> usize { self.sites - 1 - site }

    fn check_site(&self, site: usize) -> OracleResult<()> {
        if site >= self.sites {
            return Err(OracleError::SiteOutOfRange { site, sites: self.sites });
        }
        Ok(())
    }

    /// Applies a 4×4 matrix to sites `(bond, bond + 1)`.
    pub fn apply_matrix(&mut self, bond: usize, m: &Mat4) -> OracleResult<()> {
        if bond + 1 >= self.sites {
            return Err(OracleError::SiteOutOfRange { site: bond + 1, sites: self.sites });
        }
        let stride = 1usize << self.bit(bond + 1);
        let block = 4 * stride;
        let zero = C64::new(0.0, 0.0);
        let sector_diagonal = m[0][1] == zero
            && m[0][2] == zero
            && m[0][3] == zero
            && m[3][0] == zero
            && m[3][1] == zero
            && m[3][2] == zero
            && m[1][0] == zero
            && m[2][0] == zero
            && m[1][3] == zero
            && m[2][3] == zero;
        for start in (0..self.amps.len()).step_by(block) {
            for j in start..start + stride {
                let idx = [j, j + stride, j + 2 * stride, j + 3 * stride];
                if sector_diagonal {
                    let (a, b) = (self.amps[idx[1]], self.amps[idx[2]]);
                    self.amps[idx[0]] *= m[0][0];
                    self.amps[idx[3]] *= m[3][3];
                    self.amps[idx[1]] = m[1][1] * a + m[1][2] * b;
                    self.amps[idx[2]] = m[2][1] * a + m[2][2] * b;
                } else {
                    let v = idx.map(|i| self.amps[i]);
                    for (row, &i) in m.iter().zip(&idx) {
                        self.amps[i] = row[0] * v[0] + row[1] * v[1] + row[2] * v[2] + row[3] * v[3];
                    }
                }
            }
        }
        Ok(())
    }

    pub fn dense_trotter_step(&mut self, schedule: &TrotterSchedule) -> OracleResult<()> {
        for g in &schedule.gates {
            self.apply_matrix(g.bond, &g.matrix)?;
        }
        Ok(())
    }

    fn weights(&self, site: usize) -> (f64, f64) {
        let mask = 1usize << self.bit(site);
        let mut up = 0.0;
        let mut down = 0.0;
        for (i, a) in self.amps.iter().enumerate() {
            if i & mask == 0 {
                up += a.norm_sqr();
            } else {
                down += a.norm_sqr();
            }
        }
        (up, down)
    }

    pub fn prob_up(&self, site: usize) -> OracleResult<f64> {
        self.check_site(site)?;
        let (up, down) = self.weights(site);
        Ok(up / (up + down))
    }

    pub fn project(&mut self, site: usize, outcome: Spin) -> OracleResult<f64> {
        self.check_site(site)?;
        let (up, down) = self.weights(site);
        let weight = if outcome == Spin::Up { up } else { down };
        let total = up + down;
        if total == 0.0 || weight / total < 1e-300 {
            return Err(OracleError::VanishingProjection { site, outcome, weight });
        }
        let mask = 1usize << self.bit(site);
        let keep = if outcome == Spin::Up { 0 } else { mask };
        let scale = 1.0 / weight.sqrt();
        for (i, a) in self.amps.iter_mut().enumerate() {
            if i & mask == keep {
                *a *= scale;
            } else {
                *a = C64::new(0.0, 0.0);
            }
        }
        Ok(weight / total)
    }

    pub fn z_profile(&self) -> Vec<f64> {
        let mut z = vec![0.0; self.sites];
        for (i, a) in self.amps.iter().enumerate() {
            let w = a.norm_sqr();
            for (site, zs) in z.iter_mut().enumerate() {
                if (i >> self.bit(site)) & 1 == 0 {
                    *zs += w;
                } else {
                    *zs -= w;
                }
            }
        }
        z
    }

    pub fn norm_sqr(&self) -> f64 { self.amps.iter().map(|a| a.norm_sqr()).sum() }

    /// Number of up spins if the state lies in a single magnetization sector
    /// (every amplitude outside it exactly zero).
    pub fn definite_up_count(&self) -> Option<u32> {
        let mut found = None;
        for (i, a) in self.amps.iter().enumerate() {
            if a.re != 0.0 || a.im != 0.0 {
                let ups = self.sites as u32 - i.count_ones();
                match found {
                    None => found = Some(ups),
                    Some(n) if n != ups => return None,
                    _ => {}
                }
            }
        }
        found
    }

    /// Schmidt values across the cut after site `cut`, descending.
    pub fn schmidt_values(&self, cut: usize) -> OracleResult<Vec<f64>> {
        if cut + 1 >= self.sites {
            return Err(OracleError::SiteOutOfRange { site: cut + 1, sites: self.sites });
        }
        let right_bits = self.sites - cut - 1;
        let cols = 1usize << right_bits;
        let rows = self.amps.len() / cols;
        let mut values = match self.definite_up_count() {
            Some(ups) => {
                // the coefficient matrix is block diagonal in (left ups, right ups)
                let left_sites = (cut + 1) as u32;
                let right_sites = right_bits as u32;
                let mut values = Vec::new();
                for left_ups in 0..=left_sites.min(ups) {
                    let right_ups = ups - left_ups;
                    if right_ups > right_sites {
                        continue;
                    }
                    let r: Vec<usize> =
                        (0..rows).filter(|&i| left_sites - (i as u32).count_ones() == left_ups).collect();
                    let c: Vec<usize> =
                        (0..cols).filter(|&j| right_sites - (j as u32).count_ones() == right_ups).collect();
                    let block = Array2::from_shape_fn((r.len(), c.len()), |(a, b)| self.amps[r[a] * cols + c[b]]);
                    values.extend(singular_values(&block)?);
                }
                values
            }
            None => {
                let m = Array2::from_shape_vec((rows, cols), self.amps.clone()).expect("shape matches");
                singular_values(&m)?
            }
        };
        values.retain(|&v| v > 0.0);
        values.sort_by(|a, b| b.total_cmp(a));
        Ok(values)
    }

    pub fn entanglement_entropy(&self, cut: usize) -> OracleResult<f64> {
        Ok(entropy_from_schmidt(&self.schmidt_values(cut)?))
    }

    /// Reduced density matrix of the ascending site list `subsystem`; row
    /// index bits follow the subsystem order, first site most significant.
    pub fn reduced_density_matrix(&self, subsystem: &[usize]) -> OracleResult<Array2<C64>> {
        if subsystem.len() > MAX_SUBSYSTEM {
            return Err(OracleError::SubsystemTooLarge { size: subsystem.len(), max: MAX_SUBSYSTEM });
        }
        if subsystem.is_empty()
            || subsystem.windows(2).any(|w| w[0] >= w[1])
            || subsystem.iter().any(|&s| s >= self.sites)
        {
            return Err(OracleError::InvalidSubsystem);
        }
        let na = subsystem.len();
        let nb = self.sites - na;
        let a_bits: Vec<usize> = subsystem.iter().map(|&s| self.bit(s)).collect();
        let b_bits: Vec<usize> = (0..self.sites).filter(|s| !subsystem.contains(s)).map(|s| self.bit(s)).collect();
        let mut m = Array2::<C64>::zeros((1 << na, 1 << nb));
        for (i, amp) in self.amps.iter().enumerate() {
            let a = a_bits.iter().fold(0, |acc, &b| (acc << 1) | ((i >> b) & 1));
            let bb = b_bits.iter().fold(0, |acc, &b| (acc << 1) | ((i >> b) & 1));
            m[[a, bb]] = *amp;
        }
        Ok(m.dot(&m.t().mapv(|z| z.conj())))
    }

    /// `⟨ψ|H|ψ⟩` for the chain Hamiltonian.
    pub fn energy(&self, spec: &ChainSpec) -> OracleResult<f64> {
        let mut e = 0.0;
        for b in 0..spec.bonds() {
            let h = crate::model::bond_hamiltonian_matrix(spec.delta);
            let mut hv = self.clone();
            hv.apply_matrix(b, &h)?;
            e += self.amps.iter().zip(&hv.amps).map(|(x, y)| (x.conj() * y).re).sum::<f64>();
        }
        Ok(e)
    }
}

impl ChainState for DenseState {
    fn sites(&self) -> usize { self.sites }

    fn apply_gate(&mut self, gate: &TwoSiteGate) -> crate::Result<f64> {
        self.apply_matrix(gate.bond, &gate.matrix)?;
        Ok(0.0)
    }

    fn prob_up(&mut self, site: usize) -> crate::Result<f64> { Ok(DenseState::prob_up(self, site)?) }

    fn project(&mut self, site: usize, outcome: Spin) -> crate::Result<f64> {
        Ok(DenseState::project(self, site, outcome)?)
    }

    fn z_profile(&mut self) -> Vec<f64> { DenseState::z_profile(self) }

    fn entanglement_entropy(&mut self, cut: usize) -> crate::Result<f64> {
        Ok(DenseState::entanglement_entropy(self, cut)?)
    }

    fn norm_sqr(&self) -> f64 { DenseState::norm_sqr(self) }

    fn max_bond_dim(&self) -> usize { 1 << (self.sites / 2) }
}

fn singular_values(m: &Array2<C64>) -> OracleResult<Vec<f64>> {
    if m.is_empty() {
        return Ok(Vec::new());
    }
    let (_, s, _) = m.svddc(JobSvd::None).map_err(linalg)?;
    Ok(s.to_vec())
}

/// Full many-body Hamiltonian as a dense matrix.
pub fn hamiltonian_matrix(spec: &ChainSpec) -> OracleResult<Array2<C64>> {
    check_sites(spec.sites, MAX_EXACT_SITES)?;
    let dim = 1usize << spec.sites;
    let h = crate::model::bond_hamiltonian_matrix(spec.delta);
    let mut out = Array2::<C64>::zeros((dim, dim));
    for b in 0..spec.bonds() {
        let hi = spec.sites - 1 - b;
        let lo = hi - 1;
        for col in 0..dim {
            let c = (((col >> hi) & 1) << 1) | ((col >> lo) & 1);
            let base = col & !(1 << hi) & !(1 << lo);
            for (r, row) in h.iter().enumerate() {
                let v = row[c];
                if v != C64::new(0.0, 0.0) {
                    out[[base | ((r >> 1) << hi) | ((r & 1) << lo), col]] += v;
                }
            }
        }
    }
    Ok(out)
}

/// `exp(-i H dt)` from a full eigendecomposition of `H`.
#[derive(Clone, Debug)]
pub struct ExactPropagator {
    pub sites: usize,
    pub dt: f64,
    unitary: Array2<C64>,
}

impl ExactPropagator {
    pub fn new(spec: &ChainSpec, dt: f64) -> OracleResult<Self> {
        let h = hamiltonian_matrix(spec)?;
        let (energies, vecs) = h.eigh(UPLO::Upper).map_err(linalg)?;
        let phases: Array1<C64> = energies.mapv(|e| C64::from_polar(1.0, -e * dt));
        let mut scaled = vecs.clone();
        for (mut col, p) in scaled.columns_mut().into_iter().zip(phases.iter()) {
            col.mapv_inplace(|z| z * p);
        }
        let unitary = scaled.dot(&vecs.t().mapv(|z| z.conj()));
        Ok(Self { sites: spec.sites, dt, unitary })
    }

    pub fn matrix(&self) -> &Array2<C64> { &self.unitary }

    pub fn dense_exact_step(&self, state: &mut DenseState) -> OracleResult<()> {
        if state.sites != self.sites {
            return Err(OracleError::DenseShape { len: state.amps.len(), sites: self.sites });
        }
        let v = Array1::from_vec(std::mem::take(&mut state.amps));
        state.amps = self.unitary.dot(&v).to_vec();
        Ok(())
    }
}

/// The full `2^L × 2^L` matrix of one Trotter step.
pub fn schedule_unitary(schedule: &TrotterSchedule, sites: usize) -> OracleResult<Array2<C64>> {
    check_sites(sites, MAX_EXACT_SITES)?;
    let dim = 1usize << sites;
    let mut out = Array2::<C64>::zeros((dim, dim));
    for col in 0..dim {
        let mut e = vec![C64::new(0.0, 0.0); dim];
        e[col] = C64::new(1.0, 0.0);
        let mut st = DenseState { amps: e, sites };
        st.dense_trotter_step(schedule)?;
        for (r, a) in st.amps.into_iter().enumerate() {
            out[[r, col]] = a;
        }
    }
    Ok(out)
}

/// Spectral norm of `a - b`.
pub fn operator_distance(a: &Array2<C64>, b: &Array2<C64>) -> OracleResult<f64> {
    let d = a - b;
    Ok(singular_values(&d)?.first().copied().unwrap_or(0.0))
}

/// Weighted sum of subsystem density matrices over a set of trajectories.
#[derive(Clone, Debug)]
pub struct AveragedRho {
    subsystem: Vec<usize>,
    sum: Array2<C64>,
    weight: f64,
    count: usize,
}

impl AveragedRho {
    pub fn new(subsystem: Vec<usize>) -> OracleResult<Self> {
        if subsystem.len() > MAX_SUBSYSTEM {
            return Err(OracleError::SubsystemTooLarge { size: subsystem.len(), max: MAX_SUBSYSTEM });
        }
        let dim = 1 << subsystem.len();
        Ok(Self { subsystem, sum: Array2::zeros((dim, dim)), weight: 0.0, count: 0 })
    }

    pub fn subsystem(&self) -> &[usize] { &self.subsystem }

    pub fn count(&self) -> usize { self.count }

    pub fn accumulate(&mut self, state: &DenseState, weight: f64) -> OracleResult<()> {
        if state.sites > MAX_EXACT_SITES {
            return Err(OracleError::TooManySites { sites: state.sites, max: MAX_EXACT_SITES });
        }
        let rho = state.reduced_density_matrix(&self.subsystem)?;
        self.sum = &self.sum + &rho.mapv(|z| z * weight);
        self.weight += weight;
        self.count += 1;
        Ok(())
    }

    pub fn rho(&self) -> OracleResult<Array2<C64>> {
        if self.count == 0 || self.weight <= 0.0 {
            return Err(OracleError::Empty);
        }
        Ok(self.sum.mapv(|z| z / self.weight))
    }

    /// `Tr(ρ̄ Z)` for the `k`-th subsystem site.
    pub fn expect_z(&self, k: usize) -> OracleResult<f64> {
        let rho = self.rho()?;
        let n = self.subsystem.len();
        if k >= n {
            return Err(OracleError::InvalidSubsystem);
        }
        let bit = n - 1 - k;
        Ok((0..rho.nrows()).map(|i| if (i >> bit) & 1 == 0 { rho[[i, i]].re } else { -rho[[i, i]].re }).sum())
    }

    pub fn entropy(&self) -> OracleResult<f64> { density_matrix_entropy(&self.rho()?) }
}

/// `-Tr ρ ln ρ` from the eigenvalues of a Hermitian density matrix.
pub fn density_matrix_entropy(rho: &Array2<C64>) -> OracleResult<f64> {
    let (vals, _) = rho.eigh(UPLO::Upper).map_err(linalg)?;
    Ok(vals.iter().filter(|&&w| w > 1e-15).map(|&w| -w * w.ln()).sum())
}
