//! XXZ bond terms, their exponentials, and the second-order Trotter sweep.
//!
//! Two-site operators are 4×4 matrices in the ordered product basis
//! `{↑↑, ↑↓, ↓↑, ↓↓}`, i.e. index `2·s_left + s_right` with `↑ = 0`, `↓ = 1`.
//! Sites and bonds are zero-based: bond `i` couples sites `i` and `i + 1`.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Exchange coupling. Energies are measured in units of `J`, times in `1/J`.
pub const EXCHANGE_COUPLING: f64 = 1.0;

/// Default Trotter step.
pub const DEFAULT_DT: f64 = 0.1;

/// Dense 4×4 complex matrix, row-major.
pub type Mat4 = [[C64; 4]; 4];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("chain needs at least 2 sites, got {0}")]
    TooFewSites(usize),
    #[error("Trotter step must be positive and finite, got {0}")]
    InvalidStep(f64),
    #[error("anisotropy must be finite, got {0}")]
    InvalidAnisotropy(f64),
    #[error("bond {bond} out of range for a chain of {sites} sites")]
    BondOutOfRange { bond: usize, sites: usize },
}

/// Open XXZ chain `H = (J/2) Σ_i (X_i X_{i+1} + Y_i Y_{i+1} + Δ Z_i Z_{i+1})`
/// with `J = 1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainSpec {
    pub sites: usize,
    pub delta: f64,
    pub dt: f64,
}

impl ChainSpec {
    pub fn new(sites: usize, delta: f64, dt: f64) -> Result<Self, ModelError> {
        let spec = Self { sites, delta, dt };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.sites < 2 {
            return Err(ModelError::TooFewSites(self.sites));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(ModelError::InvalidStep(self.dt));
        }
        if !self.delta.is_finite() {
            return Err(ModelError::InvalidAnisotropy(self.delta));
        }
        Ok(())
    }

    pub fn bonds(&self) -> usize { self.sites - 1 }

    /// `true` inside the gapless regime `|Δ| < 1` this tool is built for.
    pub fn is_gapless(&self) -> bool { self.delta.abs() < 1.0 }

    /// Human-readable warning for anisotropies outside `|Δ| < 1`.
    pub fn regime_warning(&self) -> Option<String> {
        (!self.is_gapless()).then(|| {
            format!(
                "anisotropy delta = {} lies outside the gapless regime |delta| < 1",
                self.delta
            )
        })
    }

    fn check_bond(&self, bond: usize) -> Result<(), ModelError> {
        if bond + 1 >= self.sites {
            return Err(ModelError::BondOutOfRange { bond, sites: self.sites });
        }
        Ok(())
    }
}

/// `exp(-i h τ)` acting on sites `bond` and `bond + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct TwoSiteGate {
    pub bond: usize,
    pub tau: f64,
    pub matrix: Mat4,
}

impl TwoSiteGate {
    pub fn identity(bond: usize) -> Self {
        Self { bond, tau: 0.0, matrix: mat4_identity() }
    }

    /// Wraps an arbitrary 4×4 matrix. No unitarity check is made.
    pub fn from_matrix(bond: usize, matrix: Mat4) -> Self {
        Self { bond, tau: f64::NAN, matrix }
    }

    /// Largest entrywise deviation of `G†G` from the identity.
    pub fn unitarity_error(&self) -> f64 {
        let prod = mat4_mul(&mat4_dagger(&self.matrix), &self.matrix);
        max_abs_diff(&prod, &mat4_identity())
    }

    /// Largest magnitude of entries connecting `{↑↑, ↓↓}` with `{↑↓, ↓↑}`.
    pub fn sector_leakage(&self) -> f64 {
        let mut worst = 0.0_f64;
        for r in 0..4 {
            for c in 0..4 {
                let r_edge = r == 0 || r == 3;
                let c_edge = c == 0 || c == 3;
                if r_edge != c_edge || (r_edge && r != c) {
                    worst = worst.max(self.matrix[r][c].norm());
                }
            }
        }
        worst
    }
}

/// Bond Hamiltonian `h = (1/2)(X⊗X + Y⊗Y + Δ Z⊗Z)`.
pub fn bond_hamiltonian(spec: &ChainSpec, bond: usize) -> Result<Mat4, ModelError> {
    spec.check_bond(bond)?;
    Ok(bond_hamiltonian_matrix(spec.delta))
}

pub(crate) fn bond_hamiltonian_matrix(delta: f64) -> Mat4 {
    let j = EXCHANGE_COUPLING;
    let mut h = [[C64::new(0.0, 0.0); 4]; 4];
    h[0][0] = C64::new(0.5 * j * delta, 0.0);
    h[3][3] = C64::new(0.5 * j * delta, 0.0);
    h[1][1] = C64::new(-0.5 * j * delta, 0.0);
    h[2][2] = C64::new(-0.5 * j * delta, 0.0);
    h[1][2] = C64::new(j, 0.0);
    h[2][1] = C64::new(j, 0.0);
    h
}

/// `exp(-i h τ)` from the closed-form U(1) block exponentials.
///
/// Corners pick up `e^{-iΔτ/2}`; the `{↑↓, ↓↑}` block is
/// `e^{iΔτ/2} [[cos τ, -i sin τ], [-i sin τ, cos τ]]`.
pub fn bond_gate(spec: &ChainSpec, bond: usize, tau: f64) -> Result<TwoSiteGate, ModelError> {
    spec.check_bond(bond)?;
    Ok(TwoSiteGate { bond, tau, matrix: bond_gate_matrix(spec.delta, tau) })
}

pub(crate) fn bond_gate_matrix(delta: f64, tau: f64) -> Mat4 {
    let j = EXCHANGE_COUPLING;
    let zero = C64::new(0.0, 0.0);
    let corner = C64::from_polar(1.0, -0.5 * j * delta * tau);
    let inner = C64::from_polar(1.0, 0.5 * j * delta * tau);
    let (s, c) = (j * tau).sin_cos();
    let diag = inner * c;
    let off = inner * C64::new(0.0, -s);
    [
        [corner, zero, zero, zero],
        [zero, diag, off, zero],
        [zero, off, diag, zero],
        [zero, zero, zero, corner],
    ]
}

/// Ordered gate list of one Trotter step.
///
/// Bonds `0..L-1` forward with `τ = step/2`, then bonds `L-2..=0` backward with
/// `τ = step/2`: `2(L-1)` gates, palindromic.
#[derive(Clone, Debug, PartialEq)]
pub struct TrotterSchedule {
    pub step: f64,
    pub gates: Vec<TwoSiteGate>,
}

impl TrotterSchedule {
    /// Schedule for an arbitrary (possibly negative) step.
    pub fn with_step(spec: &ChainSpec, step: f64) -> Self {
        let half = 0.5 * step;
        let forward = 0..spec.bonds();
        let backward = (0..spec.bonds()).rev();
        let gates = forward
            .chain(backward)
            .map(|b| TwoSiteGate { bond: b, tau: half, matrix: bond_gate_matrix(spec.delta, half) })
            .collect();
        Self { step, gates }
    }

    pub fn len(&self) -> usize { self.gates.len() }

    pub fn is_empty(&self) -> bool { self.gates.is_empty() }

    pub fn bond_order(&self) -> Vec<usize> {
        self.gates.iter().map(|g| g.bond).collect()
    }

    pub fn is_palindromic(&self) -> bool {
        let n = self.gates.len();
        (0..n).all(|k| {
            let (a, b) = (&self.gates[k], &self.gates[n - 1 - k]);
            a.bond == b.bond && a.tau == b.tau && a.matrix == b.matrix
        })
    }
}

pub fn trotter_schedule(spec: &ChainSpec) -> TrotterSchedule {
    TrotterSchedule::with_step(spec, spec.dt)
}

pub fn mat4_identity() -> Mat4 {
    let mut m = [[C64::new(0.0, 0.0); 4]; 4];
    for (k, row) in m.iter_mut().enumerate() {
        row[k] = C64::new(1.0, 0.0);
    }
    m
}

pub fn mat4_mul(a: &Mat4, b: &Mat4) -> Mat4 {
    let mut out = [[C64::new(0.0, 0.0); 4]; 4];
    for r in 0..4 {
        for c in 0..4 {
            out[r][c] = (0..4).map(|k| a[r][k] * b[k][c]).sum();
        }
    }
    out
}

pub fn mat4_dagger(a: &Mat4) -> Mat4 {
    let mut out = [[C64::new(0.0, 0.0); 4]; 4];
    for r in 0..4 {
        for c in 0..4 {
            out[r][c] = a[c][r].conj();
        }
    }
    out
}

pub fn max_abs_diff(a: &Mat4, b: &Mat4) -> f64 {
    let mut worst = 0.0_f64;
    for r in 0..4 {
        for c in 0..4 {
            worst = worst.max((a[r][c] - b[r][c]).norm());
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn c(re: f64) -> C64 { C64::new(re, 0.0) }

    /// Taylor series of exp(-i h τ), independent of the block formula.
    fn expm_taylor(h: &Mat4, tau: f64) -> Mat4 {
        let mut scaled = *h;
        for row in scaled.iter_mut() {
            for v in row.iter_mut() {
                *v *= C64::new(0.0, -tau);
            }
        }
        let mut term = mat4_identity();
        let mut sum = mat4_identity();
        for k in 1..60 {
            term = mat4_mul(&term, &scaled);
            for row in term.iter_mut() {
                for v in row.iter_mut() {
                    *v /= k as f64;
                }
            }
            for r in 0..4 {
                for cc in 0..4 {
                    sum[r][cc] += term[r][cc];
                }
            }
        }
        sum
    }

    #[test]
    fn hamiltonian_entries_at_half_anisotropy() {
        let spec = ChainSpec::new(4, 0.5, 0.1).unwrap();
        let h = bond_hamiltonian(&spec, 2).unwrap();
        assert_eq!(h[0][0], c(0.25));
        assert_eq!(h[3][3], c(0.25));
        assert_eq!(h[1][1], c(-0.25));
        assert_eq!(h[2][2], c(-0.25));
        assert_eq!(h[1][2], c(1.0));
        assert_eq!(h[2][1], c(1.0));
        assert_eq!(h[0][1], c(0.0));
    }

    #[test]
    fn hamiltonian_is_pure_hopping_without_anisotropy() {
        let spec = ChainSpec::new(3, 0.0, 0.1).unwrap();
        let h = bond_hamiltonian(&spec, 0).unwrap();
        for r in 0..4 {
            for cc in 0..4 {
                let expect = if (r, cc) == (1, 2) || (r, cc) == (2, 1) { 1.0 } else { 0.0 };
                assert_eq!(h[r][cc], c(expect));
            }
        }
    }

    #[test]
    fn isotropic_spectrum() {
        // corners are 0.5, middle block -0.5 ± 1
        let h = bond_hamiltonian_matrix(1.0);
        let mid_trace = (h[1][1] + h[2][2]).re;
        let mid_det = (h[1][1] * h[2][2] - h[1][2] * h[2][1]).re;
        let disc = (mid_trace * mid_trace - 4.0 * mid_det).sqrt();
        let mut eig = [h[0][0].re, h[3][3].re, 0.5 * (mid_trace + disc), 0.5 * (mid_trace - disc)];
        eig.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let expect = [-1.5, 0.5, 0.5, 0.5];
        for (a, b) in eig.iter().zip(expect) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn hamiltonian_commutes_with_total_z() {
        let h = bond_hamiltonian_matrix(0.7);
        let zz: Mat4 = {
            let mut m = [[c(0.0); 4]; 4];
            let diag = [2.0, 0.0, 0.0, -2.0];
            for k in 0..4 {
                m[k][k] = c(diag[k]);
            }
            m
        };
        let comm = max_abs_diff(&mat4_mul(&h, &zz), &mat4_mul(&zz, &h));
        assert!(comm < 1e-15);
    }

    #[test]
    fn bond_range_is_checked() {
        let spec = ChainSpec::new(4, 0.5, 0.1).unwrap();
        assert!(matches!(bond_hamiltonian(&spec, 3), Err(ModelError::BondOutOfRange { .. })));
        assert!(bond_gate(&spec, 7, 0.1).is_err());
        assert!(bond_gate(&spec, 2, 0.1).is_ok());
    }

    #[test]
    fn spec_validation() {
        assert_eq!(ChainSpec::new(1, 0.5, 0.1), Err(ModelError::TooFewSites(1)));
        assert!(ChainSpec::new(4, 0.5, 0.0).is_err());
        assert!(ChainSpec::new(4, f64::NAN, 0.1).is_err());
        assert!(ChainSpec::new(4, 1.5, 0.1).unwrap().regime_warning().is_some());
        assert!(ChainSpec::new(4, 0.5, 0.1).unwrap().regime_warning().is_none());
    }

    #[test]
    fn zero_time_gate_is_identity() {
        let g = bond_gate_matrix(0.5, 0.0);
        assert_eq!(max_abs_diff(&g, &mat4_identity()), 0.0);
    }

    #[test]
    fn iswap_like_at_quarter_period() {
        let g = bond_gate_matrix(0.0, PI / 2.0);
        assert!((g[0][0] - c(1.0)).norm() < 1e-15);
        assert!((g[3][3] - c(1.0)).norm() < 1e-15);
        assert!(g[1][1].norm() < 1e-15);
        assert!(g[2][2].norm() < 1e-15);
        assert!((g[1][2] - C64::new(0.0, -1.0)).norm() < 1e-15);
        assert!((g[2][1] - C64::new(0.0, -1.0)).norm() < 1e-15);
    }

    #[test]
    fn block_formula_matches_taylor_exponential() {
        for &(delta, tau) in &[(0.5, 0.05), (0.0, 1.3), (-0.8, -0.7), (1.7, 2.2)] {
            let closed = bond_gate_matrix(delta, tau);
            let series = expm_taylor(&bond_hamiltonian_matrix(delta), tau);
            assert!(max_abs_diff(&closed, &series) < 1e-12, "delta={delta} tau={tau}");
        }
    }

    #[test]
    fn schedule_order_for_four_sites() {
        let spec = ChainSpec::new(4, 0.5, 0.1).unwrap();
        let s = trotter_schedule(&spec);
        // 1-based: [1,2,3,3,2,1]
        assert_eq!(s.bond_order(), vec![0, 1, 2, 2, 1, 0]);
        assert!(s.gates.iter().all(|g| g.tau == 0.05));
        assert!(s.is_palindromic());
    }

    #[test]
    fn two_site_schedule_composes_to_exact_exponential() {
        let spec = ChainSpec::new(2, 0.5, 0.1).unwrap();
        let s = trotter_schedule(&spec);
        assert_eq!(s.len(), 2);
        let composed = mat4_mul(&s.gates[1].matrix, &s.gates[0].matrix);
        let exact = expm_taylor(&bond_hamiltonian_matrix(0.5), 0.1);
        assert!(max_abs_diff(&composed, &exact) < 1e-14);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn gates_are_unitary_and_sector_diagonal(delta in -3.0..3.0f64, tau in -10.0..10.0f64) {
                let spec = ChainSpec::new(3, delta, 0.1).unwrap();
                let g = bond_gate(&spec, 1, tau).unwrap();
                prop_assert!(g.unitarity_error() < 1e-12);
                prop_assert_eq!(g.sector_leakage(), 0.0);
            }

            #[test]
            fn schedule_is_palindromic(sites in 2usize..20, dt in 0.001..1.0f64) {
                let spec = ChainSpec::new(sites, 0.5, dt).unwrap();
                let s = trotter_schedule(&spec);
                prop_assert_eq!(s.len(), 2 * (sites - 1));
                prop_assert!(s.is_palindromic());
            }
        }
    }
}
