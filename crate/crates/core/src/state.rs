//! The interface shared by the MPS simulator and the dense reference state.

use serde::{Deserialize, Serialize};

use crate::model::{TrotterSchedule, TwoSiteGate};
use crate::Result;

/// A local `Z` eigenstate. `Up` is physical index 0 and has `Z = +1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Spin {
    Up,
    Down,
}

impl Spin {
    pub fn index(self) -> usize {
        match self {
            Spin::Up => 0,
            Spin::Down => 1,
        }
    }

    pub fn sign(self) -> i8 {
        match self {
            Spin::Up => 1,
            Spin::Down => -1,
        }
    }

    pub fn from_sign(sign: i64) -> Option<Self> {
        match sign {
            1 => Some(Spin::Up),
            -1 => Some(Spin::Down),
            _ => None,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Spin::Up => Spin::Down,
            Spin::Down => Spin::Up,
        }
    }
}

/// `L/2` up spins followed by `L - L/2` down spins.
pub fn domain_wall_pattern(sites: usize) -> Vec<Spin> {
    (0..sites).map(|i| if i < sites / 2 { Spin::Up } else { Spin::Down }).collect()
}

/// Pure state of a spin-1/2 chain that can be evolved by two-site gates and
/// projectively measured in the `Z` basis.
///
/// Every mutating method leaves the state normalized.
pub trait ChainState: Send {
    fn sites(&self) -> usize;

    /// Applies a gate and returns the discarded weight of any truncation.
    fn apply_gate(&mut self, gate: &TwoSiteGate) -> Result<f64>;

    /// Born probability of finding `site` in `↑`.
    fn prob_up(&mut self, site: usize) -> Result<f64>;

    /// Projects `site` onto `outcome` and renormalizes. Returns the
    /// probability of the outcome before projection.
    fn project(&mut self, site: usize, outcome: Spin) -> Result<f64>;

    /// `⟨Z_i⟩` for every site.
    fn z_profile(&mut self) -> Vec<f64>;

    /// Von Neumann entropy (natural log) between sites `0..=cut` and the rest.
    fn entanglement_entropy(&mut self, cut: usize) -> Result<f64>;

    fn norm_sqr(&self) -> f64;

    fn max_bond_dim(&self) -> usize;

    /// Applies every gate of one Trotter step; returns the largest single
    /// discarded weight.
    fn trotter_step(&mut self, schedule: &TrotterSchedule) -> Result<f64> {
        let mut worst = 0.0_f64;
        for gate in &schedule.gates {
            worst = worst.max(self.apply_gate(gate)?);
        }
        Ok(worst)
    }

    fn half_chain_entropy(&mut self) -> Result<f64> {
        let cut = self.sites() / 2 - 1;
        self.entanglement_entropy(cut)
    }
}

/// `-Σ w ln w` over squared Schmidt values `w = λ²`.
pub fn entropy_from_schmidt(values: &[f64]) -> f64 {
    values
        .iter()
        .map(|l| l * l)
        .filter(|&w| w > 0.0)
        .map(|w| -w * w.ln())
        .sum()
}
