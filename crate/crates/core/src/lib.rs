//! Monitored spin-1/2 XXZ chains: matrix-product-state quantum trajectories,
//! a dense reference simulator, and domain-wall spreading analysis.

pub mod analysis;
pub mod config;
pub mod experiment;
pub mod io;
pub mod model;
pub mod monitor;
pub mod mps;
pub mod observables;
pub mod oracle;
pub mod state;
pub mod trajectory;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Model(#[from] model::ModelError),
    #[error(transparent)]
    Mps(#[from] mps::MpsError),
    #[error(transparent)]
    Monitor(#[from] monitor::MonitorError),
    #[error(transparent)]
    Oracle(#[from] oracle::OracleError),
    #[error(transparent)]
    Observables(#[from] observables::ObservablesError),
    #[error(transparent)]
    Spline(#[from] analysis::SplineError),
    #[error(transparent)]
    Exponent(#[from] analysis::ExponentError),
    #[error(transparent)]
    Collapse(#[from] analysis::CollapseError),
    #[error(transparent)]
    Trajectory(#[from] trajectory::TrajectoryError),
}

pub type Result<T> = std::result::Result<T, Error>;
