//! Spline differentiation, power-law exponents and scaling collapse.

pub mod collapse;
pub mod exponent;
pub mod optimize;
pub mod spline;
pub mod steady;

pub use collapse::{
    collapse_cost, entropy_collapse_cost, CollapseError, CollapseParams, CostReport, EntropyDataset, EntropyParams,
    SpreadingDataset,
};
pub use exponent::{fit_exponent, ExponentError, ExponentFit, FitWindow};
pub use optimize::{optimize_collapse, optimize_entropy_collapse, CollapseBounds, EntropyBounds, Interval, SearchOptions};
pub use spline::{spline_fit, two_stage_derivatives, SplineError, SplineModel};
pub use steady::{steady_state, Plateau};
