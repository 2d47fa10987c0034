//! Experiment layer: budget-constrained horizon sweeps, scaling and decay
//! fits, reference outer optima, and artifact emission.

pub mod fits;
pub mod oracle;
pub mod report;
pub mod sweep;

pub use fits::{fit_decay, fit_scaling, DecayReport, ScalingFitReport, ScalingLaw};
pub use oracle::{outer_opt_oracle, OuterOptimum};
pub use sweep::{run_sweep, CellOutcome, CellResult, SweepAlpha, SweepPlan, SweepResult};
