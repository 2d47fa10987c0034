//! Bilevel data-mixing laboratory.
//!
//! The outer problem picks mixture weights `w` on the simplex to minimize a
//! validation loss at the inner minimizer `theta*(w)` of the `w`-weighted
//! training loss. This crate provides:
//!
//! - exact and approximate hypergradient estimators (implicit-function
//!   oracle, exact unrolling, frozen-Hessian truncated recursion, stochastic
//!   variants, finite differences),
//! - the entropic mirror-descent mixer loop with a configurable horizon `T`
//!   under a total inner-step budget `N = K * T`,
//! - a closed-form simulator for the two-domain scalar quadratic example and
//!   its failure/recovery predicates,
//! - a sweep harness that maps out final suboptimality over `(N, T)` grids,
//!   fits horizon scaling laws, and persists CSV/JSON/SVG artifacts.
//!
//! All losses are strongly convex quadratics, so every estimator can be
//! checked against closed forms.

pub mod error;
pub mod harness;
pub mod hypergrad;
pub mod losses;
pub mod mixers;
pub mod numerics;
pub mod quad;
pub mod simplex;

pub use error::{Error, Result};
pub use hypergrad::{HessianApproximator, HypergradEstimate, HypergradMethod, SensitivityState};
pub use losses::{GeneratorParams, NoiseModel, ProblemSpec, QuadraticDomainLoss};
pub use mixers::{Algorithm, RunConfig, RunRecord};
pub use numerics::{SpectrumBounds, SymMatrix};
pub use simplex::MixtureWeights;
