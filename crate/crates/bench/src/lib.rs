//! Shared fixtures for the criterion benches.

use mixlab_core::losses::{generate_problem, GeneratorParams, ProblemKind, ProblemSpec};

/// Random strongly convex problem sized for estimator benchmarks.
pub fn bench_problem(m: usize, d: usize) -> ProblemSpec {
    let params = GeneratorParams {
        m,
        d,
        mu: 0.5,
        l_smooth: 2.0,
        spread: 1.5,
        operating_radius: 40.0,
    };
    generate_problem(ProblemKind::RandomStronglyConvex, &params, 7).unwrap()
}
