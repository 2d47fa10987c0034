//! Reference outer minimum `(w*, F*)`, independent of every mixing
//! algorithm: a refining lattice search over the simplex cross-checked by a
//! projected-gradient descent using exact hypergradients.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypergrad;
use crate::losses::ProblemSpec;
use crate::simplex::MixtureWeights;

/// Largest domain count the dense lattice oracle accepts.
pub const MAX_GRID_DOMAINS: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuterOptimum {
    pub weights: Vec<f64>,
    pub value: f64,
    /// Successive refinement improvements, for convergence diagnostics.
    pub refinements: Vec<f64>,
}

fn normalize(w: &[f64]) -> Vec<f64> {
    let s: f64 = w.iter().sum();
    w.iter().map(|x| (x / s).max(1e-300)).collect()
}

/// Evaluates `F` on a box-clipped simplex lattice around `center` and keeps
/// the best point.
fn lattice_best(
    spec: &ProblemSpec,
    center: &[f64],
    half_width: f64,
    resolution: usize,
) -> Result<(Vec<f64>, f64)> {
    let m = spec.num_domains();
    let mut best_w = normalize(center);
    let mut best_f = spec.outer_value_raw(&best_w)?;
    let mut point = vec![0usize; m];
    loop {
        let mut w: Vec<f64> = point
            .iter()
            .zip(center)
            .map(|(p, c)| {
                let frac = *p as f64 / resolution as f64;
                (c - half_width + 2.0 * half_width * frac).max(0.0)
            })
            .collect();
        let s: f64 = w.iter().sum();
        if s > 1e-12 {
            for x in w.iter_mut() {
                *x /= s;
            }
            let f = spec.outer_value_raw(&w)?;
            if f < best_f {
                best_f = f;
                best_w = w;
            }
        }
        // odometer over the lattice
        let mut carry = true;
        for slot in point.iter_mut() {
            if *slot < resolution {
                *slot += 1;
                carry = false;
                break;
            }
            *slot = 0;
        }
        if carry {
            break;
        }
    }
    Ok((best_w, best_f))
}

/// Euclidean projection onto the simplex (sort-based).
fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u: Vec<f64> = v.to_vec();
    u.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut css = 0.0;
    let mut theta = 0.0;
    for (i, ui) in u.iter().enumerate() {
        css += ui;
        let t = (css - 1.0) / (i + 1) as f64;
        if ui - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}

/// Projected-gradient descent with exact hypergradients and backtracking.
fn projected_gradient(spec: &ProblemSpec, start: &[f64], tol: f64) -> Result<(Vec<f64>, f64)> {
    let mut w = normalize(start);
    let mut f = spec.outer_value_raw(&w)?;
    let mut step = 0.5;
    for _ in 0..5_000 {
        let mw = MixtureWeights::new(w.iter().map(|x| x.max(1e-15)).collect())?;
        let g = hypergrad::exact_hypergrad(spec, &mw)?;
        let mut improvement = 0.0;
        let mut s = step;
        for _ in 0..40 {
            let cand: Vec<f64> = w
                .iter()
                .zip(g.components())
                .map(|(wi, gi)| wi - s * gi)
                .collect();
            let cand = project_simplex(&cand);
            let fc = spec.outer_value_raw(&normalize(&cand))?;
            if fc < f {
                improvement = f - fc;
                w = cand;
                f = fc;
                step = (s * 1.5).min(10.0);
                break;
            }
            s *= 0.5;
        }
        if improvement < tol {
            break;
        }
    }
    Ok((w, f))
}

/// Reference outer minimum via lattice refinement plus projected-gradient
/// polish. `F*` is accurate to about `1e-8` on quadratic problems.
pub fn outer_opt_oracle(spec: &ProblemSpec) -> Result<OuterOptimum> {
    let m = spec.num_domains();
    if m > MAX_GRID_DOMAINS {
        return Err(Error::OracleFailure {
            detail: format!("dense lattice oracle refuses m = {m} > {MAX_GRID_DOMAINS} domains"),
        });
    }
    let resolution = match m {
        2 => 64,
        3 => 40,
        4 => 24,
        _ => 12,
    };
    let mut center = vec![1.0 / m as f64; m];
    let mut half_width = 0.5;
    let mut best_f = f64::INFINITY;
    let mut refinements = Vec::new();
    for _ in 0..10 {
        let (w, f) = lattice_best(spec, &center, half_width, resolution)?;
        if f < best_f {
            refinements.push(best_f - f);
            best_f = f;
            center = w;
        }
        half_width *= 0.35;
        if half_width < 1e-10 {
            break;
        }
    }
    let (pw, pf) = projected_gradient(spec, &center, 1e-14)?;
    let (weights, value) = if pf < best_f { (pw, pf) } else { (center, best_f) };
    if !value.is_finite() {
        return Err(Error::OracleFailure {
            detail: "non-finite oracle value".into(),
        });
    }
    Ok(OuterOptimum {
        weights,
        value,
        refinements,
    })
}

/// Projected-gradient-only route, exposed for oracle cross-checks.
pub fn projected_gradient_optimum(spec: &ProblemSpec) -> Result<OuterOptimum> {
    let m = spec.num_domains();
    let start = vec![1.0 / m as f64; m];
    let (weights, value) = projected_gradient(spec, &start, 1e-14)?;
    Ok(OuterOptimum {
        weights,
        value,
        refinements: Vec::new(),
    })
}
