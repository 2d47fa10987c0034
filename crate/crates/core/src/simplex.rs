//! Mixture weights on the probability simplex and the entropic mirror-descent
//! update shared by all algorithm drivers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypergrad::HypergradEstimate;

/// Drift tolerance on `sum(w) = 1`; every update renormalizes.
pub const SIMPLEX_TOL: f64 = 1e-12;

/// A point on the m-simplex with strictly positive entries. Multiplicative
/// updates preserve positivity, so no clipping is ever applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MixtureWeights(Vec<f64>);

impl MixtureWeights {
    /// Uniform initialization `w0 = (1/m, ..., 1/m)`.
    pub fn uniform(m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidWeights {
                detail: "simplex dimension must be at least 1".into(),
            });
        }
        Ok(Self(vec![1.0 / m as f64; m]))
    }

    /// Validates positivity and unit sum, then renormalizes exactly.
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() {
            return Err(Error::InvalidWeights {
                detail: "empty weight vector".into(),
            });
        }
        let sum: f64 = w.iter().sum();
        if !sum.is_finite() || (sum - 1.0).abs() > 1e-6 || w.iter().any(|x| *x <= 0.0) {
            return Err(Error::InvalidWeights {
                detail: format!("entries must be positive and sum to 1, got sum = {sum}"),
            });
        }
        let mut w = w;
        for x in w.iter_mut() {
            *x /= sum;
        }
        Ok(Self(w))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn get(&self, j: usize) -> f64 {
        self.0[j]
    }

    pub fn min_entry(&self) -> f64 {
        self.0.iter().fold(f64::INFINITY, |m, x| m.min(*x))
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }
}

/// One entropic mirror-descent step
/// `w+_j = w_j exp(-alpha g_j) / sum_s w_s exp(-alpha g_s)`,
/// computed in log-space with max-subtraction so large `alpha * g` cannot
/// overflow.
pub fn md_update(w: &MixtureWeights, g: &HypergradEstimate, alpha: f64) -> Result<MixtureWeights> {
    let gv = g.components();
    if gv.len() != w.len() {
        return Err(Error::ShapeMismatch {
            expected: w.len(),
            got: gv.len(),
        });
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidHypergrad {
            detail: format!("step size alpha must be positive and finite, got {alpha}"),
        });
    }
    if gv.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidHypergrad {
            detail: "non-finite hypergradient component".into(),
        });
    }
    let logits: Vec<f64> = w
        .as_slice()
        .iter()
        .zip(gv)
        .map(|(wj, gj)| wj.ln() - alpha * gj)
        .collect();
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, x| m.max(*x));
    let mut out: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for x in out.iter_mut() {
        *x /= sum;
    }
    Ok(MixtureWeights(out))
}

/// `KL(p || q) = sum_j p_j log(p_j / q_j)`; zero entries of `p` contribute 0.
pub fn kl_divergence(p: &MixtureWeights, q: &MixtureWeights) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::ShapeMismatch {
            expected: p.len(),
            got: q.len(),
        });
    }
    if q.as_slice().iter().any(|x| *x <= 0.0) {
        return Err(Error::InvalidWeights {
            detail: "KL divergence requires strictly positive q".into(),
        });
    }
    Ok(p.as_slice()
        .iter()
        .zip(q.as_slice())
        .map(|(pj, qj)| if *pj > 0.0 { pj * (pj / qj).ln() } else { 0.0 })
        .sum())
}

/// Componentwise mean of a weight history; the averaged iterate of the
/// convergence guarantees.
pub fn averaged_iterate(history: &[MixtureWeights]) -> Result<MixtureWeights> {
    let first = history.first().ok_or(Error::EmptyHistory)?;
    let m = first.len();
    let mut acc = vec![0.0; m];
    for w in history {
        if w.len() != m {
            return Err(Error::ShapeMismatch {
                expected: m,
                got: w.len(),
            });
        }
        for (a, x) in acc.iter_mut().zip(w.as_slice()) {
            *a += x;
        }
    }
    let k = history.len() as f64;
    for a in acc.iter_mut() {
        *a /= k;
    }
    Ok(MixtureWeights(acc))
}
