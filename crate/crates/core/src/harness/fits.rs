//! Least-squares fits of the sweep outcomes: horizon scaling laws for
//! argmin-T against the budget, and per-horizon hypergradient-error decay
//! with floor detection.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypergrad::{self, HessianApproximator};
use crate::losses::ProblemSpec;
use crate::numerics;
use crate::simplex::MixtureWeights;

/// Candidate scaling laws for the optimal horizon as a function of the
/// budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScalingLaw {
    LogN,
    SqrtNLogN,
}

impl ScalingLaw {
    pub fn feature(&self, n: f64) -> f64 {
        match self {
            ScalingLaw::LogN => n.ln(),
            ScalingLaw::SqrtNLogN => (n * n.ln()).sqrt(),
        }
    }
}

/// Result of fitting `argmin-T ~ a + b * law(N)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingFitReport {
    pub law: ScalingLaw,
    pub intercept: f64,
    pub slope: f64,
    pub r_squared: f64,
    /// R^2 of the competing law on the same data.
    pub competing_law: ScalingLaw,
    pub competing_r_squared: f64,
    pub residuals: Vec<f64>,
    /// Constant argmin column: both laws fit exactly and the comparison is
    /// uninformative.
    pub degenerate: bool,
}

fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64, Vec<f64>, bool) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let residuals: Vec<f64> = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| y - (intercept + slope * x))
        .collect();
    let ss_res: f64 = residuals.iter().map(|r| r * r).sum();
    let ss_tot: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let degenerate = ss_tot <= 1e-12 * (1.0 + my * my);
    let r_squared = if degenerate {
        // a constant column is fit exactly by a flat line
        if ss_res <= 1e-12 {
            1.0
        } else {
            0.0
        }
    } else {
        1.0 - ss_res / ss_tot
    };
    (intercept, slope, r_squared, residuals, degenerate)
}

/// Fits the chosen law to `(N, argmin-T)` pairs and reports the competing
/// law's fit quality alongside; interpretation is left to the caller.
pub fn fit_scaling(points: &[(u64, f64)], law: ScalingLaw) -> Result<ScalingFitReport> {
    if points.len() < 3 {
        return Err(Error::Config {
            detail: format!("scaling fit needs at least 3 budgets, got {}", points.len()),
        });
    }
    let ys: Vec<f64> = points.iter().map(|(_, t)| *t).collect();
    let xs: Vec<f64> = points.iter().map(|(n, _)| law.feature(*n as f64)).collect();
    let competing_law = match law {
        ScalingLaw::LogN => ScalingLaw::SqrtNLogN,
        ScalingLaw::SqrtNLogN => ScalingLaw::LogN,
    };
    let xs_c: Vec<f64> = points
        .iter()
        .map(|(n, _)| competing_law.feature(*n as f64))
        .collect();
    let (intercept, slope, r_squared, residuals, degenerate) = linear_fit(&xs, &ys);
    let (_, _, competing_r_squared, _, _) = linear_fit(&xs_c, &ys);
    Ok(ScalingFitReport {
        law,
        intercept,
        slope,
        r_squared,
        competing_law,
        competing_r_squared,
        residuals,
        degenerate,
    })
}

/// Errors below this are treated as float noise and excluded from decay
/// fits.
pub const DECAY_UNDERFLOW: f64 = 1e-14;

/// Decay-fit outcome: slope of `log error` against `T` over the pre-floor
/// range, against the theorem rate `log(1 - eta*mu/2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayReport {
    pub horizons: Vec<usize>,
    pub errors: Vec<f64>,
    /// Horizons used by the fit after floor/underflow truncation.
    pub fitted_horizons: Vec<usize>,
    pub slope: f64,
    /// `log(1 - eta*mu/2)`
    pub target_log_rate: f64,
    /// `exp(slope)`: the fitted per-step decay factor.
    pub fitted_rate: f64,
    /// `1 - eta*mu/2`
    pub target_rate: f64,
    /// `|fitted_rate - target_rate| / target_rate`
    pub rate_rel_deviation: f64,
    /// Plateau level of the error at large horizons.
    pub floor_estimate: f64,
}

/// Fits a decay line to an explicit error series; the estimator-driven
/// [`fit_decay`] delegates here.
pub fn fit_decay_series(
    horizons: &[usize],
    errors: &[f64],
    eta: f64,
    mu: f64,
) -> Result<DecayReport> {
    if horizons.len() != errors.len() || horizons.len() < 2 {
        return Err(Error::Config {
            detail: "decay fit needs matching horizon/error series of length >= 2".into(),
        });
    }
    if horizons.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config {
            detail: "horizons must be strictly increasing".into(),
        });
    }
    // plateau level: median of the trailing quarter of the series
    let tail = (horizons.len() / 4).max(1);
    let mut tail_vals: Vec<f64> = errors[errors.len() - tail..].to_vec();
    tail_vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let floor_estimate = tail_vals[tail_vals.len() / 2];

    let threshold = (8.0 * floor_estimate).max(DECAY_UNDERFLOW);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut fitted_horizons = Vec::new();
    for (t, e) in horizons.iter().zip(errors) {
        if *e > threshold {
            xs.push(*t as f64);
            ys.push(e.ln());
            fitted_horizons.push(*t);
        }
    }
    let slope = if xs.len() >= 2 {
        linear_fit(&xs, &ys).1
    } else {
        0.0
    };
    let target_rate = 1.0 - eta * mu / 2.0;
    let fitted_rate = slope.exp();
    Ok(DecayReport {
        horizons: horizons.to_vec(),
        errors: errors.to_vec(),
        fitted_horizons,
        slope,
        target_log_rate: target_rate.ln(),
        fitted_rate,
        target_rate,
        rate_rel_deviation: (fitted_rate - target_rate).abs() / target_rate,
        floor_estimate,
    })
}

/// Measures `||g_T - grad F(w)||_inf` of the frozen-Hessian estimator across
/// `horizons` (noiseless) and fits the decay.
pub fn fit_decay(
    spec: &ProblemSpec,
    w: &MixtureWeights,
    theta0: &[f64],
    eta: f64,
    horizons: &[usize],
    approx: &HessianApproximator,
) -> Result<DecayReport> {
    let exact = hypergrad::exact_hypergrad(spec, w)?;
    let mut errors = Vec::with_capacity(horizons.len());
    for t in horizons {
        let (_, g) = hypergrad::frozen_hessian_hypergrad(spec, w, theta0, eta, *t, approx, None)?;
        errors.push(numerics::inf_norm(&numerics::sub(
            g.components(),
            exact.components(),
        )));
    }
    fit_decay_series(horizons, &errors, eta, spec.mu)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn scaling_fit_recovers_exact_log_law() {
        let points: Vec<(u64, f64)> = [1024u64, 4096, 16384, 65536]
            .iter()
            .map(|n| (*n, 3.0 + 2.5 * (*n as f64).ln()))
            .collect();
        let fit = fit_scaling(&points, ScalingLaw::LogN).unwrap();
        assert_abs_diff_eq!(fit.r_squared, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.slope, 2.5, epsilon = 1e-9);
        assert!(!fit.degenerate);
        assert!(fit.competing_r_squared < 1.0);
    }

    #[test]
    fn scaling_fit_recovers_exact_sqrt_law() {
        let points: Vec<(u64, f64)> = [1024u64, 4096, 16384, 65536]
            .iter()
            .map(|n| {
                let nf = *n as f64;
                (*n, 1.0 + 0.125 * (nf * nf.ln()).sqrt())
            })
            .collect();
        let fit = fit_scaling(&points, ScalingLaw::SqrtNLogN).unwrap();
        assert_abs_diff_eq!(fit.r_squared, 1.0, epsilon = 1e-12);
        assert!(fit.competing_r_squared < fit.r_squared);
    }

    #[test]
    fn scaling_fit_flags_degenerate_constant() {
        let points = vec![(1024u64, 64.0), (4096, 64.0), (16384, 64.0)];
        let fit = fit_scaling(&points, ScalingLaw::LogN).unwrap();
        assert!(fit.degenerate);
        assert_abs_diff_eq!(fit.r_squared, 1.0);
        assert_abs_diff_eq!(fit.competing_r_squared, 1.0);
    }

    #[test]
    fn scaling_fit_needs_three_budgets() {
        assert!(fit_scaling(&[(1024, 8.0), (2048, 9.0)], ScalingLaw::LogN).is_err());
    }

    #[test]
    fn decay_fit_constant_series_reports_floor() {
        let horizons: Vec<usize> = (1..=20).collect();
        let errors = vec![0.37; 20];
        let rep = fit_decay_series(&horizons, &errors, 0.1, 1.0).unwrap();
        assert_abs_diff_eq!(rep.slope, 0.0);
        assert_abs_diff_eq!(rep.floor_estimate, 0.37);
        assert!(rep.fitted_horizons.is_empty());
    }

    #[test]
    fn decay_fit_recovers_synthetic_rate() {
        let horizons: Vec<usize> = (1..=60).collect();
        let rate: f64 = 0.95;
        let errors: Vec<f64> = horizons.iter().map(|t| 2.0 * rate.powi(*t as i32)).collect();
        let rep = fit_decay_series(&horizons, &errors, 0.1, 1.0).unwrap();
        assert_abs_diff_eq!(rep.slope, rate.ln(), epsilon = 1e-9);
        assert!(rep.rate_rel_deviation <= 1e-9);
    }

    #[test]
    fn decay_fit_truncates_below_underflow() {
        let horizons: Vec<usize> = (1..=30).collect();
        let errors: Vec<f64> = horizons
            .iter()
            .map(|t| (1e-2 * 0.2f64.powi(*t as i32)).max(1e-16))
            .collect();
        let rep = fit_decay_series(&horizons, &errors, 0.1, 1.0).unwrap();
        assert!(rep.fitted_horizons.iter().all(|t| {
            let e = errors[horizons.iter().position(|h| h == t).unwrap()];
            e > DECAY_UNDERFLOW
        }));
    }

    #[test]
    fn decay_fit_rejects_unsorted() {
        assert!(fit_decay_series(&[4, 2], &[1.0, 0.5], 0.1, 1.0).is_err());
    }
}
