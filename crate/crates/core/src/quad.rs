//! Closed-form simulation of the two-domain scalar quadratic example and the
//! failure/recovery predicates of its horizon theorem, independent of the
//! generic drivers.
//!
//! Training loss `w * theta^2/2 + (1-w) * (theta-1)^2/2`, validation
//! `theta^2/2`. Per round of `T` inner steps:
//!
//! - `theta' = (1-eta)^T theta + (1-w)(1 - (1-eta)^T)`
//! - `gbar   = -theta' (1 - (1-eta)^T)`
//! - `w'     = w / (w + (1-w) exp(alpha * gbar))`
//!
//! The simulator tracks `phi = logit(w)` internally so long collapse phases
//! cannot underflow the weight.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One simulated round: the state entering round `k` and the hypergradient
/// computed during it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadRound {
    pub k: u64,
    /// `theta_{k,0}`
    pub theta: f64,
    /// `w_k`
    pub w: f64,
    /// `phi_k = logit(w_k)`
    pub phi: f64,
    /// `gbar_{k,T}`; absent on the final state row.
    pub gbar: Option<f64>,
}

/// Trace of a full simulation, rows `k = 0..=K` (the last row is the final
/// state and carries no hypergradient).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadTrace {
    pub r: f64,
    pub eta: f64,
    pub alpha: f64,
    pub horizon: usize,
    pub budget: u64,
    pub rounds_run: u64,
    pub rows: Vec<QuadRound>,
}

impl QuadTrace {
    pub fn final_w(&self) -> f64 {
        self.rows.last().expect("trace has rows").w
    }

    pub fn final_phi(&self) -> f64 {
        self.rows.last().expect("trace has rows").phi
    }
}

fn sigmoid(phi: f64) -> f64 {
    if phi >= 0.0 {
        1.0 / (1.0 + (-phi).exp())
    } else {
        let e = phi.exp();
        e / (1.0 + e)
    }
}

fn check_round_domain(eta: f64, w: f64, t_steps: usize) -> Result<()> {
    if !(eta > 0.0 && eta < 1.0) {
        return Err(Error::StepSize { eta, limit: 1.0 });
    }
    if !(0.0..=1.0).contains(&w) {
        return Err(Error::InvalidWeights {
            detail: format!("w must lie in [0, 1], got {w}"),
        });
    }
    if t_steps == 0 {
        return Err(Error::Config {
            detail: "horizon T must be at least 1".into(),
        });
    }
    Ok(())
}

/// One closed-form round; returns `(theta_next, w_next, gbar)`.
pub fn closed_form_round(
    theta: f64,
    w: f64,
    eta: f64,
    alpha: f64,
    t_steps: usize,
) -> Result<(f64, f64, f64)> {
    check_round_domain(eta, w, t_steps)?;
    let rho = (1.0 - eta).powi(t_steps as i32);
    let theta_next = rho * theta + (1.0 - w) * (1.0 - rho);
    let gbar = -theta_next * (1.0 - rho);
    let w_next = w / (w + (1.0 - w) * (alpha * gbar).exp());
    Ok((theta_next, w_next, gbar))
}

/// Simulates `K = floor(N/T)` rounds from `theta_0 = -R`, `w_0 = 1/2`.
pub fn simulate(r: f64, eta: f64, alpha: f64, t_steps: usize, budget: u64) -> Result<QuadTrace> {
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::Config {
            detail: format!("R must be positive, got {r}"),
        });
    }
    check_round_domain(eta, 0.5, t_steps)?;
    let k_rounds = budget / t_steps as u64;
    if k_rounds == 0 {
        return Err(Error::Config {
            detail: format!("budget {budget} below one round of T = {t_steps}"),
        });
    }
    let mut theta = -r;
    let mut phi = 0.0f64;
    let mut rows = Vec::with_capacity(k_rounds as usize + 1);
    let rho = (1.0 - eta).powi(t_steps as i32);
    for k in 0..k_rounds {
        let w = sigmoid(phi);
        let theta_next = rho * theta + (1.0 - w) * (1.0 - rho);
        let gbar = -theta_next * (1.0 - rho);
        rows.push(QuadRound {
            k,
            theta,
            w,
            phi,
            gbar: Some(gbar),
        });
        phi -= alpha * gbar;
        if !phi.is_finite() || !theta_next.is_finite() {
            return Err(Error::NonFinite {
                context: format!("scalar example round {k}"),
            });
        }
        theta = theta_next;
    }
    rows.push(QuadRound {
        k: k_rounds,
        theta,
        w: sigmoid(phi),
        phi,
        gbar: None,
    });
    Ok(QuadTrace {
        r,
        eta,
        alpha,
        horizon: t_steps,
        budget,
        rounds_run: k_rounds,
        rows,
    })
}

/// The collapse threshold `R_bar = eta N / ((1-eta)(1 - (1-eta)^N))`.
pub fn r_bar(eta: f64, budget: u64) -> f64 {
    let n = budget as f64;
    eta * n / ((1.0 - eta) * (1.0 - (1.0 - eta).powf(n)))
}

/// The recovery horizon `ceil((c+1) log(2R+1) / log(1/(1-eta)))`.
pub fn recovery_horizon(r: f64, eta: f64, c: f64) -> usize {
    ((c + 1.0) * (2.0 * r + 1.0).ln() / (1.0 / (1.0 - eta)).ln()).ceil() as usize
}

/// Evaluation of one theorem case against a simulated trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseReport {
    /// Whether the trace configuration puts this case in force.
    pub applies: bool,
    pub holds: bool,
    /// Slack in the case's inequality (positive when it holds).
    pub margin: f64,
    pub detail: String,
}

/// Predicate report for both theorem cases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredicateReport {
    pub r_bar: f64,
    /// Exponent `c` used for the recovery horizon.
    pub c: f64,
    pub recovery_horizon: usize,
    /// Greedy failure: `T = 1` and `R > R_bar` force `w_N < 1/2`, with the
    /// analytic logit bound `phi_N <= eta*alpha*(N - (R+1)(1-eta)(1-(1-eta)^N)/eta)`.
    pub greedy_failure: CaseReport,
    /// Recovery: `T` at the prescribed horizon keeps
    /// `w_K >= exp(beta*alpha/2) / (1 + exp(beta*alpha/2))`.
    pub long_horizon_recovery: CaseReport,
}

/// Checks both theorem cases on a trace produced by [`simulate`]. The budget
/// entering the formulas is the number of steps actually consumed,
/// `K * T`.
pub fn theorem_predicates(trace: &QuadTrace, c: f64) -> PredicateReport {
    let eta = trace.eta;
    let alpha = trace.alpha;
    let r = trace.r;
    let n_eff = trace.rounds_run * trace.horizon as u64;
    let nf = n_eff as f64;
    let rbar = r_bar(eta, n_eff);
    let t_rec = recovery_horizon(r, eta, c);

    let greedy_applies = trace.horizon == 1 && r > rbar;
    let phi_n = trace.final_phi();
    let phi_bound = eta * alpha * (nf - (r + 1.0) * (1.0 - eta) * (1.0 - (1.0 - eta).powf(nf)) / eta);
    let w_n = trace.final_w();
    let greedy_holds = w_n < 0.5 && phi_n <= phi_bound;
    let greedy = CaseReport {
        applies: greedy_applies,
        holds: greedy_holds,
        margin: phi_bound - phi_n,
        detail: format!("w_N = {w_n:e}, phi_N = {phi_n}, analytic bound = {phi_bound}"),
    };

    let rec_applies = trace.horizon == t_rec;
    let k = trace.rounds_run as f64;
    let base = 2.0 * r + 1.0;
    let beta = (1.0 - base.powf(-c)) * (1.0 - base.powf(-k * (c + 1.0)));
    let lower = sigmoid(beta * alpha / 2.0);
    let w_k = trace.final_w();
    let recovery = CaseReport {
        applies: rec_applies,
        holds: w_k >= lower,
        margin: w_k - lower,
        detail: format!("w_K = {w_k}, beta = {beta}, lower bound = {lower}"),
    };

    PredicateReport {
        r_bar: rbar,
        c,
        recovery_horizon: t_rec,
        greedy_failure: greedy,
        long_horizon_recovery: recovery,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn round_formula_hand_arithmetic() {
        // eta = 0.1, T = 1, theta = -100, w = 0.5
        let (theta, w, gbar) = closed_form_round(-100.0, 0.5, 0.1, 0.5, 1).unwrap();
        assert_abs_diff_eq!(theta, -89.95, epsilon = 1e-12);
        assert_abs_diff_eq!(gbar, 8.995, epsilon = 1e-12);
        assert!(w < 0.5);
    }

    #[test]
    fn round_with_full_first_weight_contracts_theta() {
        let (theta, w, _) = closed_form_round(-8.0, 1.0, 0.2, 0.5, 3).unwrap();
        assert_abs_diff_eq!(theta, 0.8f64.powi(3) * -8.0, epsilon = 1e-14);
        assert_abs_diff_eq!(w, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn round_fixpoint_when_theta_next_zero() {
        // pick theta so that theta' = 0: theta = -(1-w)(1-rho)/rho
        let (eta, w, t) = (0.3, 0.4, 2usize);
        let rho = 0.7f64.powi(2);
        let theta = -(1.0 - w) * (1.0 - rho) / rho;
        let (theta_next, w_next, gbar) = closed_form_round(theta, w, eta, 0.9, t).unwrap();
        assert_abs_diff_eq!(theta_next, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(gbar, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(w_next, w, epsilon = 1e-15);
    }

    #[test]
    fn round_domain_violations() {
        assert!(closed_form_round(0.0, 0.5, 1.5, 0.5, 1).is_err());
        assert!(closed_form_round(0.0, 1.5, 0.1, 0.5, 1).is_err());
        assert!(closed_form_round(0.0, 0.5, 0.1, 0.5, 0).is_err());
        assert!(simulate(-1.0, 0.1, 0.5, 1, 100).is_err());
        assert!(simulate(1.0, 0.1, 0.5, 200, 100).is_err());
    }

    #[test]
    fn single_round_schedule() {
        let trace = simulate(5.0, 0.1, 0.5, 64, 64).unwrap();
        assert_eq!(trace.rounds_run, 1);
        assert_eq!(trace.rows.len(), 2);
        assert!(trace.rows[0].gbar.is_some());
        assert!(trace.rows[1].gbar.is_none());
    }

    #[test]
    fn tiny_r_drifts_weight_up() {
        // theta' lands at the positive w-dependent fixed point, so gbar < 0
        // and w climbs toward 1
        let trace = simulate(1e-3, 0.1, 0.5, 4, 400).unwrap();
        let w_path: Vec<f64> = trace.rows.iter().map(|r| r.w).collect();
        assert!(w_path.windows(2).all(|p| p[1] >= p[0]));
        assert!(trace.final_w() > 0.5);
    }

    #[test]
    fn collapse_phase_is_monotone_while_theta_negative() {
        // phi_k = phi_{k-1} + eta*alpha*theta_k under T = 1
        let trace = simulate(100.0, 0.1, 0.5, 1, 1000).unwrap();
        for pair in trace.rows.windows(2) {
            let (prev, next) = (&pair[0], &pair[1]);
            if next.theta < 0.0 {
                assert!(next.phi < prev.phi);
                assert_abs_diff_eq!(
                    next.phi,
                    prev.phi + trace.eta * trace.alpha * next.theta,
                    epsilon = 1e-9
                );
            }
        }
    }

    #[test]
    fn recovery_phase_first_round_bound_and_monotonicity() {
        // theta_{1,0} >= (1 - (2R+1)^{-c})/2 > 0 at the prescribed horizon,
        // and w increases from then on
        let (r, eta, alpha, c) = (200.0, 0.1, 0.5, 1.0);
        let t = recovery_horizon(r, eta, c);
        let trace = simulate(r, eta, alpha, t, 1000).unwrap();
        let theta_1 = trace.rows[1].theta;
        let floor = 0.5 * (1.0 - (2.0 * r + 1.0).powf(-c));
        assert!(theta_1 >= floor, "theta_1 = {theta_1} below {floor}");
        let w_path: Vec<f64> = trace.rows.iter().map(|row| row.w).collect();
        assert!(w_path.windows(2).all(|p| p[1] > p[0] - 1e-15));
    }

    #[test]
    fn r_bar_matches_hand_value() {
        // eta = 0.1, N = 1000 -> 0.1*1000 / (0.9 * (1 - 0.9^1000)) ~ 111.11
        let v = r_bar(0.1, 1000);
        assert_abs_diff_eq!(v, 111.111111111, epsilon = 1e-6);
    }

    #[test]
    fn greedy_failure_predicate() {
        let trace = simulate(200.0, 0.1, 0.5, 1, 1000).unwrap();
        let report = theorem_predicates(&trace, 1.0);
        assert!(report.greedy_failure.applies);
        assert!(report.greedy_failure.holds);
        assert!(trace.final_w() < 0.5);
        assert!(!report.long_horizon_recovery.applies);
    }

    #[test]
    fn recovery_predicate() {
        let (r, eta, alpha, c) = (200.0, 0.1, 0.5, 1.0);
        let t = recovery_horizon(r, eta, c);
        // ceil(2 * ln(401) / ln(10/9)) = 114
        assert_eq!(t, 114);
        let trace = simulate(r, eta, alpha, t, 1000).unwrap();
        let report = theorem_predicates(&trace, c);
        assert!(report.long_horizon_recovery.applies);
        assert!(report.long_horizon_recovery.holds);
        assert!(report.long_horizon_recovery.margin > 0.0);
    }

    #[test]
    fn vanishing_alpha_makes_recovery_bound_tight() {
        // alpha -> 0: both w_K and the lower bound approach 1/2
        let (r, eta, c) = (50.0, 0.1, 1.0);
        let t = recovery_horizon(r, eta, c);
        let trace = simulate(r, eta, 1e-9, t, 10 * t as u64).unwrap();
        let report = theorem_predicates(&trace, c);
        assert!(report.long_horizon_recovery.holds);
        assert_abs_diff_eq!(trace.final_w(), 0.5, epsilon = 1e-6);
        let lower = report
            .long_horizon_recovery
            .detail
            .split("lower bound = ")
            .nth(1)
            .unwrap()
            .parse::<f64>()
            .unwrap();
        assert_abs_diff_eq!(lower, 0.5, epsilon = 1e-6);
    }
}
