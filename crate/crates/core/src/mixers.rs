//! The round-loop engine behind all three mixing algorithms: `T` inner
//! parameter updates per round, one mirror-descent weight update per round,
//! carrying the parameter iterate across rounds, under a total inner-step
//! budget `N = K * T`.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypergrad::{
    self, ApproximatorMode, HessianApproximator, HypergradEstimate, NoiseContext,
};
use crate::losses::{NoiseModel, ProblemSpec};
use crate::numerics;
use crate::simplex::{self, MixtureWeights};

/// Which estimator drives the weight updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    /// Exact unrolled differentiation of the inner loop.
    Alg1Exact,
    /// Frozen approximate Hessian per round, full gradients.
    Alg2Frozen,
    /// Frozen approximate Hessian per round, stochastic gradients.
    Alg3Stochastic,
}

/// Outer step size: an explicit value or the theorem-prescribed schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AlphaSetting {
    Named(AlphaPolicy),
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlphaPolicy {
    AutoTheorem,
}

impl Default for AlphaSetting {
    fn default() -> Self {
        AlphaSetting::Named(AlphaPolicy::AutoTheorem)
    }
}

/// Initial mixture weights: explicit or uniform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum W0Setting {
    Named(W0Policy),
    Weights(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum W0Policy {
    Uniform,
}

impl Default for W0Setting {
    fn default() -> Self {
        W0Setting::Named(W0Policy::Uniform)
    }
}

fn default_approximator() -> ApproximatorMode {
    ApproximatorMode::ExactAtOptimum
}

/// Full configuration of one run. The budget semantics are `K = floor(N/T)`
/// with the remainder discarded and logged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    pub eta: f64,
    #[serde(default)]
    pub alpha: AlphaSetting,
    /// Inner updates per round (the lookahead horizon T).
    pub horizon: usize,
    /// Total inner-update budget N; exactly one of `budget`/`rounds` is set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<u64>,
    /// Number of rounds K, when given directly.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rounds: Option<u64>,
    pub theta0: Vec<f64>,
    #[serde(default)]
    pub w0: W0Setting,
    #[serde(default = "default_approximator")]
    pub approximator: ApproximatorMode,
    #[serde(default)]
    pub sigma: f64,
    #[serde(default)]
    pub seed: u64,
}

impl RunConfig {
    /// Resolves `(K, discarded_steps)` from the budget semantics.
    pub fn resolve_rounds(&self) -> Result<(u64, u64)> {
        if self.horizon == 0 {
            return Err(Error::Config {
                detail: "horizon T must be at least 1".into(),
            });
        }
        let t = self.horizon as u64;
        match (self.budget, self.rounds) {
            (Some(n), None) => {
                let k = n / t;
                if k == 0 {
                    return Err(Error::Config {
                        detail: format!("budget N = {n} below one round of T = {t}"),
                    });
                }
                Ok((k, n - k * t))
            }
            (None, Some(k)) if k > 0 => Ok((k, 0)),
            _ => Err(Error::Config {
                detail: "exactly one of budget (N) or rounds (K) must be positive".into(),
            }),
        }
    }

    pub fn initial_weights(&self, m: usize) -> Result<MixtureWeights> {
        match &self.w0 {
            W0Setting::Named(W0Policy::Uniform) => MixtureWeights::uniform(m),
            W0Setting::Weights(v) => {
                if v.len() != m {
                    return Err(Error::ShapeMismatch {
                        expected: m,
                        got: v.len(),
                    });
                }
                MixtureWeights::new(v.clone())
            }
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// One recorded round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRow {
    pub k: u64,
    pub weights: Vec<f64>,
    pub theta0: Vec<f64>,
    /// Exact outer objective at `w_k` via the closed-form inner optimum; a
    /// diagnostic oracle the algorithm itself never sees.
    pub f_value: f64,
    pub hypergrad: Vec<f64>,
    /// `||g_k - grad F(w_k)||_inf` against the exact hypergradient.
    pub hypergrad_err_inf: f64,
}

/// Trace of a full run plus final summaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: RunConfig,
    pub rounds: Vec<RoundRow>,
    /// `w_0 ... w_K`, length K + 1.
    pub weight_history: Vec<Vec<f64>>,
    pub weights_final: Vec<f64>,
    /// Average of `w_0 ... w_{K-1}`.
    pub weights_avg: Vec<f64>,
    pub f_final: f64,
    pub f_avg: f64,
    /// Inner steps dropped by the `K = floor(N/T)` budget rule.
    pub discarded_steps: u64,
    /// Rounds at which the iterate-distance bound was exceeded while the
    /// horizon was inside the theorem regime.
    pub bound_violations: u64,
    /// Distance bound `R = 2 max(||theta_0 - theta*(w_0)||, (2L/mu + 1) D)`.
    pub dist_bound: f64,
    pub wall_ms: u64,
}

impl RunRecord {
    /// JSON value with the timing field cleared, for determinism checks.
    pub fn semantic_value(&self) -> Result<serde_json::Value> {
        let mut v = serde_json::to_value(self)?;
        v.as_object_mut()
            .expect("record serializes to an object")
            .insert("wall_ms".into(), serde_json::json!(0));
        Ok(v)
    }
}

/// Step sizes resolved by the theorem schedules, with any conditions that
/// could only be reported, not verified.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSizes {
    pub eta: f64,
    pub alpha: f64,
    pub notes: Vec<String>,
}

fn eta_cap(spec: &ProblemSpec, algorithm: Algorithm, approx: &HessianApproximator) -> f64 {
    match algorithm {
        Algorithm::Alg1Exact => 1.0 / spec.l_smooth,
        Algorithm::Alg2Frozen | Algorithm::Alg3Stochastic => {
            (1.0 / approx.bounds.upper).min(spec.mu / (spec.l_smooth * spec.l_smooth))
        }
    }
}

/// Horizon floor for the deterministic theorem regime.
pub fn theorem_horizon_floor(eta: f64, mu: f64) -> usize {
    (4f64.ln() / (eta * mu)).ceil() as usize
}

/// Theorem-prescribed step sizes for the configured algorithm, erroring with
/// the violated inequality when the regime preconditions fail.
pub fn auto_stepsizes(spec: &ProblemSpec, config: &RunConfig) -> Result<StepSizes> {
    let (k_rounds, _) = config.resolve_rounds()?;
    let m = spec.num_domains() as f64;
    let approx = hypergrad::make_approximator(config.approximator, spec)?;
    let mu_hat = approx.bounds.lower;
    let cap = eta_cap(spec, config.algorithm, &approx);
    let t = config.horizon as f64;
    let mut notes = Vec::new();
    match config.algorithm {
        Algorithm::Alg1Exact | Algorithm::Alg2Frozen => {
            let eta = config.eta;
            if !(eta > 0.0 && eta < cap) {
                return Err(Error::RegimeViolation {
                    inequality: format!("eta = {eta} must satisfy 0 < eta < {cap}"),
                });
            }
            let floor = theorem_horizon_floor(eta, spec.mu);
            if config.horizon < floor {
                return Err(Error::RegimeViolation {
                    inequality: format!(
                        "T = {} below ceil(log 4 / (eta*mu)) = {floor}",
                        config.horizon
                    ),
                });
            }
            let alpha = mu_hat * m.ln().sqrt() / ((k_rounds as f64).sqrt() * spec.g_bound * spec.g_v);
            Ok(StepSizes { eta, alpha, notes })
        }
        Algorithm::Alg3Stochastic => {
            if config.horizon < 2 {
                return Err(Error::RegimeViolation {
                    inequality: format!("T = {} must be at least 2", config.horizon),
                });
            }
            let eta = 4.0 * t.ln() / (spec.mu * t);
            let w0 = config.initial_weights(spec.num_domains())?;
            let theta_star0 = spec.weighted_minimizer(&w0)?;
            let dist0 = numerics::norm2(&numerics::sub(&config.theta0, &theta_star0));
            let b = (2.0 * spec.l_smooth / spec.mu + 1.0) * spec.d_span;
            let r_bar = 3.0 * dist0.max(b);
            let sigma = config.sigma;
            let mut cap_stoc = cap;
            if sigma > 0.0 {
                cap_stoc = cap_stoc.min(spec.mu * r_bar * r_bar / (9.0 * sigma * sigma));
            }
            if eta > cap_stoc {
                return Err(Error::RegimeViolation {
                    inequality: format!(
                        "eta = 4 log(T)/(mu*T) = {eta} exceeds min(1/L_hat, mu/L^2, mu*R_bar^2/(9 sigma^2)) = {cap_stoc}"
                    ),
                });
            }
            let g_tilde = (spec.g_bound * spec.g_bound + sigma * sigma).sqrt();
            let g_v_tilde = (spec.g_v * spec.g_v + sigma * sigma).sqrt();
            let alpha = mu_hat * m.ln().sqrt() / ((k_rounds as f64).sqrt() * g_tilde * g_v_tilde);
            notes.push(
                "the stochastic horizon floor ceil(O(max(L_hat/mu log L_hat/mu, L^2/mu^2 log L^2/mu^2, sigma^2/(mu^2 R_bar^2)))) carries unspecified constants; only T >= 2 and the eta range were checked"
                    .into(),
            );
            Ok(StepSizes { eta, alpha, notes })
        }
    }
}

fn resolve_alpha(spec: &ProblemSpec, config: &RunConfig) -> Result<f64> {
    match config.alpha {
        AlphaSetting::Fixed(a) => {
            if !(a > 0.0 && a.is_finite()) {
                return Err(Error::Config {
                    detail: format!("alpha must be positive and finite, got {a}"),
                });
            }
            Ok(a)
        }
        AlphaSetting::Named(AlphaPolicy::AutoTheorem) => Ok(auto_stepsizes(spec, config)?.alpha),
    }
}

/// Executes K rounds of the configured algorithm. Fully deterministic given
/// the config, including the stochastic variant (counter-keyed noise).
/// Non-finite hypergradients or iterates abort with round context.
pub fn run(spec: &ProblemSpec, config: &RunConfig) -> Result<RunRecord> {
    let started = Instant::now();
    let m = spec.num_domains();
    if config.theta0.len() != spec.dim() {
        return Err(Error::ShapeMismatch {
            expected: spec.dim(),
            got: config.theta0.len(),
        });
    }
    let (k_rounds, discarded_steps) = config.resolve_rounds()?;
    let approx = hypergrad::make_approximator(config.approximator, spec)?;
    let cap = eta_cap(spec, config.algorithm, &approx);
    if !(config.eta > 0.0 && config.eta < cap) {
        return Err(Error::StepSize {
            eta: config.eta,
            limit: cap,
        });
    }
    if config.sigma < 0.0 || (config.algorithm != Algorithm::Alg3Stochastic && config.sigma != 0.0)
    {
        return Err(Error::Config {
            detail: "sigma must be 0 except for the stochastic algorithm".into(),
        });
    }
    let noise_model = NoiseModel::new(config.sigma)?;
    let alpha = resolve_alpha(spec, config)?;
    let t_steps = config.horizon;

    let mut w = config.initial_weights(m)?;
    let mut theta = config.theta0.clone();

    // distance bound of the bounded-iterates lemma, fixed by round 0
    let theta_star0 = spec.weighted_minimizer(&w)?;
    let dist0 = numerics::norm2(&numerics::sub(&theta, &theta_star0));
    let b_span = (2.0 * spec.l_smooth / spec.mu + 1.0) * spec.d_span;
    let dist_bound = 2.0 * dist0.max(b_span);
    let in_regime = t_steps >= theorem_horizon_floor(config.eta, spec.mu);

    let mut rounds = Vec::with_capacity(k_rounds as usize);
    let mut weight_history = Vec::with_capacity(k_rounds as usize + 1);
    weight_history.push(w.as_slice().to_vec());
    let mut bound_violations = 0u64;

    for k in 0..k_rounds {
        let theta_star = spec.weighted_minimizer(&w)?;
        let dist = numerics::norm2(&numerics::sub(&theta, &theta_star));
        if in_regime && dist > dist_bound * (1.0 + 1e-9) {
            bound_violations += 1;
        }
        let f_value = spec.validation.value(&theta_star)?;
        let exact = hypergrad::exact_hypergrad(spec, &w)?;

        let (theta_next, estimate): (Vec<f64>, HypergradEstimate) = match config.algorithm {
            Algorithm::Alg1Exact => {
                hypergrad::unrolled_exact_hypergrad(spec, &w, &theta, config.eta, t_steps)?
            }
            Algorithm::Alg2Frozen => hypergrad::frozen_hessian_hypergrad(
                spec, &w, &theta, config.eta, t_steps, &approx, None,
            )?,
            Algorithm::Alg3Stochastic => {
                let ctx = NoiseContext {
                    model: &noise_model,
                    run_seed: config.seed,
                    round: k,
                };
                hypergrad::frozen_hessian_hypergrad(
                    spec,
                    &w,
                    &theta,
                    config.eta,
                    t_steps,
                    &approx,
                    Some(ctx),
                )?
            }
        };
        if !estimate.is_finite() || theta_next.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("round {k}: hypergradient or iterate diverged"),
            });
        }
        let err_inf = numerics::inf_norm(&numerics::sub(
            estimate.components(),
            exact.components(),
        ));
        rounds.push(RoundRow {
            k,
            weights: w.as_slice().to_vec(),
            theta0: theta.clone(),
            f_value,
            hypergrad: estimate.components().to_vec(),
            hypergrad_err_inf: err_inf,
        });
        w = simplex::md_update(&w, &estimate, alpha)?;
        theta = theta_next;
        weight_history.push(w.as_slice().to_vec());
    }

    let history: Vec<MixtureWeights> = weight_history[..k_rounds as usize]
        .iter()
        .map(|v| MixtureWeights::new(v.clone()))
        .collect::<Result<_>>()?;
    let w_avg = simplex::averaged_iterate(&history)?;
    let f_avg = spec.outer_value(&w_avg)?;
    let f_final = spec.outer_value(&w)?;

    Ok(RunRecord {
        config: config.clone(),
        rounds,
        weight_history,
        weights_final: w.as_slice().to_vec(),
        weights_avg: w_avg.as_slice().to_vec(),
        f_final,
        f_avg,
        discarded_steps,
        bound_violations,
        dist_bound,
        wall_ms: started.elapsed().as_millis() as u64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::{generate_problem, GeneratorParams, ProblemKind, ProblemSpec};
    use approx::assert_abs_diff_eq;

    fn scalar_example_problem(radius: f64) -> ProblemSpec {
        let params = GeneratorParams {
            operating_radius: radius,
            ..GeneratorParams::default()
        };
        generate_problem(ProblemKind::TwoDomainScalar, &params, 0).unwrap()
    }

    fn base_config(algorithm: Algorithm, t: usize, n: u64) -> RunConfig {
        RunConfig {
            algorithm,
            eta: 0.1,
            alpha: AlphaSetting::Fixed(0.5),
            horizon: t,
            budget: Some(n),
            rounds: None,
            theta0: vec![-100.0],
            w0: W0Setting::default(),
            approximator: ApproximatorMode::ExactAtOptimum,
            sigma: 0.0,
            seed: 0,
        }
    }

    #[test]
    fn budget_semantics() {
        let mut c = base_config(Algorithm::Alg1Exact, 3, 10);
        assert_eq!(c.resolve_rounds().unwrap(), (3, 1));
        c.budget = None;
        c.rounds = Some(7);
        assert_eq!(c.resolve_rounds().unwrap(), (7, 0));
        c.rounds = None;
        assert!(c.resolve_rounds().is_err());
        c.budget = Some(2);
        c.horizon = 5;
        assert!(c.resolve_rounds().is_err());
    }

    #[test]
    fn greedy_run_on_scalar_example_problem_loses_weight_and_respects_phi_bound() {
        // T = 1 from theta0 = -R with R = 100: the very first update already
        // pushes w below 1/2, and the analytic logit bound holds at the end
        let spec = scalar_example_problem(500.0);
        let r = 100.0;
        let (eta, alpha, n) = (0.1, 0.5, 1000u64);
        let mut config = base_config(Algorithm::Alg1Exact, 1, n);
        config.theta0 = vec![-r];
        let rec = run(&spec, &config).unwrap();
        assert!(rec.weight_history[1][0] < 0.5);
        let w_n = rec.weights_final[0];
        let phi_n = (w_n / (1.0 - w_n)).ln();
        let nf = n as f64;
        let bound =
            eta * alpha * (nf - (r + 1.0) * (1.0 - eta) * (1.0 - (1.0 - eta).powf(nf)) / eta);
        assert!(phi_n <= bound, "phi_N = {phi_n} > bound {bound}");
    }

    #[test]
    fn long_horizon_run_recovers_weight() {
        let spec = scalar_example_problem(500.0);
        let r = 100.0f64;
        let eta = 0.1f64;
        let c_exp = 1.0;
        let t = ((c_exp + 1.0) * (2.0 * r + 1.0).ln() / (1.0 / (1.0 - eta)).ln()).ceil() as usize;
        let n = 1000u64;
        let mut config = base_config(Algorithm::Alg1Exact, t, n);
        config.theta0 = vec![-r];
        let rec = run(&spec, &config).unwrap();
        let k = (n as usize / t) as f64;
        let beta = (1.0 - (2.0 * r + 1.0).powf(-c_exp))
            * (1.0 - (2.0 * r + 1.0).powf(-k * (c_exp + 1.0)));
        let lower = (beta * 0.5 / 2.0).exp() / (1.0 + (beta * 0.5 / 2.0).exp());
        assert!(
            rec.weights_final[0] >= lower,
            "w_K = {} below {lower}",
            rec.weights_final[0]
        );
    }

    #[test]
    fn alg2_exact_hessian_matches_alg1_for_shared_curvature() {
        // every domain of the scalar example has unit curvature, so the
        // frozen recursion coincides with exact unrolling
        let spec = scalar_example_problem(500.0);
        let mut c1 = base_config(Algorithm::Alg1Exact, 16, 320);
        c1.theta0 = vec![-40.0];
        let mut c2 = c1.clone();
        c2.algorithm = Algorithm::Alg2Frozen;
        let r1 = run(&spec, &c1).unwrap();
        let r2 = run(&spec, &c2).unwrap();
        for (a, b) in r1.weight_history.iter().zip(&r2.weight_history) {
            for (x, y) in a.iter().zip(b) {
                assert_abs_diff_eq!(x, y, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn record_shape_and_theta_carryover() {
        let spec = scalar_example_problem(500.0);
        let config = base_config(Algorithm::Alg2Frozen, 4, 64);
        let rec = run(&spec, &config).unwrap();
        assert_eq!(rec.weight_history.len(), 17);
        assert_eq!(rec.rounds.len(), 16);
        assert_eq!(rec.discarded_steps, 0);
        for row in &rec.rounds {
            assert!(row.f_value.is_finite());
        }
        // theta_{k+1,0} = theta_{k,T}: re-run one round from the recorded
        // start and compare with the next round's start
        let approx =
            hypergrad::make_approximator(ApproximatorMode::ExactAtOptimum, &spec).unwrap();
        let w1 = MixtureWeights::new(rec.rounds[1].weights.clone()).unwrap();
        let (theta_end, _) = hypergrad::frozen_hessian_hypergrad(
            &spec,
            &w1,
            &rec.rounds[1].theta0,
            config.eta,
            config.horizon,
            &approx,
            None,
        )
        .unwrap();
        assert_eq!(theta_end, rec.rounds[2].theta0);
    }

    #[test]
    fn weights_stay_on_simplex_and_positive() {
        let spec = scalar_example_problem(500.0);
        for alg in [Algorithm::Alg1Exact, Algorithm::Alg2Frozen, Algorithm::Alg3Stochastic] {
            let mut config = base_config(alg, 8, 256);
            config.sigma = if alg == Algorithm::Alg3Stochastic { 0.3 } else { 0.0 };
            let rec = run(&spec, &config).unwrap();
            for w in &rec.weight_history {
                let sum: f64 = w.iter().sum();
                assert!((sum - 1.0).abs() <= 1e-12);
                assert!(w.iter().all(|x| *x > 0.0));
            }
        }
    }

    #[test]
    fn deterministic_records_bitwise_equal() {
        let spec = scalar_example_problem(500.0);
        for alg in [Algorithm::Alg1Exact, Algorithm::Alg3Stochastic] {
            let mut config = base_config(alg, 8, 128);
            config.sigma = if alg == Algorithm::Alg3Stochastic { 0.5 } else { 0.0 };
            config.seed = 42;
            let r1 = run(&spec, &config).unwrap();
            let r2 = run(&spec, &config).unwrap();
            assert_eq!(
                r1.semantic_value().unwrap(),
                r2.semantic_value().unwrap()
            );
        }
    }

    #[test]
    fn iterate_bound_checked_in_regime() {
        let spec = scalar_example_problem(500.0);
        let mut config = base_config(Algorithm::Alg2Frozen, 16, 1024);
        config.theta0 = vec![-150.0];
        // T = 16 >= ceil(log 4 / 0.1) = 14
        assert!(config.horizon >= theorem_horizon_floor(config.eta, spec.mu));
        let rec = run(&spec, &config).unwrap();
        assert_eq!(rec.bound_violations, 0);
        let expected_bound = 2.0 * (150.5f64).max((2.0 + 1.0) * 1.0);
        assert_abs_diff_eq!(rec.dist_bound, expected_bound, epsilon = 1e-12);
    }

    fn tight_ball_problem() -> ProblemSpec {
        // small certified ball keeps G and G_V of order one, so the theorem
        // step size actually moves the weights
        let one = crate::numerics::SymMatrix::identity(1);
        let mk = |b: f64| crate::losses::QuadraticDomainLoss::new(one.clone(), vec![b], 0.0).unwrap();
        let spec = ProblemSpec {
            domains: vec![mk(0.0), mk(0.5)],
            validation: mk(0.0),
            mu: 1.0,
            l_smooth: 1.0,
            g_bound: 0.9,
            g_v: 0.4,
            l_v: 1.0,
            d_span: 0.5,
            operating_radius: 0.4,
            aligned_domain: Some(0),
        };
        spec.validate().unwrap();
        spec
    }

    #[test]
    fn suboptimality_trend_non_increasing_in_k() {
        // fixed T in the theorem regime: more rounds can only help, up to 5%
        // numerical slack
        let spec = tight_ball_problem();
        let mut prev = f64::INFINITY;
        for k in [8u64, 16, 32, 64] {
            let mut config = base_config(Algorithm::Alg2Frozen, 16, 0);
            config.budget = None;
            config.rounds = Some(k);
            config.theta0 = vec![0.2];
            config.alpha = AlphaSetting::Named(AlphaPolicy::AutoTheorem);
            let rec = run(&spec, &config).unwrap();
            let gap = rec.f_avg; // F* = 0: the aligned domain alone is optimal
            assert!(gap <= prev * 1.05, "gap {gap} vs previous {prev}");
            prev = gap;
        }
    }

    #[test]
    fn auto_stepsizes_formulas_and_gates() {
        // alpha = mu_hat * sqrt(log m) / (sqrt(K) G G_V) with everything 1
        let one = crate::numerics::SymMatrix::identity(1);
        let mk = |b: f64| crate::losses::QuadraticDomainLoss::new(one.clone(), vec![b], 0.0).unwrap();
        let spec = ProblemSpec {
            domains: vec![mk(0.0), mk(0.5)],
            validation: mk(0.0),
            mu: 1.0,
            l_smooth: 1.0,
            g_bound: 1.0,
            g_v: 1.0,
            l_v: 1.0,
            d_span: 0.5,
            operating_radius: 0.4,
            aligned_domain: None,
        };
        let mut config = base_config(Algorithm::Alg2Frozen, 40, 0);
        config.budget = None;
        config.rounds = Some(100);
        config.theta0 = vec![0.2];
        config.eta = 0.5;
        let s = auto_stepsizes(&spec, &config).unwrap();
        assert_abs_diff_eq!(s.alpha, 2f64.ln().sqrt() / 10.0, epsilon = 1e-15);

        // deterministic horizon gate: T < ceil(log4/(eta*mu)) is refused
        config.horizon = 2;
        assert!(matches!(
            auto_stepsizes(&spec, &config),
            Err(Error::RegimeViolation { .. })
        ));

        // stochastic schedule: eta = 4 log T / (mu T)
        let mut config = base_config(Algorithm::Alg3Stochastic, 100, 1000);
        config.sigma = 0.2;
        config.theta0 = vec![0.2];
        let spec2 = scalar_example_problem(500.0);
        let s = auto_stepsizes(&spec2, &config).unwrap();
        assert_abs_diff_eq!(s.eta, 4.0 * 100f64.ln() / 100.0, epsilon = 1e-15);
        assert!(!s.notes.is_empty());

        // T = 1 is outside the stochastic regime
        config.horizon = 1;
        assert!(matches!(
            auto_stepsizes(&spec2, &config),
            Err(Error::RegimeViolation { .. })
        ));
    }

    #[test]
    fn overflow_aborts_with_round_context() {
        // an astronomically far start overflows the sensitivity accumulator
        // within a few steps; the run must abort, not emit NaN records
        let spec = scalar_example_problem(500.0);
        let mut config = base_config(Algorithm::Alg2Frozen, 8, 64);
        config.theta0 = vec![1e308];
        match run(&spec, &config) {
            Err(Error::NonFinite { context }) => assert!(context.contains("round")),
            other => panic!("expected a numerical abort, got {other:?}"),
        }
    }

    #[test]
    fn rejects_inadmissible_eta_and_sigma() {
        let spec = scalar_example_problem(500.0);
        let mut config = base_config(Algorithm::Alg1Exact, 4, 64);
        config.eta = 1.5; // above 1/L = 1
        assert!(matches!(run(&spec, &config), Err(Error::StepSize { .. })));

        let mut config = base_config(Algorithm::Alg2Frozen, 4, 64);
        config.sigma = 0.5; // noise only belongs to the stochastic driver
        assert!(matches!(run(&spec, &config), Err(Error::Config { .. })));
    }

    #[test]
    fn config_json_round_trip_rejects_unknown_keys() {
        let config = base_config(Algorithm::Alg3Stochastic, 8, 256);
        let json = config.to_json().unwrap();
        let back = RunConfig::from_json(&json).unwrap();
        assert_eq!(config, back);
        let mut v: serde_json::Value = serde_json::from_str(&json).unwrap();
        v.as_object_mut().unwrap().insert("typo_field".into(), 1.into());
        assert!(RunConfig::from_json(&v.to_string()).is_err());

        // alpha accepts both a number and the named schedule
        let j = json.replace("\"alpha\": 0.5", "\"alpha\": \"auto-theorem\"");
        let parsed = RunConfig::from_json(&j).unwrap();
        assert_eq!(parsed.alpha, AlphaSetting::Named(AlphaPolicy::AutoTheorem));
    }
}
