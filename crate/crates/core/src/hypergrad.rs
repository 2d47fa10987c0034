//! Hypergradient estimators for the outer objective `F(w) = L_V(theta*(w))`:
//! the exact implicit-function oracle, exact unrolling of the inner gradient
//! descent, the frozen-approximate-Hessian recursion (deterministic and
//! stochastic), and a central finite-difference oracle.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{GradKey, GradTag, NoiseModel, ProblemSpec};
use crate::numerics::{self, SpectrumBounds, SymMatrix};
use crate::simplex::MixtureWeights;

/// Default step of the central-difference oracle.
pub const FD_STEP: f64 = 1e-5;

/// Which estimator produced a hypergradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HypergradMethod {
    ExactIft,
    UnrolledExact,
    FrozenHessian,
    FrozenHessianStochastic,
    FiniteDiff,
}

/// A hypergradient vector with one entry per domain plus provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypergradEstimate {
    g: Vec<f64>,
    method: HypergradMethod,
    /// Inner horizon used; 0 for the exact and finite-difference oracles.
    horizon: usize,
}

impl HypergradEstimate {
    pub fn new(g: Vec<f64>, method: HypergradMethod, horizon: usize) -> Self {
        Self { g, method, horizon }
    }

    pub fn components(&self) -> &[f64] {
        &self.g
    }

    pub fn method(&self) -> HypergradMethod {
        self.method
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn inf_norm(&self) -> f64 {
        numerics::inf_norm(&self.g)
    }

    pub fn is_finite(&self) -> bool {
        self.g.iter().all(|x| x.is_finite())
    }
}

/// Hessian approximator policy for the frozen recursion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode")]
pub enum ApproximatorMode {
    /// Exact weighted Hessian at the inner optimum.
    ExactAtOptimum,
    /// Exact weighted Hessian at the current iterate; identical to
    /// `ExactAtOptimum` for quadratics.
    ExactAtCurrent,
    /// `gamma * I` with a certified sup-norm deviation bound.
    IsotropicGamma { gamma: f64 },
}

/// A Hessian policy together with its certified spectrum and deviation
/// bound `delta = sup_w ||H(w) - H*(w)||_op` (conservative for the isotropic
/// mode; exactly zero for the exact modes on quadratics).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HessianApproximator {
    pub mode: ApproximatorMode,
    pub bounds: SpectrumBounds,
    pub delta: f64,
}

impl HessianApproximator {
    /// The matrix `H_k` used for round `k` at weights `w`.
    pub fn produce(&self, spec: &ProblemSpec, w: &MixtureWeights) -> Result<SymMatrix> {
        match self.mode {
            ApproximatorMode::ExactAtOptimum | ApproximatorMode::ExactAtCurrent => {
                spec.train_hessian(w)
            }
            ApproximatorMode::IsotropicGamma { gamma } => {
                Ok(SymMatrix::scaled_identity(spec.dim(), gamma))
            }
        }
    }
}

/// Builds an approximator for `spec`, certifying `(mu_hat, L_hat, delta)`.
pub fn make_approximator(mode: ApproximatorMode, spec: &ProblemSpec) -> Result<HessianApproximator> {
    match mode {
        ApproximatorMode::ExactAtOptimum | ApproximatorMode::ExactAtCurrent => Ok(HessianApproximator {
            mode,
            bounds: SpectrumBounds::new(spec.mu, spec.l_smooth)?,
            delta: 0.0,
        }),
        ApproximatorMode::IsotropicGamma { gamma } => {
            if !(gamma > 0.0 && gamma.is_finite()) {
                return Err(Error::BadGeneratorParams {
                    detail: format!("gamma must be positive, got {gamma}"),
                });
            }
            // sup over the weighted-curvature polytope, bounded by the
            // eigenvalue extremes
            let delta = (gamma - spec.mu).abs().max((gamma - spec.l_smooth).abs());
            Ok(HessianApproximator {
                mode,
                bounds: SpectrumBounds::new(gamma, gamma)?,
                delta,
            })
        }
    }
}

/// Exact hypergradient via the implicit function theorem:
/// `g_j = -<grad L_V(theta*), H*(w)^{-1} grad l_j(theta*)>`.
pub fn exact_hypergrad(spec: &ProblemSpec, w: &MixtureWeights) -> Result<HypergradEstimate> {
    let theta_star = spec.weighted_minimizer(w)?;
    let h_star = spec.train_hessian(w)?;
    let v = spec.validation.grad(&theta_star)?;
    // H* is symmetric, so one solve against the validation gradient serves
    // every domain component
    let hv = h_star.cholesky()?.solve(&v)?;
    let mut g = Vec::with_capacity(spec.num_domains());
    for dom in &spec.domains {
        let dg = dom.grad(&theta_star)?;
        g.push(-numerics::dot(&hv, &dg));
    }
    Ok(HypergradEstimate::new(g, HypergradMethod::ExactIft, 0))
}

/// Per-domain sensitivities `d theta_t / d w_j` propagated alongside the
/// inner trajectory, all starting from zero.
#[derive(Debug, Clone)]
pub struct SensitivityState {
    partials: Vec<Vec<f64>>,
}

impl SensitivityState {
    fn zeros(m: usize, d: usize) -> Self {
        Self {
            partials: vec![vec![0.0; d]; m],
        }
    }

    pub fn per_domain(&self) -> &[Vec<f64>] {
        &self.partials
    }
}

/// Runs `t_steps` of plain gradient descent on the weighted training loss
/// while propagating the exact per-step sensitivity recursion
/// `p_t = (I - eta * H) p_{t-1} - eta * grad l_j(theta_{t-1})`.
pub fn unrolled_exact_partials(
    spec: &ProblemSpec,
    w: &MixtureWeights,
    theta0: &[f64],
    eta: f64,
    t_steps: usize,
) -> Result<(Vec<f64>, SensitivityState)> {
    if theta0.len() != spec.dim() {
        return Err(Error::ShapeMismatch {
            expected: spec.dim(),
            got: theta0.len(),
        });
    }
    if !(eta > 0.0 && eta < 1.0 / spec.l_smooth) {
        return Err(Error::StepSize {
            eta,
            limit: 1.0 / spec.l_smooth,
        });
    }
    let m = spec.num_domains();
    let d = spec.dim();
    let mut theta = theta0.to_vec();
    let mut state = SensitivityState::zeros(m, d);
    // the exact per-step Hessian of the weighted quadratic loss does not
    // depend on the iterate, so one assembly serves every step
    let h = spec.train_hessian(w)?;
    for _ in 0..t_steps {
        let mut step = vec![0.0; d];
        for (j, dom) in spec.domains.iter().enumerate() {
            let gj = dom.grad(&theta)?;
            let hp = h.apply(&state.partials[j])?;
            for i in 0..d {
                state.partials[j][i] -= eta * (hp[i] + gj[i]);
                step[i] += w.get(j) * gj[i];
            }
        }
        for i in 0..d {
            theta[i] -= eta * step[i];
        }
    }
    Ok((theta, state))
}

/// Chain-rule hypergradient of the truncated inner map:
/// `g_j = <grad L_V(theta_T), d theta_T / d w_j>`.
pub fn unrolled_exact_hypergrad(
    spec: &ProblemSpec,
    w: &MixtureWeights,
    theta0: &[f64],
    eta: f64,
    t_steps: usize,
) -> Result<(Vec<f64>, HypergradEstimate)> {
    let (theta_t, state) = unrolled_exact_partials(spec, w, theta0, eta, t_steps)?;
    let v = spec.validation.grad(&theta_t)?;
    let g: Vec<f64> = state
        .per_domain()
        .iter()
        .map(|p| numerics::dot(&v, p))
        .collect();
    Ok((
        theta_t,
        HypergradEstimate::new(g, HypergradMethod::UnrolledExact, t_steps),
    ))
}

/// Noise wiring for the stochastic variant: the run seed and round index
/// fix every gradient draw inside the loop.
#[derive(Debug, Clone, Copy)]
pub struct NoiseContext<'a> {
    pub model: &'a NoiseModel,
    pub run_seed: u64,
    pub round: u64,
}

/// The frozen-Hessian joint loop: `t_steps` inner updates carrying one
/// accumulator `u_j` per domain against a single `H_k`, then
/// `g_j = -eta * <grad L_V(theta_T), u_j>`. With a noise context the
/// parameter updates, the accumulators, and the final validation gradient
/// all use stochastic draws keyed by `(run_seed, round, step, tag)`.
pub fn frozen_hessian_hypergrad(
    spec: &ProblemSpec,
    w: &MixtureWeights,
    theta0: &[f64],
    eta: f64,
    t_steps: usize,
    approx: &HessianApproximator,
    noise: Option<NoiseContext<'_>>,
) -> Result<(Vec<f64>, HypergradEstimate)> {
    if theta0.len() != spec.dim() {
        return Err(Error::ShapeMismatch {
            expected: spec.dim(),
            got: theta0.len(),
        });
    }
    if t_steps == 0 {
        return Err(Error::BadGeneratorParams {
            detail: "frozen-Hessian estimator requires a horizon of at least 1".into(),
        });
    }
    let eta_cap = (1.0 / approx.bounds.upper).min(spec.mu / (spec.l_smooth * spec.l_smooth));
    if !(eta > 0.0 && eta < eta_cap) {
        return Err(Error::StepSize { eta, limit: eta_cap });
    }
    if !(approx.bounds.lower > 0.0 && approx.delta >= 0.0) {
        return Err(Error::BadGeneratorParams {
            detail: "approximator must certify positive spectrum bounds and delta >= 0".into(),
        });
    }
    let m = spec.num_domains();
    let d = spec.dim();
    let h_k = approx.produce(spec, w)?;
    let mut theta = theta0.to_vec();
    let mut u = vec![vec![0.0; d]; m];
    let stochastic = noise.map(|n| n.model.sigma > 0.0).unwrap_or(false);
    for t in 0..t_steps {
        let mut step = vec![0.0; d];
        for (j, dom) in spec.domains.iter().enumerate() {
            let mut gj = dom.grad(&theta)?;
            if let Some(ctx) = noise {
                let key = GradKey {
                    run_seed: ctx.run_seed,
                    round: ctx.round,
                    step: t as u64,
                    tag: GradTag::Domain(j as u32),
                };
                for (gi, ni) in gj.iter_mut().zip(ctx.model.sample(d, key)) {
                    *gi += ni;
                }
            }
            let hu = h_k.apply(&u[j])?;
            for i in 0..d {
                u[j][i] += gj[i] - eta * hu[i];
                step[i] += w.get(j) * gj[i];
            }
        }
        for i in 0..d {
            theta[i] -= eta * step[i];
        }
    }
    let mut v = spec.validation.grad(&theta)?;
    if let Some(ctx) = noise {
        let key = GradKey {
            run_seed: ctx.run_seed,
            round: ctx.round,
            step: t_steps as u64,
            tag: GradTag::Validation,
        };
        for (vi, ni) in v.iter_mut().zip(ctx.model.sample(d, key)) {
            *vi += ni;
        }
    }
    let g: Vec<f64> = u.iter().map(|uj| -eta * numerics::dot(&v, uj)).collect();
    let method = if stochastic {
        HypergradMethod::FrozenHessianStochastic
    } else {
        HypergradMethod::FrozenHessian
    };
    Ok((theta, HypergradEstimate::new(g, method, t_steps)))
}

/// Central finite differences of `F(w) = L_V(theta*(w))` along free
/// coordinate perturbations; `w` must sit inside the simplex with margin
/// greater than `h`.
pub fn finite_diff_hypergrad(
    spec: &ProblemSpec,
    w: &MixtureWeights,
    h: f64,
) -> Result<HypergradEstimate> {
    if w.len() != spec.num_domains() {
        return Err(Error::ShapeMismatch {
            expected: spec.num_domains(),
            got: w.len(),
        });
    }
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::BadGeneratorParams {
            detail: format!("finite-difference step must be positive, got {h}"),
        });
    }
    let margin = w.min_entry();
    if margin <= h {
        return Err(Error::BoundaryMargin {
            needed: h,
            have: margin,
        });
    }
    let mut g = Vec::with_capacity(w.len());
    let base = w.as_slice();
    for j in 0..w.len() {
        let mut plus = base.to_vec();
        let mut minus = base.to_vec();
        plus[j] += h;
        minus[j] -= h;
        let fp = spec.outer_value_raw(&plus)?;
        let fm = spec.outer_value_raw(&minus)?;
        g.push((fp - fm) / (2.0 * h));
    }
    Ok(HypergradEstimate::new(g, HypergradMethod::FiniteDiff, 0))
}

/// Elementwise agreement tolerance used by the gradient-check audits:
/// absolute-plus-relative with floor `max(tol, 10 h^2)`.
pub fn grad_tolerance(h: f64, rel_tol: f64) -> f64 {
    rel_tol.max(10.0 * h * h)
}

/// Max elementwise deviation of `a` from `b`, scaled absolute-plus-relative.
pub fn max_rel_deviation(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1.0))
        .fold(0.0, f64::max)
}
