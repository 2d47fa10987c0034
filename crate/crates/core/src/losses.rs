//! Quadratic domain and validation losses, problem generators, and the
//! counter-keyed stochastic-gradient wrapper.
//!
//! Every loss has the form `l(theta) = (theta - b)' A (theta - b) / 2 + c`
//! with SPD curvature `A`, so minimizers, gradients, Hessians, and the
//! weighted inner optimum all admit closed forms that the estimator tests
//! use as oracles.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{self, SymMatrix};
use crate::simplex::MixtureWeights;

/// One training domain: a positive-definite quadratic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadraticDomainLoss {
    /// Curvature matrix.
    pub a: SymMatrix,
    /// Minimizer location.
    pub b: Vec<f64>,
    /// Offset; the loss never goes below it.
    pub c: f64,
}

impl QuadraticDomainLoss {
    pub fn new(a: SymMatrix, b: Vec<f64>, c: f64) -> Result<Self> {
        if a.dim() != b.len() {
            return Err(Error::ShapeMismatch {
                expected: a.dim(),
                got: b.len(),
            });
        }
        Ok(Self { a, b, c })
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    /// `l(theta) = (theta - b)' A (theta - b) / 2 + c`
    pub fn value(&self, theta: &[f64]) -> Result<f64> {
        let d = self.diff(theta)?;
        let ad = self.a.apply(&d)?;
        Ok(0.5 * numerics::dot(&d, &ad) + self.c)
    }

    /// `grad l(theta) = A (theta - b)`
    pub fn grad(&self, theta: &[f64]) -> Result<Vec<f64>> {
        let d = self.diff(theta)?;
        self.a.apply(&d)
    }

    /// The Hessian is the curvature matrix itself.
    pub fn hessian(&self) -> &SymMatrix {
        &self.a
    }

    fn diff(&self, theta: &[f64]) -> Result<Vec<f64>> {
        if theta.len() != self.b.len() {
            return Err(Error::ShapeMismatch {
                expected: self.b.len(),
                got: theta.len(),
            });
        }
        Ok(numerics::sub(theta, &self.b))
    }
}

/// A full problem instance: `m >= 2` training domains, one validation loss,
/// and the certified constants of the convergence analysis. Lipschitz
/// constants are certified on the ball of radius `operating_radius` centered
/// at the first domain's minimizer (quadratics are not globally Lipschitz).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub domains: Vec<QuadraticDomainLoss>,
    pub validation: QuadraticDomainLoss,
    /// Strong-convexity modulus: lower bound on every domain eigenvalue.
    pub mu: f64,
    /// Smoothness: upper bound on every domain eigenvalue.
    pub l_smooth: f64,
    /// Gradient bound for domain losses over the operating ball.
    pub g_bound: f64,
    /// Gradient bound for the validation loss over the operating ball.
    pub g_v: f64,
    /// Smoothness of the validation loss.
    pub l_v: f64,
    /// Max pairwise distance between domain minimizers.
    pub d_span: f64,
    /// Radius of the ball (centered at the first domain minimizer) on which
    /// `g_bound` and `g_v` are certified.
    pub operating_radius: f64,
    /// Index of the domain whose minimizer coincides with the validation
    /// minimizer, when the generator established one.
    pub aligned_domain: Option<usize>,
}

impl ProblemSpec {
    pub fn dim(&self) -> usize {
        self.validation.dim()
    }

    pub fn num_domains(&self) -> usize {
        self.domains.len()
    }

    /// Center of the operating ball.
    pub fn operating_center(&self) -> &[f64] {
        &self.domains[0].b
    }

    /// Checks the declared constants against the actual quadratic data.
    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if d == 0 || d > numerics::MAX_DIM {
            return Err(Error::BadGeneratorParams {
                detail: format!("dimension {d} outside 1..={}", numerics::MAX_DIM),
            });
        }
        if self.domains.len() < 2 {
            return Err(Error::BadGeneratorParams {
                detail: "need at least 2 domains".into(),
            });
        }
        for dom in self.domains.iter().chain(std::iter::once(&self.validation)) {
            if dom.dim() != d || dom.a.dim() != dom.b.len() {
                return Err(Error::ShapeMismatch {
                    expected: d,
                    got: dom.a.dim().max(dom.b.len()),
                });
            }
            if dom.b.iter().any(|x| !x.is_finite()) || !dom.c.is_finite() {
                return Err(Error::NonFinite {
                    context: "loss parameters".into(),
                });
            }
        }
        for constant in [
            self.mu,
            self.l_smooth,
            self.g_bound,
            self.g_v,
            self.l_v,
            self.d_span,
            self.operating_radius,
        ] {
            if !constant.is_finite() {
                return Err(Error::NonFinite {
                    context: "problem constants".into(),
                });
            }
        }
        if !(self.mu > 0.0 && self.l_smooth >= self.mu) {
            return Err(Error::BadGeneratorParams {
                detail: format!("need 0 < mu <= L, got mu={} L={}", self.mu, self.l_smooth),
            });
        }
        let slack = 1e-9 * self.l_smooth.max(1.0);
        for (j, dom) in self.domains.iter().enumerate() {
            let eigs = numerics::sym_eigenvalues(&dom.a);
            let lo = eigs[0];
            let hi = eigs[eigs.len() - 1];
            if lo < self.mu - slack || hi > self.l_smooth + slack {
                return Err(Error::BadGeneratorParams {
                    detail: format!(
                        "domain {j} spectrum [{lo}, {hi}] outside declared [{}, {}]",
                        self.mu, self.l_smooth
                    ),
                });
            }
        }
        let veigs = numerics::sym_eigenvalues(&self.validation.a);
        if veigs[veigs.len() - 1] > self.l_v + slack {
            return Err(Error::BadGeneratorParams {
                detail: format!(
                    "validation smoothness {} exceeds declared L_V = {}",
                    veigs[veigs.len() - 1],
                    self.l_v
                ),
            });
        }
        let d_actual = self.max_pairwise_minimizer_distance();
        if (d_actual - self.d_span).abs() > 1e-9 * d_actual.max(1.0) {
            return Err(Error::BadGeneratorParams {
                detail: format!("declared D = {} but actual = {}", self.d_span, d_actual),
            });
        }
        if self.operating_radius <= 0.0 {
            return Err(Error::BadGeneratorParams {
                detail: "operating radius must be positive".into(),
            });
        }
        if self.g_bound + 1e-12 < self.l_smooth * (self.operating_radius + self.d_span) {
            return Err(Error::BadGeneratorParams {
                detail: format!(
                    "G = {} is below L*(radius + D) = {}",
                    self.g_bound,
                    self.l_smooth * (self.operating_radius + self.d_span)
                ),
            });
        }
        let v_off = numerics::norm2(&numerics::sub(&self.validation.b, self.operating_center()));
        if self.g_v + 1e-12 < self.l_v * (self.operating_radius + v_off) {
            return Err(Error::BadGeneratorParams {
                detail: format!(
                    "G_V = {} is below L_V*(radius + |b_V - center|) = {}",
                    self.g_v,
                    self.l_v * (self.operating_radius + v_off)
                ),
            });
        }
        if let Some(idx) = self.aligned_domain {
            if idx >= self.domains.len() {
                return Err(Error::BadGeneratorParams {
                    detail: format!("aligned domain index {idx} out of range"),
                });
            }
        }
        Ok(())
    }

    pub fn max_pairwise_minimizer_distance(&self) -> f64 {
        let mut d_max = 0.0f64;
        for i in 0..self.domains.len() {
            for j in (i + 1)..self.domains.len() {
                d_max = d_max
                    .max(numerics::norm2(&numerics::sub(&self.domains[i].b, &self.domains[j].b)));
            }
        }
        d_max
    }

    fn check_weights(&self, w: &MixtureWeights) -> Result<()> {
        if w.len() != self.domains.len() {
            return Err(Error::ShapeMismatch {
                expected: self.domains.len(),
                got: w.len(),
            });
        }
        if (w.sum() - 1.0).abs() > 1e-9 || w.min_entry() <= 0.0 {
            return Err(Error::InvalidWeights {
                detail: format!("weights must stay on the simplex, sum = {}", w.sum()),
            });
        }
        Ok(())
    }

    /// `grad_theta L_T(theta, w) = sum_j w_j grad l_j(theta)`
    pub fn train_grad(&self, w: &MixtureWeights, theta: &[f64]) -> Result<Vec<f64>> {
        self.check_weights(w)?;
        self.train_grad_raw(w.as_slice(), theta)
    }

    fn train_grad_raw(&self, w: &[f64], theta: &[f64]) -> Result<Vec<f64>> {
        let mut acc = vec![0.0; self.dim()];
        for (wj, dom) in w.iter().zip(&self.domains) {
            let g = dom.grad(theta)?;
            for (a, gi) in acc.iter_mut().zip(&g) {
                *a += wj * gi;
            }
        }
        Ok(acc)
    }

    /// Hessian of the weighted training loss, `sum_j w_j A_j`; constant in
    /// `theta` for quadratics.
    pub fn train_hessian(&self, w: &MixtureWeights) -> Result<SymMatrix> {
        self.check_weights(w)?;
        self.train_hessian_raw(w.as_slice())
    }

    pub(crate) fn train_hessian_raw(&self, w: &[f64]) -> Result<SymMatrix> {
        let mut acc = SymMatrix::zeros(self.dim());
        for (wj, dom) in w.iter().zip(&self.domains) {
            acc.add_scaled(&dom.a, *wj)?;
        }
        Ok(acc)
    }

    /// Closed-form inner optimum `theta*(w) = (sum w_j A_j)^{-1} sum w_j A_j b_j`.
    pub fn weighted_minimizer(&self, w: &MixtureWeights) -> Result<Vec<f64>> {
        self.check_weights(w)?;
        self.weighted_minimizer_raw(w.as_slice())
    }

    /// Same closed form evaluated on a raw coordinate vector; used by the
    /// finite-difference oracle where individual weights vary freely off the
    /// simplex.
    pub(crate) fn weighted_minimizer_raw(&self, w: &[f64]) -> Result<Vec<f64>> {
        let h = self.train_hessian_raw(w)?;
        let mut rhs = vec![0.0; self.dim()];
        for (wj, dom) in w.iter().zip(&self.domains) {
            let ab = dom.a.apply(&dom.b)?;
            for (r, x) in rhs.iter_mut().zip(&ab) {
                *r += wj * x;
            }
        }
        numerics::spd_solve(&h, &rhs)
    }

    /// Outer objective `F(w) = L_V(theta*(w))`.
    pub fn outer_value(&self, w: &MixtureWeights) -> Result<f64> {
        let theta = self.weighted_minimizer(w)?;
        self.validation.value(&theta)
    }

    pub(crate) fn outer_value_raw(&self, w: &[f64]) -> Result<f64> {
        let theta = self.weighted_minimizer_raw(w)?;
        self.validation.value(&theta)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let spec: ProblemSpec = serde_json::from_str(s)?;
        spec.validate()?;
        Ok(spec)
    }
}

/// Whose gradient a stochastic draw perturbs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GradTag {
    Domain(u32),
    Validation,
}

/// Deterministic derivation key: identical keys produce identical noise, so
/// runs are bit-reproducible regardless of execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GradKey {
    pub run_seed: u64,
    pub round: u64,
    pub step: u64,
    pub tag: GradTag,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

impl GradKey {
    fn rng(&self) -> ChaCha8Rng {
        let tag_word = match self.tag {
            GradTag::Domain(j) => 2 + j as u64,
            GradTag::Validation => 1,
        };
        let mut state = self.run_seed ^ 0x6d69786c61620a01;
        let mut absorb = |x: u64| {
            state ^= x.wrapping_mul(0x2545f4914f6cdd1d);
            splitmix64(&mut state)
        };
        absorb(self.round);
        absorb(self.step);
        absorb(tag_word);
        let mut seed = [0u8; 32];
        for chunk in seed.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        ChaCha8Rng::from_seed(seed)
    }
}

/// Additive isotropic Gaussian noise with total variance at most `sigma^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseModel {
    pub sigma: f64,
    #[serde(default)]
    pub distribution: NoiseDistribution,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseDistribution {
    #[default]
    GaussianIsotropic,
}

impl NoiseModel {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::BadGeneratorParams {
                detail: format!("sigma must be non-negative, got {sigma}"),
            });
        }
        Ok(Self {
            sigma,
            distribution: NoiseDistribution::GaussianIsotropic,
        })
    }

    /// Draws the noise vector for `key`; zero sigma yields exactly zero.
    pub fn sample(&self, dim: usize, key: GradKey) -> Vec<f64> {
        if self.sigma == 0.0 {
            return vec![0.0; dim];
        }
        let per_coord = self.sigma / (dim as f64).sqrt();
        let mut rng = key.rng();
        (0..dim)
            .map(|_| per_coord * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
            .collect()
    }
}

/// `grad l(theta) + noise(key)`: unbiased with `E||noise||^2 <= sigma^2`.
pub fn stochastic_grad(
    loss: &QuadraticDomainLoss,
    theta: &[f64],
    noise: &NoiseModel,
    key: GradKey,
) -> Result<Vec<f64>> {
    let mut g = loss.grad(theta)?;
    if noise.sigma > 0.0 {
        for (gi, ni) in g.iter_mut().zip(noise.sample(theta.len(), key)) {
            *gi += ni;
        }
    }
    Ok(g)
}

/// Which problem family to generate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemKind {
    /// The two-domain scalar example: `l1 = theta^2/2`, `l2 = (theta-1)^2/2`,
    /// validation identical to the first domain.
    #[serde(rename = "two-domain-scalar")]
    TwoDomainScalar,
    /// Random SPD curvatures with spectra in `[mu, L]` and random minimizers.
    RandomStronglyConvex,
    /// As random, but the validation minimizer coincides with domain 0's.
    AlignedDomain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorParams {
    pub m: usize,
    pub d: usize,
    pub mu: f64,
    pub l_smooth: f64,
    /// Scale of the box from which minimizers are drawn.
    pub spread: f64,
    pub operating_radius: f64,
}

impl Default for GeneratorParams {
    fn default() -> Self {
        Self {
            m: 3,
            d: 2,
            mu: 0.5,
            l_smooth: 2.0,
            spread: 2.0,
            operating_radius: 50.0,
        }
    }
}

pub fn generate_problem(kind: ProblemKind, params: &GeneratorParams, seed: u64) -> Result<ProblemSpec> {
    if params.m < 2
        || params.d == 0
        || params.d > numerics::MAX_DIM
        || !(params.mu > 0.0 && params.l_smooth >= params.mu)
    {
        return Err(Error::BadGeneratorParams {
            detail: format!(
                "need m >= 2, 1 <= d <= {}, 0 < mu <= L; got m={} d={} mu={} L={}",
                numerics::MAX_DIM,
                params.m,
                params.d,
                params.mu,
                params.l_smooth
            ),
        });
    }
    if !(params.spread >= 0.0 && params.operating_radius > 0.0) {
        return Err(Error::BadGeneratorParams {
            detail: "spread must be >= 0 and operating_radius > 0".into(),
        });
    }
    let spec = match kind {
        ProblemKind::TwoDomainScalar => {
            let one = SymMatrix::scaled_identity(1, 1.0);
            let radius = params.operating_radius;
            ProblemSpec {
                domains: vec![
                    QuadraticDomainLoss::new(one.clone(), vec![0.0], 0.0)?,
                    QuadraticDomainLoss::new(one.clone(), vec![1.0], 0.0)?,
                ],
                validation: QuadraticDomainLoss::new(one, vec![0.0], 0.0)?,
                mu: 1.0,
                l_smooth: 1.0,
                g_bound: radius + 1.0,
                g_v: radius,
                l_v: 1.0,
                d_span: 1.0,
                operating_radius: radius,
                aligned_domain: Some(0),
            }
        }
        ProblemKind::RandomStronglyConvex | ProblemKind::AlignedDomain => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let draw_curvature = |rng: &mut ChaCha8Rng| {
                // endpoints pinned so the declared [mu, L] is tight
                let eigs: Vec<f64> = (0..params.d)
                    .map(|i| {
                        if i == 0 || params.l_smooth == params.mu {
                            params.mu
                        } else if i == params.d - 1 {
                            params.l_smooth
                        } else {
                            rng.random_range(params.mu..=params.l_smooth)
                        }
                    })
                    .collect();
                SymMatrix::from_spectrum(&eigs, rng)
            };
            let draw_point = |rng: &mut ChaCha8Rng| -> Vec<f64> {
                (0..params.d)
                    .map(|_| rng.random_range(-params.spread..=params.spread))
                    .collect()
            };
            let mut domains = Vec::with_capacity(params.m);
            for _ in 0..params.m {
                let a = draw_curvature(&mut rng);
                let b = draw_point(&mut rng);
                domains.push(QuadraticDomainLoss::new(a, b, 0.0)?);
            }
            let va = draw_curvature(&mut rng);
            let vb = match kind {
                ProblemKind::AlignedDomain => domains[0].b.clone(),
                _ => draw_point(&mut rng),
            };
            let validation = QuadraticDomainLoss::new(va, vb, 0.0)?;
            let d_span = {
                let mut d_max = 0.0f64;
                for i in 0..domains.len() {
                    for j in (i + 1)..domains.len() {
                        d_max = d_max
                            .max(numerics::norm2(&numerics::sub(&domains[i].b, &domains[j].b)));
                    }
                }
                d_max
            };
            let v_off = numerics::norm2(&numerics::sub(&validation.b, &domains[0].b));
            let radius = params.operating_radius;
            ProblemSpec {
                domains,
                validation,
                mu: params.mu,
                l_smooth: params.l_smooth,
                g_bound: params.l_smooth * (radius + d_span),
                g_v: params.l_smooth * (radius + v_off),
                l_v: params.l_smooth,
                d_span,
                operating_radius: radius,
                aligned_domain: match kind {
                    ProblemKind::AlignedDomain => Some(0),
                    _ => None,
                },
            }
        }
    };
    spec.validate()?;
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    pub(crate) fn scalar_example_problem() -> ProblemSpec {
        let params = GeneratorParams {
            operating_radius: 500.0,
            ..GeneratorParams::default()
        };
        generate_problem(ProblemKind::TwoDomainScalar, &params, 0).unwrap()
    }

    #[test]
    fn loss_value_cases() {
        let l = QuadraticDomainLoss::new(SymMatrix::identity(1), vec![0.0], 0.0).unwrap();
        assert_abs_diff_eq!(l.value(&[0.0]).unwrap(), 0.0);

        // second training domain of the scalar example at theta = 0
        let l2 = QuadraticDomainLoss::new(SymMatrix::identity(1), vec![1.0], 0.0).unwrap();
        assert_abs_diff_eq!(l2.value(&[0.0]).unwrap(), 0.5);

        let l3 =
            QuadraticDomainLoss::new(SymMatrix::scaled_identity(2, 2.0), vec![1.0, 1.0], 0.0)
                .unwrap();
        assert_abs_diff_eq!(l3.value(&[0.0, 0.0]).unwrap(), 2.0);

        assert!(l3.value(&[0.0]).is_err());
    }

    #[test]
    fn grad_and_hessian_cases() {
        let l = QuadraticDomainLoss::new(SymMatrix::identity(2), vec![0.5, -1.0], 3.0).unwrap();
        let g = l.grad(&[0.5, -1.0]).unwrap();
        assert_eq!(g, vec![0.0, 0.0]);

        // first domain of the scalar example at theta = -R
        let l1 = QuadraticDomainLoss::new(SymMatrix::identity(1), vec![0.0], 0.0).unwrap();
        let r = 7.5;
        assert_abs_diff_eq!(l1.grad(&[-r]).unwrap()[0], -r);

        let a = SymMatrix::from_rows(2, vec![2.0, 1.0, 1.0, 2.0]).unwrap();
        let l2 = QuadraticDomainLoss::new(a.clone(), vec![0.0, 0.0], 0.0).unwrap();
        assert_eq!(l2.grad(&[1.0, 1.0]).unwrap(), vec![3.0, 3.0]);
        assert_eq!(l2.hessian(), &a);
    }

    #[test]
    fn weighted_grad_cases() {
        let spec = scalar_example_problem();
        let w = MixtureWeights::uniform(2).unwrap();
        // 0.5 * 0 + 0.5 * (0 - 1) = -0.5 at theta = 0
        assert_abs_diff_eq!(spec.train_grad(&w, &[0.0]).unwrap()[0], -0.5);

        // vertex selection
        let e2 = MixtureWeights::new(vec![1e-12, 1.0 - 1e-12]).unwrap();
        assert_abs_diff_eq!(spec.train_grad(&e2, &[0.0]).unwrap()[0], -1.0, epsilon = 1e-9);

        // identical domains collapse to the single-domain gradient
        let one = SymMatrix::scaled_identity(1, 2.0);
        let dup = ProblemSpec {
            domains: vec![
                QuadraticDomainLoss::new(one.clone(), vec![0.5], 0.0).unwrap(),
                QuadraticDomainLoss::new(one.clone(), vec![0.5], 0.0).unwrap(),
                QuadraticDomainLoss::new(one.clone(), vec![0.5], 0.0).unwrap(),
            ],
            validation: QuadraticDomainLoss::new(one, vec![0.5], 0.0).unwrap(),
            mu: 2.0,
            l_smooth: 2.0,
            g_bound: 2.0 * 10.0,
            g_v: 2.0 * 10.0,
            l_v: 2.0,
            d_span: 0.0,
            operating_radius: 10.0,
            aligned_domain: None,
        };
        dup.validate().unwrap();
        let w = MixtureWeights::new(vec![0.2, 0.3, 0.5]).unwrap();
        let g = dup.train_grad(&w, &[2.0]).unwrap();
        assert_abs_diff_eq!(g[0], dup.domains[0].grad(&[2.0]).unwrap()[0], epsilon = 1e-12);
    }

    #[test]
    fn weighted_minimizer_cases() {
        let spec = scalar_example_problem();
        // w = (1, 0) -> theta* = 0, approached through the raw path
        assert_abs_diff_eq!(spec.weighted_minimizer_raw(&[1.0, 0.0]).unwrap()[0], 0.0);
        // theta*(w) = 1 - w for the scalar example
        for w1 in [0.25, 0.5, 0.9] {
            let w = MixtureWeights::new(vec![w1, 1.0 - w1]).unwrap();
            let t = spec.weighted_minimizer(&w).unwrap();
            assert_abs_diff_eq!(t[0], 1.0 - w1, epsilon = 1e-12);
            // stationarity of the weighted training loss
            let g = spec.train_grad(&w, &t).unwrap();
            assert!(g[0].abs() <= 1e-10);
        }
    }

    #[test]
    fn shared_minimizer_for_every_weighting() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = vec![0.7, -0.3, 1.1];
        let domains: Vec<_> = (0..3)
            .map(|_| {
                let a = SymMatrix::from_spectrum(&[0.5, 1.0, 2.0], &mut rng);
                QuadraticDomainLoss::new(a, b.clone(), 0.0).unwrap()
            })
            .collect();
        let spec = ProblemSpec {
            validation: domains[0].clone(),
            domains,
            mu: 0.5,
            l_smooth: 2.0,
            g_bound: 2.0 * 10.0,
            g_v: 2.0 * 10.0,
            l_v: 2.0,
            d_span: 0.0,
            operating_radius: 10.0,
            aligned_domain: None,
        };
        for wv in [vec![0.1, 0.1, 0.8], vec![0.4, 0.3, 0.3]] {
            let w = MixtureWeights::new(wv).unwrap();
            let t = spec.weighted_minimizer(&w).unwrap();
            for (ti, bi) in t.iter().zip(&b) {
                assert_abs_diff_eq!(ti, bi, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn generator_quad_1d_matches_example() {
        let spec = scalar_example_problem();
        assert_eq!(spec.num_domains(), 2);
        assert_eq!(spec.dim(), 1);
        assert_abs_diff_eq!(spec.domains[0].value(&[2.0]).unwrap(), 2.0);
        assert_abs_diff_eq!(spec.domains[1].value(&[0.0]).unwrap(), 0.5);
        assert_abs_diff_eq!(spec.validation.value(&[2.0]).unwrap(), 2.0);
        assert_eq!(spec.aligned_domain, Some(0));
    }

    #[test]
    fn generator_isotropic_when_mu_equals_l() {
        let params = GeneratorParams {
            m: 3,
            d: 4,
            mu: 1.5,
            l_smooth: 1.5,
            ..GeneratorParams::default()
        };
        let spec = generate_problem(ProblemKind::RandomStronglyConvex, &params, 11).unwrap();
        for dom in &spec.domains {
            for i in 0..4 {
                for j in 0..4 {
                    let want = if i == j { 1.5 } else { 0.0 };
                    assert_abs_diff_eq!(dom.a.get(i, j), want, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn generator_aligned_domain_audit() {
        let spec =
            generate_problem(ProblemKind::AlignedDomain, &GeneratorParams::default(), 5).unwrap();
        let diff = numerics::sub(&spec.validation.b, &spec.domains[0].b);
        assert_eq!(numerics::norm2(&diff), 0.0);
        assert_eq!(spec.aligned_domain, Some(0));
    }

    #[test]
    fn generator_rejects_bad_params() {
        let bad = GeneratorParams {
            m: 1,
            ..GeneratorParams::default()
        };
        assert!(matches!(
            generate_problem(ProblemKind::RandomStronglyConvex, &bad, 0),
            Err(Error::BadGeneratorParams { .. })
        ));
        let bad = GeneratorParams {
            mu: 2.0,
            l_smooth: 1.0,
            ..GeneratorParams::default()
        };
        assert!(generate_problem(ProblemKind::RandomStronglyConvex, &bad, 0).is_err());
    }

    #[test]
    fn problem_json_round_trip_and_unknown_key_rejection() {
        let spec = generate_problem(ProblemKind::AlignedDomain, &GeneratorParams::default(), 9)
            .unwrap();
        let json = spec.to_json().unwrap();
        let back = ProblemSpec::from_json(&json).unwrap();
        assert_eq!(spec, back);

        let mut v: serde_json::Value = serde_json::from_str(&json).unwrap();
        v.as_object_mut()
            .unwrap()
            .insert("surprise".into(), serde_json::json!(1));
        assert!(ProblemSpec::from_json(&v.to_string()).is_err());
    }

    #[test]
    fn malformed_matrix_json_is_an_error_not_a_panic() {
        let spec = generate_problem(ProblemKind::AlignedDomain, &GeneratorParams::default(), 9)
            .unwrap();
        let json = spec.to_json().unwrap();

        // dim/data mismatch
        let mut v: serde_json::Value = serde_json::from_str(&json).unwrap();
        v["domains"][0]["a"]["dim"] = serde_json::json!(3);
        assert!(ProblemSpec::from_json(&v.to_string()).is_err());

        // curvature/minimizer dimension mismatch
        let mut v: serde_json::Value = serde_json::from_str(&json).unwrap();
        v["validation"]["b"] = serde_json::json!([0.0]);
        assert!(ProblemSpec::from_json(&v.to_string()).is_err());

        // non-finite values cannot come in through JSON, but inline specs
        // could carry them; validate refuses both positions
        let mut bad = spec.clone();
        bad.domains[0].b[0] = f64::NAN;
        assert!(matches!(bad.validate(), Err(Error::NonFinite { .. })));
        let mut bad = spec.clone();
        bad.g_bound = f64::INFINITY;
        assert!(matches!(bad.validate(), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn noise_zero_sigma_is_exact() {
        let spec = scalar_example_problem();
        let noise = NoiseModel::new(0.0).unwrap();
        let key = GradKey {
            run_seed: 1,
            round: 2,
            step: 3,
            tag: GradTag::Domain(0),
        };
        let g = stochastic_grad(&spec.domains[0], &[2.0], &noise, key).unwrap();
        assert_eq!(g, spec.domains[0].grad(&[2.0]).unwrap());
    }

    #[test]
    fn noise_deterministic_per_key() {
        let noise = NoiseModel::new(0.7).unwrap();
        let key = GradKey {
            run_seed: 42,
            round: 9,
            step: 17,
            tag: GradTag::Validation,
        };
        assert_eq!(noise.sample(4, key), noise.sample(4, key));
        let other = GradKey {
            step: 18,
            ..key
        };
        assert_ne!(noise.sample(4, key), noise.sample(4, other));
    }

    #[test]
    fn noise_monte_carlo_mean_and_variance() {
        let spec = scalar_example_problem();
        let sigma = 0.5;
        let noise = NoiseModel::new(sigma).unwrap();
        let theta = [1.25];
        let truth = spec.domains[1].grad(&theta).unwrap()[0];
        let n = 100_000u64;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for i in 0..n {
            let key = GradKey {
                run_seed: 7,
                round: i,
                step: 0,
                tag: GradTag::Domain(1),
            };
            let g = stochastic_grad(&spec.domains[1], &theta, &noise, key).unwrap()[0];
            sum += g;
            sum_sq += (g - truth) * (g - truth);
        }
        let mean = sum / n as f64;
        assert!((mean - truth).abs() <= 3.0 * sigma / (n as f64).sqrt());
        let var = sum_sq / n as f64;
        assert!(var <= sigma * sigma * 1.02);
        assert!(var >= sigma * sigma * 0.98);
    }

    proptest! {
        // pointwise strong convexity and smoothness witnesses on the ball
        #[test]
        fn convexity_and_smoothness_witnesses(seed in 0u64..50, pair in 0u64..20) {
            let params = GeneratorParams::default();
            let spec = generate_problem(ProblemKind::RandomStronglyConvex, &params, seed).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(pair ^ (seed << 8));
            let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
                (0..spec.dim()).map(|_| rng.random_range(-3.0..3.0)).collect()
            };
            let x = draw(&mut rng);
            let y = draw(&mut rng);
            for dom in &spec.domains {
                let fx = dom.value(&x).unwrap();
                let fy = dom.value(&y).unwrap();
                let gx = dom.grad(&x).unwrap();
                let gy = dom.grad(&y).unwrap();
                let dxy = numerics::sub(&y, &x);
                let lin = fx + numerics::dot(&gx, &dxy);
                let quad = 0.5 * spec.mu * numerics::dot(&dxy, &dxy);
                prop_assert!(fy + 1e-9 >= lin + quad);
                let gdiff = numerics::norm2(&numerics::sub(&gy, &gx));
                prop_assert!(gdiff <= spec.l_smooth * numerics::norm2(&dxy) + 1e-9);
            }
        }

        // minimizer stability across weightings: ||theta*(w) - theta*(w')||
        // stays below (2L/mu + 1) * D
        #[test]
        fn weighted_minimizer_stability(seed in 0u64..60, wseed in 0u64..20) {
            let spec = generate_problem(
                ProblemKind::RandomStronglyConvex,
                &GeneratorParams::default(),
                seed,
            ).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(wseed.wrapping_mul(31) ^ seed);
            let draw_w = |rng: &mut ChaCha8Rng| {
                let raw: Vec<f64> = (0..spec.num_domains())
                    .map(|_| rng.random_range(0.02f64..1.0)).collect();
                let s: f64 = raw.iter().sum();
                MixtureWeights::new(raw.iter().map(|x| x / s).collect()).unwrap()
            };
            let w1 = draw_w(&mut rng);
            let w2 = draw_w(&mut rng);
            let t1 = spec.weighted_minimizer(&w1).unwrap();
            let t2 = spec.weighted_minimizer(&w2).unwrap();
            let dist = numerics::norm2(&numerics::sub(&t1, &t2));
            let bound = (2.0 * spec.l_smooth / spec.mu + 1.0) * spec.d_span;
            prop_assert!(dist <= bound + 1e-9);
        }
    }
}
