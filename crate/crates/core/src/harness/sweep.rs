//! Budget-constrained horizon sweeps: a grid of `(N, T, seed)` cells, each
//! one full mixer run, executed by a bounded worker pool with per-cell
//! atomic persistence so an interrupted sweep resumes where it stopped.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::fits::{self, ScalingFitReport, ScalingLaw};
use crate::harness::oracle;
use crate::hypergrad::ApproximatorMode;
use crate::losses::{self, GeneratorParams, ProblemKind, ProblemSpec};
use crate::mixers::{self, Algorithm, AlphaPolicy, AlphaSetting, RunConfig, W0Setting};

/// Where the sweep's problem comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "source")]
pub enum ProblemSource {
    Generator {
        kind: ProblemKind,
        params: GeneratorParams,
        seed: u64,
    },
    Inline {
        spec: ProblemSpec,
    },
}

impl ProblemSource {
    pub fn materialize(&self) -> Result<ProblemSpec> {
        match self {
            ProblemSource::Generator { kind, params, seed } => {
                losses::generate_problem(*kind, params, *seed)
            }
            ProblemSource::Inline { spec } => {
                spec.validate()?;
                Ok(spec.clone())
            }
        }
    }
}

/// Outer step-size policy applied per cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "policy")]
pub enum SweepAlpha {
    Fixed { value: f64 },
    /// `alpha0 / sqrt(K)`: the theorem's round-count scaling with a chosen
    /// constant.
    Scaled { alpha0: f64 },
    AutoTheorem,
}

fn default_replicates() -> usize {
    1
}

/// Declarative sweep description; serializes field-for-field to the plan
/// files the CLI accepts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepPlan {
    pub problem: ProblemSource,
    pub budgets: Vec<u64>,
    /// Explicit horizon grid; when absent, powers of two from 1 to N plus
    /// the theorem-suggested horizons.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizons: Option<Vec<usize>>,
    pub algorithm: Algorithm,
    pub eta: f64,
    pub alpha: SweepAlpha,
    #[serde(default)]
    pub sigma: f64,
    /// Runs per `(N, T)` cell with distinct seeds.
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default)]
    pub base_seed: u64,
    pub theta0: Vec<f64>,
    #[serde(default = "default_approximator")]
    pub approximator: ApproximatorMode,
}

fn default_approximator() -> ApproximatorMode {
    ApproximatorMode::ExactAtOptimum
}

impl SweepPlan {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let plan: SweepPlan = serde_json::from_str(s)?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        if self.budgets.is_empty() {
            return Err(Error::Config {
                detail: "sweep needs at least one budget".into(),
            });
        }
        if self.replicates == 0 {
            return Err(Error::Config {
                detail: "replicates must be at least 1".into(),
            });
        }
        if let Some(h) = &self.horizons {
            if h.is_empty() || h.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::Config {
                    detail: "explicit horizons must be non-empty and strictly increasing".into(),
                });
            }
        }
        Ok(())
    }

    /// Horizon grid for one budget: geometric plus theorem-suggested values.
    pub fn horizons_for(&self, budget: u64, spec: &ProblemSpec) -> Vec<usize> {
        if let Some(h) = &self.horizons {
            return h.iter().copied().filter(|t| *t as u64 <= budget).collect();
        }
        let mut ts: Vec<usize> = Vec::new();
        let mut t = 1u64;
        while t <= budget {
            ts.push(t as usize);
            t *= 2;
        }
        let nf = budget as f64;
        let mut suggested = vec![mixers::theorem_horizon_floor(self.eta, spec.mu)];
        match self.algorithm {
            Algorithm::Alg3Stochastic => {
                suggested.push((nf * nf.ln()).sqrt().ceil() as usize);
            }
            _ => {
                suggested.push((2.0 * nf.ln() / (self.eta * spec.mu)).ceil() as usize);
            }
        }
        for s in suggested {
            if s >= 1 && s as u64 <= budget {
                ts.push(s);
            }
        }
        if budget >= 1 {
            ts.push(budget as usize);
        }
        ts.sort_unstable();
        ts.dedup();
        ts
    }

    fn cell_config(&self, budget: u64, horizon: usize, seed: u64) -> RunConfig {
        let k = (budget / horizon as u64).max(1);
        let alpha = match self.alpha {
            SweepAlpha::Fixed { value } => AlphaSetting::Fixed(value),
            SweepAlpha::Scaled { alpha0 } => AlphaSetting::Fixed(alpha0 / (k as f64).sqrt()),
            SweepAlpha::AutoTheorem => AlphaSetting::Named(AlphaPolicy::AutoTheorem),
        };
        RunConfig {
            algorithm: self.algorithm,
            eta: self.eta,
            alpha,
            horizon,
            budget: Some(budget),
            rounds: None,
            theta0: self.theta0.clone(),
            w0: W0Setting::default(),
            approximator: self.approximator,
            sigma: if self.algorithm == Algorithm::Alg3Stochastic {
                self.sigma
            } else {
                0.0
            },
            seed,
        }
    }
}

/// Outcome of one cell; failures are recorded, not fatal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "status")]
pub enum CellOutcome {
    Ok {
        k_rounds: u64,
        final_gap_avg_iterate: f64,
        final_gap_last_iterate: f64,
        /// Final weight of the problem's aligned domain (domain 0 when no
        /// alignment is declared).
        aligned_weight: f64,
        hypergrad_err_last: f64,
        bound_violations: u64,
        discarded_steps: u64,
        wall_ms: u64,
    },
    Failed {
        error: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub budget: u64,
    pub horizon: usize,
    pub seed: u64,
    pub outcome: CellOutcome,
}

impl CellResult {
    pub fn file_name(budget: u64, horizon: usize, seed: u64) -> String {
        format!("cell_N{budget}_T{horizon}_s{seed}.json")
    }
}

/// Aggregated sweep outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub plan: SweepPlan,
    pub f_star: f64,
    pub w_star: Vec<f64>,
    pub cells: Vec<CellResult>,
    /// Per-budget argmin horizon by mean gap of the averaged iterate, ties
    /// broken toward the smaller horizon.
    pub argmin_by_budget: Vec<(u64, usize)>,
    /// Log-law fit with the competing square-root law alongside; absent with
    /// fewer than 3 budgets.
    pub scaling_fit: Option<ScalingFitReport>,
}

impl SweepResult {
    /// Mean averaged-iterate gap per `(N, T)` over successful replicates.
    pub fn mean_gap(&self, budget: u64, horizon: usize) -> Option<f64> {
        let mut sum = 0.0;
        let mut count = 0usize;
        for c in &self.cells {
            if c.budget == budget && c.horizon == horizon {
                if let CellOutcome::Ok {
                    final_gap_avg_iterate,
                    ..
                } = c.outcome
                {
                    sum += final_gap_avg_iterate;
                    count += 1;
                }
            }
        }
        if count == 0 {
            None
        } else {
            Some(sum / count as f64)
        }
    }

    pub fn argmin_for(&self, budget: u64) -> Option<usize> {
        self.argmin_by_budget
            .iter()
            .find(|(n, _)| *n == budget)
            .map(|(_, t)| *t)
    }

    /// JSON value with per-cell timings cleared, for resume-equality checks.
    pub fn semantic_value(&self) -> Result<serde_json::Value> {
        let mut v = serde_json::to_value(self)?;
        if let Some(cells) = v.get_mut("cells").and_then(|c| c.as_array_mut()) {
            for cell in cells {
                if let Some(outcome) = cell.get_mut("outcome") {
                    if let Some(obj) = outcome.as_object_mut() {
                        if obj.contains_key("wall_ms") {
                            obj.insert("wall_ms".into(), serde_json::json!(0));
                        }
                    }
                }
            }
        }
        Ok(v)
    }
}

fn run_cell(spec: &ProblemSpec, plan: &SweepPlan, budget: u64, horizon: usize, seed: u64, f_star: f64) -> CellResult {
    let config = plan.cell_config(budget, horizon, seed);
    let outcome = match mixers::run(spec, &config) {
        Ok(rec) => {
            let aligned_idx = spec.aligned_domain.unwrap_or(0);
            CellOutcome::Ok {
                k_rounds: rec.rounds.len() as u64,
                final_gap_avg_iterate: rec.f_avg - f_star,
                final_gap_last_iterate: rec.f_final - f_star,
                aligned_weight: rec.weights_final[aligned_idx],
                hypergrad_err_last: rec.rounds.last().map(|r| r.hypergrad_err_inf).unwrap_or(0.0),
                bound_violations: rec.bound_violations,
                discarded_steps: rec.discarded_steps,
                wall_ms: rec.wall_ms,
            }
        }
        Err(e) => CellOutcome::Failed {
            error: e.to_string(),
        },
    };
    CellResult {
        budget,
        horizon,
        seed,
        outcome,
    }
}

fn cell_path(dir: &Path, budget: u64, horizon: usize, seed: u64) -> PathBuf {
    dir.join(CellResult::file_name(budget, horizon, seed))
}

fn load_cell(path: &Path, budget: u64, horizon: usize, seed: u64) -> Option<CellResult> {
    let text = fs::read_to_string(path).ok()?;
    let cell: CellResult = serde_json::from_str(&text).ok()?;
    (cell.budget == budget && cell.horizon == horizon && cell.seed == seed).then_some(cell)
}

fn store_cell(dir: &Path, cell: &CellResult) -> Result<()> {
    let final_path = cell_path(dir, cell.budget, cell.horizon, cell.seed);
    let tmp = final_path.with_extension("json.tmp");
    fs::write(&tmp, serde_json::to_string_pretty(cell)?)?;
    fs::rename(&tmp, &final_path)?;
    Ok(())
}

/// Executes the plan. With `cell_dir` set, finished cells are persisted one
/// by one (atomic replace) and an interrupted sweep resumes from what is on
/// disk. `jobs = 0` uses all cores.
pub fn run_sweep(plan: &SweepPlan, cell_dir: Option<&Path>, jobs: usize) -> Result<SweepResult> {
    plan.validate()?;
    let spec = plan.problem.materialize()?;
    let optimum = oracle::outer_opt_oracle(&spec)?;
    let f_star = optimum.value;

    if let Some(dir) = cell_dir {
        fs::create_dir_all(dir)?;
    }

    let mut keys: Vec<(u64, usize, u64)> = Vec::new();
    for &budget in &plan.budgets {
        for horizon in plan.horizons_for(budget, &spec) {
            for rep in 0..plan.replicates {
                keys.push((budget, horizon, plan.base_seed + rep as u64));
            }
        }
    }

    let mut cells: Vec<Option<CellResult>> = vec![None; keys.len()];
    let mut missing: Vec<usize> = Vec::new();
    if let Some(dir) = cell_dir {
        for (i, (n, t, s)) in keys.iter().enumerate() {
            match load_cell(&cell_path(dir, *n, *t, *s), *n, *t, *s) {
                Some(cell) => cells[i] = Some(cell),
                None => missing.push(i),
            }
        }
    } else {
        missing = (0..keys.len()).collect();
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config {
            detail: format!("worker pool: {e}"),
        })?;
    let computed: Vec<(usize, CellResult)> = pool.install(|| {
        missing
            .par_iter()
            .map(|&i| {
                let (n, t, s) = keys[i];
                (i, run_cell(&spec, plan, n, t, s, f_star))
            })
            .collect()
    });
    for (i, cell) in computed {
        if let Some(dir) = cell_dir {
            store_cell(dir, &cell)?;
        }
        cells[i] = Some(cell);
    }
    let cells: Vec<CellResult> = cells.into_iter().map(|c| c.expect("all cells filled")).collect();

    // per-budget argmin by mean averaged-iterate gap, ties toward smaller T
    let mut argmin_by_budget = Vec::new();
    for &budget in &plan.budgets {
        let mut best: Option<(f64, usize)> = None;
        for horizon in plan.horizons_for(budget, &spec) {
            let mut sum = 0.0;
            let mut count = 0usize;
            for c in &cells {
                if c.budget == budget && c.horizon == horizon {
                    if let CellOutcome::Ok {
                        final_gap_avg_iterate,
                        ..
                    } = c.outcome
                    {
                        sum += final_gap_avg_iterate;
                        count += 1;
                    }
                }
            }
            if count > 0 {
                let mean = sum / count as f64;
                let candidate = (mean, horizon);
                best = Some(match best {
                    None => candidate,
                    Some(cur) => {
                        if candidate.0 < cur.0 {
                            candidate
                        } else {
                            cur
                        }
                    }
                });
            }
        }
        if let Some((_, t)) = best {
            argmin_by_budget.push((budget, t));
        }
    }

    let scaling_fit = if argmin_by_budget.len() >= 3 {
        let points: Vec<(u64, f64)> = argmin_by_budget
            .iter()
            .map(|(n, t)| (*n, *t as f64))
            .collect();
        Some(fits::fit_scaling(&points, ScalingLaw::LogN)?)
    } else {
        None
    };

    Ok(SweepResult {
        plan: plan.clone(),
        f_star,
        w_star: optimum.weights,
        cells,
        argmin_by_budget,
        scaling_fit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_plan() -> SweepPlan {
        SweepPlan {
            problem: ProblemSource::Generator {
                kind: ProblemKind::TwoDomainScalar,
                params: GeneratorParams {
                    operating_radius: 100.0,
                    ..GeneratorParams::default()
                },
                seed: 0,
            },
            budgets: vec![64],
            horizons: Some(vec![1, 4, 16, 64]),
            algorithm: Algorithm::Alg2Frozen,
            eta: 0.1,
            alpha: SweepAlpha::Fixed { value: 0.5 },
            sigma: 0.0,
            replicates: 1,
            base_seed: 0,
            theta0: vec![-20.0],
            approximator: ApproximatorMode::ExactAtOptimum,
        }
    }

    #[test]
    fn single_cell_plan_reduces_to_one_run() {
        let mut plan = tiny_plan();
        plan.horizons = Some(vec![16]);
        let result = run_sweep(&plan, None, 1).unwrap();
        assert_eq!(result.cells.len(), 1);
        let config = plan.cell_config(64, 16, 0);
        let spec = plan.problem.materialize().unwrap();
        let rec = mixers::run(&spec, &config).unwrap();
        match &result.cells[0].outcome {
            CellOutcome::Ok {
                final_gap_avg_iterate,
                k_rounds,
                ..
            } => {
                assert_eq!(*k_rounds, 4);
                assert!((final_gap_avg_iterate - (rec.f_avg - result.f_star)).abs() <= 1e-15);
            }
            CellOutcome::Failed { error } => panic!("cell failed: {error}"),
        }
    }

    #[test]
    fn default_horizon_grid_is_geometric_plus_suggested() {
        let mut plan = tiny_plan();
        plan.horizons = None;
        let spec = plan.problem.materialize().unwrap();
        let ts = plan.horizons_for(64, &spec);
        // powers of two plus ceil(log4/(0.1*1)) = 14 (the larger theorem
        // suggestion exceeds the budget and is dropped)
        assert_eq!(ts, vec![1, 2, 4, 8, 14, 16, 32, 64]);
        assert!(ts.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn gaps_are_nonnegative_and_argmin_populated() {
        let plan = tiny_plan();
        let result = run_sweep(&plan, None, 2).unwrap();
        for c in &result.cells {
            if let CellOutcome::Ok {
                final_gap_avg_iterate,
                final_gap_last_iterate,
                ..
            } = c.outcome
            {
                assert!(final_gap_avg_iterate >= -1e-9);
                assert!(final_gap_last_iterate >= -1e-9);
            }
        }
        assert_eq!(result.argmin_by_budget.len(), 1);
    }

    #[test]
    fn failed_cells_are_recorded_not_fatal() {
        let mut plan = tiny_plan();
        // eta far above the admissible range for the frozen estimator
        plan.eta = 5.0;
        let result = run_sweep(&plan, None, 1).unwrap();
        assert!(result
            .cells
            .iter()
            .all(|c| matches!(c.outcome, CellOutcome::Failed { .. })));
        assert!(result.argmin_by_budget.is_empty());
    }

    #[test]
    fn resume_reproduces_uninterrupted_result() {
        let dir = tempfile::tempdir().unwrap();
        let plan = tiny_plan();
        let full = run_sweep(&plan, Some(dir.path()), 2).unwrap();
        // drop two cells and resume
        fs::remove_file(dir.path().join(CellResult::file_name(64, 4, 0))).unwrap();
        fs::remove_file(dir.path().join(CellResult::file_name(64, 64, 0))).unwrap();
        let resumed = run_sweep(&plan, Some(dir.path()), 1).unwrap();
        assert_eq!(
            full.semantic_value().unwrap(),
            resumed.semantic_value().unwrap()
        );
    }

    #[test]
    fn plan_json_rejects_unknown_keys() {
        let plan = tiny_plan();
        let json = plan.to_json().unwrap();
        let back = SweepPlan::from_json(&json).unwrap();
        assert_eq!(plan, back);
        let mut v: serde_json::Value = serde_json::from_str(&json).unwrap();
        v.as_object_mut().unwrap().insert("extra".into(), 2.into());
        assert!(SweepPlan::from_json(&v.to_string()).is_err());
    }
}
