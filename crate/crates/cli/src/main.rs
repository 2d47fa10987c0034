//! `mixlab`: run the scalar-example replication, single mixing runs, horizon
//! sweeps, gradient checks, and decay fits from the command line.
//!
//! Exit codes: 0 success, 1 check failed, 2 config error, 3 theorem-regime
//! violation (with `--strict`), 4 numerical abort.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mixlab_core::harness::{fit_decay, outer_opt_oracle, report, run_sweep, SweepPlan};
use mixlab_core::hypergrad::{self, ApproximatorMode, FD_STEP};
use mixlab_core::losses::{generate_problem, GeneratorParams, ProblemKind, ProblemSpec};
use mixlab_core::mixers::{self, Algorithm, AlphaSetting, RunConfig};
use mixlab_core::quad;
use mixlab_core::simplex::MixtureWeights;
use mixlab_core::Error;

#[derive(Parser)]
#[command(name = "mixlab", version, about = "Bilevel data-mixing laboratory")]
struct Cli {
    /// Output directory for emitted artifacts.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Base seed for generated problems and stochastic runs.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Artifact format for run records.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Worker threads for sweeps (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    /// Refuse configurations outside the theorem regime (exit code 3).
    #[arg(long, global = true)]
    strict: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Replicate the two-domain scalar example and its theorem predicates.
    Quad(QuadArgs),
    /// Execute one mixing run.
    Run(RunArgs),
    /// Execute a horizon sweep from a plan file.
    Sweep(SweepArgs),
    /// Audit exact hypergradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Fit the hypergradient-error decay across horizons.
    Decay(DecayArgs),
}

#[derive(Args)]
struct QuadArgs {
    /// Starting distance: theta_0 = -R.
    #[arg(long = "R", default_value_t = 200.0)]
    r: f64,
    #[arg(long, default_value_t = 0.1)]
    eta: f64,
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    /// Horizon; 0 picks the theorem's recovery horizon.
    #[arg(long = "T", default_value_t = 1)]
    horizon: usize,
    /// Total inner-step budget.
    #[arg(long = "N", default_value_t = 1000)]
    budget: u64,
    /// Exponent in the recovery-horizon formula.
    #[arg(long, default_value_t = 1.0)]
    c: f64,
}

#[derive(Args)]
struct RunArgs {
    /// RunConfig JSON file; flags below are ignored when given.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Problem JSON file or builtin kind
    /// (two-domain-scalar | random-strongly-convex | aligned-domain).
    #[arg(long)]
    problem: Option<String>,
    #[arg(long, value_enum, default_value_t = AlgorithmArg::Alg2Frozen)]
    algorithm: AlgorithmArg,
    #[arg(long, default_value_t = 0.05)]
    eta: f64,
    /// Outer step size, or "auto-theorem".
    #[arg(long, default_value = "0.5")]
    alpha: String,
    #[arg(long = "T", default_value_t = 16)]
    horizon: usize,
    #[arg(long = "N", default_value_t = 1024)]
    budget: u64,
    #[arg(long, default_value_t = 0.0)]
    sigma: f64,
    /// Isotropic Hessian approximation gamma (bare flag: 0.01); exact
    /// Hessian when absent.
    #[arg(long, num_args = 0..=1, default_missing_value = "0.01")]
    gamma: Option<f64>,
    /// Comma-separated starting point; defaults to the origin.
    #[arg(long, allow_hyphen_values = true)]
    theta0: Option<String>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AlgorithmArg {
    Alg1Exact,
    Alg2Frozen,
    Alg3Stochastic,
}

impl From<AlgorithmArg> for Algorithm {
    fn from(a: AlgorithmArg) -> Self {
        match a {
            AlgorithmArg::Alg1Exact => Algorithm::Alg1Exact,
            AlgorithmArg::Alg2Frozen => Algorithm::Alg2Frozen,
            AlgorithmArg::Alg3Stochastic => Algorithm::Alg3Stochastic,
        }
    }
}

#[derive(Args)]
struct SweepArgs {
    /// SweepPlan JSON file.
    #[arg(long)]
    plan: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Problem JSON file or builtin kind; random problems per trial when
    /// absent.
    #[arg(long)]
    problem: Option<String>,
    #[arg(long, default_value_t = 100)]
    trials: u64,
    #[arg(long, default_value_t = 1e-5)]
    tolerance: f64,
}

#[derive(Args)]
struct DecayArgs {
    /// Problem JSON file or builtin kind.
    #[arg(long, default_value = "random-strongly-convex")]
    problem: String,
    #[arg(long, default_value_t = 0.1)]
    eta: f64,
    /// Comma-separated horizons; defaults to 5,10,...,350.
    #[arg(long)]
    horizons: Option<String>,
    /// Isotropic Hessian approximation gamma (bare flag: 0.01); exact
    /// Hessian when absent.
    #[arg(long, num_args = 0..=1, default_missing_value = "0.01")]
    gamma: Option<f64>,
    /// Comma-separated starting point; defaults to an offset from the
    /// operating center.
    #[arg(long, allow_hyphen_values = true)]
    theta0: Option<String>,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::NonFinite { .. } => 4,
        Error::RegimeViolation { .. } => 3,
        _ => 2,
    }
}

impl From<Error> for Failure {
    fn from(err: Error) -> Self {
        Failure::new(exit_code_for(&err), err.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn dispatch(cli: &Cli) -> Result<(), Failure> {
    fs::create_dir_all(&cli.out).map_err(|e| Failure::new(2, format!("--out: {e}")))?;
    match &cli.command {
        Command::Quad(args) => cmd_quad(cli, args),
        Command::Run(args) => cmd_run(cli, args),
        Command::Sweep(args) => cmd_sweep(cli, args),
        Command::Gradcheck(args) => cmd_gradcheck(cli, args),
        Command::Decay(args) => cmd_decay(cli, args),
    }
}

fn cmd_quad(cli: &Cli, args: &QuadArgs) -> Result<(), Failure> {
    let horizon = if args.horizon == 0 {
        quad::recovery_horizon(args.r, args.eta, args.c)
    } else {
        args.horizon
    };
    let trace = quad::simulate(args.r, args.eta, args.alpha, horizon, args.budget)?;
    let predicates = quad::theorem_predicates(&trace, args.c);
    fs::write(cli.out.join("quad_trace.csv"), report::quad_csv(&trace)).map_err(io_failure)?;
    fs::write(
        cli.out.join("quad_predicates.json"),
        serde_json::to_string_pretty(&predicates).map_err(json_failure)?,
    )
    .map_err(io_failure)?;
    println!(
        "quad: T = {horizon}, K = {}, final w = {:.6}, R_bar = {:.4}",
        trace.rounds_run,
        trace.final_w(),
        predicates.r_bar
    );
    println!(
        "  greedy-failure case: applies = {}, holds = {}",
        predicates.greedy_failure.applies, predicates.greedy_failure.holds
    );
    println!(
        "  recovery case (T = {}): applies = {}, holds = {}, margin = {:.4}",
        predicates.recovery_horizon,
        predicates.long_horizon_recovery.applies,
        predicates.long_horizon_recovery.holds,
        predicates.long_horizon_recovery.margin
    );
    Ok(())
}

fn load_problem(source: &str, seed: u64) -> Result<ProblemSpec, Failure> {
    let builtin = |kind: ProblemKind| -> Result<ProblemSpec, Failure> {
        Ok(generate_problem(kind, &GeneratorParams::default(), seed)?)
    };
    match source {
        "two-domain-scalar" => Ok(generate_problem(
            ProblemKind::TwoDomainScalar,
            &GeneratorParams {
                operating_radius: 500.0,
                ..GeneratorParams::default()
            },
            seed,
        )?),
        "random-strongly-convex" => builtin(ProblemKind::RandomStronglyConvex),
        "aligned-domain" => builtin(ProblemKind::AlignedDomain),
        path => {
            let text = fs::read_to_string(path)
                .map_err(|e| Failure::new(2, format!("--problem {path}: {e}")))?;
            Ok(ProblemSpec::from_json(&text)?)
        }
    }
}

fn parse_vector(text: &str) -> Result<Vec<f64>, Failure> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| Failure::new(2, format!("bad vector entry {s:?}: {e}")))
        })
        .collect()
}

fn cmd_run(cli: &Cli, args: &RunArgs) -> Result<(), Failure> {
    let (spec, config) = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Failure::new(2, format!("--config: {e}")))?;
            let config = RunConfig::from_json(&text)?;
            let problem = args
                .problem
                .as_deref()
                .ok_or_else(|| Failure::new(2, "--problem is required alongside --config"))?;
            (load_problem(problem, cli.seed)?, config)
        }
        None => {
            let problem = args
                .problem
                .as_deref()
                .ok_or_else(|| Failure::new(2, "--problem or --config is required"))?;
            let spec = load_problem(problem, cli.seed)?;
            let alpha = match args.alpha.as_str() {
                "auto-theorem" => AlphaSetting::Named(mixers::AlphaPolicy::AutoTheorem),
                v => AlphaSetting::Fixed(
                    v.parse::<f64>()
                        .map_err(|e| Failure::new(2, format!("--alpha: {e}")))?,
                ),
            };
            let theta0 = match &args.theta0 {
                Some(t) => parse_vector(t)?,
                None => vec![0.0; spec.dim()],
            };
            let approximator = match args.gamma {
                Some(gamma) => ApproximatorMode::IsotropicGamma { gamma },
                None => ApproximatorMode::ExactAtOptimum,
            };
            let config = RunConfig {
                algorithm: args.algorithm.into(),
                eta: args.eta,
                alpha,
                horizon: args.horizon,
                budget: Some(args.budget),
                rounds: None,
                theta0,
                w0: Default::default(),
                approximator,
                sigma: args.sigma,
                seed: cli.seed,
            };
            (spec, config)
        }
    };
    if cli.strict {
        mixers::auto_stepsizes(&spec, &config)?;
    }
    let record = mixers::run(&spec, &config)?;
    let optimum = outer_opt_oracle(&spec)?;
    match cli.format {
        Format::Csv => {
            let path = cli.out.join("run.csv");
            fs::write(&path, report::run_csv(&record, optimum.value)).map_err(io_failure)?;
            println!("wrote {}", path.display());
        }
        Format::Json => {
            let path = cli.out.join("run_record.json");
            fs::write(
                &path,
                serde_json::to_string_pretty(&record).map_err(json_failure)?,
            )
            .map_err(io_failure)?;
            println!("wrote {}", path.display());
        }
    }
    println!(
        "run: K = {}, final gap = {:.6e}, averaged-iterate gap = {:.6e}, final weights = {:?}",
        record.rounds.len(),
        record.f_final - optimum.value,
        record.f_avg - optimum.value,
        record.weights_final
    );
    Ok(())
}

fn cmd_sweep(cli: &Cli, args: &SweepArgs) -> Result<(), Failure> {
    let text =
        fs::read_to_string(&args.plan).map_err(|e| Failure::new(2, format!("--plan: {e}")))?;
    let plan = SweepPlan::from_json(&text)?;
    if cli.strict {
        let spec = plan.problem.materialize()?;
        for &budget in &plan.budgets {
            for horizon in plan.horizons_for(budget, &spec) {
                let floor = mixers::theorem_horizon_floor(plan.eta, spec.mu);
                if horizon < floor {
                    return Err(Error::RegimeViolation {
                        inequality: format!(
                            "cell (N = {budget}, T = {horizon}): T below ceil(log 4/(eta*mu)) = {floor}"
                        ),
                    }
                    .into());
                }
            }
        }
    }
    let cell_dir = cli.out.join("cells");
    let result = run_sweep(&plan, Some(&cell_dir), cli.jobs)?;
    let files = report::emit_sweep(&result, &cli.out)?;
    if cli.format == Format::Json {
        let path = cli.out.join("sweep_result.json");
        fs::write(
            &path,
            serde_json::to_string_pretty(&result).map_err(json_failure)?,
        )
        .map_err(io_failure)?;
        println!("wrote {}", path.display());
    }
    for f in files {
        println!("wrote {}", f.display());
    }
    for (n, t) in &result.argmin_by_budget {
        println!("sweep: N = {n}: argmin-T = {t}");
    }
    if let Some(fit) = &result.scaling_fit {
        println!(
            "sweep: log-law R^2 = {:.4}, sqrt-law R^2 = {:.4}{}",
            fit.r_squared,
            fit.competing_r_squared,
            if fit.degenerate { " (degenerate)" } else { "" }
        );
    }
    Ok(())
}

fn cmd_gradcheck(cli: &Cli, args: &GradcheckArgs) -> Result<(), Failure> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cli.seed);
    let tol = hypergrad::grad_tolerance(FD_STEP, args.tolerance);
    let mut worst = 0.0f64;
    for trial in 0..args.trials {
        let spec = match &args.problem {
            Some(p) => load_problem(p, cli.seed)?,
            None => {
                let params = GeneratorParams {
                    m: rng.random_range(2usize..=5),
                    d: rng.random_range(1usize..=8),
                    mu: 0.5,
                    l_smooth: 2.0,
                    spread: 1.5,
                    operating_radius: 40.0,
                };
                generate_problem(ProblemKind::RandomStronglyConvex, &params, trial)?
            }
        };
        let m = spec.num_domains();
        let raw: Vec<f64> = (0..m).map(|_| rng.random_range(0.05f64..1.0)).collect();
        let s: f64 = raw.iter().sum();
        let w = MixtureWeights::new(raw.iter().map(|x| x / s).collect())?;
        let exact = hypergrad::exact_hypergrad(&spec, &w)?;
        let fd = hypergrad::finite_diff_hypergrad(&spec, &w, FD_STEP)?;
        worst = worst.max(hypergrad::max_rel_deviation(
            exact.components(),
            fd.components(),
        ));
    }
    println!(
        "gradcheck: {} trials, worst elementwise deviation {worst:.3e}, tolerance {tol:.3e}",
        args.trials
    );
    if worst <= tol {
        println!("gradcheck: PASS");
        Ok(())
    } else {
        Err(Failure::new(1, "gradcheck failed: deviation above tolerance"))
    }
}

fn cmd_decay(cli: &Cli, args: &DecayArgs) -> Result<(), Failure> {
    let spec = load_problem(&args.problem, cli.seed)?;
    let horizons: Vec<usize> = match &args.horizons {
        Some(text) => {
            let parsed: Result<Vec<usize>, Failure> = text
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse::<usize>()
                        .map_err(|e| Failure::new(2, format!("--horizons: {e}")))
                })
                .collect();
            parsed?
        }
        None => (1..=70).map(|i| i * 5).collect(),
    };
    let mode = match args.gamma {
        Some(gamma) => ApproximatorMode::IsotropicGamma { gamma },
        None => ApproximatorMode::ExactAtOptimum,
    };
    let approx = hypergrad::make_approximator(mode, &spec)?;
    let w = MixtureWeights::uniform(spec.num_domains())?;
    let theta0 = match &args.theta0 {
        Some(t) => parse_vector(t)?,
        None => spec.operating_center().iter().map(|c| c + 1.0).collect(),
    };
    let rep = fit_decay(&spec, &w, &theta0, args.eta, &horizons, &approx)?;
    fs::write(cli.out.join("decay.csv"), report::decay_csv(&rep)).map_err(io_failure)?;
    fs::write(
        cli.out.join("decay_report.json"),
        serde_json::to_string_pretty(&rep).map_err(json_failure)?,
    )
    .map_err(io_failure)?;
    println!(
        "decay: fitted rate {:.4} vs (1 - eta*mu/2) = {:.4} (deviation {:.1}%), floor = {:.3e}, {} fit points",
        rep.fitted_rate,
        rep.target_rate,
        100.0 * rep.rate_rel_deviation,
        rep.floor_estimate,
        rep.fitted_horizons.len()
    );
    Ok(())
}

fn io_failure(e: std::io::Error) -> Failure {
    Failure::new(2, e.to_string())
}

fn json_failure(e: serde_json::Error) -> Failure {
    Failure::new(2, e.to_string())
}
