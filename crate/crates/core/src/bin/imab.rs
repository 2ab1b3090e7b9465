//! Command-line frontend: simulate episodes, fit them, compute bounds,
//! and run benchmark sweeps. All paths accept `-` for stdin/stdout.
//!
//! Exit codes: 0 success, 2 usage errors, 3 invalid input data,
//! 4 computation or output failures.

use clap::{Parser, Subcommand, ValueEnum};

use imab::error::Error;
use imab::io::{
    bench_tsv, read_json, write_json, write_text, BenchFile, BoundFile, EpisodeFile, ParamsFile,
    ReportFile,
};
use imab::pipeline::{fit, lower_bound_only, FitOptions, Method};
use imab::relax::SolverOptions;
use imab::sim::{random_params, run_benchmark, simulate_episode, BenchConfig, EnvSpec, SignalScheme};
use imab::derive_seed;

#[derive(Parser)]
#[command(name = "imab", version, about = "Inverse bandit fitting with optimality certificates")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic episode from the forward model.
    Simulate(SimulateArgs),
    /// Fit a recorded episode and report bounds and certificates.
    Fit(FitArgs),
    /// Compute only the relaxed lower bound for an episode.
    Bound(BoundArgs),
    /// Simulate and fit a batch of episodes, comparing methods.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemeArg {
    /// Single subsignal: previous trial's reward on the chosen arm.
    RewardOnly,
    /// Reward subsignal plus a one-hot choice-history subsignal.
    RewardAndAction,
}

impl From<SchemeArg> for SignalScheme {
    fn from(s: SchemeArg) -> Self {
        match s {
            SchemeArg::RewardOnly => SignalScheme::RewardOnly,
            SchemeArg::RewardAndAction => SignalScheme::RewardAndAction,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    /// Convex relaxation, then parameter recovery (bound + certificate).
    Sequential,
    /// Projected-gradient maximum likelihood on the parameters.
    Direct,
    /// Relaxation, then log-domain regression for recovery.
    LogspaceRecovery,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Sequential => Method::Sequential,
            MethodArg::Direct => Method::Direct,
            MethodArg::LogspaceRecovery => Method::LogspaceRecovery,
        }
    }
}

#[derive(clap::Args)]
struct EnvArgs {
    /// Number of arms.
    #[arg(long, default_value_t = 2)]
    arms: usize,
    /// Which feedback channels the environment exposes.
    #[arg(long, value_enum, default_value_t = SchemeArg::RewardOnly)]
    scheme: SchemeArg,
    /// Per-arm Bernoulli reward probabilities (comma separated). Defaults
    /// to an even spread over [0.4, 0.6].
    #[arg(long, value_delimiter = ',')]
    reward_probs: Option<Vec<f64>>,
    /// Upper end of the true-beta draw range for the reward channel.
    #[arg(long)]
    beta_max: Option<f64>,
    /// Upper end of the true-beta draw range for the action channel.
    #[arg(long)]
    beta_max_action: Option<f64>,
}

impl EnvArgs {
    fn build(&self) -> Result<EnvSpec, Error> {
        let mut env = EnvSpec::evenly_spaced(self.arms, self.scheme.into());
        if let Some(probs) = &self.reward_probs {
            env.reward_probs = probs.clone();
        }
        if let Some(hi) = self.beta_max {
            env.beta_ranges[0].1 = hi;
        }
        if let Some(hi) = self.beta_max_action {
            if env.beta_ranges.len() < 2 {
                return Err(Error::InvalidInput(
                    "--beta-max-action needs --scheme reward-and-action".into(),
                ));
            }
            env.beta_ranges[1].1 = hi;
        }
        env.validate()?;
        Ok(env)
    }
}

#[derive(clap::Args)]
struct SolverArgs {
    /// Iteration cap for the relaxed solver.
    #[arg(long, default_value_t = 50_000)]
    max_iters: usize,
    /// Windowed relative-improvement stopping tolerance.
    #[arg(long, default_value_t = 1e-9)]
    rel_tol: f64,
    /// Projected-gradient residual stopping tolerance.
    #[arg(long, default_value_t = 1e-7)]
    grad_tol: f64,
}

impl SolverArgs {
    fn build(&self) -> SolverOptions {
        SolverOptions {
            max_iters: self.max_iters,
            rel_tol: self.rel_tol,
            grad_tol: self.grad_tol,
            ..Default::default()
        }
    }
}

#[derive(clap::Args)]
struct SimulateArgs {
    #[command(flatten)]
    env: EnvArgs,
    /// Episode length.
    #[arg(long, default_value_t = 200)]
    trials: usize,
    /// Seed for the episode draws.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Generating parameters (params JSON). Drawn randomly when absent.
    #[arg(long)]
    params: Option<String>,
    /// Seed for drawing generating parameters (defaults to a stream
    /// derived from --seed).
    #[arg(long)]
    param_seed: Option<u64>,
    /// Output path for the episode JSON.
    #[arg(long, default_value = "-")]
    out: String,
}

#[derive(clap::Args)]
struct FitArgs {
    /// Episode JSON to fit.
    #[arg(long)]
    episode: String,
    #[arg(long, value_enum, default_value_t = MethodArg::Sequential)]
    method: MethodArg,
    /// History depth for the relaxation (default: full depth).
    #[arg(long)]
    depth: Option<usize>,
    /// Random restarts for the nonconvex stages.
    #[arg(long, default_value_t = 10)]
    restarts: usize,
    /// Entrywise certificate tolerance.
    #[arg(long, default_value_t = 1e-5)]
    eps_tilde: f64,
    /// Upper end of the beta range sampled by restarts.
    #[arg(long, default_value_t = 5.0)]
    beta_range: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    solver: SolverArgs,
    /// Output path for the report JSON.
    #[arg(long, default_value = "-")]
    out: String,
    /// Also write the recovered parameters alone to this path.
    #[arg(long)]
    params_out: Option<String>,
}

#[derive(clap::Args)]
struct BoundArgs {
    /// Episode JSON to bound.
    #[arg(long)]
    episode: String,
    /// History depth for the relaxation (default: full depth).
    #[arg(long)]
    depth: Option<usize>,
    #[command(flatten)]
    solver: SolverArgs,
    /// Output path for the bound JSON.
    #[arg(long, default_value = "-")]
    out: String,
}

#[derive(clap::Args)]
struct BenchArgs {
    #[command(flatten)]
    env: EnvArgs,
    #[arg(long, default_value_t = 20)]
    episodes: usize,
    #[arg(long, default_value_t = 200)]
    trials: usize,
    /// Methods to compare (comma separated).
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [MethodArg::Sequential, MethodArg::Direct])]
    methods: Vec<MethodArg>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// History depth for relaxation-based methods (default: full depth).
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long, default_value_t = 10)]
    restarts: usize,
    #[arg(long, default_value_t = 1e-5)]
    eps_tilde: f64,
    #[arg(long, default_value_t = 5.0)]
    beta_range: f64,
    #[command(flatten)]
    solver: SolverArgs,
    /// Emit the full summary as JSON instead of the TSV table.
    #[arg(long)]
    json: bool,
    /// Output path.
    #[arg(long, default_value = "-")]
    out: String,
}

fn cmd_simulate(args: &SimulateArgs) -> Result<(), Error> {
    let env = args.env.build()?;
    let params = match &args.params {
        Some(path) => read_json::<ParamsFile>(path)?.to_params()?,
        None => {
            let seed = args.param_seed.unwrap_or_else(|| derive_seed(args.seed, 1));
            random_params(&env, seed)?
        }
    };
    let sim = simulate_episode(&env, &params, args.trials, args.seed)?;
    write_json(&args.out, &EpisodeFile::from_simulated(&sim, &env))
}

fn cmd_fit(args: &FitArgs) -> Result<(), Error> {
    let file: EpisodeFile = read_json(&args.episode)?;
    let (episode, spec) = file.to_episode()?;
    let opts = FitOptions {
        method: args.method.into(),
        depth: args.depth,
        restarts: args.restarts,
        eps_tilde: args.eps_tilde,
        beta_range: args.beta_range,
        seed: args.seed,
        solver: args.solver.build(),
    };
    let report = fit(&episode, &spec, &opts)?;
    if let Some(path) = &args.params_out {
        write_json(path, &ParamsFile::from_params(&report.params))?;
    }
    write_json(&args.out, &ReportFile::from_report(&report, &opts))
}

fn cmd_bound(args: &BoundArgs) -> Result<(), Error> {
    let file: EpisodeFile = read_json(&args.episode)?;
    let (episode, spec) = file.to_episode()?;
    let relax = lower_bound_only(&episode, &spec, args.depth, &args.solver.build())?;
    let depth = args.depth.unwrap_or_else(|| episode.n());
    write_json(&args.out, &BoundFile::new(depth, relax))
}

fn cmd_bench(args: &BenchArgs) -> Result<(), Error> {
    let env = args.env.build()?;
    let config = BenchConfig {
        env,
        episodes: args.episodes,
        trials: args.trials,
        methods: args.methods.iter().map(|&m| m.into()).collect(),
        fit: FitOptions {
            method: Method::Sequential, // overridden per compared method
            depth: args.depth,
            restarts: args.restarts,
            eps_tilde: args.eps_tilde,
            beta_range: args.beta_range,
            seed: args.seed,
            solver: args.solver.build(),
        },
        seed: args.seed,
    };
    let summary = run_benchmark(&config)?;
    if args.json {
        write_json(&args.out, &BenchFile::new(config, summary))
    } else {
        write_text(&args.out, &bench_tsv(&config, &summary))
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidInput(_) | Error::InvalidEpisode(_) => 3,
        Error::DegenerateRow(_) | Error::OptimizerFailure { .. } | Error::Io(_) => 4,
    }
}

fn main() {
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::Simulate(args) => cmd_simulate(args),
        Cmd::Fit(args) => cmd_fit(args),
        Cmd::Bound(args) => cmd_bound(args),
        Cmd::Bench(args) => cmd_bench(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(exit_code(&e));
    }
}
