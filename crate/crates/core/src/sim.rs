//! Episode simulator and benchmark harness.
//!
//! The simulator draws behavior from the same forward model the fitters
//! assume: signals observed on trial t are the feedback from the choice on
//! trial t-1 (the first trial sees all-zero signals), values update before
//! the choice, and the action is sampled from the softmax of the scores.
//! The per-trial choice probabilities are recorded so tests can verify
//! that replaying a recorded episode reproduces them bit for bit.

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{objective, BanditSpec, Episode, Params, ValueState};
use crate::pipeline::{fit, FitOptions, FitReport, Method};
use crate::util::{derive_seed, softmax_into};

/// Which feedback channels the environment exposes as subsignals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalScheme {
    /// One subsignal: the previous trial's reward on the chosen arm.
    RewardOnly,
    /// Two subsignals: the reward channel, then a one-hot of the previous
    /// action (choice-history channel).
    RewardAndAction,
}

/// Generative environment: static Bernoulli reward probabilities per arm,
/// plus the ranges the benchmark samples true parameters from.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnvSpec {
    pub m: usize,
    pub scheme: SignalScheme,
    pub reward_probs: Vec<f64>,
    /// Per-subsignal [lo, hi] ranges for drawing true beta values.
    pub beta_ranges: Vec<(f64, f64)>,
}

impl EnvSpec {
    pub fn k(&self) -> usize {
        match self.scheme {
            SignalScheme::RewardOnly => 1,
            SignalScheme::RewardAndAction => 2,
        }
    }

    /// Reward probabilities evenly spaced over [0.4, 0.6]. The moderate
    /// band keeps simulated agents switching arms often enough that both
    /// value profiles stay identified; strongly lopsided environments
    /// produce one-sided data and much looser relaxation gaps.
    pub fn evenly_spaced(m: usize, scheme: SignalScheme) -> Self {
        let probs = if m == 1 {
            vec![0.5]
        } else {
            (0..m).map(|j| 0.4 + 0.2 * j as f64 / (m - 1) as f64).collect()
        };
        let beta_ranges = match scheme {
            SignalScheme::RewardOnly => vec![(0.0, 5.0)],
            SignalScheme::RewardAndAction => vec![(0.0, 10.0), (0.0, 5.0)],
        };
        Self { m, scheme, reward_probs: probs, beta_ranges }
    }

    /// The classic two-arm reward-only setup.
    pub fn two_arm() -> Self {
        Self::evenly_spaced(2, SignalScheme::RewardOnly)
    }

    pub fn bandit_spec(&self) -> Result<BanditSpec> {
        BanditSpec::uniform(self.m, self.k())
    }

    pub fn validate(&self) -> Result<()> {
        if self.m < 2 {
            return Err(Error::InvalidInput("environment needs at least two arms".into()));
        }
        if self.reward_probs.len() != self.m {
            return Err(Error::InvalidInput(format!(
                "{} reward probabilities for {} arms",
                self.reward_probs.len(),
                self.m
            )));
        }
        if self.reward_probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidInput("reward probabilities must lie in [0, 1]".into()));
        }
        if self.beta_ranges.len() != self.k() {
            return Err(Error::InvalidInput(format!(
                "{} beta ranges for {} subsignals",
                self.beta_ranges.len(),
                self.k()
            )));
        }
        if self.beta_ranges.iter().any(|(lo, hi)| *lo < 0.0 || hi < lo) {
            return Err(Error::InvalidInput("beta ranges must satisfy 0 <= lo <= hi".into()));
        }
        Ok(())
    }
}

/// Draws true parameters for the environment: one (alpha, beta) pair per
/// subsignal, shared by every arm — simulated agents treat arms
/// symmetrically. Alpha is uniform on [0, 1], beta uniform on the
/// per-subsignal range. Draw order is fixed (alpha then beta, subsignal by
/// subsignal), so seeds are portable.
pub fn random_params(env: &EnvSpec, seed: u64) -> Result<Params> {
    env.validate()?;
    let (k, m) = (env.k(), env.m);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut alpha = Array2::zeros((k, m));
    let mut beta = Array2::zeros((k, m));
    for i in 0..k {
        let a = rng.random::<f64>();
        let (lo, hi) = env.beta_ranges[i];
        let b = lo + (hi - lo) * rng.random::<f64>();
        for j in 0..m {
            alpha[[i, j]] = a;
            beta[[i, j]] = b;
        }
    }
    Params::new(alpha, beta)
}

/// A simulated session together with everything needed to check it.
#[derive(Debug, Clone)]
pub struct SimulatedEpisode {
    pub episode: Episode,
    pub spec: BanditSpec,
    pub true_params: Params,
    /// Row t holds the softmax probabilities the action of trial t was
    /// sampled from.
    pub choice_probs: Array2<f64>,
    /// Bernoulli outcome of each trial's choice (the feedback that enters
    /// the next trial's signals).
    pub rewards: Vec<u8>,
    pub seed: u64,
}

/// Simulates `n` trials. Per trial the generator makes exactly two draws,
/// in this order: the action (inverse CDF over the softmax) and the reward.
pub fn simulate_episode(env: &EnvSpec, params: &Params, n: usize, seed: u64) -> Result<SimulatedEpisode> {
    env.validate()?;
    let spec = env.bandit_spec()?;
    let (k, m) = (spec.k, spec.m);
    if params.k() != k || params.m() != m {
        return Err(Error::InvalidInput(format!(
            "params are {}x{}, environment needs {}x{}",
            params.k(),
            params.m(),
            k,
            m
        )));
    }
    if n == 0 {
        return Err(Error::InvalidInput("cannot simulate zero trials".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut signals = vec![Array2::<f64>::zeros((n, m)); k];
    let mut actions = Vec::with_capacity(n);
    let mut rewards = Vec::with_capacity(n);
    let mut choice_probs = Array2::zeros((n, m));
    let mut probs = vec![0.0; m];
    let mut state = ValueState::new(k, m);
    for t in 0..n {
        if t >= 1 {
            let a_prev = actions[t - 1];
            let r_prev = rewards[t - 1] as u8 as f64;
            signals[0][[t, a_prev]] = r_prev;
            if k == 2 {
                signals[1][[t, a_prev]] = 1.0;
            }
        }
        let x = state.step(params, signals.iter().map(|s| s.row(t)), &spec.weights);
        softmax_into(x.view(), &mut probs);
        for j in 0..m {
            choice_probs[[t, j]] = probs[j];
        }
        let draw: f64 = rng.random();
        let mut acc = 0.0;
        let mut action = m - 1;
        for (j, &pj) in probs.iter().enumerate() {
            acc += pj;
            if draw < acc {
                action = j;
                break;
            }
        }
        let reward_draw: f64 = rng.random();
        let reward = u8::from(reward_draw < env.reward_probs[action]);
        actions.push(action);
        rewards.push(reward);
    }
    let episode = Episode::new(actions, signals)?;
    Ok(SimulatedEpisode {
        episode,
        spec,
        true_params: params.clone(),
        choice_probs,
        rewards,
        seed,
    })
}

/// Benchmark configuration: how many episodes, how long, which fitting
/// methods to compare, and the base fit options (the method field of
/// `fit` is overridden per compared method).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchConfig {
    pub env: EnvSpec,
    pub episodes: usize,
    pub trials: usize,
    pub methods: Vec<Method>,
    pub fit: FitOptions,
    pub seed: u64,
}

/// One method's results on one episode. `error` is set (and the value
/// fields cleared) when the fit failed, e.g. log-space recovery hitting a
/// degenerate row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodOutcome {
    pub method: Method,
    pub j_ub: Option<f64>,
    pub log_likelihood: Option<f64>,
    pub j_lb: Option<f64>,
    pub lb_truncated: Option<bool>,
    pub gap: Option<f64>,
    pub certified: Option<bool>,
    pub max_alpha_err: Option<f64>,
    pub max_beta_err: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub index: usize,
    pub sim_seed: u64,
    /// Negative log-likelihood of the data under the generating parameters.
    pub j_true: f64,
    pub methods: Vec<MethodOutcome>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodAggregate {
    pub method: Method,
    pub fitted: usize,
    pub failures: usize,
    pub median_j_ub: Option<f64>,
    pub median_gap: Option<f64>,
    pub certified: usize,
    pub max_certified_gap: Option<f64>,
    /// Fraction of successful fits with gap below 5 (only methods that
    /// produce bounds).
    pub frac_gap_below_5: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchSummary {
    pub outcomes: Vec<EpisodeOutcome>,
    pub aggregates: Vec<MethodAggregate>,
}

pub(crate) fn median(xs: &mut Vec<f64>) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    xs.sort_by(|a, b| a.partial_cmp(b).expect("no NaN in medians"));
    let n = xs.len();
    Some(if n % 2 == 1 { xs[n / 2] } else { 0.5 * (xs[n / 2 - 1] + xs[n / 2]) })
}

fn method_outcome(sim: &SimulatedEpisode, report: &Result<FitReport>, method: Method) -> MethodOutcome {
    match report {
        Ok(rep) => {
            let da = (&rep.params.alpha - &sim.true_params.alpha)
                .iter()
                .fold(0.0f64, |acc, v| acc.max(v.abs()));
            let db = (&rep.params.beta - &sim.true_params.beta)
                .iter()
                .fold(0.0f64, |acc, v| acc.max(v.abs()));
            MethodOutcome {
                method,
                j_ub: Some(rep.j_ub),
                log_likelihood: Some(rep.log_likelihood),
                j_lb: rep.relax.as_ref().map(|r| r.j_lb),
                lb_truncated: rep.relax.as_ref().map(|r| r.truncated),
                gap: rep.gap,
                certified: rep.certificate.as_ref().map(|c| c.certified),
                max_alpha_err: Some(da),
                max_beta_err: Some(db),
                error: None,
            }
        }
        Err(e) => MethodOutcome {
            method,
            j_ub: None,
            log_likelihood: None,
            j_lb: None,
            lb_truncated: None,
            gap: None,
            certified: None,
            max_alpha_err: None,
            max_beta_err: None,
            error: Some(e.to_string()),
        },
    }
}

fn episode_outcome(config: &BenchConfig, index: usize) -> Result<EpisodeOutcome> {
    let sim_seed = derive_seed(config.seed, 10_000 + index as u64);
    let param_seed = derive_seed(config.seed, 30_000 + index as u64);
    let params = random_params(&config.env, param_seed)?;
    let sim = simulate_episode(&config.env, &params, config.trials, sim_seed)?;
    let j_true = objective(&sim.true_params, &sim.episode, &sim.spec)?;
    let mut methods = Vec::with_capacity(config.methods.len());
    // Every method fits from the same seed so comparisons share their
    // random starts.
    let fit_seed = derive_seed(config.seed, 20_000 + index as u64);
    for &method in &config.methods {
        let opts = FitOptions { method, seed: fit_seed, ..config.fit.clone() };
        let report = fit(&sim.episode, &sim.spec, &opts);
        methods.push(method_outcome(&sim, &report, method));
    }
    Ok(EpisodeOutcome { index, sim_seed, j_true, methods })
}

fn aggregate(config: &BenchConfig, outcomes: &[EpisodeOutcome]) -> Vec<MethodAggregate> {
    config
        .methods
        .iter()
        .enumerate()
        .map(|(mi, &method)| {
            let per: Vec<&MethodOutcome> = outcomes.iter().map(|o| &o.methods[mi]).collect();
            let failures = per.iter().filter(|m| m.error.is_some()).count();
            let mut j_ubs: Vec<f64> = per.iter().filter_map(|m| m.j_ub).collect();
            let mut gaps: Vec<f64> = per.iter().filter_map(|m| m.gap).collect();
            let certified_gaps: Vec<f64> = per
                .iter()
                .filter(|m| m.certified == Some(true))
                .filter_map(|m| m.gap)
                .collect();
            let frac_below = if gaps.is_empty() {
                None
            } else {
                Some(gaps.iter().filter(|&&g| g < 5.0).count() as f64 / gaps.len() as f64)
            };
            MethodAggregate {
                method,
                fitted: per.len() - failures,
                failures,
                median_j_ub: median(&mut j_ubs),
                median_gap: median(&mut gaps),
                certified: per.iter().filter(|m| m.certified == Some(true)).count(),
                max_certified_gap: certified_gaps.iter().cloned().fold(None, |acc: Option<f64>, g| {
                    Some(acc.map_or(g, |a| a.max(g)))
                }),
                frac_gap_below_5: frac_below,
            }
        })
        .collect()
}

/// Runs the benchmark with episode-level parallelism. Thread count comes
/// from the `IMAB_THREADS` environment variable when set; per-episode
/// seeds are derived from the master seed, so results do not depend on
/// scheduling.
pub fn run_benchmark(config: &BenchConfig) -> Result<BenchSummary> {
    let threads = std::env::var("IMAB_THREADS").ok().and_then(|v| v.parse::<usize>().ok());
    run_benchmark_with_threads(config, threads)
}

/// Same as [`run_benchmark`] with an explicit thread count (`None` uses
/// the default rayon pool).
pub fn run_benchmark_with_threads(config: &BenchConfig, threads: Option<usize>) -> Result<BenchSummary> {
    config.env.validate()?;
    if config.episodes == 0 {
        return Err(Error::InvalidInput("benchmark needs at least one episode".into()));
    }
    if config.methods.is_empty() {
        return Err(Error::InvalidInput("benchmark needs at least one method".into()));
    }
    let inner = || -> Result<Vec<EpisodeOutcome>> {
        (0..config.episodes)
            .into_par_iter()
            .map(|i| episode_outcome(config, i))
            .collect()
    };
    let outcomes = match threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?
            .install(inner),
        None => inner(),
    }?;
    let aggregates = aggregate(config, &outcomes);
    Ok(BenchSummary { outcomes, aggregates })
}
