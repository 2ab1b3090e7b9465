//! End-to-end fitting pipelines.
//!
//! `Sequential` solves the convex relaxation first (step I), then recovers
//! parameters from the relaxed gain profiles (step II). This yields both an
//! estimate and a lower bound on the best attainable negative
//! log-likelihood, hence a per-instance optimality gap — and, when the
//! recovered profiles reproduce the relaxed ones exactly, a certificate
//! that the estimate is globally optimal. `Direct` is the conventional
//! alternative: projected-gradient maximum likelihood on the parameters
//! themselves, multistarted, no bound. `LogspaceRecovery` swaps step II for
//! the log-domain regression.

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{objective, BanditSpec, Episode, Params};
use crate::recover::{certify, recover_params, recover_params_logspace, Certificate, RowFit, RowFitOptions};
use crate::relax::{solve_relaxed, RelaxedProblem, SolverOptions};
use crate::util::{derive_seed, softmax_into};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Sequential,
    Direct,
    LogspaceRecovery,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Method::Sequential => write!(f, "sequential"),
            Method::Direct => write!(f, "direct"),
            Method::LogspaceRecovery => write!(f, "logspace_recovery"),
        }
    }
}

/// Knobs for a fit run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitOptions {
    pub method: Method,
    /// History depth for the relaxation; `None` means full depth (p = n).
    pub depth: Option<usize>,
    /// Random restarts for the nonconvex stages (row fits, direct descent).
    pub restarts: usize,
    /// Entrywise certificate tolerance.
    pub eps_tilde: f64,
    /// Upper end of the beta range sampled by random restarts.
    pub beta_range: f64,
    pub seed: u64,
    pub solver: SolverOptions,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            method: Method::Sequential,
            depth: None,
            restarts: 10,
            eps_tilde: 1e-5,
            beta_range: 5.0,
            seed: 0,
            solver: SolverOptions::default(),
        }
    }
}

/// What step I produced.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RelaxSummary {
    /// Minimum of the relaxed problem. A lower bound on the best model
    /// objective when solved at full depth; at truncated depth it only
    /// bounds the depth-limited model class.
    pub j_lb: f64,
    pub truncated: bool,
    pub converged: bool,
    pub iterations: usize,
    pub grad_residual: f64,
}

/// Everything a fit run reports.
#[derive(Debug, Clone)]
pub struct FitReport {
    pub method: Method,
    /// History depth actually used.
    pub depth: usize,
    pub params: Params,
    /// Negative log-likelihood at the recovered parameters.
    pub j_ub: f64,
    pub log_likelihood: f64,
    pub relax: Option<RelaxSummary>,
    /// `j_ub - j_lb` whenever a bound exists.
    pub gap: Option<f64>,
    pub certificate: Option<Certificate>,
    /// Per-row recovery fits, indexed [subsignal][arm].
    pub row_fits: Option<Vec<Vec<RowFit>>>,
    pub total_row_loss: Option<f64>,
    pub restarts: usize,
}

fn resolve_depth(depth: Option<usize>, n: usize) -> Result<usize> {
    let p = depth.unwrap_or(n);
    if p == 0 || p > n {
        return Err(Error::InvalidInput(format!("depth {p} out of range for an episode of {n} trials")));
    }
    Ok(p)
}

/// Runs the configured pipeline on one episode.
pub fn fit(episode: &Episode, spec: &BanditSpec, opts: &FitOptions) -> Result<FitReport> {
    match opts.method {
        Method::Sequential => fit_sequential(episode, spec, opts),
        Method::Direct => fit_direct(episode, spec, opts),
        Method::LogspaceRecovery => fit_logspace(episode, spec, opts),
    }
}

fn fit_sequential(episode: &Episode, spec: &BanditSpec, opts: &FitOptions) -> Result<FitReport> {
    let p = resolve_depth(opts.depth, episode.n())?;
    let problem = RelaxedProblem::new(episode, spec, p)?;
    let sol = solve_relaxed(&problem, &opts.solver);
    let row_opts = RowFitOptions {
        starts: opts.restarts,
        beta_range: opts.beta_range,
        target_loss: opts.eps_tilde * opts.eps_tilde,
        max_iters: 300,
        seed: derive_seed(opts.seed, 1),
    };
    let (params, fits, total_loss) = recover_params(&sol.gains, &row_opts);
    let certificate = certify(&sol, &params, opts.eps_tilde);
    let j_ub = objective(&params, episode, spec)?;
    Ok(FitReport {
        method: Method::Sequential,
        depth: p,
        log_likelihood: -j_ub,
        j_ub,
        gap: Some(j_ub - sol.objective),
        relax: Some(RelaxSummary {
            j_lb: sol.objective,
            truncated: p < episode.n(),
            converged: sol.converged,
            iterations: sol.iterations,
            grad_residual: sol.grad_residual,
        }),
        certificate: Some(certificate),
        row_fits: Some(fits),
        total_row_loss: Some(total_loss),
        restarts: opts.restarts,
        params,
    })
}

fn fit_logspace(episode: &Episode, spec: &BanditSpec, opts: &FitOptions) -> Result<FitReport> {
    let p = resolve_depth(opts.depth, episode.n())?;
    let problem = RelaxedProblem::new(episode, spec, p)?;
    let sol = solve_relaxed(&problem, &opts.solver);
    let (params, fits, total_loss) = recover_params_logspace(&sol.gains)?;
    let certificate = certify(&sol, &params, opts.eps_tilde);
    let j_ub = objective(&params, episode, spec)?;
    Ok(FitReport {
        method: Method::LogspaceRecovery,
        depth: p,
        log_likelihood: -j_ub,
        j_ub,
        gap: Some(j_ub - sol.objective),
        relax: Some(RelaxSummary {
            j_lb: sol.objective,
            truncated: p < episode.n(),
            converged: sol.converged,
            iterations: sol.iterations,
            grad_residual: sol.grad_residual,
        }),
        certificate: Some(certificate),
        row_fits: Some(fits),
        total_row_loss: Some(total_loss),
        restarts: 0,
        params,
    })
}

/// Bound-only entry point: step I without parameter recovery.
pub fn lower_bound_only(
    episode: &Episode,
    spec: &BanditSpec,
    depth: Option<usize>,
    solver: &SolverOptions,
) -> Result<RelaxSummary> {
    let p = resolve_depth(depth, episode.n())?;
    let problem = RelaxedProblem::new(episode, spec, p)?;
    let sol = solve_relaxed(&problem, solver);
    Ok(RelaxSummary {
        j_lb: sol.objective,
        truncated: p < episode.n(),
        converged: sol.converged,
        iterations: sol.iterations,
        grad_residual: sol.grad_residual,
    })
}

/// Objective and its gradient in the parameters, by running the value
/// recursion forward and the adjoint recursion backward.
pub(crate) fn direct_eval(
    params: &Params,
    episode: &Episode,
    spec: &BanditSpec,
) -> (f64, Array2<f64>, Array2<f64>) {
    let (n, m, k) = (episode.n(), spec.m, spec.k);
    let actions = episode.actions();
    // Forward pass, keeping every per-subsignal value vector.
    let mut zs = vec![Array2::<f64>::zeros((k, m)); n + 1];
    let mut xs = Array2::<f64>::zeros((n, m));
    for t in 0..n {
        let (prev, rest) = zs.split_at_mut(t + 1);
        let z_prev = &prev[t];
        let z = &mut rest[0];
        for i in 0..k {
            let u = episode.signal(i).row(t);
            for j in 0..m {
                let a = params.alpha[[i, j]];
                let b = params.beta[[i, j]];
                z[[i, j]] = (1.0 - a) * z_prev[[i, j]] + a * b * u[j];
            }
        }
        for i in 0..k {
            let w = spec.weights[i];
            for j in 0..m {
                xs[[t, j]] += w * z[[i, j]];
            }
        }
    }
    let j_val = crate::model::nll_of_scores(&xs, actions);

    // Backward pass: s(t) = dJ/dz(t), accumulated into parameter gradients.
    let mut grad_a = Array2::<f64>::zeros((k, m));
    let mut grad_b = Array2::<f64>::zeros((k, m));
    let mut s = Array2::<f64>::zeros((k, m));
    let mut probs = vec![0.0; m];
    for t in (0..n).rev() {
        softmax_into(xs.row(t), &mut probs);
        probs[actions[t]] -= 1.0;
        for i in 0..k {
            let w = spec.weights[i];
            let u = episode.signal(i).row(t);
            for j in 0..m {
                let a = params.alpha[[i, j]];
                let b = params.beta[[i, j]];
                let s_t = w * probs[j] + (1.0 - a) * s[[i, j]];
                grad_a[[i, j]] += s_t * (b * u[j] - zs[t][[i, j]]);
                grad_b[[i, j]] += s_t * a * u[j];
                s[[i, j]] = s_t;
            }
        }
    }
    (j_val, grad_a, grad_b)
}

fn clamp_params(alpha: &mut Array2<f64>, beta: &mut Array2<f64>) {
    alpha.mapv_inplace(|v| v.clamp(0.0, 1.0));
    beta.mapv_inplace(|v| v.max(0.0));
}

/// One projected-gradient descent over the parameter box from a start.
fn direct_descent(
    episode: &Episode,
    spec: &BanditSpec,
    alpha0: Array2<f64>,
    beta0: Array2<f64>,
    max_iters: usize,
) -> (Params, f64) {
    let mut alpha = alpha0;
    let mut beta = beta0;
    clamp_params(&mut alpha, &mut beta);
    let params = Params::new(alpha.clone(), beta.clone()).expect("clamped into the box");
    let (mut j_cur, mut ga, mut gb) = direct_eval(&params, episode, spec);
    for _ in 0..max_iters {
        let gnorm = (ga.mapv(|v| v * v).sum() + gb.mapv(|v| v * v).sum()).sqrt();
        if gnorm <= 1e-14 * j_cur.max(1.0) {
            break;
        }
        let mut step = 1.0f64;
        let mut accepted = false;
        while step >= 1e-18 {
            let mut ca = &alpha - &ga.mapv(|v| v * step);
            let mut cb = &beta - &gb.mapv(|v| v * step);
            clamp_params(&mut ca, &mut cb);
            let d2 = (&ca - &alpha).mapv(|v| v * v).sum() + (&cb - &beta).mapv(|v| v * v).sum();
            if d2 == 0.0 {
                break; // projection pinned every coordinate: stationary
            }
            let cand = Params::new(ca.clone(), cb.clone()).expect("clamped into the box");
            let (jc, cga, cgb) = direct_eval(&cand, episode, spec);
            // Sufficient decrease on the projected step.
            if jc <= j_cur - 0.25 / step * d2 {
                alpha = ca;
                beta = cb;
                ga = cga;
                gb = cgb;
                accepted = j_cur - jc > 1e-16 * j_cur.max(1.0);
                j_cur = jc;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    (Params::new(alpha, beta).expect("clamped into the box"), j_cur)
}

fn fit_direct(episode: &Episode, spec: &BanditSpec, opts: &FitOptions) -> Result<FitReport> {
    episode.check_spec(spec)?;
    let (k, m) = (spec.k, spec.m);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(opts.seed, 2));
    let mut best: Option<(Params, f64)> = None;
    // Same local family and budget as the per-row recovery fits.
    for _ in 0..opts.restarts.max(1) {
        let a0 = Array2::from_shape_fn((k, m), |_| rng.random::<f64>());
        let b0 = Array2::from_shape_fn((k, m), |_| rng.random::<f64>() * opts.beta_range);
        let (params, j) = direct_descent(episode, spec, a0, b0, 300);
        if best.as_ref().map_or(true, |(_, bj)| j < *bj) {
            best = Some((params, j));
        }
    }
    let (params, j_ub) = best.expect("at least one start");
    Ok(FitReport {
        method: Method::Direct,
        depth: episode.n(),
        log_likelihood: -j_ub,
        j_ub,
        gap: None,
        relax: None,
        certificate: None,
        row_fits: None,
        total_row_loss: None,
        restarts: opts.restarts,
        params,
    })
}
