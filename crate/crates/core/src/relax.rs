//! Convex relaxation of the fitting problem.
//!
//! Instead of geometric gain profiles (which make the likelihood nonconvex
//! in the parameters), each per-arm profile is allowed to be any
//! nonnegative nonincreasing vector. The negative log-likelihood is convex
//! in the gains, so the relaxed minimum is a true lower bound on the best
//! attainable objective of the original model. Solved with an accelerated
//! projected-gradient method (backtracking line search, momentum restart
//! on objective increase).

use std::collections::VecDeque;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lag::{build_lag_stacks, GainMatrix, LagStack};
use crate::model::{nll_of_scores, BanditSpec, Episode};
use crate::util::softmax_into;

/// Projects `z` in place onto the cone of nonnegative nonincreasing
/// vectors `{ z : z_1 >= z_2 >= ... >= z_p >= 0 }`.
///
/// Pool-adjacent-violators gives the nonincreasing fit; clamping the
/// pooled values at zero then yields the projection onto the intersection
/// (clamping cannot break the ordering).
pub fn project_monotone_nonneg(z: &mut [f64]) {
    let q = z.len();
    if q == 0 {
        return;
    }
    let mut means: Vec<f64> = Vec::with_capacity(q);
    let mut counts: Vec<usize> = Vec::with_capacity(q);
    for t in 0..q {
        let mut mean = z[t];
        let mut count = 1usize;
        while let Some(&pm) = means.last() {
            if pm >= mean {
                break;
            }
            let pc = counts.pop().unwrap();
            means.pop();
            mean = (pm * pc as f64 + mean * count as f64) / (pc + count) as f64;
            count += pc;
        }
        means.push(mean);
        counts.push(count);
    }
    let mut idx = 0;
    for (mean, count) in means.into_iter().zip(counts.into_iter()) {
        let v = mean.max(0.0);
        for _ in 0..count {
            z[idx] = v;
            idx += 1;
        }
    }
}

fn project_gains(gains: &mut [GainMatrix]) {
    for gm in gains.iter_mut() {
        for mut row in gm.g.rows_mut() {
            project_monotone_nonneg(row.as_slice_mut().expect("gain rows are contiguous"));
        }
    }
}

fn gains_dot(a: &[GainMatrix], b: &[GainMatrix]) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| x.g.iter().zip(y.g.iter()).map(|(u, v)| u * v).sum::<f64>())
        .sum()
}

fn gains_norm(a: &[GainMatrix]) -> f64 {
    gains_dot(a, a).sqrt()
}

/// `ca * a + cb * b`, elementwise over all gain matrices.
fn gains_combine(a: &[GainMatrix], ca: f64, b: &[GainMatrix], cb: f64) -> Vec<GainMatrix> {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| {
            let mut g = x.g.clone();
            g.zip_mut_with(&y.g, |u, &v| *u = ca * *u + cb * v);
            GainMatrix { g }
        })
        .collect()
}

fn gains_zeros(k: usize, m: usize, p: usize) -> Vec<GainMatrix> {
    (0..k).map(|_| GainMatrix::zeros(m, p)).collect()
}

/// The relaxed fitting problem for one episode at history depth `p`:
/// precomputed lag stacks plus the observed actions.
#[derive(Debug, Clone)]
pub struct RelaxedProblem {
    stacks: Vec<LagStack>,
    actions: Vec<usize>,
    weights: Vec<f64>,
    n: usize,
    m: usize,
    k: usize,
    p: usize,
}

impl RelaxedProblem {
    pub fn new(episode: &Episode, spec: &BanditSpec, p: usize) -> Result<Self> {
        episode.check_spec(spec)?;
        let stacks = build_lag_stacks(episode, p)?;
        Ok(Self {
            stacks,
            actions: episode.actions().to_vec(),
            weights: spec.weights.clone(),
            n: episode.n(),
            m: episode.m(),
            k: episode.k(),
            p,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn p(&self) -> usize {
        self.p
    }

    fn check_gains(&self, gains: &[GainMatrix]) -> Result<()> {
        if gains.len() != self.k || gains.iter().any(|g| g.m() != self.m || g.p() != self.p) {
            return Err(Error::InvalidInput(format!(
                "gains must be {} matrices of {}x{}",
                self.k, self.m, self.p
            )));
        }
        Ok(())
    }

    /// Policy-score rows implied by `gains` (n-by-m).
    pub fn scores(&self, gains: &[GainMatrix]) -> Result<Array2<f64>> {
        self.check_gains(gains)?;
        crate::lag::values_from_gains(gains, &self.stacks, &self.weights)
    }

    /// Negative log-likelihood at `gains`.
    pub fn objective(&self, gains: &[GainMatrix]) -> Result<f64> {
        Ok(nll_of_scores(&self.scores(gains)?, &self.actions))
    }

    /// Per-trial softmax residual rows `softmax(x(t)) - y(t)`.
    fn residual(&self, scores: &Array2<f64>) -> Array2<f64> {
        let mut r = Array2::zeros((self.n, self.m));
        let mut buf = vec![0.0; self.m];
        for t in 0..self.n {
            softmax_into(scores.row(t), &mut buf);
            for j in 0..self.m {
                r[[t, j]] = buf[j];
            }
            r[[t, self.actions[t]]] -= 1.0;
        }
        r
    }

    fn gradient_from_residual(&self, r: &Array2<f64>) -> Vec<GainMatrix> {
        let mut out = gains_zeros(self.k, self.m, self.p);
        for j in 0..self.m {
            let col = r.column(j).to_owned();
            for i in 0..self.k {
                let w = self.weights[i];
                if w == 0.0 {
                    continue;
                }
                let grad_row = self.stacks[i].arm_design(j).t().dot(&col);
                for l in 0..self.p {
                    out[i].g[[j, l]] = w * grad_row[l];
                }
            }
        }
        out
    }

    /// Gradient of the objective with respect to every gain entry.
    pub fn gradient(&self, gains: &[GainMatrix]) -> Result<Vec<GainMatrix>> {
        let scores = self.scores(gains)?;
        Ok(self.gradient_from_residual(&self.residual(&scores)))
    }

    fn eval(&self, gains: &[GainMatrix]) -> (f64, Array2<f64>) {
        let scores = self.scores(gains).expect("dimensions checked by caller");
        (nll_of_scores(&scores, &self.actions), scores)
    }

    /// Norm of the projected-gradient residual `||G - P(G - grad J(G))||`.
    fn prox_residual(&self, gains: &[GainMatrix]) -> f64 {
        let grad = self.gradient(gains).expect("dimensions checked by caller");
        let mut stepped = gains_combine(gains, 1.0, &grad, -1.0);
        project_gains(&mut stepped);
        gains_norm(&gains_combine(gains, 1.0, &stepped, -1.0))
    }
}

/// Knobs for the relaxed solver.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverOptions {
    pub max_iters: usize,
    /// Stop when the average per-iteration objective decrease over the
    /// last ten iterations drops below this, relative to max(1, |J|).
    pub rel_tol: f64,
    /// Stop when the projected-gradient residual norm drops below this.
    pub grad_tol: f64,
    pub init_step: f64,
    /// Step shrink factor for the backtracking line search, in (0, 1).
    pub backtrack: f64,
    /// Keep the per-iteration objective values in the solution.
    #[serde(default)]
    pub record_trace: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iters: 50_000,
            rel_tol: 1e-9,
            grad_tol: 1e-7,
            init_step: 1.0,
            backtrack: 0.5,
            record_trace: false,
        }
    }
}

/// Output of the relaxed solve. When `converged` holds, `objective` is the
/// lower bound on the original problem's best value at this depth.
#[derive(Debug, Clone)]
pub struct RelaxedSolution {
    pub gains: Vec<GainMatrix>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub grad_residual: f64,
    pub n: usize,
    pub p: usize,
    pub trace: Option<Vec<f64>>,
}

/// Solves the relaxed problem from the all-zero starting point.
pub fn solve_relaxed(problem: &RelaxedProblem, options: &SolverOptions) -> RelaxedSolution {
    let init = gains_zeros(problem.k, problem.m, problem.p);
    solve_relaxed_from(problem, options, init).expect("zero init always has valid dimensions")
}

/// Solves the relaxed problem from a caller-supplied starting point
/// (projected onto the feasible cone first).
pub fn solve_relaxed_from(
    problem: &RelaxedProblem,
    options: &SolverOptions,
    init: Vec<GainMatrix>,
) -> Result<RelaxedSolution> {
    problem.check_gains(&init)?;
    let mut x = init;
    project_gains(&mut x);

    let (mut jx, _) = problem.eval(&x);
    let mut trace = options.record_trace.then(|| vec![jx]);

    // Fast path: already stationary (e.g. signals are all zero).
    let rho0 = problem.prox_residual(&x);
    if rho0 <= options.grad_tol {
        return Ok(RelaxedSolution {
            gains: x,
            objective: jx,
            iterations: 0,
            converged: true,
            grad_residual: rho0,
            n: problem.n,
            p: problem.p,
            trace,
        });
    }

    let mut x_prev;
    let mut y = x.clone();
    let mut t = 1.0f64;
    let mut step = options.init_step;
    let mut window: VecDeque<f64> = VecDeque::with_capacity(12);
    window.push_back(jx);
    let mut converged = false;
    let mut iterations = 0;

    // One backtracking descent step from `base`; returns the accepted point
    // and its objective. The sufficient-decrease test guarantees
    // J(next) <= J(base) whenever base is feasible.
    let descend = |base: &[GainMatrix], j_base: f64, grad: &[GainMatrix], step: &mut f64| {
        loop {
            let mut cand = gains_combine(base, 1.0, grad, -*step);
            project_gains(&mut cand);
            let (j_cand, _) = problem.eval(&cand);
            let diff = gains_combine(&cand, 1.0, base, -1.0);
            let rhs = j_base + gains_dot(grad, &diff) + gains_dot(&diff, &diff) / (2.0 * *step);
            if j_cand <= rhs + 1e-12 * rhs.abs().max(1.0) || *step < 1e-18 {
                return (cand, j_cand);
            }
            *step *= options.backtrack;
        }
    };

    for iter in 1..=options.max_iters {
        iterations = iter;
        step = (step * 1.5).min(1e8);

        let (jy, scores_y) = problem.eval(&y);
        let grad_y = problem.gradient_from_residual(&problem.residual(&scores_y));
        let (mut x_new, mut j_new) = descend(&y, jy, &grad_y, &mut step);

        if j_new > jx {
            // Momentum overshot: restart from the last accepted point.
            t = 1.0;
            let (_, scores_x) = problem.eval(&x);
            let grad_x = problem.gradient_from_residual(&problem.residual(&scores_x));
            let redo = descend(&x, jx, &grad_x, &mut step);
            x_new = redo.0;
            j_new = redo.1;
        }
        if j_new > jx {
            // Line-search slack let a roundoff-level increase through; we
            // are at the floating-point floor. Null step keeps J monotone.
            t = 1.0;
            x_new = x.clone();
            j_new = jx;
        }

        x_prev = std::mem::replace(&mut x, x_new);
        jx = j_new;

        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let momentum = (t - 1.0) / t_next;
        y = gains_combine(&x, 1.0 + momentum, &x_prev, -momentum);
        t = t_next;

        if let Some(tr) = trace.as_mut() {
            tr.push(jx);
        }
        window.push_back(jx);
        if window.len() > 11 {
            window.pop_front();
        }

        // rel_tol <= 0 disables the window criterion (useful when only the
        // residual-based stop should count).
        if options.rel_tol > 0.0 && window.len() == 11 {
            let rel = (window.front().unwrap() - jx) / (10.0 * jx.abs().max(1.0));
            if rel <= options.rel_tol {
                converged = true;
                break;
            }
        }
        if iter % 25 == 0 && problem.prox_residual(&x) <= options.grad_tol {
            converged = true;
            break;
        }
    }

    let grad_residual = problem.prox_residual(&x);
    Ok(RelaxedSolution {
        gains: x,
        objective: jx,
        iterations,
        converged,
        grad_residual,
        n: problem.n,
        p: problem.p,
        trace,
    })
}
