//! Recursion elimination: rewrite the value dynamics as inner products
//! between per-arm gain profiles and lagged signal history.
//!
//! Unrolling `z(t) = (1 - a) z(t-1) + a b u(t)` gives
//! `z_j(t) = sum_{l=0}^{p-1} a_j b_j (1 - a_j)^l u_j(t - l)` (exactly, for
//! p = t). Collecting the decay coefficients per arm into a gain matrix and
//! the signal history into lag matrices makes the score trajectory linear
//! in the gains — the basis for the convex relaxation.

use ndarray::{Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};
use crate::model::{Episode, Params};

/// Lagged history of one subsignal. For arm `j`, `arm_design(j)` is the
/// n-by-p matrix whose `(t, l)` entry is `u_j(t - l)`, zero for `t < l`
/// (lags reaching before the first trial).
#[derive(Debug, Clone, PartialEq)]
pub struct LagStack {
    n: usize,
    m: usize,
    p: usize,
    per_arm: Vec<Array2<f64>>,
}

impl LagStack {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn arm_design(&self, j: usize) -> ArrayView2<'_, f64> {
        self.per_arm[j].view()
    }

    /// The p-by-m lag matrix for trial `t` (0-based): row `l` is the signal
    /// from `l` trials back, newest first, zero-padded at the start of the
    /// episode.
    pub fn trial_matrix(&self, t: usize) -> Array2<f64> {
        let mut out = Array2::zeros((self.p, self.m));
        for j in 0..self.m {
            let d = &self.per_arm[j];
            for l in 0..self.p {
                out[[l, j]] = d[[t, l]];
            }
        }
        out
    }
}

/// Builds the lag stack for one signal matrix (rows = trials).
pub fn build_lag_stack(signal: ArrayView2<'_, f64>, p: usize) -> Result<LagStack> {
    let (n, m) = signal.dim();
    if p == 0 || p > n {
        return Err(Error::InvalidInput(format!("history depth p = {p} must satisfy 1 <= p <= n = {n}")));
    }
    let mut per_arm = Vec::with_capacity(m);
    for j in 0..m {
        let mut d = Array2::zeros((n, p));
        for t in 0..n {
            for l in 0..=t.min(p - 1) {
                d[[t, l]] = signal[[t - l, j]];
            }
        }
        per_arm.push(d);
    }
    Ok(LagStack { n, m, p, per_arm })
}

/// Lag stacks for every subsignal of an episode.
pub fn build_lag_stacks(episode: &Episode, p: usize) -> Result<Vec<LagStack>> {
    episode.signals().iter().map(|s| build_lag_stack(s.view(), p)).collect()
}

/// Per-arm gain profiles for one subsignal: row `j` holds the lag
/// coefficients applied to arm `j`'s signal history, newest lag first.
#[derive(Debug, Clone, PartialEq)]
pub struct GainMatrix {
    pub g: Array2<f64>,
}

impl GainMatrix {
    pub fn zeros(m: usize, p: usize) -> Self {
        Self { g: Array2::zeros((m, p)) }
    }

    pub fn m(&self) -> usize {
        self.g.nrows()
    }

    pub fn p(&self) -> usize {
        self.g.ncols()
    }

    pub fn row(&self, j: usize) -> ArrayView1<'_, f64> {
        self.g.row(j)
    }
}

/// Geometric gain profile for one (alpha, beta) pair:
/// `(ab, (1-a)ab, (1-a)^2 ab, ...)`, length p.
pub fn geometric_profile(alpha: f64, beta: f64, p: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(p);
    let mut coef = alpha * beta;
    for _ in 0..p {
        out.push(coef);
        coef *= 1.0 - alpha;
    }
    out
}

/// Gain matrices implied by model parameters, one per subsignal.
pub fn params_to_gains(params: &Params, p: usize) -> Vec<GainMatrix> {
    let (k, m) = (params.k(), params.m());
    let mut out = Vec::with_capacity(k);
    for i in 0..k {
        let mut g = Array2::zeros((m, p));
        for j in 0..m {
            let prof = geometric_profile(params.alpha[[i, j]], params.beta[[i, j]], p);
            for (l, v) in prof.into_iter().enumerate() {
                g[[j, l]] = v;
            }
        }
        out.push(GainMatrix { g });
    }
    out
}

/// Score trajectory implied by arbitrary gain matrices: the weighted sum
/// over subsignals of per-arm inner products with the lag history.
pub fn values_from_gains(gains: &[GainMatrix], stacks: &[LagStack], weights: &[f64]) -> Result<Array2<f64>> {
    if gains.len() != stacks.len() || gains.len() != weights.len() {
        return Err(Error::InvalidInput(format!(
            "{} gain matrices, {} lag stacks, {} weights; counts must match",
            gains.len(),
            stacks.len(),
            weights.len()
        )));
    }
    if gains.is_empty() {
        return Err(Error::InvalidInput("need at least one subsignal".into()));
    }
    let (n, m, p) = (stacks[0].n(), stacks[0].m(), stacks[0].p());
    for (i, (g, s)) in gains.iter().zip(stacks.iter()).enumerate() {
        if s.n() != n || s.m() != m || s.p() != p || g.m() != m || g.p() != p {
            return Err(Error::InvalidInput(format!("subsignal {i} has mismatched dimensions")));
        }
    }
    let mut x = Array2::zeros((n, m));
    for (i, (g, s)) in gains.iter().zip(stacks.iter()).enumerate() {
        let w = weights[i];
        if w == 0.0 {
            continue;
        }
        for j in 0..m {
            let col = s.arm_design(j).dot(&g.row(j));
            for t in 0..n {
                x[[t, j]] += w * col[t];
            }
        }
    }
    Ok(x)
}
