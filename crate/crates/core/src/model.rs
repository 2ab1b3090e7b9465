//! Bandit behavior model: domain types, forward value dynamics, softmax
//! policy, and the negative log-likelihood objective.
//!
//! The model tracks one value vector per subsignal, updated per trial as
//! `z(t) = (1 - alpha) * z(t-1) + alpha * beta * u(t)` elementwise per arm,
//! with `z(0) = 0`. The policy scores are the weighted sum of the subsignal
//! values, and actions follow a softmax over those scores.

use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{Error, Result};
use crate::util::{log_sum_exp, softmax_into};

/// Problem-level dimensions: arm count, subsignal count, and the fixed
/// weight vector combining subsignal values into policy scores.
#[derive(Debug, Clone, PartialEq)]
pub struct BanditSpec {
    pub m: usize,
    pub k: usize,
    pub weights: Vec<f64>,
}

impl BanditSpec {
    pub fn new(m: usize, k: usize, weights: Vec<f64>) -> Result<Self> {
        if m < 2 {
            return Err(Error::InvalidInput(format!("arm count m = {m}, need m >= 2")));
        }
        if k < 1 {
            return Err(Error::InvalidInput("subsignal count k must be >= 1".into()));
        }
        if weights.len() != k {
            return Err(Error::InvalidInput(format!(
                "weight vector has {} entries, expected k = {k}",
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidInput("weights must be finite".into()));
        }
        Ok(Self { m, k, weights })
    }

    /// Spec with the default all-ones weight vector.
    pub fn uniform(m: usize, k: usize) -> Result<Self> {
        Self::new(m, k, vec![1.0; k])
    }
}

/// One observed session: the action sequence and, per subsignal, the
/// n-by-m matrix of reward-signal rows (row t-1 is the signal entering the
/// value update for trial t).
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    actions: Vec<usize>,
    signals: Vec<Array2<f64>>,
}

impl Episode {
    pub fn new(actions: Vec<usize>, signals: Vec<Array2<f64>>) -> Result<Self> {
        if signals.is_empty() {
            return Err(Error::InvalidEpisode("episode needs at least one signal matrix".into()));
        }
        let n = actions.len();
        if n == 0 {
            return Err(Error::InvalidEpisode("episode has no trials".into()));
        }
        let m = signals[0].ncols();
        for (i, s) in signals.iter().enumerate() {
            if s.nrows() != n || s.ncols() != m {
                return Err(Error::InvalidEpisode(format!(
                    "signal {i} has shape {}x{}, expected {n}x{m}",
                    s.nrows(),
                    s.ncols()
                )));
            }
            if s.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidEpisode(format!("signal {i} contains non-finite entries")));
            }
        }
        if let Some(&a) = actions.iter().find(|&&a| a >= m) {
            return Err(Error::InvalidEpisode(format!("action index {a} out of range for m = {m}")));
        }
        Ok(Self { actions, signals })
    }

    pub fn n(&self) -> usize {
        self.actions.len()
    }

    pub fn m(&self) -> usize {
        self.signals[0].ncols()
    }

    pub fn k(&self) -> usize {
        self.signals.len()
    }

    pub fn actions(&self) -> &[usize] {
        &self.actions
    }

    pub fn signals(&self) -> &[Array2<f64>] {
        &self.signals
    }

    pub fn signal(&self, i: usize) -> &Array2<f64> {
        &self.signals[i]
    }

    /// Checks that this episode matches the dimensions of `spec`.
    pub fn check_spec(&self, spec: &BanditSpec) -> Result<()> {
        if self.m() != spec.m || self.k() != spec.k {
            return Err(Error::InvalidInput(format!(
                "episode is {} arms / {} signals, spec is {} / {}",
                self.m(),
                self.k(),
                spec.m,
                spec.k
            )));
        }
        Ok(())
    }
}

/// Per-subsignal, per-arm learning rates and sensitivities. Both matrices
/// are k-by-m; alpha entries live in [0, 1] and beta entries in [0, inf).
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub alpha: Array2<f64>,
    pub beta: Array2<f64>,
}

impl Params {
    pub fn new(alpha: Array2<f64>, beta: Array2<f64>) -> Result<Self> {
        if alpha.dim() != beta.dim() {
            return Err(Error::InvalidInput(format!(
                "alpha is {:?}, beta is {:?}; shapes must match",
                alpha.dim(),
                beta.dim()
            )));
        }
        if alpha.iter().any(|&a| !(0.0..=1.0).contains(&a)) {
            return Err(Error::InvalidInput("alpha entries must lie in [0, 1]".into()));
        }
        if beta.iter().any(|&b| !b.is_finite() || b < 0.0) {
            return Err(Error::InvalidInput("beta entries must be finite and >= 0".into()));
        }
        Ok(Self { alpha, beta })
    }

    pub fn k(&self) -> usize {
        self.alpha.nrows()
    }

    pub fn m(&self) -> usize {
        self.alpha.ncols()
    }
}

/// Actions encoded as one-hot rows: an n-by-m 0/1 matrix with exactly one
/// 1 per row.
#[derive(Debug, Clone, PartialEq)]
pub struct OneHotTrace {
    pub y: Array2<f64>,
}

/// Encodes 0-based action indices as one-hot rows.
pub fn one_hot(actions: &[usize], m: usize) -> Result<OneHotTrace> {
    let mut y = Array2::zeros((actions.len(), m));
    for (t, &a) in actions.iter().enumerate() {
        if a >= m {
            return Err(Error::InvalidEpisode(format!("action index {a} out of range for m = {m}")));
        }
        y[[t, a]] = 1.0;
    }
    Ok(OneHotTrace { y })
}

/// Incremental evaluator of the value recursion. The simulator and the
/// trajectory evaluator share this so replayed probabilities are bitwise
/// identical to the ones used during generation.
#[derive(Debug, Clone)]
pub(crate) struct ValueState {
    z: Vec<Array1<f64>>,
    x: Array1<f64>,
}

impl ValueState {
    pub(crate) fn new(k: usize, m: usize) -> Self {
        Self {
            z: vec![Array1::zeros(m); k],
            x: Array1::zeros(m),
        }
    }

    /// Applies one trial's signal rows and returns the updated policy scores.
    pub(crate) fn step<'a, I>(&mut self, params: &Params, u_rows: I, weights: &[f64]) -> &Array1<f64>
    where
        I: Iterator<Item = ArrayView1<'a, f64>>,
    {
        for (i, u) in u_rows.enumerate() {
            let z = &mut self.z[i];
            for j in 0..z.len() {
                let a = params.alpha[[i, j]];
                let b = params.beta[[i, j]];
                z[j] = (1.0 - a) * z[j] + a * b * u[j];
            }
        }
        self.x.fill(0.0);
        for (i, z) in self.z.iter().enumerate() {
            let w = weights[i];
            for j in 0..self.x.len() {
                self.x[j] += w * z[j];
            }
        }
        &self.x
    }
}

/// Runs the value recursion over the whole episode; row t-1 of the result
/// is the policy-score vector for trial t.
pub fn value_trajectory(params: &Params, episode: &Episode, spec: &BanditSpec) -> Result<Array2<f64>> {
    episode.check_spec(spec)?;
    if params.k() != spec.k || params.m() != spec.m {
        return Err(Error::InvalidInput(format!(
            "params are {}x{}, spec is {}x{}",
            params.k(),
            params.m(),
            spec.k,
            spec.m
        )));
    }
    let (n, m) = (episode.n(), episode.m());
    let mut state = ValueState::new(spec.k, m);
    let mut out = Array2::zeros((n, m));
    for t in 0..n {
        let x = state.step(params, episode.signals.iter().map(|s| s.row(t)), &spec.weights);
        out.row_mut(t).assign(x);
    }
    Ok(out)
}

/// Softmax choice probabilities for one trial's score vector.
pub fn policy_probs(x: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
    if x.is_empty() {
        return Err(Error::InvalidInput("empty score vector".into()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("policy scores must be finite".into()));
    }
    let mut out = Array1::zeros(x.len());
    softmax_into(x, out.as_slice_mut().expect("contiguous"));
    Ok(out)
}

/// Negative log-likelihood of the observed actions under `params`.
///
/// Because each observed action is a basis vector, the per-trial loss is
/// `logsumexp(x(t)) - x_{a(t)}(t)`, which is nonnegative. Evaluated at
/// recovered parameters this is the upper bound J_ub.
pub fn objective(params: &Params, episode: &Episode, spec: &BanditSpec) -> Result<f64> {
    let x = value_trajectory(params, episode, spec)?;
    Ok(nll_of_scores(&x, episode.actions()))
}

/// Signed log-likelihood, i.e. the negation of [`objective`].
pub fn log_likelihood(params: &Params, episode: &Episode, spec: &BanditSpec) -> Result<f64> {
    Ok(-objective(params, episode, spec)?)
}

/// Negative log-likelihood of `actions` given precomputed score rows.
pub(crate) fn nll_of_scores(x: &Array2<f64>, actions: &[usize]) -> f64 {
    let mut j = 0.0;
    for (t, &a) in actions.iter().enumerate() {
        let row = x.row(t);
        j += log_sum_exp(row) - row[a];
    }
    j
}
