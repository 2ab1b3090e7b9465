use thiserror::Error;

/// Errors produced by model construction, evaluation, and fitting.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid episode: {0}")]
    InvalidEpisode(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A gain row that cannot be represented by any (alpha, beta) pair in
    /// log space (e.g. a recovered learning rate of zero).
    #[error("degenerate row: {0}")]
    DegenerateRow(String),

    /// Local optimizer failed; carries the best iterate seen so far.
    #[error("optimizer failure: {msg} (best L = {best_value})")]
    OptimizerFailure {
        msg: String,
        best_alpha: f64,
        best_beta: f64,
        best_value: f64,
    },

    /// Failure while reading or writing files/streams.
    #[error("i/o: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;
