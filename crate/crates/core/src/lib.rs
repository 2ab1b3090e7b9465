//! Inverse fitting of forgetting Q-learning bandit models.
//!
//! Given observed actions and reward signals, this crate recovers per-arm
//! learning rates and reward sensitivities by maximum likelihood. The main
//! entry point is [`pipeline::fit`], which runs a convex relaxation to get
//! a certified lower bound on the best attainable negative log-likelihood,
//! then recovers parameters from the relaxed solution. A direct (local)
//! maximum-likelihood optimizer and a log-space recovery variant are also
//! provided, along with a simulator and benchmark harness.

pub mod error;
pub mod io;
pub mod lag;
pub mod model;
pub mod pipeline;
pub mod recover;
pub mod relax;
pub mod sim;
pub(crate) mod util;

pub use error::{Error, Result};
pub use util::derive_seed;

pub mod prelude {
    pub use crate::error::{Error, Result};
    pub use crate::model::{BanditSpec, Episode, OneHotTrace, Params};
}
