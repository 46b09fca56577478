//! Closed-loop generative search for extremal geometric configurations:
//! exact oracles, differentiable surrogates, stochastic local search, a
//! conditional flow-matching model with geometry-aware sampling, and a
//! reward-guided fine-tuning loop tying them together.

pub mod error;
pub mod fdcheck;
pub mod flow;
pub mod geom;
pub mod logging;
pub mod par;
pub mod pipeline;
pub mod reward;
pub mod sampler;
pub mod search;
pub mod simplex;
pub mod surrogate;

pub use error::{Error, Result};
pub use geom::{
    Direction, FeasibilityReport, PointConfiguration, ProblemInstance, ProblemKind,
};
pub use search::ScoredSample;
pub use surrogate::{Surrogate, SurrogateEval};
