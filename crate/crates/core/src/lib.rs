//! Kantorovich metrics between labeled Markov chains under the Cantor
//! ultrametric, and their use in adaptive partition refinement of
//! deterministic dynamical systems.
//!
//! * [`chain`]: labeled chains and the forward word-probability engine.
//! * [`kantor`]: the prefix-tree recursion for the Kantorovich distance.
//! * [`oracle`]: exact optimal transport over enumerated words, used to check it.
//! * [`dynsys`]: piecewise-affine systems, word classes, measure oracles, abstractions.
//! * [`refine`]: greedy refinement driven by the chain metric.
//! * [`control`]: per-action abstractions, value iteration and closed-loop evaluation.

pub mod chain;
pub mod control;
pub mod dynsys;
pub mod error;
pub mod kantor;
pub mod oracle;
pub mod refine;

pub use chain::{validate_chain, Alphabet, ForwardState, LabeledMarkovChain, Violation, Word};
pub use error::{Error, Result};
pub use kantor::{cantor_distance, chain_metric, kant_metric, level_increments, MetricResult};
