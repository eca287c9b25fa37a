//! Blocked and collapsed Gibbs sampling for discrete Markov networks.

pub mod dynamic;
pub mod elim;
pub mod exec;
pub mod experiment;
pub mod graph;
pub mod model;
pub mod partition;
pub mod sampling;
pub mod uai_io;

pub use model::{Assignment, Factor, MarkovNetwork, ModelError, VarId, Variable};
