//! Tree search over rewritten pipelines under a fixed evaluation budget.
//!
//! Initialization sweeps the input pipeline across the model catalog and
//! seeds each frontier variant with one accuracy and one cost rewrite. The
//! main loop then selects a node by UCT with progressive widening, rewrites
//! it with an objective set by its accuracy rank, and keeps the most
//! accurate evaluated candidate as a new child.

mod engine;
pub mod trace;
mod tree;

pub use engine::{
    frontier_json, sweep_models, RunStats, Search, SearchConfig, SearchError, SearchOutcome, StopReason, Strategy,
};
pub use trace::{IterationRecord, Outcome, Phase};
pub use tree::{utility, widening_cap, NodeId, SearchNode, SearchSpaceExhausted, SearchTree};
