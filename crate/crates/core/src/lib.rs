//! Multi-objective optimizer for LLM-powered document pipelines.
//!
//! The optimizer rewrites a pipeline with a registry of directives, scores
//! every rewrite on cost and accuracy, and grows a search tree whose node
//! selection rewards pipelines that extend the cost/accuracy Pareto
//! frontier. The result is the frontier of pipelines found within a fixed
//! number of evaluations.

pub mod directives;
pub mod eval;
pub mod harness;
pub mod instantiation;
pub mod ir;
pub mod pareto;
pub mod search;
