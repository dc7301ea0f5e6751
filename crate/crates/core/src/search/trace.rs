//! Append-only JSON-lines record of a search run.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::directives::{Objective, Span};

use super::tree::NodeId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Model sweep over the input pipeline.
    Sweep,
    /// The two seeded rewrites of each frontier sweep variant.
    Seed,
    Main,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Added,
    Discarded,
    /// No directive applies; the node was marked exhausted.
    Exhausted,
}

/// One search step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub phase: Phase,
    pub selected_path: Vec<NodeId>,
    pub node: NodeId,
    pub objective: Option<Objective>,
    pub directive: Option<String>,
    pub span: Option<Span>,
    pub params_sha: Option<String>,
    pub outcome: Outcome,
    pub child: Option<NodeId>,
    pub cost: Option<f64>,
    pub accuracy: Option<f64>,
    /// Candidates sent to the evaluator, cache hits included.
    pub candidates_evaluated: usize,
    pub cache_hits: usize,
    /// Instantiation attempts made in this step.
    pub attempts: usize,
    /// Evaluator invocations so far, cache hits excluded.
    pub budget_used: usize,
    pub frontier_size: usize,
    /// Child count of `node` when it was selected.
    pub parent_children_before: usize,
    /// Widening cap of `node` when it was selected.
    pub parent_cap: usize,
    /// Whether `node` had a selectable child when it was selected.
    pub parent_had_open_child: bool,
    pub parent_disabled: bool,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceEntry {
    Header(Value),
    Iteration(Box<IterationRecord>),
}

/// Hex sha256 of the compact JSON form of `params`.
pub fn params_sha(params: &Value) -> String {
    hex::encode(Sha256::digest(params.to_string().as_bytes()))
}

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("trace line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("trace has no header")]
    MissingHeader,
}

pub fn to_jsonl(header: &Value, records: &[IterationRecord]) -> String {
    let mut out = String::new();
    let entries = std::iter::once(TraceEntry::Header(header.clone()))
        .chain(records.iter().cloned().map(|r| TraceEntry::Iteration(Box::new(r))));
    for e in entries {
        out.push_str(&serde_json::to_string(&e).expect("trace entry serializes"));
        out.push('\n');
    }
    out
}

pub fn parse_jsonl(text: &str) -> Result<(Value, Vec<IterationRecord>), TraceError> {
    let mut header = None;
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let entry: TraceEntry = serde_json::from_str(line).map_err(|e| TraceError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        match entry {
            TraceEntry::Header(h) if header.is_none() => header = Some(h),
            TraceEntry::Header(_) => {
                return Err(TraceError::Parse {
                    line: i + 1,
                    message: "second header".into(),
                })
            }
            TraceEntry::Iteration(r) => records.push(*r),
        }
    }
    Ok((header.ok_or(TraceError::MissingHeader)?, records))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha_is_hex_of_compact_json() {
        let s = params_sha(&serde_json::json!({"a": 1}));
        assert_eq!(s.len(), 64);
        assert_eq!(s, params_sha(&serde_json::from_str("{ \"a\" : 1 }").unwrap()));
    }

    #[test]
    fn jsonl_round_trip() {
        let r = IterationRecord {
            iter: 0,
            phase: Phase::Main,
            selected_path: vec![0, 2],
            node: 2,
            objective: Some(Objective::ReduceCost),
            directive: Some("reordering".into()),
            span: Some(Span::new(0, 1)),
            params_sha: Some(params_sha(&serde_json::json!({}))),
            outcome: Outcome::Added,
            child: Some(5),
            cost: Some(0.25),
            accuracy: Some(0.5),
            candidates_evaluated: 1,
            cache_hits: 0,
            attempts: 1,
            budget_used: 7,
            frontier_size: 3,
            parent_children_before: 1,
            parent_cap: 2,
            parent_had_open_child: true,
            parent_disabled: false,
            failure: None,
        };
        let text = to_jsonl(&serde_json::json!({"budget": 40}), std::slice::from_ref(&r));
        let (h, rs) = parse_jsonl(&text).unwrap();
        assert_eq!(h["budget"], 40);
        assert_eq!(rs, vec![r]);
        assert!(matches!(parse_jsonl(""), Err(TraceError::MissingHeader)));
    }
}
