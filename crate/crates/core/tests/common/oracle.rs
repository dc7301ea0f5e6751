//! Brute-force reference implementations.

use pipeopt::directives::{RewriteRecord, Span};
use pipeopt::ir::{OperatorConfig, OperatorType, PipelineSpec, SchemaType};
use pipeopt::pareto::EvalPoint;
use pipeopt::search::{NodeId, SearchTree};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Indices of points that no other point beats on accuracy at equal or
/// lower cost.
pub fn pareto(points: &[EvalPoint]) -> Vec<usize> {
    (0..points.len())
        .filter(|&i| {
            !points
                .iter()
                .any(|q| q.cost_micros <= points[i].cost_micros && q.accuracy > points[i].accuracy)
        })
        .collect()
}

/// Best accuracy of any other point at equal or lower cost, 0 if none.
pub fn ceiling(points: &[EvalPoint], i: usize) -> f64 {
    points
        .iter()
        .enumerate()
        .filter(|&(j, q)| j != i && q.cost_micros <= points[i].cost_micros)
        .map(|(_, q)| q.accuracy)
        .fold(0.0, f64::max)
}

/// Ceiling read off the frontier of the set with point `i` removed.
pub fn ceiling_via_frontier(points: &[EvalPoint], i: usize) -> f64 {
    let rest: Vec<EvalPoint> = points
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, q)| q.clone())
        .collect();
    pareto(&rest)
        .into_iter()
        .map(|j| &rest[j])
        .filter(|q| q.cost_micros <= points[i].cost_micros)
        .map(|q| q.accuracy)
        .fold(0.0, f64::max)
}

pub fn dummy_pipeline() -> PipelineSpec {
    let op = OperatorConfig::llm(
        "m",
        OperatorType::Map,
        "Summarize {{ input.text }}",
        [("out".to_string(), SchemaType::String)].into_iter().collect(),
        "gpt-4o-mini",
    );
    PipelineSpec::new("t", ["text"], vec![op])
}

fn record() -> RewriteRecord {
    RewriteRecord {
        directive: "clarify_instructions".into(),
        span: Span::single(0),
        params: serde_json::json!({}),
        objective: None,
    }
}

/// Tree shape and per-node state for a selection case.
#[derive(Debug, Clone)]
pub struct TreeCase {
    /// `parents[i]` is the parent of node `i + 1`; always `< i + 1`.
    pub parents: Vec<usize>,
    pub visits: Vec<u64>,
    pub cost: Vec<u64>,
    /// Accuracies in 1/64 steps so subtree sums are exact.
    pub accuracy: Vec<f64>,
    pub disabled: Vec<bool>,
}

impl TreeCase {
    pub fn random(parents: Vec<usize>, rng: &mut ChaCha8Rng) -> Self {
        let n = parents.len() + 1;
        let disabled_rate = rng.gen_range(0.0..0.4);
        TreeCase {
            visits: (0..n).map(|_| rng.gen_range(1..=40)).collect(),
            cost: (0..n).map(|_| rng.gen_range(0..12)).collect(),
            accuracy: (0..n).map(|_| rng.gen_range(0..=64) as f64 / 64.0).collect(),
            disabled: (0..n).map(|i| i > 0 && rng.gen_bool(disabled_rate)).collect(),
            parents,
        }
    }

    pub fn len(&self) -> usize {
        self.parents.len() + 1
    }

    pub fn children(&self, id: usize) -> Vec<usize> {
        (1..self.len()).filter(|&c| self.parents[c - 1] == id).collect()
    }

    pub fn build(&self) -> SearchTree {
        let p = dummy_pipeline();
        let point = |i: usize| EvalPoint::from_micros(format!("n{i}"), self.cost[i], self.accuracy[i]);
        let mut tree = SearchTree::new(p.clone(), point(0));
        for i in 1..self.len() {
            let id = tree.add_child(self.parents[i - 1], p.clone(), point(i), record());
            assert_eq!(id, i);
        }
        for i in 0..self.len() {
            let node = tree.node_mut(i);
            node.n = self.visits[i];
            node.disabled = self.disabled[i];
        }
        tree
    }

    fn deltas(&self) -> Vec<f64> {
        let points: Vec<EvalPoint> = (0..self.len())
            .map(|i| EvalPoint::from_micros(format!("n{i}"), self.cost[i], self.accuracy[i]))
            .collect();
        (0..self.len()).map(|i| self.accuracy[i] - ceiling(&points, i)).collect()
    }

    fn subtree_sum(&self, id: usize, deltas: &[f64]) -> f64 {
        deltas[id] + self.children(id).into_iter().map(|c| self.subtree_sum(c, deltas)).sum::<f64>()
    }

    /// Mean subtree contribution plus `sqrt(2 ln n_parent / n)`.
    pub fn utility(&self, id: usize) -> f64 {
        let d = self.deltas();
        let n = self.visits[id] as f64;
        let parent_n = self.visits[self.parents[id - 1]] as f64;
        self.subtree_sum(id, &d) / n + (2.0 * parent_n.ln() / n).sqrt()
    }

    /// Top-down selection as written: stop at the first node with fewer
    /// children than `max(2, floor(1 + sqrt(n)))` or without selectable
    /// children, otherwise move to the highest-utility enabled child.
    pub fn reference_select(&self) -> Option<Vec<NodeId>> {
        if self.disabled[0] {
            return None;
        }
        let mut p = 0;
        let mut path = vec![0];
        loop {
            let all = self.children(p);
            let enabled: Vec<usize> = all.iter().copied().filter(|&c| !self.disabled[c]).collect();
            let cap = (2.0f64).max((1.0 + (self.visits[p] as f64).sqrt()).floor()) as usize;
            if all.len() < cap || enabled.is_empty() {
                return Some(path);
            }
            let mut best = enabled[0];
            for &c in &enabled[1..] {
                if self.utility(c) > self.utility(best) {
                    best = c;
                }
            }
            p = best;
            path.push(p);
        }
    }
}

/// Every parent array for trees with `size` nodes.
pub fn all_shapes(size: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for node in 1..size {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                (0..node).map(move |p| {
                    let mut v = prefix.clone();
                    v.push(p);
                    v
                })
            })
            .collect();
    }
    out
}

pub fn random_shape(size: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    (1..size).map(|i| rng.gen_range(0..i)).collect()
}
