//! Search tree, utility scores and top-down selection with progressive
//! widening.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::directives::RewriteRecord;
use crate::ir::PipelineSpec;
use crate::pareto::{deltas, pareto_indices, EvalPoint};

pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchNode {
    pub id: NodeId,
    pub pipeline: PipelineSpec,
    pub eval: EvalPoint,
    pub parent: Option<NodeId>,
    pub children: Vec<NodeId>,
    /// Visit count.
    pub n: u64,
    pub depth: usize,
    /// Directive that produced this node; `None` for the root.
    pub last_action: Option<String>,
    /// Excluded from selection.
    pub disabled: bool,
    /// No directive applies any more; the node takes no new children.
    pub exhausted: bool,
    pub path: Vec<RewriteRecord>,
    /// Whether the node counts as a distinct evaluated pipeline. The root
    /// does not when a sweep variant has the same canonical form.
    pub counted: bool,
    /// How often each directive has been chosen for this node.
    pub usage: BTreeMap<String, u32>,
}

/// Maximum number of children of a node with `n` visits:
/// `max(2, floor(1 + sqrt(n)))`.
pub fn widening_cap(n: u64) -> usize {
    let mut r = (n as f64).sqrt() as u64;
    while r * r > n {
        r -= 1;
    }
    while (r + 1) * (r + 1) <= n {
        r += 1;
    }
    (1 + r).max(2) as usize
}

/// UCT score: mean subtree contribution plus the exploration bonus.
pub fn utility(subtree_delta: f64, n: u64, parent_n: u64) -> f64 {
    let n = n.max(1) as f64;
    subtree_delta / n + (2.0 * (parent_n.max(1) as f64).ln() / n).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("no node can take another child")]
pub struct SearchSpaceExhausted;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchTree {
    nodes: Vec<SearchNode>,
}

impl SearchTree {
    pub fn new(root_pipeline: PipelineSpec, eval: EvalPoint) -> Self {
        SearchTree {
            nodes: vec![SearchNode {
                id: 0,
                pipeline: root_pipeline,
                eval,
                parent: None,
                children: Vec::new(),
                n: 1,
                depth: 0,
                last_action: None,
                disabled: false,
                exhausted: false,
                path: Vec::new(),
                counted: true,
                usage: BTreeMap::new(),
            }],
        }
    }

    pub const ROOT: NodeId = 0;

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> &SearchNode {
        &self.nodes[id]
    }

    pub fn node_mut(&mut self, id: NodeId) -> &mut SearchNode {
        &mut self.nodes[id]
    }

    pub fn nodes(&self) -> &[SearchNode] {
        &self.nodes
    }

    pub fn find_key(&self, key: &str) -> Option<NodeId> {
        self.nodes.iter().position(|n| n.eval.pipeline_key == key)
    }

    /// Adds an evaluated child with one visit.
    pub fn add_child(&mut self, parent: NodeId, pipeline: PipelineSpec, eval: EvalPoint, record: RewriteRecord) -> NodeId {
        let id = self.nodes.len();
        let mut path = self.nodes[parent].path.clone();
        let action = record.directive.clone();
        path.push(record);
        self.nodes.push(SearchNode {
            id,
            pipeline,
            eval,
            parent: Some(parent),
            children: Vec::new(),
            n: 1,
            depth: self.nodes[parent].depth + 1,
            last_action: Some(action),
            disabled: false,
            exhausted: false,
            path,
            counted: true,
            usage: BTreeMap::new(),
        });
        self.nodes[parent].children.push(id);
        id
    }

    /// Node ids from the root down to `id`.
    pub fn path_to(&self, id: NodeId) -> Vec<NodeId> {
        let mut out = vec![id];
        let mut cur = id;
        while let Some(p) = self.nodes[cur].parent {
            out.push(p);
            cur = p;
        }
        out.reverse();
        out
    }

    pub fn descendants(&self, id: NodeId) -> Vec<NodeId> {
        let mut out = Vec::new();
        let mut stack: Vec<NodeId> = self.nodes[id].children.iter().rev().copied().collect();
        while let Some(c) = stack.pop() {
            out.push(c);
            stack.extend(self.nodes[c].children.iter().rev());
        }
        out
    }

    pub fn add_visits(&mut self, path: &[NodeId], amount: i64) {
        for &id in path {
            let n = &mut self.nodes[id].n;
            *n = (*n as i64 + amount).max(1) as u64;
        }
    }

    /// Resets every visit count to one plus the number of descendants.
    pub fn recount_visits(&mut self) {
        for id in (0..self.nodes.len()).rev() {
            let below: u64 = self.nodes[id].children.iter().map(|&c| self.nodes[c].n).sum();
            self.nodes[id].n = 1 + below;
        }
    }

    /// Ids of the nodes that count as evaluated pipelines.
    pub fn counted(&self) -> Vec<NodeId> {
        self.nodes.iter().filter(|n| n.counted).map(|n| n.id).collect()
    }

    pub fn points(&self) -> Vec<EvalPoint> {
        self.nodes
            .iter()
            .filter(|n| n.counted)
            .map(|n| n.eval.clone())
            .collect()
    }

    /// Frontier node ids, sorted by cost then descending accuracy.
    pub fn frontier(&self) -> Vec<NodeId> {
        let ids = self.counted();
        let points = self.points();
        let mut out: Vec<NodeId> = pareto_indices(&points).into_iter().map(|i| ids[i]).collect();
        out.sort_by(|&a, &b| {
            let (pa, pb) = (&self.nodes[a].eval, &self.nodes[b].eval);
            pa.cost_micros
                .cmp(&pb.cost_micros)
                .then(pb.accuracy.total_cmp(&pa.accuracy))
                .then(a.cmp(&b))
        });
        out
    }

    /// Marginal contribution of every node against all counted nodes;
    /// uncounted nodes contribute zero.
    pub fn node_deltas(&self) -> Vec<f64> {
        let ids = self.counted();
        let d = deltas(&self.points());
        let mut out = vec![0.0; self.nodes.len()];
        for (i, id) in ids.into_iter().enumerate() {
            out[id] = d[i];
        }
        out
    }

    /// δ summed over `id` and its descendants.
    pub fn subtree_delta(&self, id: NodeId, node_deltas: &[f64]) -> f64 {
        node_deltas[id] + self.descendants(id).iter().map(|&c| node_deltas[c]).sum::<f64>()
    }

    pub fn utility_of(&self, id: NodeId, node_deltas: &[f64]) -> f64 {
        let node = &self.nodes[id];
        let parent_n = node.parent.map_or(1, |p| self.nodes[p].n);
        utility(self.subtree_delta(id, node_deltas), node.n, parent_n)
    }

    /// 1-based accuracy rank among counted nodes; ties go to the cheaper,
    /// then the earlier node. An uncounted node ranks where its result
    /// would.
    pub fn rank(&self, id: NodeId) -> usize {
        let me = &self.nodes[id].eval;
        let ahead = self
            .nodes
            .iter()
            .filter(|n| n.counted && n.id != id)
            .filter(|n| {
                n.eval
                    .accuracy
                    .total_cmp(&me.accuracy)
                    .reverse()
                    .then(n.eval.cost_micros.cmp(&me.cost_micros))
                    .then(n.id.cmp(&id))
                    .is_lt()
            })
            .count();
        ahead + 1
    }

    pub fn counted_len(&self) -> usize {
        self.nodes.iter().filter(|n| n.counted).count()
    }

    fn expandable(&self, id: NodeId) -> bool {
        let n = &self.nodes[id];
        !n.disabled && !n.exhausted
    }

    /// Whether selection may end at `id` or somewhere below it.
    fn live_flags(&self) -> Vec<bool> {
        let mut live = vec![false; self.nodes.len()];
        for id in (0..self.nodes.len()).rev() {
            let n = &self.nodes[id];
            live[id] = !n.disabled && (!n.exhausted || n.children.iter().any(|&c| live[c]));
        }
        live
    }

    /// Whether `id` has a child that selection could enter.
    pub fn has_open_child(&self, id: NodeId) -> bool {
        let live = self.live_flags();
        self.nodes[id].children.iter().any(|&c| live[c])
    }

    /// Descends from the root to the child of highest utility until
    /// reaching a node with fewer children than its widening cap or with
    /// no selectable children. Disabled nodes are never entered. Visit
    /// counts are not changed; returns the root-to-node path.
    pub fn select(&self) -> Result<Vec<NodeId>, SearchSpaceExhausted> {
        let live = self.live_flags();
        if !live[Self::ROOT] {
            return Err(SearchSpaceExhausted);
        }
        let node_deltas = self.node_deltas();
        let mut path = vec![Self::ROOT];
        let mut cur = Self::ROOT;
        loop {
            let node = &self.nodes[cur];
            let open: Vec<NodeId> = node.children.iter().copied().filter(|&c| live[c]).collect();
            let under_cap = node.children.len() < widening_cap(node.n);
            if self.expandable(cur) && (under_cap || open.is_empty()) {
                return Ok(path);
            }
            let mut best = open[0];
            let mut best_u = self.utility_of(best, &node_deltas);
            for &c in &open[1..] {
                let u = self.utility_of(c, &node_deltas);
                if u > best_u {
                    best = c;
                    best_u = u;
                }
            }
            path.push(best);
            cur = best;
        }
    }
}
