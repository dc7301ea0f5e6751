//! Checks a finished run against its trace.

use std::collections::{BTreeMap, BTreeSet};

use pipeopt::directives::{Objective, MODEL_SUBSTITUTION};
use pipeopt::ir::ModelCatalog;
use pipeopt::pareto::EvalPoint;
use pipeopt::search::{utility, Outcome, Phase, SearchOutcome, SearchTree};

use super::oracle;

/// Evaluations never exceed the budget, and the ledger only grows.
pub fn budget(out: &SearchOutcome, budget: usize) -> Result<(), String> {
    if out.budget_used > budget {
        return Err(format!("used {} of {budget}", out.budget_used));
    }
    let mut last = 0;
    for r in &out.records {
        if r.budget_used > budget {
            return Err(format!("iter {}: used {} of {budget}", r.iter, r.budget_used));
        }
        if r.budget_used < last {
            return Err(format!("iter {}: ledger went back from {last} to {}", r.iter, r.budget_used));
        }
        last = r.budget_used;
    }
    Ok(())
}

/// Every child was admitted below its parent's widening cap, unless the
/// parent had no selectable child left. Child counts in the trace are
/// checked against a recount from the trace itself.
pub fn widening(out: &SearchOutcome) -> Result<(), String> {
    let mut children: BTreeMap<usize, usize> = BTreeMap::new();
    for r in &out.records {
        if r.phase == Phase::Sweep {
            if r.outcome == Outcome::Added && r.child != Some(r.node) {
                *children.entry(r.node).or_default() += 1;
            }
            continue;
        }
        let before = children.get(&r.node).copied().unwrap_or(0);
        if r.parent_children_before != before {
            return Err(format!(
                "iter {}: trace says node {} had {} children, recount gives {before}",
                r.iter, r.node, r.parent_children_before
            ));
        }
        if r.outcome == Outcome::Added {
            if r.parent_children_before >= r.parent_cap && r.parent_had_open_child {
                return Err(format!(
                    "iter {}: node {} took child {} with {} children at cap {}",
                    r.iter,
                    r.node,
                    r.child.map_or("-".into(), |c| c.to_string()),
                    r.parent_children_before,
                    r.parent_cap
                ));
            }
            *children.entry(r.node).or_default() += 1;
        }
    }
    Ok(())
}

/// Disabled nodes are never picked, never on a selection path and never
/// take children.
pub fn disabled(out: &SearchOutcome) -> Result<(), String> {
    let tree = &out.tree;
    for r in out.records.iter().filter(|r| r.phase == Phase::Main) {
        if r.parent_disabled {
            return Err(format!("iter {}: disabled node {} selected", r.iter, r.node));
        }
        if let Some(&id) = r.selected_path.iter().find(|&&id| tree.node(id).disabled) {
            return Err(format!("iter {}: path passes disabled node {id}", r.iter));
        }
    }
    for n in tree.nodes().iter().filter(|n| n.disabled) {
        if !n.children.is_empty() {
            return Err(format!("disabled node {} has children", n.id));
        }
    }
    Ok(())
}

/// n = 1 + number of descendants for every node.
pub fn visits(out: &SearchOutcome) -> Result<(), String> {
    for n in out.tree.nodes() {
        let expect = 1 + out.tree.descendants(n.id).len() as u64;
        if n.n != expect {
            return Err(format!("node {}: n = {}, 1 + |desc| = {expect}", n.id, n.n));
        }
    }
    Ok(())
}

/// The exploitation term times n equals the subtree δ sum recomputed with
/// the brute-force ceiling.
pub fn utility_decomposition(out: &SearchOutcome) -> Result<(), String> {
    let tree = &out.tree;
    let ids = tree.counted();
    let points: Vec<EvalPoint> = ids.iter().map(|&id| tree.node(id).eval.clone()).collect();
    let mut delta = vec![0.0; tree.len()];
    for (i, &id) in ids.iter().enumerate() {
        delta[id] = points[i].accuracy - oracle::ceiling(&points, i);
    }
    let node_deltas = tree.node_deltas();
    for n in tree.nodes().iter().skip(1) {
        let parent_n = tree.node(n.parent.unwrap()).n;
        let exploration = utility(0.0, n.n, parent_n);
        let exploit = (tree.utility_of(n.id, &node_deltas) - exploration) * n.n as f64;
        let expect: f64 = delta[n.id] + tree.descendants(n.id).iter().map(|&d| delta[d]).sum::<f64>();
        if (exploit - expect).abs() > 1e-9 {
            return Err(format!("node {}: exploitation × n = {exploit}, δ sum = {expect}", n.id));
        }
    }
    Ok(())
}

/// After the sweep, the best frontier accuracy never drops and each
/// recorded frontier size matches a recount over the nodes present then.
pub fn frontier(out: &SearchOutcome) -> Result<(), String> {
    let tree = &out.tree;
    let mut present = 1 + out
        .records
        .iter()
        .filter(|r| r.phase == Phase::Sweep)
        .filter_map(|r| r.child)
        .max()
        .unwrap_or(0);
    let mut best = f64::NEG_INFINITY;
    for r in out.records.iter().filter(|r| r.phase != Phase::Sweep) {
        if let Some(c) = r.child {
            present = present.max(c + 1);
        }
        let points: Vec<EvalPoint> = (0..present)
            .filter(|&id| tree.node(id).counted)
            .map(|id| tree.node(id).eval.clone())
            .collect();
        let size = oracle::pareto(&points).len();
        if size != r.frontier_size {
            return Err(format!("iter {}: frontier size {} recorded, {size} recomputed", r.iter, r.frontier_size));
        }
        let top = points.iter().map(|p| p.accuracy).fold(f64::NEG_INFINITY, f64::max);
        if top < best {
            return Err(format!("iter {}: best accuracy fell from {best} to {top}", r.iter));
        }
        best = top;
    }
    Ok(())
}

pub fn all(out: &SearchOutcome, budget_limit: usize) -> Result<(), String> {
    budget(out, budget_limit)?;
    widening(out)?;
    disabled(out)?;
    visits(out)?;
    utility_decomposition(out)?;
    frontier(out)
}

/// Sweep size and family limits, seeding of frontier variants and
/// disabling of the rest, as seen in the trace.
pub fn init(out: &SearchOutcome, catalog: &ModelCatalog, cap: usize) -> Result<(), String> {
    let tree = &out.tree;
    let want = catalog.len().min(cap);
    if out.swept_models.len() != want {
        return Err(format!("swept {} models, expected {want}", out.swept_models.len()));
    }
    let mut families: BTreeMap<&str, usize> = BTreeMap::new();
    for m in &out.swept_models {
        let model = catalog
            .models
            .iter()
            .find(|c| &c.model_id == m)
            .ok_or_else(|| format!("{m} not in catalog"))?;
        *families.entry(&model.family).or_default() += 1;
        if !out.stats.model_stats.contains_key(m) {
            return Err(format!("{m} missing from model stats"));
        }
    }
    if let Some((f, n)) = families.iter().find(|(_, &n)| n > 3) {
        return Err(format!("{n} models from family {f}"));
    }

    let sweep: Vec<_> = out
        .records
        .iter()
        .filter(|r| r.phase == Phase::Sweep && r.directive.as_deref() == Some(MODEL_SUBSTITUTION))
        .collect();
    if sweep.len() != out.swept_models.len() {
        return Err(format!("{} sweep records for {} models", sweep.len(), out.swept_models.len()));
    }
    let variants: Vec<usize> = sweep.iter().filter_map(|r| r.child).collect();
    let points: Vec<usize> = tree
        .counted()
        .into_iter()
        .filter(|id| *id == 0 || variants.contains(id))
        .collect();
    let evals: Vec<EvalPoint> = points.iter().map(|&id| tree.node(id).eval.clone()).collect();
    let front: BTreeSet<usize> = oracle::pareto(&evals).into_iter().map(|i| points[i]).collect();

    for &v in &variants {
        let node = tree.node(v);
        if node.parent != Some(SearchTree::ROOT) {
            return Err(format!("variant {v} is not a root child"));
        }
        if node.disabled == front.contains(&v) {
            return Err(format!("variant {v}: disabled {} but on frontier {}", node.disabled, front.contains(&v)));
        }
        let seeds: Vec<_> = out.records.iter().filter(|r| r.phase == Phase::Seed && r.node == v).collect();
        if node.disabled {
            if !seeds.is_empty() || !node.children.is_empty() {
                return Err(format!("disabled variant {v} was expanded"));
            }
            continue;
        }
        let objectives: Vec<_> = seeds.iter().map(|r| r.objective).collect();
        if objectives != [Some(Objective::ImproveAccuracy), Some(Objective::ReduceCost)] {
            return Err(format!("variant {v}: seed objectives {objectives:?}"));
        }
        for r in &seeds {
            match r.child {
                Some(c) if r.outcome == Outcome::Added && node.children.contains(&c) => {}
                _ => return Err(format!("variant {v}: seed iter {} did not add a child", r.iter)),
            }
        }
    }
    let seeded = out.records.iter().filter(|r| r.phase == Phase::Seed).count();
    let expect = 2 * front.iter().filter(|&&id| id != SearchTree::ROOT).count();
    if seeded != expect {
        return Err(format!("{seeded} seed steps, expected {expect}"));
    }
    disabled(out)
}
