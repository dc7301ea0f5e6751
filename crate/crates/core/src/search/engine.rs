use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::{Condvar, Mutex, MutexGuard};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::directives::{prune_registry, Directive, Objective, Registry, RewriteRecord, Span, MODEL_SUBSTITUTION};
use crate::eval::{Cached, EvalError, Evaluator};
use crate::instantiation::{
    AgentContext, ChooseRequest, DirectiveStat, ExploredPath, InstantiateRequest, InstantiationError, Instantiator,
    ModelStat, SampleDocs,
};
use crate::ir::{pipeline_key, validate_pipeline, ModelCatalog, PipelineSpec};
use crate::pareto::EvalPoint;

use super::trace::{params_sha, IterationRecord, Outcome, Phase};
use super::tree::{widening_cap, NodeId, SearchNode, SearchTree};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchConfig {
    /// Evaluator invocations allowed, cache hits excluded.
    pub budget: usize,
    pub workers: usize,
    /// Most models swept at initialization.
    pub model_cap: usize,
    /// Most models per family when the catalog exceeds `model_cap`.
    pub per_family: usize,
    pub retry_limit: usize,
    pub seed: u64,
}

impl SearchConfig {
    pub fn new(budget: usize, seed: u64) -> Self {
        SearchConfig {
            budget,
            workers: 3,
            model_cap: 12,
            per_family: 3,
            retry_limit: 3,
            seed,
        }
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Moar,
    /// Always rewrites the most accurate node for accuracy.
    Greedy,
    /// Uniform node, then uniform directive and site.
    Random,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Moar, Strategy::Greedy, Strategy::Random];
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Moar => "moar",
            Strategy::Greedy => "greedy",
            Strategy::Random => "random",
        })
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "moar" => Ok(Strategy::Moar),
            "greedy" => Ok(Strategy::Greedy),
            "random" => Ok(Strategy::Random),
            other => Err(format!("unknown strategy `{other}` (expected moar, greedy or random)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SearchError {
    #[error("invalid search configuration: {0}")]
    InvalidConfig(String),
    #[error("input pipeline is invalid: {0}")]
    InvalidPipeline(String),
    #[error("budget {budget} is below the {required} evaluations initialization needs")]
    BudgetExhausted { budget: usize, required: usize },
    #[error("initialization could not evaluate the input pipeline: {0}")]
    Evaluation(EvalError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    BudgetSpent,
    SearchSpaceExhausted,
    IterationLimit,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    /// Cost and accuracy of the input pipeline under each swept model.
    pub model_stats: BTreeMap<String, ModelStat>,
    /// Mean change against the parent for each directive.
    pub directive_stats: BTreeMap<String, DirectiveStat>,
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub tree: SearchTree,
    pub stats: RunStats,
    pub records: Vec<IterationRecord>,
    pub budget_used: usize,
    pub swept_models: Vec<String>,
    pub stop: StopReason,
}

impl SearchOutcome {
    pub fn frontier(&self) -> Vec<&SearchNode> {
        self.tree.frontier().into_iter().map(|id| self.tree.node(id)).collect()
    }

    pub fn best_accuracy(&self) -> f64 {
        self.tree
            .nodes()
            .iter()
            .filter(|n| n.counted)
            .map(|n| n.eval.accuracy)
            .fold(0.0, f64::max)
    }
}

/// Everything a search run reads besides the input pipeline.
pub struct Search<'a> {
    pub registry: &'a Registry,
    pub catalog: &'a ModelCatalog,
    pub evaluator: &'a dyn Evaluator,
    pub instantiator: &'a dyn Instantiator,
    pub sample: &'a SampleDocs,
}

/// Which models the initial sweep covers: the whole catalog, or up to
/// `per_family` models from randomly ordered families until `model_cap`.
pub fn sweep_models(catalog: &ModelCatalog, config: &SearchConfig) -> Vec<String> {
    if catalog.len() <= config.model_cap {
        return catalog.ids().into_iter().map(String::from).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut families = catalog.families();
    families.shuffle(&mut rng);
    let mut chosen: Vec<&str> = Vec::new();
    for family in families {
        let mut members: Vec<&str> = catalog
            .models
            .iter()
            .filter(|m| m.family == family)
            .map(|m| m.model_id.as_str())
            .collect();
        members.shuffle(&mut rng);
        let room = config.model_cap - chosen.len();
        chosen.extend(members.into_iter().take(config.per_family.min(room)));
        if chosen.len() == config.model_cap {
            break;
        }
    }
    catalog
        .ids()
        .into_iter()
        .filter(|id| chosen.contains(id))
        .map(String::from)
        .collect()
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    let mut x = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    x ^= x >> 31;
    x = x.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x ^ (x >> 29)
}

struct State {
    tree: SearchTree,
    stats: RunStats,
    records: Vec<IterationRecord>,
    reserved: usize,
    in_flight: usize,
    next_iter: usize,
    main_steps: usize,
    stop: Option<StopReason>,
}

/// A node chosen for expansion together with what was true at selection.
struct Pick {
    iter: usize,
    phase: Phase,
    node: NodeId,
    path: Vec<NodeId>,
    objective: Objective,
    /// Visits added along `path` by selection.
    increment: bool,
    children_before: usize,
    cap: usize,
    open_child: bool,
    disabled: bool,
}

/// The part of the tree a worker needs while outside the lock.
struct Snapshot {
    pipeline: PipelineSpec,
    path: Vec<RewriteRecord>,
    context: AgentContext,
}

enum Verdict {
    Added {
        pipeline: PipelineSpec,
        record: RewriteRecord,
        point: EvalPoint,
    },
    Discarded(String),
    Exhausted,
    OutOfBudget,
}

struct StepReport {
    verdict: Verdict,
    directive: Option<String>,
    span: Option<Span>,
    params_sha: Option<String>,
    attempts: usize,
    candidates_evaluated: usize,
    cache_hits: usize,
}

struct Run<'s, 'a> {
    search: &'s Search<'a>,
    config: SearchConfig,
    strategy: Strategy,
    cached: Cached<&'a dyn Evaluator>,
    state: Mutex<State>,
    wake: Condvar,
}

impl<'a> Search<'a> {
    pub fn run(&self, p0: &PipelineSpec, config: &SearchConfig, strategy: Strategy) -> Result<SearchOutcome, SearchError> {
        if config.budget == 0 || config.workers == 0 || config.model_cap == 0 || config.per_family == 0 {
            return Err(SearchError::InvalidConfig(
                "budget, workers, model_cap and per_family must be positive".into(),
            ));
        }
        if config.retry_limit == 0 {
            return Err(SearchError::InvalidConfig("retry_limit must be positive".into()));
        }
        let report = validate_pipeline(p0);
        if !report.is_ok() {
            return Err(SearchError::InvalidPipeline(report.to_string()));
        }
        if self.catalog.is_empty() {
            return Err(SearchError::InvalidConfig("model catalog is empty".into()));
        }
        let run = Run {
            search: self,
            config: *config,
            strategy,
            cached: Cached::new(self.evaluator),
            state: Mutex::new(State {
                tree: SearchTree::default(),
                stats: RunStats::default(),
                records: Vec::new(),
                reserved: 0,
                in_flight: 0,
                next_iter: 0,
                main_steps: 0,
                stop: None,
            }),
            wake: Condvar::new(),
        };
        let swept = run.initialize(p0)?;
        std::thread::scope(|scope| {
            for _ in 0..config.workers {
                scope.spawn(|| run.worker());
            }
        });
        let budget_used = run.used();
        let state = run.state.into_inner().expect("search state lock");
        Ok(SearchOutcome {
            tree: state.tree,
            stats: state.stats,
            records: state.records,
            budget_used,
            swept_models: swept,
            stop: state.stop.unwrap_or(StopReason::BudgetSpent),
        })
    }
}

impl<'s, 'a> Run<'s, 'a> {
    fn lock(&self) -> MutexGuard<'_, State> {
        self.state.lock().expect("search state lock")
    }

    fn used(&self) -> usize {
        self.cached.inner_calls() as usize
    }

    fn remaining(&self, st: &State) -> usize {
        self.config.budget.saturating_sub(self.used() + st.reserved)
    }

    fn initialize(&self, p0: &PipelineSpec) -> Result<Vec<String>, SearchError> {
        let models = sweep_models(self.search.catalog, &self.config);
        let root_key = pipeline_key(p0);
        let variants: Vec<(String, PipelineSpec)> = models.iter().map(|m| (m.clone(), p0.with_model(m))).collect();
        let root_shared = variants.iter().any(|(_, v)| pipeline_key(v) == root_key);
        let required = models.len() + usize::from(!root_shared) + 2;
        if self.config.budget < required {
            return Err(SearchError::BudgetExhausted {
                budget: self.config.budget,
                required,
            });
        }

        let mut results = Vec::new();
        for (model, v) in &variants {
            match self.cached.evaluate_tracked(v) {
                Ok(r) => results.push(Some((EvalPoint::new(pipeline_key(v), r.result.cost, r.result.accuracy), r.hit))),
                Err(e) => {
                    log::warn!("sweep variant `{model}` failed: {e}");
                    results.push(None);
                }
            }
        }
        let root_point = match variants.iter().zip(&results).find(|((_, v), _)| pipeline_key(v) == root_key) {
            Some((_, Some((point, _)))) => point.clone(),
            _ => {
                let r = self.cached.evaluate(p0).map_err(SearchError::Evaluation)?;
                EvalPoint::new(root_key.clone(), r.cost, r.accuracy)
            }
        };

        let mut st = self.lock();
        st.tree = SearchTree::new(p0.clone(), root_point.clone());
        if !root_shared {
            st.next_iter += 1;
            st.records.push(IterationRecord {
                iter: 0,
                phase: Phase::Sweep,
                selected_path: vec![SearchTree::ROOT],
                node: SearchTree::ROOT,
                objective: None,
                directive: None,
                span: None,
                params_sha: None,
                outcome: Outcome::Added,
                child: Some(SearchTree::ROOT),
                cost: Some(root_point.cost()),
                accuracy: Some(root_point.accuracy),
                candidates_evaluated: 1,
                cache_hits: 0,
                attempts: 1,
                budget_used: self.used(),
                frontier_size: 1,
                parent_children_before: 0,
                parent_cap: 0,
                parent_had_open_child: false,
                parent_disabled: false,
                failure: None,
            });
        }
        let whole = Span::new(0, p0.len() - 1);
        for ((model, v), result) in variants.iter().zip(results) {
            let iter = st.next_iter;
            st.next_iter += 1;
            let record = RewriteRecord {
                directive: MODEL_SUBSTITUTION.to_string(),
                span: whole,
                params: json!({ "model": model }),
                objective: None,
            };
            let sha = params_sha(&record.params);
            let (outcome, child, point, hits, failure) = match result {
                Some((point, hit)) => {
                    st.stats.model_stats.insert(
                        model.clone(),
                        ModelStat {
                            cost: point.cost(),
                            accuracy: point.accuracy,
                        },
                    );
                    if point.pipeline_key == root_key {
                        st.tree.node_mut(SearchTree::ROOT).counted = false;
                    }
                    if st.tree.nodes()[1..].iter().any(|n| n.eval.pipeline_key == point.pipeline_key) {
                        (Outcome::Discarded, None, Some(point), usize::from(hit), Some("duplicate sweep variant".to_string()))
                    } else {
                        let id = st.tree.add_child(SearchTree::ROOT, v.clone(), point.clone(), record);
                        (Outcome::Added, Some(id), Some(point), usize::from(hit), None)
                    }
                }
                None => (Outcome::Discarded, None, None, 0, Some("evaluation failed".to_string())),
            };
            let frontier_size = st.tree.frontier().len();
            st.records.push(IterationRecord {
                iter,
                phase: Phase::Sweep,
                selected_path: vec![SearchTree::ROOT],
                node: SearchTree::ROOT,
                objective: None,
                directive: Some(MODEL_SUBSTITUTION.to_string()),
                span: Some(whole),
                params_sha: Some(sha),
                outcome,
                child,
                cost: point.as_ref().map(EvalPoint::cost),
                accuracy: point.as_ref().map(|p| p.accuracy),
                candidates_evaluated: 1,
                cache_hits: hits,
                attempts: 1,
                budget_used: self.used(),
                frontier_size,
                parent_children_before: 0,
                parent_cap: 0,
                parent_had_open_child: false,
                parent_disabled: false,
                failure,
            });
        }

        let sweep_children = st.tree.node(SearchTree::ROOT).children.clone();
        let frontier = st.tree.frontier();
        for &c in &sweep_children {
            if !frontier.contains(&c) {
                st.tree.node_mut(c).disabled = true;
            }
        }
        let seeds: Vec<NodeId> = sweep_children.iter().copied().filter(|c| frontier.contains(c)).collect();
        drop(st);

        for node in seeds {
            for objective in [Objective::ImproveAccuracy, Objective::ReduceCost] {
                let mut st = self.lock();
                if self.remaining(&st) == 0 {
                    break;
                }
                let pick = Pick {
                    iter: st.next_iter,
                    phase: Phase::Seed,
                    node,
                    path: st.tree.path_to(node),
                    objective,
                    increment: false,
                    children_before: st.tree.node(node).children.len(),
                    cap: widening_cap(st.tree.node(node).n),
                    open_child: st.tree.has_open_child(node),
                    disabled: false,
                };
                st.next_iter += 1;
                st.in_flight += 1;
                drop(st);
                let report = self.step(&pick);
                self.finish(pick, report);
            }
        }
        self.lock().tree.recount_visits();
        Ok(models)
    }

    fn worker(&self) {
        loop {
            let Some(pick) = self.next_pick() else { return };
            let report = self.step(&pick);
            self.finish(pick, report);
        }
    }

    fn stop(&self, st: &mut State, reason: StopReason) {
        st.stop.get_or_insert(reason);
        self.wake.notify_all();
    }

    fn next_pick(&self) -> Option<Pick> {
        let mut st = self.lock();
        loop {
            if st.stop.is_some() {
                return None;
            }
            if self.remaining(&st) == 0 {
                if st.reserved == 0 {
                    self.stop(&mut st, StopReason::BudgetSpent);
                    return None;
                }
                st = self.wake.wait(st).expect("search state lock");
                continue;
            }
            if st.main_steps >= 20 * self.config.budget + 100 {
                self.stop(&mut st, StopReason::IterationLimit);
                return None;
            }
            match self.select(&mut st) {
                Some(pick) => {
                    st.main_steps += 1;
                    st.in_flight += 1;
                    return Some(pick);
                }
                None if st.in_flight == 0 => {
                    self.stop(&mut st, StopReason::SearchSpaceExhausted);
                    return None;
                }
                None => st = self.wake.wait(st).expect("search state lock"),
            }
        }
    }

    fn select(&self, st: &mut State) -> Option<Pick> {
        let tree = &st.tree;
        let open = |n: &&SearchNode| !n.disabled && !n.exhausted;
        let path = match self.strategy {
            Strategy::Moar => tree.select().ok()?,
            Strategy::Greedy => {
                let best = tree.nodes().iter().filter(open).min_by(|a, b| {
                    b.eval
                        .accuracy
                        .total_cmp(&a.eval.accuracy)
                        .then(a.eval.cost_micros.cmp(&b.eval.cost_micros))
                        .then(a.id.cmp(&b.id))
                })?;
                tree.path_to(best.id)
            }
            Strategy::Random => {
                let nodes: Vec<NodeId> = tree.nodes().iter().filter(open).map(|n| n.id).collect();
                let mut rng = ChaCha8Rng::seed_from_u64(mix(self.config.seed, st.next_iter as u64, 0));
                tree.path_to(*nodes.choose(&mut rng)?)
            }
        };
        let node = *path.last().expect("selection path is never empty");
        let objective = match self.strategy {
            Strategy::Greedy => Objective::ImproveAccuracy,
            _ if 2 * tree.rank(node) <= tree.counted_len() => Objective::ReduceCost,
            _ => Objective::ImproveAccuracy,
        };
        let n = tree.node(node);
        let pick = Pick {
            iter: st.next_iter,
            phase: Phase::Main,
            node,
            objective,
            increment: true,
            children_before: n.children.len(),
            cap: widening_cap(n.n),
            open_child: tree.has_open_child(node),
            disabled: n.disabled,
            path,
        };
        st.next_iter += 1;
        st.tree.add_visits(&pick.path, 1);
        Some(pick)
    }

    fn snapshot(&self, pick: &Pick) -> Snapshot {
        let st = self.lock();
        let tree = &st.tree;
        let node = tree.node(pick.node);
        let explored_paths = tree
            .nodes()
            .iter()
            .filter(|n| n.counted)
            .map(|n| ExploredPath {
                path: std::iter::once("input")
                    .chain(n.path.iter().map(|r| r.directive.as_str()))
                    .collect::<Vec<_>>()
                    .join(" -> "),
                cost: n.eval.cost(),
                accuracy: n.eval.accuracy,
            })
            .collect();
        Snapshot {
            pipeline: node.pipeline.clone(),
            path: node.path.clone(),
            context: AgentContext {
                pipeline_yaml: node.pipeline.to_yaml(),
                directive_briefs: Vec::new(),
                explored_paths,
                current_path: node.path.clone(),
                depth: node.depth,
                model_stats: st.stats.model_stats.clone(),
                directive_stats: st.stats.directive_stats.clone(),
                objective: pick.objective,
                usage: node.usage.clone(),
            },
        }
    }

    fn random_choice(&self, rng: &mut ChaCha8Rng, pipeline: &PipelineSpec, pruned: &[&Directive]) -> Option<(String, Span)> {
        let pairs: Vec<(&str, Span)> = pruned
            .iter()
            .flat_map(|d| d.match_sites(pipeline).into_iter().map(move |s| (d.name, s)))
            .collect();
        let (name, span) = *pairs.get(rng.gen_range(0..pairs.len().max(1)))?;
        Some((name.to_string(), span))
    }

    /// Chooses, instantiates, applies and evaluates one rewrite of the
    /// picked node, retrying failed instantiations.
    fn step(&self, pick: &Pick) -> StepReport {
        let snap = self.snapshot(pick);
        let all: Vec<&Directive> = self.search.registry.iter().collect();
        let pruned = prune_registry(&snap.pipeline, &snap.path, &all);
        let mut context = snap.context;
        context.directive_briefs = pruned.iter().map(|d| d.brief()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(mix(self.config.seed, pick.iter as u64, 1));
        let mut report = StepReport {
            verdict: Verdict::Discarded(String::new()),
            directive: None,
            span: None,
            params_sha: None,
            attempts: 0,
            candidates_evaluated: 0,
            cache_hits: 0,
        };
        let mut last_failure = String::from("no attempt made");
        for attempt in 0..self.config.retry_limit {
            report.attempts = attempt + 1;
            // seeds come from the instantiator for every strategy
            let choice = match (self.strategy, pick.phase) {
                (Strategy::Random, Phase::Main) => self
                    .random_choice(&mut rng, &snap.pipeline, &pruned)
                    .ok_or(InstantiationError::NoApplicableDirective),
                _ => self
                    .search
                    .instantiator
                    .choose_directive(&ChooseRequest {
                        pipeline: &snap.pipeline,
                        candidates: &pruned,
                        context: &context,
                        catalog: self.search.catalog,
                        seed: mix(self.config.seed, pick.iter as u64, 2 + attempt as u64),
                    })
                    .map(|c| (c.directive, c.span)),
            };
            let (name, span) = match choice {
                Ok(c) => c,
                Err(InstantiationError::NoApplicableDirective) => {
                    report.verdict = Verdict::Exhausted;
                    return report;
                }
                Err(InstantiationError::EndpointError(e)) => {
                    report.verdict = Verdict::Discarded(format!("agent endpoint error: {e}"));
                    return report;
                }
                Err(e) => {
                    last_failure = e.to_string();
                    continue;
                }
            };
            report.directive = Some(name.clone());
            report.span = Some(span);
            let Some(directive) = pruned.iter().copied().find(|d| d.name == name) else {
                last_failure = format!("`{name}` is not among the applicable directives");
                continue;
            };
            *self.lock().tree.node_mut(pick.node).usage.entry(name.clone()).or_default() += 1;
            *context.usage.entry(name.clone()).or_default() += 1;

            let docs = self.search.sample;
            let params = match self.search.instantiator.instantiate(
                &InstantiateRequest {
                    directive,
                    pipeline: &snap.pipeline,
                    span,
                    objective: pick.objective,
                    catalog: self.search.catalog,
                    context: &context,
                },
                &mut docs.cursor(),
            ) {
                Ok(p) => p,
                Err(InstantiationError::EndpointError(e)) => {
                    report.verdict = Verdict::Discarded(format!("agent endpoint error: {e}"));
                    return report;
                }
                Err(e) => {
                    last_failure = e.to_string();
                    continue;
                }
            };
            report.params_sha = params.first().map(params_sha);

            let mut candidates: Vec<(PipelineSpec, RewriteRecord, String)> = Vec::new();
            for prm in params {
                let record = RewriteRecord {
                    directive: name.clone(),
                    span,
                    params: prm,
                    objective: Some(pick.objective),
                };
                match directive.apply(&snap.pipeline, &record, self.search.catalog) {
                    Ok(q) => {
                        let key = pipeline_key(&q);
                        if !candidates.iter().any(|(_, _, k)| *k == key) {
                            candidates.push((q, record, key));
                        }
                    }
                    Err(e) => last_failure = e.to_string(),
                }
            }
            let fresh_count = candidates.len();
            {
                let st = self.lock();
                candidates.retain(|(_, _, k)| st.tree.find_key(k).is_none());
            }
            if candidates.is_empty() {
                if fresh_count > 0 {
                    last_failure = "every candidate duplicates an explored pipeline".into();
                }
                continue;
            }

            let reservation = {
                let mut st = self.lock();
                let r = candidates.len().min(self.remaining(&st));
                st.reserved += r;
                r
            };
            if reservation == 0 {
                report.verdict = Verdict::OutOfBudget;
                return report;
            }
            candidates.truncate(reservation);
            let mut scored = Vec::new();
            let mut eval_failure = None;
            for (q, record, key) in candidates {
                report.candidates_evaluated += 1;
                match self.cached.evaluate_tracked(&q) {
                    Ok(r) => {
                        report.cache_hits += usize::from(r.hit);
                        scored.push((q, record, EvalPoint::new(key, r.result.cost, r.result.accuracy)));
                    }
                    Err(e) => {
                        eval_failure = Some(e);
                        break;
                    }
                }
            }
            self.release(reservation);
            match eval_failure {
                Some(EvalError::Transport(e)) => {
                    report.verdict = Verdict::Discarded(format!("evaluator transport error: {e}"));
                    return report;
                }
                Some(e) => {
                    last_failure = e.to_string();
                    continue;
                }
                None => {}
            }
            let best = scored
                .into_iter()
                .enumerate()
                .min_by(|(i, a), (j, b)| {
                    b.2.accuracy
                        .total_cmp(&a.2.accuracy)
                        .then(a.2.cost_micros.cmp(&b.2.cost_micros))
                        .then(i.cmp(j))
                })
                .map(|(_, c)| c)
                .expect("at least one candidate was scored");
            report.params_sha = Some(params_sha(&best.1.params));
            report.verdict = Verdict::Added {
                pipeline: best.0,
                record: best.1,
                point: best.2,
            };
            return report;
        }
        report.verdict = Verdict::Discarded(last_failure);
        report
    }

    fn release(&self, reservation: usize) {
        let mut st = self.lock();
        st.reserved -= reservation;
        self.wake.notify_all();
    }

    fn finish(&self, pick: Pick, report: StepReport) {
        let mut st = self.lock();
        let mut failure = None;
        let mut child = None;
        let mut point = None;
        let outcome = match report.verdict {
            Verdict::Added { pipeline, record, point: p } => {
                if st.tree.find_key(&p.pipeline_key).is_some() {
                    failure = Some("a concurrent step added the same pipeline".to_string());
                    Outcome::Discarded
                } else {
                    let parent = st.tree.node(pick.node).eval.clone();
                    st.stats
                        .directive_stats
                        .entry(record.directive.clone())
                        .or_default()
                        .record(p.cost() - parent.cost(), p.accuracy - parent.accuracy);
                    child = Some(st.tree.add_child(pick.node, pipeline, p.clone(), record));
                    point = Some(p);
                    Outcome::Added
                }
            }
            Verdict::Discarded(f) => {
                failure = Some(f);
                Outcome::Discarded
            }
            Verdict::OutOfBudget => {
                failure = Some("budget spent".into());
                Outcome::Discarded
            }
            Verdict::Exhausted => {
                st.tree.node_mut(pick.node).exhausted = true;
                Outcome::Exhausted
            }
        };
        if outcome != Outcome::Added && pick.increment {
            st.tree.add_visits(&pick.path, -1);
        }
        let frontier_size = st.tree.frontier().len();
        let record = IterationRecord {
            iter: pick.iter,
            phase: pick.phase,
            selected_path: pick.path,
            node: pick.node,
            objective: Some(pick.objective),
            directive: report.directive,
            span: report.span,
            params_sha: report.params_sha,
            outcome,
            child,
            cost: point.as_ref().map(EvalPoint::cost),
            accuracy: point.as_ref().map(|p| p.accuracy),
            candidates_evaluated: report.candidates_evaluated,
            cache_hits: report.cache_hits,
            attempts: report.attempts,
            budget_used: self.used(),
            frontier_size,
            parent_children_before: pick.children_before,
            parent_cap: pick.cap,
            parent_had_open_child: pick.open_child,
            parent_disabled: pick.disabled,
            failure,
        };
        st.records.push(record);
        st.in_flight -= 1;
        self.wake.notify_all();
    }
}

/// Accuracy-then-cost summary of the frontier as JSON rows.
pub fn frontier_json(outcome: &SearchOutcome) -> Value {
    Value::Array(
        outcome
            .frontier()
            .into_iter()
            .map(|n| {
                json!({
                    "node": n.id,
                    "pipeline_key": n.eval.pipeline_key,
                    "cost": n.eval.cost(),
                    "cost_micros": n.eval.cost_micros,
                    "accuracy": n.eval.accuracy,
                    "path": n.path.iter().map(|r| r.directive.as_str()).collect::<Vec<_>>(),
                    "pipeline": n.pipeline,
                })
            })
            .collect(),
    )
}
