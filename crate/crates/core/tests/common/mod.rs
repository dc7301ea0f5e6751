#![allow(dead_code)]

pub mod audit;
pub mod mocks;
pub mod oracle;

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};

use pipeopt::directives::Registry;
use pipeopt::eval::{EvalError, EvalResult, Evaluator, Landscape};
use pipeopt::instantiation::{Instantiator, SampleDocs, StubInstantiator};
use pipeopt::ir::{validate_pipeline, ModelCatalog, PipelineSpec};
use pipeopt::search::{Search, SearchConfig, SearchError, SearchOutcome, Strategy};

pub fn fixture(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(rel)
}

pub fn catalog() -> ModelCatalog {
    ModelCatalog::from_yaml(&std::fs::read_to_string(fixture("models.yaml")).unwrap()).unwrap()
}

pub fn large_catalog() -> ModelCatalog {
    ModelCatalog::from_yaml(&std::fs::read_to_string(fixture("models_large.yaml")).unwrap()).unwrap()
}

pub fn sample() -> SampleDocs {
    SampleDocs::from_path(&fixture("sample.jsonl")).unwrap()
}

pub fn pipeline(name: &str) -> PipelineSpec {
    let text = std::fs::read_to_string(fixture(&format!("pipelines/{name}.yaml"))).unwrap();
    let p = PipelineSpec::from_yaml(&text).unwrap();
    let report = validate_pipeline(&p);
    assert!(report.is_ok(), "{name}: {report}");
    p
}

pub const SEED_PIPELINES: &[&str] = &[
    "police_misconduct",
    "case_summary",
    "chunked_reports",
    "triage",
    "contract_review",
    "review_digest",
];

pub fn seeds() -> Vec<PipelineSpec> {
    SEED_PIPELINES.iter().map(|n| pipeline(n)).collect()
}

pub fn landscape(name: &str) -> Landscape {
    Landscape::builtin(name).unwrap()
}

pub fn registry() -> Registry {
    Registry::standard()
}

/// Counts every call that reaches the wrapped evaluator.
pub struct Counting<E> {
    pub inner: E,
    pub calls: AtomicUsize,
}

impl<E: Evaluator> Counting<E> {
    pub fn new(inner: E) -> Self {
        Counting {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<E: Evaluator> Evaluator for Counting<E> {
    fn evaluate(&self, p: &PipelineSpec) -> Result<EvalResult, EvalError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.evaluate(p)
    }
}

/// Runs a search with the given evaluator and instantiator.
pub fn search_with(
    p: &PipelineSpec,
    catalog: &ModelCatalog,
    evaluator: &dyn Evaluator,
    instantiator: &dyn Instantiator,
    config: &SearchConfig,
    strategy: Strategy,
) -> Result<SearchOutcome, SearchError> {
    let registry = registry();
    let sample = sample();
    Search {
        registry: &registry,
        catalog,
        evaluator,
        instantiator,
        sample: &sample,
    }
    .run(p, config, strategy)
}

/// Stub run on a landscape; also returns the number of inner evaluator calls.
pub fn search(
    p: &PipelineSpec,
    catalog: &ModelCatalog,
    landscape: &Landscape,
    config: &SearchConfig,
    strategy: Strategy,
) -> (SearchOutcome, usize) {
    let ev = Counting::new(landscape.evaluator(catalog));
    let out = search_with(p, catalog, &ev, &StubInstantiator, config, strategy).unwrap();
    (out, ev.calls())
}
