//! Pipeline evaluation: the evaluator interface, a canonical-form cache and
//! the simulated landscape used for offline runs.

mod landscape;

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::ir::{pipeline_key, PipelineSpec};

pub use landscape::{DirectiveEffect, Interaction, Landscape, LandscapeError, LandscapeEvaluator};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub cost: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    /// Transient failure reaching the execution backend.
    #[error("evaluator transport error: {0}")]
    Transport(String),
    /// The pipeline cannot be executed as written.
    #[error("pipeline cannot be evaluated: {0}")]
    Invalid(String),
}

pub trait Evaluator: Send + Sync {
    fn evaluate(&self, p: &PipelineSpec) -> Result<EvalResult, EvalError>;
}

impl<E: Evaluator + ?Sized> Evaluator for &E {
    fn evaluate(&self, p: &PipelineSpec) -> Result<EvalResult, EvalError> {
        (**self).evaluate(p)
    }
}

impl<E: Evaluator + ?Sized> Evaluator for Box<E> {
    fn evaluate(&self, p: &PipelineSpec) -> Result<EvalResult, EvalError> {
        (**self).evaluate(p)
    }
}

impl<E: Evaluator + ?Sized> Evaluator for Arc<E> {
    fn evaluate(&self, p: &PipelineSpec) -> Result<EvalResult, EvalError> {
        (**self).evaluate(p)
    }
}

/// Outcome of a cached evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CachedResult {
    pub result: EvalResult,
    pub hit: bool,
}

type Slot = Arc<Mutex<Option<EvalResult>>>;

/// Memoizes an evaluator on the pipeline's canonical key.
///
/// Concurrent requests for the same key wait on one slot, so the inner
/// evaluator runs at most once per key. Failures are not cached.
pub struct Cached<E> {
    inner: E,
    slots: Mutex<HashMap<String, Slot>>,
    calls: AtomicU64,
}

impl<E: Evaluator> Cached<E> {
    pub fn new(inner: E) -> Self {
        Cached {
            inner,
            slots: Mutex::new(HashMap::new()),
            calls: AtomicU64::new(0),
        }
    }

    pub fn inner(&self) -> &E {
        &self.inner
    }

    /// Number of times the inner evaluator has been invoked.
    pub fn inner_calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn contains(&self, p: &PipelineSpec) -> bool {
        let slot = self.slots.lock().expect("cache lock").get(&pipeline_key(p)).cloned();
        slot.is_some_and(|s| s.lock().expect("slot lock").is_some())
    }

    pub fn evaluate_tracked(&self, p: &PipelineSpec) -> Result<CachedResult, EvalError> {
        let slot = self
            .slots
            .lock()
            .expect("cache lock")
            .entry(pipeline_key(p))
            .or_default()
            .clone();
        let mut guard = slot.lock().expect("slot lock");
        if let Some(result) = *guard {
            return Ok(CachedResult { result, hit: true });
        }
        self.calls.fetch_add(1, Ordering::SeqCst);
        let result = self.inner.evaluate(p)?;
        *guard = Some(result);
        Ok(CachedResult { result, hit: false })
    }
}

impl<E: Evaluator> Evaluator for Cached<E> {
    fn evaluate(&self, p: &PipelineSpec) -> Result<EvalResult, EvalError> {
        self.evaluate_tracked(p).map(|c| c.result)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{OperatorConfig, OperatorType, SchemaType};

    struct Counting(AtomicU64);

    impl Evaluator for Counting {
        fn evaluate(&self, p: &PipelineSpec) -> Result<EvalResult, EvalError> {
            let n = self.0.fetch_add(1, Ordering::SeqCst);
            if p.name == "flaky" && n == 0 {
                return Err(EvalError::Transport("timeout".into()));
            }
            Ok(EvalResult {
                cost: p.len() as f64,
                accuracy: 0.5,
            })
        }
    }

    fn pipeline(id: &str, prompt: &str) -> PipelineSpec {
        let op = OperatorConfig::llm(
            id,
            OperatorType::Map,
            prompt,
            [("out".to_string(), SchemaType::String)].into_iter().collect(),
            "m",
        );
        PipelineSpec::new("p", ["text"], vec![op])
    }

    #[test]
    fn hits_skip_the_inner_evaluator() {
        let c = Cached::new(Counting(AtomicU64::new(0)));
        let a = pipeline("a", "Read {{ input.text }}");
        assert!(!c.evaluate_tracked(&a).unwrap().hit);
        assert!(c.evaluate_tracked(&a).unwrap().hit);
        assert!(c.evaluate_tracked(&pipeline("renamed", "Read {{ input.text }}")).unwrap().hit);
        assert_eq!(c.inner_calls(), 1);
        c.evaluate(&pipeline("a", "Summarize {{ input.text }}")).unwrap();
        assert_eq!(c.inner_calls(), 2);
    }

    #[test]
    fn failures_are_not_cached() {
        let c = Cached::new(Counting(AtomicU64::new(0)));
        let mut p = pipeline("a", "Read {{ input.text }}");
        p.name = "flaky".into();
        assert!(matches!(c.evaluate(&p), Err(EvalError::Transport(_))));
        assert!(!c.contains(&p));
        assert!(!c.evaluate_tracked(&p).unwrap().hit);
        assert_eq!(c.inner_calls(), 2);
    }
}
