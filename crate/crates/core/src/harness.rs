//! Offline runs on a simulated landscape: run specifications, trace
//! headers, replay and strategy comparison.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::directives::Registry;
use crate::eval::{Landscape, LandscapeError};
use crate::instantiation::{SampleDocs, StubInstantiator};
use crate::ir::{ModelCatalog, PipelineSpec};
use crate::pareto::{pareto_set, EvalPoint};
use crate::search::trace::{parse_jsonl, to_jsonl, TraceError};
use crate::search::{IterationRecord, Outcome, Search, SearchConfig, SearchError, SearchOutcome, Strategy};

/// Everything needed to reproduce a simulated run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub pipeline: PipelineSpec,
    pub catalog: ModelCatalog,
    pub landscape: Landscape,
    pub sample: Vec<Value>,
    pub config: SearchConfig,
    pub strategy: Strategy,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: u32,
    strategy: Strategy,
    config: SearchConfig,
    pipeline: String,
    models: String,
    landscape: Option<String>,
    sample: Vec<Value>,
}

const TRACE_FORMAT: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("trace header: {0}")]
    Header(String),
    #[error("trace was not recorded on a simulated landscape and cannot be replayed")]
    NotReplayable,
    #[error("trace was recorded with {0} workers; only single-worker traces replay deterministically")]
    Concurrent(usize),
    #[error(transparent)]
    Landscape(#[from] LandscapeError),
    #[error(transparent)]
    Search(#[from] SearchError),
}

/// Trace header for a run whose evaluator is not a landscape.
pub fn live_header(
    pipeline: &PipelineSpec,
    catalog: &ModelCatalog,
    sample: &SampleDocs,
    config: &SearchConfig,
    strategy: Strategy,
) -> Value {
    serde_json::to_value(Header {
        format: TRACE_FORMAT,
        strategy,
        config: *config,
        pipeline: pipeline.to_yaml(),
        models: catalog.to_yaml(),
        landscape: None,
        sample: sample.docs().to_vec(),
    })
    .expect("header serializes")
}

impl RunSpec {
    pub fn header(&self) -> Value {
        serde_json::to_value(Header {
            format: TRACE_FORMAT,
            strategy: self.strategy,
            config: self.config,
            pipeline: self.pipeline.to_yaml(),
            models: self.catalog.to_yaml(),
            landscape: Some(self.landscape.to_yaml()),
            sample: self.sample.clone(),
        })
        .expect("header serializes")
    }

    pub fn from_header(header: &Value) -> Result<Self, HarnessError> {
        let h: Header = serde_json::from_value(header.clone()).map_err(|e| HarnessError::Header(e.to_string()))?;
        if h.format != TRACE_FORMAT {
            return Err(HarnessError::Header(format!("unsupported trace format {}", h.format)));
        }
        let landscape = h.landscape.ok_or(HarnessError::NotReplayable)?;
        Ok(RunSpec {
            pipeline: PipelineSpec::from_yaml(&h.pipeline).map_err(|e| HarnessError::Header(e.to_string()))?,
            catalog: ModelCatalog::from_yaml(&h.models).map_err(|e| HarnessError::Header(e.to_string()))?,
            landscape: Landscape::from_yaml(&landscape)?,
            sample: h.sample,
            config: h.config,
            strategy: h.strategy,
        })
    }

    /// Runs the search with the stub instantiator on the landscape.
    pub fn run(&self) -> Result<SearchOutcome, SearchError> {
        let registry = Registry::standard();
        let evaluator = self.landscape.evaluator(&self.catalog);
        let sample = SampleDocs::new(self.sample.clone());
        Search {
            registry: &registry,
            catalog: &self.catalog,
            evaluator: &evaluator,
            instantiator: &StubInstantiator,
            sample: &sample,
        }
        .run(&self.pipeline, &self.config, self.strategy)
    }

    pub fn trace(&self, outcome: &SearchOutcome) -> String {
        to_jsonl(&self.header(), &outcome.records)
    }
}

/// Result of re-running a recorded trace.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayReport {
    pub records: usize,
    /// Index of the first record that differs, if any.
    pub first_mismatch: Option<usize>,
    pub recorded_len: usize,
    pub replayed_len: usize,
}

impl ReplayReport {
    pub fn identical(&self) -> bool {
        self.first_mismatch.is_none() && self.recorded_len == self.replayed_len
    }
}

/// Re-executes a single-worker trace and compares it record by record.
pub fn replay(trace: &str) -> Result<ReplayReport, HarnessError> {
    let (header, recorded) = parse_jsonl(trace)?;
    let spec = RunSpec::from_header(&header)?;
    if spec.config.workers != 1 {
        return Err(HarnessError::Concurrent(spec.config.workers));
    }
    let replayed = spec.run()?.records;
    let first_mismatch = recorded
        .iter()
        .zip(&replayed)
        .position(|(a, b)| a != b)
        .or_else(|| (recorded.len() != replayed.len()).then(|| recorded.len().min(replayed.len())));
    Ok(ReplayReport {
        records: recorded.len(),
        first_mismatch,
        recorded_len: recorded.len(),
        replayed_len: replayed.len(),
    })
}

/// Frontier of every pipeline a trace added to the tree.
pub fn frontier_from_records(records: &[IterationRecord]) -> Vec<EvalPoint> {
    let points: Vec<EvalPoint> = records
        .iter()
        .filter(|r| r.outcome == Outcome::Added)
        .filter_map(|r| match (r.child, r.cost, r.accuracy) {
            (Some(c), Some(cost), Some(acc)) => Some(EvalPoint::new(format!("node{c}"), cost, acc)),
            _ => None,
        })
        .collect();
    pareto_set(&points)
}

/// Best accuracy per strategy and seed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub strategy: Strategy,
    pub seed: u64,
    pub best_accuracy: f64,
    pub frontier_size: usize,
    pub budget_used: usize,
}

/// Runs every strategy for each seed; the landscape is reseeded per seed.
pub fn bench(base: &RunSpec, strategies: &[Strategy], seeds: &[u64]) -> Result<Vec<BenchRow>, SearchError> {
    let mut rows = Vec::new();
    for &seed in seeds {
        for &strategy in strategies {
            let spec = RunSpec {
                landscape: base.landscape.reseeded(seed),
                config: SearchConfig { seed, ..base.config },
                strategy,
                ..base.clone()
            };
            let out = spec.run()?;
            rows.push(BenchRow {
                strategy,
                seed,
                best_accuracy: out.best_accuracy(),
                frontier_size: out.frontier().len(),
                budget_used: out.budget_used,
            });
        }
    }
    Ok(rows)
}

/// One-sided sign test: probability of at least `wins` successes in
/// `wins + losses` fair coin flips. Ties are dropped.
pub fn sign_test_p(wins: usize, losses: usize) -> f64 {
    let n = wins + losses;
    if n == 0 {
        return 1.0;
    }
    let mut p = 0.0;
    let mut choose = 1.0f64;
    for k in 0..=n {
        if k > 0 {
            choose = choose * (n - k + 1) as f64 / k as f64;
        }
        if k >= wins {
            p += choose;
        }
    }
    p / 2f64.powi(n as i32)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sign_test_values() {
        assert_eq!(sign_test_p(0, 0), 1.0);
        assert!((sign_test_p(1, 0) - 0.5).abs() < 1e-12);
        // P(X >= 15 | n = 20)
        assert!((sign_test_p(15, 5) - 0.020_694).abs() < 1e-6);
        assert!((sign_test_p(10, 10) - 0.588_099).abs() < 1e-6);
    }
}
