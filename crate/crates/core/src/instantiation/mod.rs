//! Choosing a directive for a pipeline and filling in its parameters.
//!
//! Two implementations share the [`Instantiator`] trait: the offline
//! [`StubInstantiator`] and the [`AgentInstantiator`] that talks to an
//! external agent over HTTP. The agent sees directive briefs first and a
//! directive's full documentation only after choosing it.

mod agent;
mod stub;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::directives::{Directive, Objective, RewriteRecord, Span};
use crate::ir::{ModelCatalog, PipelineSpec};

pub use agent::{
    AgentInstantiator, HttpTransport, Transport, TransportError, AGENT_ENDPOINT_VAR, MAX_ATTEMPTS, MAX_DOC_READS,
};
pub use stub::StubInstantiator;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum InstantiationError {
    #[error("no pruned directive applies to the pipeline")]
    NoApplicableDirective,
    #[error("agent endpoint error: {0}")]
    EndpointError(String),
    #[error("instantiation failed after {attempts} attempts: {last_error}")]
    InstantiationFailed { attempts: usize, last_error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExploredPath {
    pub path: String,
    pub cost: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelStat {
    pub cost: f64,
    pub accuracy: f64,
}

/// Running mean of a directive's effect relative to the parent pipeline.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DirectiveStat {
    pub count: u64,
    pub mean_delta_cost: f64,
    pub mean_delta_accuracy: f64,
}

impl DirectiveStat {
    pub fn record(&mut self, delta_cost: f64, delta_accuracy: f64) {
        self.count += 1;
        let n = self.count as f64;
        self.mean_delta_cost += (delta_cost - self.mean_delta_cost) / n;
        self.mean_delta_accuracy += (delta_accuracy - self.mean_delta_accuracy) / n;
    }
}

/// What the chooser knows about the search so far.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentContext {
    pub pipeline_yaml: String,
    pub directive_briefs: Vec<Value>,
    pub explored_paths: Vec<ExploredPath>,
    pub current_path: Vec<RewriteRecord>,
    pub depth: usize,
    pub model_stats: BTreeMap<String, ModelStat>,
    pub directive_stats: BTreeMap<String, DirectiveStat>,
    pub objective: Objective,
    /// How often each directive has already been chosen for this pipeline.
    pub usage: BTreeMap<String, u32>,
}

impl AgentContext {
    /// A context with no search history.
    pub fn fresh(p: &PipelineSpec, candidates: &[&Directive], objective: Objective) -> Self {
        AgentContext {
            pipeline_yaml: p.to_yaml(),
            directive_briefs: candidates.iter().map(|d| d.brief()).collect(),
            explored_paths: Vec::new(),
            current_path: Vec::new(),
            depth: 0,
            model_stats: BTreeMap::new(),
            directive_stats: BTreeMap::new(),
            objective,
            usage: BTreeMap::new(),
        }
    }

    pub fn usage_of(&self, directive: &str) -> u32 {
        self.usage.get(directive).copied().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Choice {
    pub directive: String,
    pub span: Span,
}

pub struct ChooseRequest<'a> {
    pub pipeline: &'a PipelineSpec,
    /// The pruned registry; only these may be chosen.
    pub candidates: &'a [&'a Directive],
    pub context: &'a AgentContext,
    pub catalog: &'a ModelCatalog,
    pub seed: u64,
}

pub struct InstantiateRequest<'a> {
    pub directive: &'a Directive,
    pub pipeline: &'a PipelineSpec,
    pub span: Span,
    pub objective: Objective,
    pub catalog: &'a ModelCatalog,
    pub context: &'a AgentContext,
}

/// Sequential access to the optimization sample.
pub trait DocPeek {
    /// The next sample document, or `None` at the end of the sample.
    fn read_next_doc(&mut self) -> Option<Value>;
}

/// An in-memory optimization sample.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SampleDocs {
    docs: Vec<Value>,
}

#[derive(Debug, thiserror::Error)]
pub enum SampleError {
    #[error("cannot read sample file: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed sample document on line {line}: {message}")]
    Parse { line: usize, message: String },
}

impl SampleDocs {
    pub fn new(docs: Vec<Value>) -> Self {
        SampleDocs { docs }
    }

    /// Parses a JSON array of objects or JSON lines.
    pub fn parse(text: &str) -> Result<Self, SampleError> {
        let trimmed = text.trim_start();
        if trimmed.starts_with('[') {
            let docs: Vec<Value> = serde_json::from_str(trimmed).map_err(|e| SampleError::Parse {
                line: e.line(),
                message: e.to_string(),
            })?;
            return Ok(SampleDocs { docs });
        }
        let mut docs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            docs.push(serde_json::from_str(line).map_err(|e| SampleError::Parse {
                line: i + 1,
                message: e.to_string(),
            })?);
        }
        Ok(SampleDocs { docs })
    }

    pub fn from_path(path: &Path) -> Result<Self, SampleError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn docs(&self) -> &[Value] {
        &self.docs
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    /// A cursor starting at the first document.
    pub fn cursor(&self) -> SampleCursor<'_> {
        SampleCursor { docs: &self.docs, pos: 0 }
    }
}

pub struct SampleCursor<'a> {
    docs: &'a [Value],
    pos: usize,
}

impl DocPeek for SampleCursor<'_> {
    fn read_next_doc(&mut self) -> Option<Value> {
        let doc = self.docs.get(self.pos).cloned();
        self.pos += 1;
        doc
    }
}

pub trait Instantiator: Send + Sync {
    fn choose_directive(&self, req: &ChooseRequest<'_>) -> Result<Choice, InstantiationError>;

    /// Parameter objects for the chosen directive, one per candidate.
    fn instantiate(
        &self,
        req: &InstantiateRequest<'_>,
        peek: &mut dyn DocPeek,
    ) -> Result<Vec<Value>, InstantiationError>;
}
