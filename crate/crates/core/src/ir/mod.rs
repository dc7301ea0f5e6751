//! Pipeline intermediate representation.
//!
//! A [`PipelineSpec`] is an ordered list of [`OperatorConfig`]s applied to a
//! document collection whose top-level keys are `input_keys`. Every rewrite
//! the optimizer performs produces a new `PipelineSpec`; nothing here is
//! mutated in place once handed to the search.

mod canonical;
mod catalog;
mod cost;
mod schema;
mod validate;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub use canonical::{canonical_serialize, pipeline_key};
pub use catalog::{CatalogError, ModelCatalog, ModelEntry};
pub use cost::{estimate_cost, OperatorLoad, OutputSizes, WorkloadProfile};
pub use schema::{SchemaType, SchemaTypeError};
pub use validate::{
    available_keys_after, key_env_after, split_chunk_key, split_doc_id_key, split_key,
    validate_pipeline, KeyEnv, ValidationReport, Violation, ViolationKind,
};

pub type OutputSchema = BTreeMap<String, SchemaType>;

#[derive(Debug, thiserror::Error)]
pub enum IrError {
    #[error("operator `{operator}` references unknown model `{model}`")]
    UnknownModel { operator: String, model: String },
    #[error("index {index} out of range for pipeline of {len} operators")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("failed to parse pipeline: {0}")]
    Parse(String),
    #[error("pipeline is invalid: {0}")]
    Invalid(ValidationReport),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorType {
    Map,
    ParallelMap,
    Reduce,
    Filter,
    Split,
    Gather,
    Unnest,
    Sample,
    Extract,
    CodeMap,
    CodeReduce,
    CodeFilter,
}

impl OperatorType {
    pub const ALL: [OperatorType; 12] = [
        OperatorType::Map,
        OperatorType::ParallelMap,
        OperatorType::Reduce,
        OperatorType::Filter,
        OperatorType::Split,
        OperatorType::Gather,
        OperatorType::Unnest,
        OperatorType::Sample,
        OperatorType::Extract,
        OperatorType::CodeMap,
        OperatorType::CodeReduce,
        OperatorType::CodeFilter,
    ];

    /// LLM-powered operators carry a model and a prompt template.
    pub fn is_llm(self) -> bool {
        matches!(
            self,
            OperatorType::Map
                | OperatorType::ParallelMap
                | OperatorType::Reduce
                | OperatorType::Filter
                | OperatorType::Extract
        )
    }

    pub fn is_code(self) -> bool {
        matches!(
            self,
            OperatorType::CodeMap | OperatorType::CodeReduce | OperatorType::CodeFilter
        )
    }

    /// split, gather, unnest and sample: neither LLM nor synthesized code.
    pub fn is_auxiliary(self) -> bool {
        !self.is_llm() && !self.is_code()
    }

    pub fn is_reduce(self) -> bool {
        matches!(self, OperatorType::Reduce | OperatorType::CodeReduce)
    }

    pub fn is_filter(self) -> bool {
        matches!(self, OperatorType::Filter | OperatorType::CodeFilter)
    }

    /// The code-powered operator that can stand in for this LLM operator.
    pub fn code_counterpart(self) -> Option<OperatorType> {
        match self {
            OperatorType::Map | OperatorType::ParallelMap | OperatorType::Extract => {
                Some(OperatorType::CodeMap)
            }
            OperatorType::Reduce => Some(OperatorType::CodeReduce),
            OperatorType::Filter => Some(OperatorType::CodeFilter),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            OperatorType::Map => "map",
            OperatorType::ParallelMap => "parallel_map",
            OperatorType::Reduce => "reduce",
            OperatorType::Filter => "filter",
            OperatorType::Split => "split",
            OperatorType::Gather => "gather",
            OperatorType::Unnest => "unnest",
            OperatorType::Sample => "sample",
            OperatorType::Extract => "extract",
            OperatorType::CodeMap => "code_map",
            OperatorType::CodeReduce => "code_reduce",
            OperatorType::CodeFilter => "code_filter",
        }
    }
}

impl fmt::Display for OperatorType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMethod {
    Random,
    Bm25,
    Embedding,
    Stratified,
}

impl SamplingMethod {
    pub fn needs_query(self) -> bool {
        matches!(self, SamplingMethod::Bm25 | SamplingMethod::Embedding)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingSpec {
    pub method: SamplingMethod,
    pub k: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub strata_keys: Vec<String>,
}

/// One independent prompt of a `parallel_map`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MapBranch {
    pub prompt_template: String,
    pub output_schema: OutputSchema,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorConfig {
    pub id: String,
    #[serde(rename = "type")]
    pub op_type: OperatorType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_template: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub code_body: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub output_schema: OutputSchema,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub group_by_keys: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampling: Option<SamplingSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub branches: Vec<MapBranch>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extras: BTreeMap<String, Value>,
}

/// Key under `extras` recording which rewrites produced or modified an operator.
pub const LINEAGE_KEY: &str = "lineage";

impl OperatorConfig {
    fn bare(id: impl Into<String>, op_type: OperatorType) -> Self {
        OperatorConfig {
            id: id.into(),
            op_type,
            prompt_template: None,
            code_body: None,
            output_schema: OutputSchema::new(),
            model: None,
            group_by_keys: Vec::new(),
            sampling: None,
            branches: Vec::new(),
            extras: BTreeMap::new(),
        }
    }

    /// An LLM operator (map, reduce, filter, extract).
    pub fn llm(
        id: impl Into<String>,
        op_type: OperatorType,
        prompt: impl Into<String>,
        schema: OutputSchema,
        model: impl Into<String>,
    ) -> Self {
        let mut op = Self::bare(id, op_type);
        op.prompt_template = Some(prompt.into());
        op.output_schema = schema;
        op.model = Some(model.into());
        op
    }

    pub fn code(
        id: impl Into<String>,
        op_type: OperatorType,
        code: impl Into<String>,
        schema: OutputSchema,
    ) -> Self {
        let mut op = Self::bare(id, op_type);
        op.code_body = Some(code.into());
        op.output_schema = schema;
        op
    }

    pub fn auxiliary(id: impl Into<String>, op_type: OperatorType) -> Self {
        Self::bare(id, op_type)
    }

    pub fn with_group_by<I, S>(mut self, keys: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.group_by_keys = keys.into_iter().map(Into::into).collect();
        self
    }

    pub fn with_extra(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.extras.insert(key.to_string(), value.into());
        self
    }

    pub fn with_sampling(mut self, sampling: SamplingSpec) -> Self {
        self.sampling = Some(sampling);
        self
    }

    pub fn extra_str(&self, key: &str) -> Option<&str> {
        self.extras.get(key).and_then(Value::as_str)
    }

    pub fn extra_f64(&self, key: &str) -> Option<f64> {
        self.extras.get(key).and_then(Value::as_f64)
    }

    pub fn extra_bool(&self, key: &str) -> bool {
        self.extras.get(key).and_then(Value::as_bool).unwrap_or(false)
    }

    pub fn extra_str_list(&self, key: &str) -> Vec<String> {
        self.extras
            .get(key)
            .and_then(Value::as_array)
            .map(|items| {
                items
                    .iter()
                    .filter_map(|v| v.as_str().map(str::to_string))
                    .collect()
            })
            .unwrap_or_default()
    }

    pub fn lineage(&self) -> Vec<String> {
        self.extra_str_list(LINEAGE_KEY)
    }

    pub fn push_lineage(&mut self, directive: &str) {
        let mut tags = self.lineage();
        tags.push(directive.to_string());
        self.extras.insert(LINEAGE_KEY.to_string(), Value::from(tags));
    }

    /// Keys this operator writes, including every `parallel_map` branch.
    pub fn effective_schema(&self) -> OutputSchema {
        let mut schema = self.output_schema.clone();
        for branch in &self.branches {
            schema.extend(branch.output_schema.clone());
        }
        schema
    }

    /// All prompt texts carried by the operator (top-level plus branches).
    pub fn prompts(&self) -> Vec<&str> {
        let mut out: Vec<&str> = self.prompt_template.iter().map(String::as_str).collect();
        out.extend(self.branches.iter().map(|b| b.prompt_template.as_str()));
        out
    }

    /// Keys read through `{{ input.<key> }}` placeholders, `input["<key>"]`
    /// lookups in code bodies and sampling query templates.
    pub fn referenced_keys(&self) -> BTreeSet<String> {
        let mut keys = BTreeSet::new();
        for prompt in self.prompts() {
            keys.extend(placeholders(prompt));
        }
        if let Some(code) = &self.code_body {
            keys.extend(code_references(code));
        }
        if let Some(query) = self.sampling.as_ref().and_then(|s| s.query.as_deref()) {
            keys.extend(placeholders(query));
        }
        keys
    }
}

fn placeholder_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{\{\s*input\.([A-Za-z_][A-Za-z0-9_]*)\s*\}\}").unwrap())
}

fn code_ref_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r#"input\[\s*["']([A-Za-z_][A-Za-z0-9_]*)["']\s*\]"#).unwrap())
}

/// Keys named by `{{ input.<key> }}` placeholders in a template.
pub fn placeholders(template: &str) -> BTreeSet<String> {
    placeholder_re()
        .captures_iter(template)
        .map(|c| c[1].to_string())
        .collect()
}

/// Keys read via `input["<key>"]` in a synthesized code body.
pub fn code_references(code: &str) -> BTreeSet<String> {
    code_ref_re()
        .captures_iter(code)
        .map(|c| c[1].to_string())
        .collect()
}

/// Replaces every `{{ input.<from> }}` placeholder with `replacement`.
pub fn replace_placeholder(template: &str, from: &str, replacement: &str) -> String {
    placeholder_re()
        .replace_all(template, |caps: &regex::Captures<'_>| {
            if &caps[1] == from {
                replacement.to_string()
            } else {
                caps[0].to_string()
            }
        })
        .into_owned()
}

/// `{{ input.<key> }}`
pub fn placeholder(key: &str) -> String {
    format!("{{{{ input.{key} }}}}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineSpec {
    pub name: String,
    pub input_keys: BTreeSet<String>,
    pub operators: Vec<OperatorConfig>,
}

impl PipelineSpec {
    pub fn new<I, S>(name: impl Into<String>, input_keys: I, operators: Vec<OperatorConfig>) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        PipelineSpec {
            name: name.into(),
            input_keys: input_keys.into_iter().map(Into::into).collect(),
            operators,
        }
    }

    pub fn from_yaml(text: &str) -> Result<Self, IrError> {
        serde_yaml::from_str(text).map_err(|e| IrError::Parse(e.to_string()))
    }

    pub fn to_yaml(&self) -> String {
        serde_yaml::to_string(self).expect("pipeline serializes to YAML")
    }

    pub fn len(&self) -> usize {
        self.operators.len()
    }

    pub fn is_empty(&self) -> bool {
        self.operators.is_empty()
    }

    pub fn has_llm_operator(&self) -> bool {
        self.operators.iter().any(|op| op.op_type.is_llm())
    }

    pub fn llm_call_sites(&self) -> usize {
        self.operators
            .iter()
            .filter(|op| op.op_type.is_llm())
            .map(|op| op.branches.len().max(1))
            .sum()
    }

    pub fn contains(&self, op_type: OperatorType) -> bool {
        self.operators.iter().any(|op| op.op_type == op_type)
    }

    /// Models referenced by LLM operators, in first-use order.
    pub fn models(&self) -> Vec<String> {
        let mut seen = Vec::new();
        for model in self.operators.iter().filter_map(|op| op.model.as_ref()) {
            if !seen.contains(model) {
                seen.push(model.clone());
            }
        }
        seen
    }

    /// Every LLM operator switched to `model`.
    pub fn with_model(&self, model: &str) -> PipelineSpec {
        let mut out = self.clone();
        for op in out.operators.iter_mut().filter(|op| op.op_type.is_llm()) {
            op.model = Some(model.to_string());
        }
        out
    }

    /// An operator id not yet used in the pipeline, derived from `base`.
    pub fn fresh_id(&self, base: &str) -> String {
        let taken: BTreeSet<&str> = self.operators.iter().map(|op| op.id.as_str()).collect();
        if !taken.contains(base) {
            return base.to_string();
        }
        (2..)
            .map(|n| format!("{base}_{n}"))
            .find(|candidate| !taken.contains(candidate.as_str()))
            .expect("unbounded id space")
    }

    /// Multiset of directive names recorded in operator lineage, sorted.
    pub fn lineage_tags(&self) -> Vec<String> {
        let mut tags: Vec<String> = self.operators.iter().flat_map(|op| op.lineage()).collect();
        tags.sort();
        tags
    }
}
