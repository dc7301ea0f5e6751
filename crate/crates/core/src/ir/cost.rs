use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{
    split_chunk_key, split_doc_id_key, split_key, IrError, ModelCatalog, OperatorConfig, OperatorType,
    PipelineSpec, SchemaType,
};

/// Token count assumed for each output of a given schema type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSizes {
    pub string: f64,
    pub number: f64,
    pub boolean: f64,
    pub string_list: f64,
    /// Per field, per list.
    pub object_field: f64,
}

impl Default for OutputSizes {
    fn default() -> Self {
        OutputSizes {
            string: 120.0,
            number: 4.0,
            boolean: 2.0,
            string_list: 150.0,
            object_field: 80.0,
        }
    }
}

impl OutputSizes {
    pub fn of(&self, t: &SchemaType) -> f64 {
        match t {
            SchemaType::String => self.string,
            SchemaType::Number => self.number,
            SchemaType::Boolean => self.boolean,
            SchemaType::StringList => self.string_list,
            SchemaType::ObjectList(fields) => self.object_field * fields.len() as f64,
        }
    }
}

/// Explicit per-operator token and document counts; any field left out
/// falls back to the flow estimate.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorLoad {
    #[serde(default)]
    pub input_tokens: Option<f64>,
    #[serde(default)]
    pub output_tokens: Option<f64>,
    #[serde(default)]
    pub documents: Option<f64>,
}

/// Statistics about the workload that the cost estimate is computed from.
///
/// Token sizes are tracked per key as documents flow through the pipeline:
/// splits shrink the chunked key and multiply the document count, filters
/// scale the count by their selectivity, reduces collapse it to the number
/// of groups and so on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkloadProfile {
    pub catalog: ModelCatalog,
    pub documents: f64,
    pub key_tokens: BTreeMap<String, f64>,
    pub default_key_tokens: f64,
    pub group_cardinality: BTreeMap<String, f64>,
    pub default_group_cardinality: f64,
    pub filter_selectivity: f64,
    pub unnest_fanout: f64,
    pub compression_ratio: f64,
    pub output_sizes: OutputSizes,
    pub extract_output_tokens: f64,
    pub chars_per_token: f64,
    pub overrides: BTreeMap<String, OperatorLoad>,
}

impl Default for WorkloadProfile {
    fn default() -> Self {
        WorkloadProfile {
            catalog: ModelCatalog::default(),
            documents: 100.0,
            key_tokens: BTreeMap::new(),
            default_key_tokens: 50.0,
            group_cardinality: BTreeMap::new(),
            default_group_cardinality: 4.0,
            filter_selectivity: 0.5,
            unnest_fanout: 3.0,
            compression_ratio: 0.25,
            output_sizes: OutputSizes::default(),
            extract_output_tokens: 30.0,
            chars_per_token: 4.0,
            overrides: BTreeMap::new(),
        }
    }
}

impl WorkloadProfile {
    pub fn with_catalog(catalog: ModelCatalog) -> Self {
        WorkloadProfile {
            catalog,
            ..WorkloadProfile::default()
        }
    }

    fn prompt_tokens(&self, text: &str) -> f64 {
        (text.chars().count() as f64 / self.chars_per_token).ceil()
    }
}

struct Flow<'a> {
    profile: &'a WorkloadProfile,
    docs: f64,
    tokens: BTreeMap<String, f64>,
    cardinality: BTreeMap<String, f64>,
}

impl<'a> Flow<'a> {
    fn new(p: &PipelineSpec, profile: &'a WorkloadProfile) -> Self {
        let tokens = p
            .input_keys
            .iter()
            .map(|k| {
                let t = profile
                    .key_tokens
                    .get(k)
                    .copied()
                    .unwrap_or(profile.default_key_tokens);
                (k.clone(), t)
            })
            .collect();
        Flow {
            profile,
            docs: profile.documents,
            tokens,
            cardinality: profile.group_cardinality.clone(),
        }
    }

    fn size(&self, key: &str) -> f64 {
        self.tokens
            .get(key)
            .copied()
            .unwrap_or(self.profile.default_key_tokens)
    }

    fn input_size(&self, prompt: &str) -> f64 {
        self.profile.prompt_tokens(prompt)
            + super::placeholders(prompt)
                .iter()
                .map(|k| self.size(k))
                .sum::<f64>()
    }

    /// Size of each key an operator writes. Text derived from a source key
    /// (compression, summaries, head/tail truncation) scales with the source.
    fn output_sizes(&self, op: &OperatorConfig) -> BTreeMap<String, f64> {
        let derived = op.extra_str("source_key").map(|src| {
            let s = self.size(src);
            let head = op.extra_f64("head_words");
            let tail = op.extra_f64("tail_words");
            if head.is_some() || tail.is_some() {
                let words = head.unwrap_or(0.0) + tail.unwrap_or(0.0);
                s.min(words * 1.3)
            } else {
                s * op
                    .extra_f64("compression_ratio")
                    .unwrap_or(self.profile.compression_ratio)
            }
        });
        op.effective_schema()
            .into_iter()
            .map(|(k, t)| {
                let size = match (&t, derived) {
                    (SchemaType::String, Some(d)) => d,
                    _ if op.op_type == OperatorType::Extract => self.profile.extract_output_tokens,
                    _ => self.profile.output_sizes.of(&t),
                };
                (k, size)
            })
            .collect()
    }

    fn groups(&self, keys: &[String]) -> f64 {
        let product: f64 = keys
            .iter()
            .map(|k| {
                self.cardinality
                    .get(k)
                    .copied()
                    .unwrap_or(self.profile.default_group_cardinality)
            })
            .product();
        product.min(self.docs).max(if self.docs > 0.0 { 1.0 } else { 0.0 })
    }

    fn selectivity(&self, op: &OperatorConfig) -> f64 {
        op.extra_f64("selectivity")
            .unwrap_or(self.profile.filter_selectivity)
            .clamp(0.0, 1.0)
    }

    fn step(&mut self, op: &OperatorConfig) -> Result<f64, IrError> {
        let mut cost = 0.0;
        if op.op_type.is_llm() {
            let model = op.model.as_deref().unwrap_or_default();
            let entry = self
                .profile
                .catalog
                .get(model)
                .ok_or_else(|| IrError::UnknownModel {
                    operator: op.id.clone(),
                    model: model.to_string(),
                })?;
            let over = self.profile.overrides.get(&op.id);
            let outputs = self.output_sizes(op);
            let (calls, input, output) = if op.op_type == OperatorType::Reduce {
                let groups = self.groups(&op.group_by_keys);
                let per_group = if groups > 0.0 { self.docs / groups } else { 0.0 };
                let prompt = op.prompt_template.as_deref().unwrap_or_default();
                let refs: f64 = super::placeholders(prompt).iter().map(|k| self.size(k)).sum();
                let input = self.profile.prompt_tokens(prompt) + per_group * refs;
                (groups, input, outputs.values().sum::<f64>())
            } else {
                let input: f64 = op.prompts().iter().map(|t| self.input_size(t)).sum();
                (self.docs, input, outputs.values().sum::<f64>())
            };
            let calls = over.and_then(|o| o.documents).unwrap_or(calls);
            let input = over.and_then(|o| o.input_tokens).unwrap_or(input);
            let output = over.and_then(|o| o.output_tokens).unwrap_or(output);
            cost = calls * (input * entry.input_price_per_token + output * entry.output_price_per_token);
        }
        self.advance(op);
        Ok(cost)
    }

    fn advance(&mut self, op: &OperatorConfig) {
        match op.op_type {
            OperatorType::Map | OperatorType::ParallelMap | OperatorType::Extract | OperatorType::CodeMap => {
                let sizes = self.output_sizes(op);
                self.tokens.extend(sizes);
            }
            OperatorType::Filter | OperatorType::CodeFilter => {
                let sizes = self.output_sizes(op);
                self.tokens.extend(sizes);
                self.docs *= self.selectivity(op);
            }
            OperatorType::Reduce | OperatorType::CodeReduce => {
                let sizes = self.output_sizes(op);
                self.docs = self.groups(&op.group_by_keys);
                self.tokens.extend(sizes);
            }
            OperatorType::Split => {
                let Some(src) = split_key(op) else { return };
                let source = self.size(src);
                let chunk = op.extra_f64("chunk_size").unwrap_or(source).max(1.0);
                let units = (source / chunk).ceil().max(1.0);
                if let Some(doc_id) = split_doc_id_key(op) {
                    self.cardinality.insert(doc_id.clone(), self.docs);
                    self.tokens.insert(doc_id, self.profile.output_sizes.number);
                }
                if let Some(chunk_key) = split_chunk_key(op) {
                    self.tokens.insert(chunk_key, source.min(chunk));
                }
                self.docs *= units;
            }
            OperatorType::Gather => {
                if let Some(content) = op.extra_str("content_key") {
                    let peripheral = op.extra_f64("peripheral_chunks").unwrap_or(0.0).max(0.0);
                    let size = self.size(content) * (1.0 + 2.0 * peripheral);
                    self.tokens.insert(content.to_string(), size);
                }
            }
            OperatorType::Unnest => {
                self.docs *= self.profile.unnest_fanout;
            }
            OperatorType::Sample => {
                let Some(spec) = &op.sampling else { return };
                let k = f64::from(spec.k);
                let limit = if op.group_by_keys.is_empty() {
                    k
                } else {
                    k * self.groups(&op.group_by_keys)
                };
                self.docs = self.docs.min(limit);
            }
        }
    }
}

/// Estimated dollar cost of running `p` on the workload: the sum over LLM
/// operators of calls × (input tokens × input price + output tokens ×
/// output price). Code and auxiliary operators cost nothing.
pub fn estimate_cost(p: &PipelineSpec, profile: &WorkloadProfile) -> Result<f64, IrError> {
    let mut flow = Flow::new(p, profile);
    let mut total = 0.0;
    for op in &p.operators {
        total += flow.step(op)?;
    }
    Ok(total)
}
