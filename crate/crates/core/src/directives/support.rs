//! Helpers shared by the rewrite bodies.

use std::collections::BTreeSet;

use serde_json::Value;

use super::{RewriteInput, Span};
use crate::ir::{KeyEnv, OperatorConfig, OperatorType, OutputSchema, PipelineSpec, SchemaType};

pub(crate) const PROMPTED: &[OperatorType] = &[
    OperatorType::Map,
    OperatorType::Filter,
    OperatorType::Reduce,
    OperatorType::Extract,
];

pub(crate) const ANY_LLM: &[OperatorType] = &[
    OperatorType::Map,
    OperatorType::ParallelMap,
    OperatorType::Filter,
    OperatorType::Reduce,
    OperatorType::Extract,
];

pub(crate) fn str_param<'a>(params: &'a Value, name: &str) -> &'a str {
    params[name].as_str().unwrap_or_default()
}

pub(crate) fn opt_str<'a>(params: &'a Value, name: &str) -> Option<&'a str> {
    params.get(name).and_then(Value::as_str)
}

pub(crate) fn int_param(params: &Value, name: &str) -> Option<i64> {
    params.get(name).and_then(Value::as_i64)
}

pub(crate) fn schema_param(params: &Value, name: &str) -> OutputSchema {
    params[name]
        .as_object()
        .map(|m| {
            m.iter()
                .filter_map(|(k, v)| Some((k.clone(), v.as_str()?.parse::<SchemaType>().ok()?)))
                .collect()
        })
        .unwrap_or_default()
}

/// The model a newly synthesized LLM operator should use: the explicit
/// parameter, else the leftmost replaced LLM operator's model.
pub(crate) fn model_for(input: &RewriteInput<'_>, param: &str) -> String {
    if let Some(m) = opt_str(input.params, param) {
        return m.to_string();
    }
    window(input)
        .iter()
        .find_map(|op| op.model.clone())
        .or_else(|| input.pipeline.models().into_iter().next())
        .unwrap_or_default()
}

pub(crate) fn window<'a>(input: &RewriteInput<'a>) -> &'a [OperatorConfig] {
    &input.pipeline.operators[input.span.start..=input.span.end]
}

/// Hands out operator ids that collide neither with the pipeline nor with
/// each other.
pub(crate) struct Ids {
    taken: BTreeSet<String>,
}

impl Ids {
    pub(crate) fn new(p: &PipelineSpec) -> Self {
        Ids {
            taken: p.operators.iter().map(|op| op.id.clone()).collect(),
        }
    }

    pub(crate) fn fresh(&mut self, base: &str) -> String {
        let id = if self.taken.contains(base) {
            (2..)
                .map(|n| format!("{base}_{n}"))
                .find(|c| !self.taken.contains(c))
                .expect("unbounded id space")
        } else {
            base.to_string()
        };
        self.taken.insert(id.clone());
        id
    }
}

/// Every key name the pipeline mentions as an input or output.
pub(crate) fn known_keys(p: &PipelineSpec) -> BTreeSet<String> {
    let mut keys: BTreeSet<String> = p.input_keys.clone();
    for op in &p.operators {
        keys.extend(op.effective_schema().into_keys());
    }
    keys
}

/// `base` or `base_2`, `base_3`, ... whichever is unused anywhere in `p`.
pub(crate) fn fresh_key(p: &PipelineSpec, env: &KeyEnv, base: &str) -> String {
    let known = known_keys(p);
    let free = |k: &str| !known.contains(k) && !env.contains_key(k);
    if free(base) {
        return base.to_string();
    }
    (2..)
        .map(|n| format!("{base}_{n}"))
        .find(|c| free(c))
        .expect("unbounded key space")
}

/// Keys an operator's prompts read that hold text: untyped input keys or
/// string outputs of earlier operators.
pub(crate) fn text_keys(op: &OperatorConfig, env: &KeyEnv) -> Vec<String> {
    let mut out = Vec::new();
    for prompt in op.prompts() {
        for key in crate::ir::placeholders(prompt) {
            let is_text = matches!(env.get(&key), Some(None) | Some(Some(SchemaType::String)));
            if is_text && !out.contains(&key) {
                out.push(key);
            }
        }
    }
    out
}

pub(crate) fn tagged(mut op: OperatorConfig, directive: &str) -> OperatorConfig {
    op.push_lineage(directive);
    op
}

/// Lineage of every operator in `ops`, concatenated, plus `directive`.
pub(crate) fn merged_lineage(ops: &[OperatorConfig], directive: &str) -> Value {
    let mut tags: Vec<String> = ops.iter().flat_map(|op| op.lineage()).collect();
    tags.push(directive.to_string());
    Value::from(tags)
}

/// `p` with the operators in `span` replaced by `ops`.
pub(crate) fn splice(p: &PipelineSpec, span: Span, ops: Vec<OperatorConfig>) -> PipelineSpec {
    let mut out = p.clone();
    out.operators.splice(span.start..=span.end, ops);
    out
}

/// Schema with a single key.
pub(crate) fn one_key(key: &str, t: SchemaType) -> OutputSchema {
    [(key.to_string(), t)].into_iter().collect()
}

/// The boolean key a filter writes.
pub(crate) fn filter_flag(op: &OperatorConfig) -> Option<&str> {
    op.output_schema
        .iter()
        .find(|(_, t)| t.is_boolean())
        .map(|(k, _)| k.as_str())
}

pub(crate) fn default_filter_code(flag: &str) -> String {
    format!("def keep(input):\n    return bool(input[\"{flag}\"])\n")
}

pub(crate) fn require(cond: bool, message: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(message())
    }
}
