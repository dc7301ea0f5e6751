//! Declarative parameter schemas with context-aware validation.

use std::collections::BTreeSet;
use std::sync::OnceLock;

use regex::Regex;
use serde_json::{json, Map, Value};

use super::Span;
use crate::ir::{key_env_after, placeholders, KeyEnv, ModelCatalog, PipelineSpec, SchemaType};

#[derive(Debug, Clone, Copy)]
pub enum FieldKind {
    /// Non-empty free text.
    Text,
    /// Possibly empty free text.
    AnyText,
    /// Prompt template with at least one `{{ input.<key> }}` placeholder.
    Template,
    /// Template that keeps every placeholder of the matched operator's prompt.
    PreservingTemplate,
    /// Non-empty program text.
    Code,
    Integer { min: i64, max: i64 },
    Number { min: f64, max: f64 },
    Choice(&'static [&'static str]),
    /// A model id from the catalog.
    Model,
    /// A key visible at the first matched operator.
    Key,
    /// An identifier not yet visible at the first matched operator.
    NewKey,
    /// Map from key to schema type.
    Schema,
    /// List of keys visible at the first matched operator.
    KeyList,
    /// List of objects, each checked against `fields`.
    Records {
        fields: &'static [Field],
        min: usize,
    },
}

impl FieldKind {
    fn describe(&self) -> Value {
        match self {
            FieldKind::Text => json!("non-empty string"),
            FieldKind::AnyText => json!("string"),
            FieldKind::Template => json!("prompt template using {{ input.<key> }} placeholders"),
            FieldKind::PreservingTemplate => {
                json!("prompt template keeping every placeholder of the original prompt")
            }
            FieldKind::Code => json!("python source"),
            FieldKind::Integer { min, max } => json!(format!("integer in [{min}, {max}]")),
            FieldKind::Number { min, max } => json!(format!("number in [{min}, {max}]")),
            FieldKind::Choice(options) => json!({ "one_of": options }),
            FieldKind::Model => json!("model id from the catalog"),
            FieldKind::Key => json!("existing key"),
            FieldKind::NewKey => json!("new key name"),
            FieldKind::Schema => json!("object mapping key -> type (string, number, boolean, list[string], list[{f: string}])"),
            FieldKind::KeyList => json!("list of existing keys"),
            FieldKind::Records { fields, min } => json!({
                "list_of": fields.iter().map(Field::describe).collect::<Vec<_>>(),
                "min_items": min,
            }),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Field {
    pub name: &'static str,
    pub kind: FieldKind,
    pub required: bool,
    pub doc: &'static str,
}

impl Field {
    pub const fn req(name: &'static str, kind: FieldKind, doc: &'static str) -> Self {
        Field {
            name,
            kind,
            required: true,
            doc,
        }
    }

    pub const fn opt(name: &'static str, kind: FieldKind, doc: &'static str) -> Self {
        Field {
            name,
            kind,
            required: false,
            doc,
        }
    }

    fn describe(&self) -> Value {
        json!({
            "name": self.name,
            "type": self.kind.describe(),
            "required": self.required,
            "doc": self.doc,
        })
    }
}

/// Directive-specific rule spanning several fields.
pub type CrossCheck = fn(&Value, &ParamContext<'_>) -> Result<(), String>;

#[derive(Debug, Clone, Copy)]
pub struct ParamSchema {
    pub fields: &'static [Field],
    pub check: Option<CrossCheck>,
}

/// The match site a parameter object is validated against.
pub struct ParamContext<'a> {
    pub pipeline: &'a PipelineSpec,
    pub span: Span,
    /// Typed keys visible at the first matched operator.
    pub env: KeyEnv,
    pub catalog: &'a ModelCatalog,
}

impl<'a> ParamContext<'a> {
    pub fn new(pipeline: &'a PipelineSpec, span: Span, catalog: &'a ModelCatalog) -> Self {
        let env = key_env_after(pipeline, span.start.min(pipeline.len())).unwrap_or_default();
        ParamContext {
            pipeline,
            span,
            env,
            catalog,
        }
    }

    pub fn first(&self) -> &crate::ir::OperatorConfig {
        &self.pipeline.operators[self.span.start]
    }
}

fn identifier_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^[A-Za-z_][A-Za-z0-9_]*$").unwrap())
}

fn check_field(field: &Field, v: &Value, ctx: &ParamContext<'_>) -> Result<(), String> {
    let name = field.name;
    let as_str = || v.as_str().ok_or_else(|| format!("`{name}` must be a string"));
    match field.kind {
        FieldKind::AnyText => {
            as_str()?;
        }
        FieldKind::Text | FieldKind::Code => {
            if as_str()?.trim().is_empty() {
                return Err(format!("`{name}` must not be empty"));
            }
        }
        FieldKind::Template => {
            let s = as_str()?;
            if placeholders(s).is_empty() {
                return Err(format!("`{name}` must reference at least one {{{{ input.<key> }}}} placeholder"));
            }
        }
        FieldKind::PreservingTemplate => {
            let s = as_str()?;
            let have = placeholders(s);
            let original = ctx.first().prompt_template.as_deref().unwrap_or_default();
            let missing: Vec<String> = placeholders(original).difference(&have).cloned().collect();
            if !missing.is_empty() {
                return Err(format!("`{name}` drops placeholders: {}", missing.join(", ")));
            }
            if have.is_empty() {
                return Err(format!("`{name}` must reference at least one placeholder"));
            }
        }
        FieldKind::Integer { min, max } => {
            let n = v
                .as_i64()
                .ok_or_else(|| format!("`{name}` must be an integer"))?;
            if n < min || n > max {
                return Err(format!("`{name}` must lie in [{min}, {max}], got {n}"));
            }
        }
        FieldKind::Number { min, max } => {
            let n = v
                .as_f64()
                .ok_or_else(|| format!("`{name}` must be a number"))?;
            if !(min..=max).contains(&n) {
                return Err(format!("`{name}` must lie in [{min}, {max}], got {n}"));
            }
        }
        FieldKind::Choice(options) => {
            let s = as_str()?;
            if !options.contains(&s) {
                return Err(format!("`{name}` must be one of {}", options.join(", ")));
            }
        }
        FieldKind::Model => {
            let s = as_str()?;
            if !ctx.catalog.contains(s) {
                return Err(format!("`{name}`: model `{s}` is not in the catalog"));
            }
        }
        FieldKind::Key => {
            let s = as_str()?;
            if !ctx.env.contains_key(s) {
                return Err(format!("`{name}`: key `{s}` is not available here"));
            }
        }
        FieldKind::NewKey => {
            let s = as_str()?;
            if !identifier_re().is_match(s) {
                return Err(format!("`{name}`: `{s}` is not a valid key name"));
            }
            if ctx.env.contains_key(s) {
                return Err(format!("`{name}`: key `{s}` already exists"));
            }
        }
        FieldKind::Schema => {
            let map = v
                .as_object()
                .ok_or_else(|| format!("`{name}` must be an object"))?;
            if map.is_empty() {
                return Err(format!("`{name}` must declare at least one key"));
            }
            for (k, t) in map {
                if !identifier_re().is_match(k) {
                    return Err(format!("`{name}`: `{k}` is not a valid key name"));
                }
                let t = t
                    .as_str()
                    .ok_or_else(|| format!("`{name}.{k}` must be a type string"))?;
                t.parse::<SchemaType>().map_err(|e| format!("`{name}.{k}`: {e}"))?;
            }
        }
        FieldKind::KeyList => {
            let items = v
                .as_array()
                .ok_or_else(|| format!("`{name}` must be a list"))?;
            for item in items {
                let k = item
                    .as_str()
                    .ok_or_else(|| format!("`{name}` entries must be strings"))?;
                if !ctx.env.contains_key(k) {
                    return Err(format!("`{name}`: key `{k}` is not available here"));
                }
            }
        }
        FieldKind::Records { fields, min } => {
            let items = v
                .as_array()
                .ok_or_else(|| format!("`{name}` must be a list"))?;
            if items.len() < min {
                return Err(format!("`{name}` needs at least {min} entries"));
            }
            for (i, item) in items.iter().enumerate() {
                check_object(fields, item, ctx).map_err(|e| format!("`{name}[{i}]`: {e}"))?;
            }
        }
    }
    Ok(())
}

fn check_object(fields: &[Field], v: &Value, ctx: &ParamContext<'_>) -> Result<(), String> {
    let map: &Map<String, Value> = v
        .as_object()
        .ok_or_else(|| "parameters must be a JSON object".to_string())?;
    let known: BTreeSet<&str> = fields.iter().map(|f| f.name).collect();
    if let Some(unknown) = map.keys().find(|k| !known.contains(k.as_str())) {
        return Err(format!("unknown parameter `{unknown}`"));
    }
    for field in fields {
        match map.get(field.name) {
            None | Some(Value::Null) if field.required => {
                return Err(format!("missing required parameter `{}`", field.name));
            }
            None | Some(Value::Null) => {}
            Some(v) => check_field(field, v, ctx)?,
        }
    }
    Ok(())
}

impl ParamSchema {
    pub const fn new(fields: &'static [Field]) -> Self {
        ParamSchema {
            fields,
            check: None,
        }
    }

    pub const fn with_check(fields: &'static [Field], check: CrossCheck) -> Self {
        ParamSchema {
            fields,
            check: Some(check),
        }
    }

    pub fn validate(&self, params: &Value, ctx: &ParamContext<'_>) -> Result<(), String> {
        check_object(self.fields, params, ctx)?;
        if let Some(check) = self.check {
            check(params, ctx)?;
        }
        Ok(())
    }

    pub fn describe(&self) -> Value {
        Value::Array(self.fields.iter().map(Field::describe).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{ModelEntry, OperatorConfig, OperatorType, OutputSchema};

    const FIELDS: &[Field] = &[
        Field::req("prompt", FieldKind::PreservingTemplate, ""),
        Field::opt("k", FieldKind::Integer { min: 1, max: 5 }, ""),
        Field::opt("model", FieldKind::Model, ""),
        Field::opt("out", FieldKind::NewKey, ""),
    ];

    fn fixture() -> (PipelineSpec, ModelCatalog) {
        let schema: OutputSchema = [("x".to_string(), SchemaType::String)].into_iter().collect();
        let p = PipelineSpec::new(
            "p",
            ["notes"],
            vec![OperatorConfig::llm("m", OperatorType::Map, "Read {{ input.notes }}", schema, "a")],
        );
        let c = ModelCatalog::new(vec![ModelEntry {
            model_id: "a".into(),
            family: "f".into(),
            input_price_per_token: 1e-6,
            output_price_per_token: 1e-6,
            context_window_tokens: 10,
            quality_hint: 0.5,
        }])
        .unwrap();
        (p, c)
    }

    #[test]
    fn accepts_valid_and_rejects_each_violation() {
        let (p, c) = fixture();
        let ctx = ParamContext::new(&p, Span::single(0), &c);
        let schema = ParamSchema::new(FIELDS);
        assert!(schema
            .validate(&json!({"prompt": "Carefully read {{ input.notes }}", "k": 2}), &ctx)
            .is_ok());
        let bad = [
            json!({"prompt": "no placeholder"}),
            json!({"k": 2}),
            json!({"prompt": "{{ input.notes }}", "k": 9}),
            json!({"prompt": "{{ input.notes }}", "model": "zzz"}),
            json!({"prompt": "{{ input.notes }}", "out": "notes"}),
            json!({"prompt": "{{ input.notes }}", "out": "9bad"}),
            json!({"prompt": "{{ input.notes }}", "extra": 1}),
            json!("not an object"),
        ];
        for b in bad {
            assert!(schema.validate(&b, &ctx).is_err(), "{b}");
        }
    }
}
