use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Serialize;

use super::{IrError, OperatorConfig, OperatorType, PipelineSpec, SchemaType};

/// Keys visible at a pipeline position with their declared type, when known.
/// Input keys carry no type.
pub type KeyEnv = BTreeMap<String, Option<SchemaType>>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum ViolationKind {
    EmptyPipeline,
    DuplicateId,
    /// Prompt/code/model presence does not match the operator's LLM/code class.
    WrongOperatorClass { detail: String },
    DanglingPlaceholder { key: String },
    MissingGroupByKey { key: String },
    BadOutputSchema { detail: String },
    BadSampling { detail: String },
    MissingParameter { name: String },
    MissingKey { key: String },
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ViolationKind::EmptyPipeline => f.write_str("pipeline has no operators"),
            ViolationKind::DuplicateId => f.write_str("duplicate operator id"),
            ViolationKind::WrongOperatorClass { detail } => write!(f, "wrong operator class: {detail}"),
            ViolationKind::DanglingPlaceholder { key } => {
                write!(f, "dangling placeholder: `{key}` is not available upstream")
            }
            ViolationKind::MissingGroupByKey { key } => {
                write!(f, "group-by key `{key}` is not available upstream")
            }
            ViolationKind::BadOutputSchema { detail } => write!(f, "bad output schema: {detail}"),
            ViolationKind::BadSampling { detail } => write!(f, "bad sampling spec: {detail}"),
            ViolationKind::MissingParameter { name } => write!(f, "missing parameter `{name}`"),
            ViolationKind::MissingKey { key } => write!(f, "key `{key}` is not available upstream"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub operator_id: Option<String>,
    pub kind: ViolationKind,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.operator_id {
            Some(id) => write!(f, "operator `{id}`: {}", self.kind),
            None => write!(f, "{}", self.kind),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> Result<(), IrError> {
        if self.is_ok() {
            Ok(())
        } else {
            Err(IrError::Invalid(self))
        }
    }

    fn push(&mut self, op: &OperatorConfig, kind: ViolationKind) {
        self.violations.push(Violation {
            operator_id: Some(op.id.clone()),
            kind,
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return f.write_str("ok");
        }
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

/// The key a split chunks.
pub fn split_key(op: &OperatorConfig) -> Option<&str> {
    op.extra_str("split_key")
}

/// Key holding each chunk's text after a split.
pub fn split_chunk_key(op: &OperatorConfig) -> Option<String> {
    op.extra_str("chunk_key_out")
        .map(str::to_string)
        .or_else(|| split_key(op).map(|k| format!("{k}_chunk")))
}

/// Key holding the id of the document a chunk came from.
pub fn split_doc_id_key(op: &OperatorConfig) -> Option<String> {
    op.extra_str("doc_id_key")
        .map(str::to_string)
        .or_else(|| split_key(op).map(|k| format!("{k}_doc_id")))
}

/// Applies one operator's effect on the visible key set.
fn step(env: &mut KeyEnv, op: &OperatorConfig) {
    match op.op_type {
        OperatorType::Map
        | OperatorType::ParallelMap
        | OperatorType::Extract
        | OperatorType::CodeMap
        | OperatorType::Filter
        | OperatorType::CodeFilter => {
            for (k, t) in op.effective_schema() {
                env.insert(k, Some(t));
            }
        }
        OperatorType::Reduce | OperatorType::CodeReduce => {
            if !op.extra_bool("pass_through") {
                let groups: BTreeSet<&String> = op.group_by_keys.iter().collect();
                env.retain(|k, _| groups.contains(k));
            }
            for (k, t) in &op.output_schema {
                env.insert(k.clone(), Some(t.clone()));
            }
        }
        OperatorType::Split => {
            for k in op.extra_str_list("drop_keys") {
                env.remove(&k);
            }
            if let Some(chunk) = split_chunk_key(op) {
                env.insert(chunk, Some(SchemaType::String));
            }
            if let Some(doc_id) = split_doc_id_key(op) {
                env.insert(doc_id, Some(SchemaType::Number));
            }
        }
        OperatorType::Unnest => {
            if let Some(key) = op.extra_str("unnest_key") {
                match env.get(key).cloned().flatten() {
                    Some(SchemaType::ObjectList(fields)) => {
                        for f in fields {
                            env.insert(f, Some(SchemaType::String));
                        }
                    }
                    Some(SchemaType::StringList) => {
                        env.insert(key.to_string(), Some(SchemaType::String));
                    }
                    _ => {}
                }
            }
        }
        OperatorType::Gather | OperatorType::Sample => {}
    }
}

/// Typed key environment after the first `i` operators.
pub fn key_env_after(p: &PipelineSpec, i: usize) -> Result<KeyEnv, IrError> {
    if i > p.operators.len() {
        return Err(IrError::IndexOutOfRange {
            index: i,
            len: p.operators.len(),
        });
    }
    let mut env: KeyEnv = p.input_keys.iter().map(|k| (k.clone(), None)).collect();
    for op in &p.operators[..i] {
        step(&mut env, op);
    }
    Ok(env)
}

/// Keys visible to operator `i + 1` (1-based), i.e. after executing the
/// first `i` operators. `i = 0` yields the input keys.
pub fn available_keys_after(p: &PipelineSpec, i: usize) -> Result<BTreeSet<String>, IrError> {
    Ok(key_env_after(p, i)?.into_keys().collect())
}

fn check_class(op: &OperatorConfig, report: &mut ValidationReport) {
    let t = op.op_type;
    let wrong = |detail: &str| ViolationKind::WrongOperatorClass {
        detail: format!("{t} {detail}"),
    };
    if t.is_llm() {
        if op.model.as_deref().is_none_or(str::is_empty) {
            report.push(op, wrong("must carry a model"));
        }
        if op.code_body.is_some() {
            report.push(op, wrong("must not carry a code body"));
        }
        if t == OperatorType::ParallelMap {
            if op.branches.is_empty() {
                report.push(op, wrong("needs at least one branch"));
            }
            if op.prompt_template.is_some() {
                report.push(op, wrong("keeps its prompts in branches"));
            }
        } else if op.prompt_template.as_deref().is_none_or(|s| s.trim().is_empty()) {
            report.push(op, wrong("must carry a prompt template"));
        }
    } else {
        if op.model.is_some() {
            report.push(op, wrong("must not carry a model"));
        }
        if op.prompt_template.is_some() {
            report.push(op, wrong("must not carry a prompt template"));
        }
        let has_code = op.code_body.as_deref().is_some_and(|s| !s.trim().is_empty());
        if t.is_code() && !has_code {
            report.push(op, wrong("must carry a code body"));
        }
        if t.is_auxiliary() && op.code_body.is_some() {
            report.push(op, wrong("must not carry a code body"));
        }
    }
    if t != OperatorType::ParallelMap && !op.branches.is_empty() {
        report.push(op, wrong("cannot have branches"));
    }
}

fn check_schema(op: &OperatorConfig, report: &mut ValidationReport) {
    let bad = |detail: &str| ViolationKind::BadOutputSchema {
        detail: detail.to_string(),
    };
    match op.op_type {
        OperatorType::Map
        | OperatorType::Reduce
        | OperatorType::Extract
        | OperatorType::CodeMap
        | OperatorType::CodeReduce => {
            if op.output_schema.is_empty() {
                report.push(op, bad("must be non-empty"));
            }
        }
        OperatorType::ParallelMap => {
            if !op.output_schema.is_empty() {
                report.push(op, bad("parallel_map schemas belong to branches"));
            }
            if op.branches.iter().any(|b| b.output_schema.is_empty()) {
                report.push(op, bad("every branch needs a non-empty schema"));
            }
        }
        OperatorType::Filter | OperatorType::CodeFilter => {
            let single_bool = op.output_schema.len() == 1
                && op.output_schema.values().all(SchemaType::is_boolean);
            if !single_bool {
                report.push(op, bad("filters output exactly one boolean key"));
            }
        }
        OperatorType::Split | OperatorType::Gather | OperatorType::Unnest | OperatorType::Sample => {
            if !op.output_schema.is_empty() {
                report.push(op, bad("auxiliary operators declare no outputs"));
            }
        }
    }
}

fn require_key(
    op: &OperatorConfig,
    name: &str,
    env: &KeyEnv,
    report: &mut ValidationReport,
) -> Option<String> {
    match op.extra_str(name) {
        None => {
            report.push(
                op,
                ViolationKind::MissingParameter {
                    name: name.to_string(),
                },
            );
            None
        }
        Some(key) => {
            if !env.contains_key(key) {
                report.push(op, ViolationKind::MissingKey { key: key.to_string() });
            }
            Some(key.to_string())
        }
    }
}

fn check_structure(op: &OperatorConfig, env: &KeyEnv, report: &mut ValidationReport) {
    let t = op.op_type;
    if t.is_reduce() {
        if op.group_by_keys.is_empty() {
            report.push(
                op,
                ViolationKind::MissingParameter {
                    name: "group_by_keys".into(),
                },
            );
        }
    } else if !op.group_by_keys.is_empty() && t != OperatorType::Sample {
        report.push(
            op,
            ViolationKind::WrongOperatorClass {
                detail: format!("{t} cannot group"),
            },
        );
    }
    for key in &op.group_by_keys {
        if !env.contains_key(key) {
            report.push(op, ViolationKind::MissingGroupByKey { key: key.clone() });
        }
    }

    match (t, &op.sampling) {
        (OperatorType::Sample, None) => report.push(
            op,
            ViolationKind::MissingParameter {
                name: "sampling".into(),
            },
        ),
        (OperatorType::Sample, Some(s)) => {
            let bad = |detail: &str| ViolationKind::BadSampling {
                detail: detail.to_string(),
            };
            if s.k == 0 {
                report.push(op, bad("k must be positive"));
            }
            let has_query = s.query.as_deref().is_some_and(|q| !q.trim().is_empty());
            if s.method.needs_query() != has_query {
                report.push(op, bad("query is required exactly for bm25 and embedding"));
            }
            let stratified = s.method == super::SamplingMethod::Stratified;
            if stratified != !s.strata_keys.is_empty() {
                report.push(op, bad("strata_keys are required exactly for stratified"));
            }
            for key in &s.strata_keys {
                if !env.contains_key(key) {
                    report.push(op, ViolationKind::MissingKey { key: key.clone() });
                }
            }
        }
        (_, Some(_)) => report.push(
            op,
            ViolationKind::WrongOperatorClass {
                detail: format!("{t} cannot carry a sampling spec"),
            },
        ),
        (_, None) => {}
    }

    match t {
        OperatorType::Split => {
            require_key(op, "split_key", env, report);
            let size = op.extra_f64("chunk_size").unwrap_or(0.0);
            if size < 1.0 {
                report.push(
                    op,
                    ViolationKind::MissingParameter {
                        name: "chunk_size".into(),
                    },
                );
            }
        }
        OperatorType::Gather => {
            require_key(op, "content_key", env, report);
            require_key(op, "doc_id_key", env, report);
        }
        OperatorType::Unnest => {
            require_key(op, "unnest_key", env, report);
        }
        _ => {}
    }
}

/// Checks well-formedness: operator classes, schemas and key threading.
pub fn validate_pipeline(p: &PipelineSpec) -> ValidationReport {
    let mut report = ValidationReport::default();
    if p.operators.is_empty() {
        report.violations.push(Violation {
            operator_id: None,
            kind: ViolationKind::EmptyPipeline,
        });
        return report;
    }
    let mut ids = BTreeSet::new();
    let mut env: KeyEnv = p.input_keys.iter().map(|k| (k.clone(), None)).collect();
    for op in &p.operators {
        if !ids.insert(op.id.as_str()) {
            report.push(op, ViolationKind::DuplicateId);
        }
        check_class(op, &mut report);
        check_schema(op, &mut report);
        for key in op.referenced_keys() {
            if !env.contains_key(&key) {
                report.push(op, ViolationKind::DanglingPlaceholder { key });
            }
        }
        check_structure(op, &env, &mut report);
        step(&mut env, op);
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{OutputSchema, SamplingMethod, SamplingSpec};

    fn schema(pairs: &[(&str, SchemaType)]) -> OutputSchema {
        pairs
            .iter()
            .map(|(k, t)| (k.to_string(), t.clone()))
            .collect()
    }

    fn map(id: &str, prompt: &str, out: &[(&str, SchemaType)]) -> OperatorConfig {
        OperatorConfig::llm(id, OperatorType::Map, prompt, schema(out), "m")
    }

    #[test]
    fn minimal_map_is_valid() {
        let p = PipelineSpec::new(
            "p",
            ["notes"],
            vec![map("m1", "Read {{ input.notes }}", &[("x", SchemaType::String)])],
        );
        assert!(validate_pipeline(&p).is_ok());
    }

    #[test]
    fn dangling_placeholder_is_reported() {
        let p = PipelineSpec::new(
            "p",
            ["notes"],
            vec![map("m1", "Use {{ input.summary }}", &[("x", SchemaType::String)])],
        );
        let report = validate_pipeline(&p);
        assert_eq!(
            report.violations,
            vec![Violation {
                operator_id: Some("m1".into()),
                kind: ViolationKind::DanglingPlaceholder {
                    key: "summary".into()
                },
            }]
        );
    }

    #[test]
    fn map_then_code_filter_on_emitted_flag() {
        let p = PipelineSpec::new(
            "p",
            ["notes"],
            vec![
                map(
                    "m1",
                    "Extract from {{ input.notes }} and decide if a firearm is involved",
                    &[("snippets", SchemaType::StringList), ("is_firearm", SchemaType::Boolean)],
                ),
                OperatorConfig::code(
                    "f1",
                    OperatorType::CodeFilter,
                    "def keep(input):\n    return bool(input[\"is_firearm\"])",
                    schema(&[("is_firearm", SchemaType::Boolean)]),
                ),
            ],
        );
        let report = validate_pipeline(&p);
        assert!(report.is_ok(), "{report}");
    }

    #[test]
    fn class_mismatches() {
        let mut op = map("m1", "{{ input.a }}", &[("x", SchemaType::String)]);
        op.code_body = Some("x".into());
        op.model = None;
        let p = PipelineSpec::new("p", ["a"], vec![op]);
        let report = validate_pipeline(&p);
        assert_eq!(report.violations.len(), 2);

        let mut code = OperatorConfig::code(
            "c",
            OperatorType::CodeMap,
            "return 1",
            schema(&[("y", SchemaType::Number)]),
        );
        code.model = Some("m".into());
        let report = validate_pipeline(&PipelineSpec::new("p", ["a"], vec![code]));
        assert!(matches!(
            report.violations[0].kind,
            ViolationKind::WrongOperatorClass { .. }
        ));
    }

    #[test]
    fn duplicate_ids_and_missing_group_key() {
        let p = PipelineSpec::new(
            "p",
            ["notes"],
            vec![
                map("a", "{{ input.notes }}", &[("x", SchemaType::String)]),
                OperatorConfig::llm(
                    "a",
                    OperatorType::Reduce,
                    "{{ input.x }}",
                    schema(&[("s", SchemaType::String)]),
                    "m",
                )
                .with_group_by(["case_type"]),
            ],
        );
        let kinds: Vec<_> = validate_pipeline(&p)
            .violations
            .into_iter()
            .map(|v| v.kind)
            .collect();
        assert!(kinds.contains(&ViolationKind::DuplicateId));
        assert!(kinds.contains(&ViolationKind::MissingGroupByKey {
            key: "case_type".into()
        }));
    }

    #[test]
    fn filter_schema_must_be_single_boolean() {
        let f = OperatorConfig::llm(
            "f",
            OperatorType::Filter,
            "{{ input.a }}",
            schema(&[("keep", SchemaType::String)]),
            "m",
        );
        let report = validate_pipeline(&PipelineSpec::new("p", ["a"], vec![f]));
        assert!(matches!(
            report.violations[0].kind,
            ViolationKind::BadOutputSchema { .. }
        ));
    }

    #[test]
    fn sampling_query_rule() {
        let sample = |method, query: Option<&str>| {
            OperatorConfig::auxiliary("s", OperatorType::Sample).with_sampling(SamplingSpec {
                method,
                k: 3,
                query: query.map(str::to_string),
                strata_keys: vec![],
            })
        };
        let ok = PipelineSpec::new("p", ["a"], vec![sample(SamplingMethod::Bm25, Some("gun"))]);
        assert!(validate_pipeline(&ok).is_ok());
        let bad = PipelineSpec::new("p", ["a"], vec![sample(SamplingMethod::Bm25, None)]);
        assert!(!validate_pipeline(&bad).is_ok());
        let bad = PipelineSpec::new("p", ["a"], vec![sample(SamplingMethod::Random, Some("q"))]);
        assert!(!validate_pipeline(&bad).is_ok());
    }

    #[test]
    fn empty_pipeline() {
        let report = validate_pipeline(&PipelineSpec::new("p", ["a"], vec![]));
        assert_eq!(report.violations[0].kind, ViolationKind::EmptyPipeline);
    }

    #[test]
    fn keys_after_map_and_reduce() {
        let p = PipelineSpec::new(
            "p",
            ["notes", "case_type"],
            vec![
                map(
                    "m",
                    "{{ input.notes }}",
                    &[("enhancements", SchemaType::object_list(["factor", "evidence"]))],
                ),
                OperatorConfig::llm(
                    "r",
                    OperatorType::Reduce,
                    "{{ input.enhancements }}",
                    schema(&[("summary", SchemaType::String)]),
                    "m",
                )
                .with_group_by(["case_type"]),
            ],
        );
        let names = |i| -> Vec<String> { available_keys_after(&p, i).unwrap().into_iter().collect() };
        assert_eq!(names(0), vec!["case_type", "notes"]);
        assert_eq!(names(1), vec!["case_type", "enhancements", "notes"]);
        // hand trace: reduce keeps its group keys and adds its outputs
        assert_eq!(names(2), vec!["case_type", "summary"]);
        assert!(matches!(
            available_keys_after(&p, 3),
            Err(IrError::IndexOutOfRange { index: 3, len: 2 })
        ));
    }

    #[test]
    fn split_and_unnest_threading() {
        let p = PipelineSpec::new(
            "p",
            ["notes"],
            vec![
                OperatorConfig::auxiliary("s", OperatorType::Split)
                    .with_extra("split_key", "notes")
                    .with_extra("chunk_size", 500)
                    .with_extra("drop_keys", vec!["notes"]),
                map(
                    "m",
                    "{{ input.notes_chunk }}",
                    &[("items", SchemaType::object_list(["name"]))],
                ),
                OperatorConfig::auxiliary("u", OperatorType::Unnest).with_extra("unnest_key", "items"),
            ],
        );
        assert!(validate_pipeline(&p).is_ok(), "{}", validate_pipeline(&p));
        let keys = available_keys_after(&p, 3).unwrap();
        assert!(keys.contains("name") && keys.contains("notes_doc_id") && !keys.contains("notes"));
    }
}
