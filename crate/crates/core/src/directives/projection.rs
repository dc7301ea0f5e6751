use serde_json::Value;

use super::code::{compress_before, has_text_input};
use super::support::*;
use super::{
    Category, Directive, DirectiveError, Field, FieldKind, LhsPattern, ParamContext, ParamSchema,
    RewriteInput, DOC_COMPRESSION_LLM, DOC_SUMMARIZATION,
};
use crate::ir::{placeholders, OperatorType, PipelineSpec};

const SUMMARY_FIELDS: &[Field] = &[
    Field::req("summary_prompt", FieldKind::Template, "prompt of the summarizing map; reads source_key"),
    Field::req("source_key", FieldKind::Key, "text key to summarize"),
    Field::req("summary_key", FieldKind::NewKey, "key receiving the summary"),
    Field::req("prompt", FieldKind::Template, "operator prompt reading the summary"),
    Field::opt("model", FieldKind::Model, "model for the summarizing map"),
];

const EXTRACT_FIELDS: &[Field] = &[
    Field::req("extract_prompt", FieldKind::Template, "prompt asking for the relevant line ranges of source_key"),
    Field::req("source_key", FieldKind::Key, "text key to compress"),
    Field::req("output_key", FieldKind::NewKey, "key receiving the extracted text"),
    Field::req("prompt", FieldKind::Template, "operator prompt reading the extracted text"),
    Field::opt("model", FieldKind::Model, "model for the extract operator"),
];

/// Expected size of a summary relative to its source.
const SUMMARY_RATIO: f64 = 0.3;

pub(super) fn directives() -> Vec<Directive> {
    vec![
        Directive {
            name: DOC_SUMMARIZATION,
            category: Category::ProjectionSynthesis,
            short_doc: "Inserts an LLM map that summarizes a long text, keeping everything the operator needs, and points the operator at the summary. Use when documents are long but the task needs only their gist.",
            guidance: "The summary prompt must name what downstream steps need so nothing relevant is lost. The operator's new prompt reads the summary key instead of the source.",
            example: r#"{"summary_prompt": "Summarize {{ input.notes }}, keeping every mention of weapons, injuries and threats.", "source_key": "notes", "summary_key": "notes_summary", "prompt": "Extract enhancement factors from {{ input.notes_summary }}."}"#,
            lhs: LhsPattern::Sequence {
                steps: &[PROMPTED],
                guard: Some(has_text_input),
            },
            params: ParamSchema::with_check(SUMMARY_FIELDS, summary_check),
            candidate_count: 1,
            rewrite: summary_rewrite,
        },
        Directive {
            name: DOC_COMPRESSION_LLM,
            category: Category::ProjectionSynthesis,
            short_doc: "Inserts an LLM extract step that returns only the relevant spans of a long text. Use when relevant passages need judgment to find but are a small part of the document.",
            guidance: "The extract operator outputs line ranges that are turned back into a subset of the original text, so it is cheaper than a summary. The operator's new prompt reads the extracted key.",
            example: r#"{"extract_prompt": "Return the line ranges of {{ input.notes }} that describe use of force.", "source_key": "notes", "output_key": "notes_relevant", "prompt": "Extract enhancement factors from {{ input.notes_relevant }}."}"#,
            lhs: LhsPattern::Sequence {
                steps: &[PROMPTED],
                guard: Some(has_text_input),
            },
            params: ParamSchema::with_check(EXTRACT_FIELDS, extract_check),
            candidate_count: 1,
            rewrite: extract_rewrite,
        },
    ]
}

fn projection_check(
    params: &Value,
    ctx: &ParamContext<'_>,
    step_prompt: &str,
    output_field: &str,
) -> Result<(), String> {
    let source = str_param(params, "source_key");
    require(text_keys(ctx.first(), &ctx.env).iter().any(|k| k == source), || {
        format!("source_key `{source}` is not a text key read by the operator")
    })?;
    require(placeholders(str_param(params, step_prompt)).contains(source), || {
        format!("{step_prompt} must read `{source}`")
    })?;
    let out = str_param(params, output_field);
    require(placeholders(str_param(params, "prompt")).contains(out), || {
        format!("prompt must read `{out}`")
    })
}

fn summary_check(params: &Value, ctx: &ParamContext<'_>) -> Result<(), String> {
    projection_check(params, ctx, "summary_prompt", "summary_key")
}

fn extract_check(params: &Value, ctx: &ParamContext<'_>) -> Result<(), String> {
    projection_check(params, ctx, "extract_prompt", "output_key")
}

fn summary_rewrite(input: &RewriteInput<'_>) -> Result<PipelineSpec, DirectiveError> {
    Ok(compress_before(
        input,
        OperatorType::Map,
        str_param(input.params, "summary_prompt").to_string(),
        str_param(input.params, "summary_key"),
        str_param(input.params, "prompt").to_string(),
        &[("compression_ratio", Value::from(SUMMARY_RATIO))],
    ))
}

fn extract_rewrite(input: &RewriteInput<'_>) -> Result<PipelineSpec, DirectiveError> {
    Ok(compress_before(
        input,
        OperatorType::Extract,
        str_param(input.params, "extract_prompt").to_string(),
        str_param(input.params, "output_key"),
        str_param(input.params, "prompt").to_string(),
        &[],
    ))
}
