use serde_json::Value;

use super::support::*;
use super::{
    Category, Directive, DirectiveError, Field, FieldKind, LhsPattern, ParamContext, ParamSchema,
    RewriteInput, CODE_SUBSTITUTION, CODE_SUB_REDUCE, DOC_COMPRESSION_CODE, HEAD_TAIL_COMPRESSION,
};
use crate::ir::{
    placeholder, placeholders, replace_placeholder, KeyEnv, OperatorConfig, OperatorType, PipelineSpec,
    SchemaType,
};

use OperatorType::*;

const CODE_SUB_FIELDS: &[Field] = &[Field::req(
    "code",
    FieldKind::Code,
    "python returning outputs that match the operator's schema",
)];

const CODE_SUB_REDUCE_FIELDS: &[Field] = &[
    Field::req("code", FieldKind::Code, "python aggregation run per group"),
    Field::req("code_output_schema", FieldKind::Schema, "keys the code aggregation writes"),
    Field::req("prompt", FieldKind::Template, "prompt of the map that writes the final outputs"),
    Field::opt("model", FieldKind::Model, "model for the map"),
];

const COMPRESSION_CODE_FIELDS: &[Field] = &[
    Field::req("code", FieldKind::Code, "python returning the compressed text"),
    Field::req("source_key", FieldKind::Key, "text key to compress"),
    Field::req("output_key", FieldKind::NewKey, "key receiving the compressed text"),
    Field::req("prompt", FieldKind::Template, "operator prompt reading the compressed key"),
    Field::opt(
        "compression_ratio",
        FieldKind::Number { min: 0.01, max: 1.0 },
        "expected fraction of the text kept",
    ),
];

const HEAD_TAIL_FIELDS: &[Field] = &[
    Field::req("head_words", FieldKind::Integer { min: 0, max: 100_000 }, "words kept from the start"),
    Field::req("tail_words", FieldKind::Integer { min: 0, max: 100_000 }, "words kept from the end"),
    Field::req("source_key", FieldKind::Key, "text key to truncate"),
    Field::opt("output_key", FieldKind::NewKey, "key receiving the truncated text"),
    Field::opt("prompt", FieldKind::Template, "operator prompt; defaults to swapping the source placeholder"),
];

pub(super) fn directives() -> Vec<Directive> {
    vec![
        Directive {
            name: CODE_SUBSTITUTION,
            category: Category::CodeSynthesis,
            short_doc: "Replaces an LLM-powered operator with synthesized Python code producing the same schema. Use for tasks a regex or simple logic can approximate.",
            guidance: "The code operator keeps the output schema unchanged and costs nothing to run. Read inputs as input[\"key\"].",
            example: r#"{"code": "import re\ndef transform(input):\n    hits = re.findall(r'[^.]*\\b(gun|pistol|rifle)\\b[^.]*\\.', input[\"notes\"])\n    return {\"snippets\": hits}"}"#,
            lhs: LhsPattern::Sequence {
                steps: &[ANY_LLM],
                guard: None,
            },
            params: ParamSchema::new(CODE_SUB_FIELDS),
            candidate_count: 1,
            rewrite: code_substitution_rewrite,
        },
        Directive {
            name: CODE_SUB_REDUCE,
            category: Category::CodeSynthesis,
            short_doc: "Splits a reduce into a code aggregation (counts, lists) followed by an LLM map that writes the final text. Use when most of the reduce is bookkeeping.",
            guidance: "The code reduce keeps the group-by keys and writes `code_output_schema`; the map reads those keys and produces the reduce's original outputs.",
            example: r#"{"code": "def aggregate(group):\n    return {\"factor_list\": [f for d in group for f in d[\"factors\"]], \"factor_count\": sum(len(d[\"factors\"]) for d in group)}", "code_output_schema": {"factor_list": "list[string]", "factor_count": "number"}, "prompt": "Write a report from {{ input.factor_list }} ({{ input.factor_count }} factors)."}"#,
            lhs: LhsPattern::Sequence {
                steps: &[&[Reduce]],
                guard: None,
            },
            params: ParamSchema::with_check(CODE_SUB_REDUCE_FIELDS, code_sub_reduce_check),
            candidate_count: 1,
            rewrite: code_sub_reduce_rewrite,
        },
        Directive {
            name: DOC_COMPRESSION_CODE,
            category: Category::CodeSynthesis,
            short_doc: "Inserts a code step that deterministically extracts only the relevant portions of a long text before an LLM operator. Use when relevant content is findable by headers or keywords.",
            guidance: "Write two implementations: one favouring precision (strict patterns) and one favouring recall (broad patterns). The operator's prompt must read the compressed key instead of the source.",
            example: r#"{"code": "import re\ndef transform(input):\n    keep = [p for p in input[\"notes\"].split(\"\\n\\n\") if re.search(r'(?i)incident details|evidence', p)]\n    return {\"notes_compressed\": \"\\n\\n\".join(keep)}", "source_key": "notes", "output_key": "notes_compressed", "prompt": "Extract enhancement factors from {{ input.notes_compressed }}."}"#,
            lhs: LhsPattern::Sequence {
                steps: &[PROMPTED],
                guard: Some(has_text_input),
            },
            params: ParamSchema::with_check(COMPRESSION_CODE_FIELDS, compression_code_check),
            candidate_count: 2,
            rewrite: compression_code_rewrite,
        },
        Directive {
            name: HEAD_TAIL_COMPRESSION,
            category: Category::CodeSynthesis,
            short_doc: "Keeps only the first h and last l words of a text before an LLM operator. Use when the answer sits near the start or end, e.g. classification or authorship.",
            guidance: "Give two configurations: a short window such as h=100, l=50 for cost and a longer one such as h=300, l=150 for recall. Put more words in the head when key information comes first.",
            example: r#"{"head_words": 100, "tail_words": 50, "source_key": "notes"}"#,
            lhs: LhsPattern::Sequence {
                steps: &[PROMPTED],
                guard: Some(has_text_input),
            },
            params: ParamSchema::with_check(HEAD_TAIL_FIELDS, head_tail_check),
            candidate_count: 2,
            rewrite: head_tail_rewrite,
        },
    ]
}

pub(super) fn has_text_input(w: &[OperatorConfig], env: &KeyEnv) -> bool {
    !text_keys(&w[0], env).is_empty()
}

fn code_substitution_rewrite(input: &RewriteInput<'_>) -> Result<PipelineSpec, DirectiveError> {
    let op = &window(input)[0];
    let mut code = OperatorConfig::code(
        op.id.clone(),
        op.op_type.code_counterpart().expect("LLM operators have code counterparts"),
        str_param(input.params, "code"),
        op.effective_schema(),
    );
    code.group_by_keys = op.group_by_keys.clone();
    code.extras = op.extras.clone();
    Ok(splice(input.pipeline, input.span, vec![tagged(code, input.name)]))
}

fn code_sub_reduce_check(params: &Value, ctx: &ParamContext<'_>) -> Result<(), String> {
    let schema = schema_param(params, "code_output_schema");
    let groups = &ctx.first().group_by_keys;
    require(schema.keys().all(|k| !groups.contains(k)), || {
        "code_output_schema must not overwrite group-by keys".into()
    })
}

fn code_sub_reduce_rewrite(input: &RewriteInput<'_>) -> Result<PipelineSpec, DirectiveError> {
    let reduce = &window(input)[0];
    let mut ids = Ids::new(input.pipeline);
    let mut agg = OperatorConfig::code(
        ids.fresh(&format!("{}_aggregate", reduce.id)),
        CodeReduce,
        str_param(input.params, "code"),
        schema_param(input.params, "code_output_schema"),
    );
    agg.group_by_keys = reduce.group_by_keys.clone();
    if reduce.extra_bool("pass_through") {
        agg.extras.insert("pass_through".into(), Value::Bool(true));
    }
    let mut writer = OperatorConfig::llm(
        ids.fresh(&format!("{}_write", reduce.id)),
        Map,
        str_param(input.params, "prompt"),
        reduce.output_schema.clone(),
        model_for(input, "model"),
    );
    writer.extras.insert(
        crate::ir::LINEAGE_KEY.to_string(),
        merged_lineage(std::slice::from_ref(reduce), input.name),
    );
    Ok(splice(
        input.pipeline,
        input.span,
        vec![tagged(agg, input.name), writer],
    ))
}

fn check_source(ctx: &ParamContext<'_>, source: &str) -> Result<(), String> {
    require(text_keys(ctx.first(), &ctx.env).iter().any(|k| k == source), || {
        format!("source_key `{source}` is not a text key read by the operator")
    })
}

fn compression_code_check(params: &Value, ctx: &ParamContext<'_>) -> Result<(), String> {
    check_source(ctx, str_param(params, "source_key"))?;
    let out = str_param(params, "output_key");
    require(placeholders(str_param(params, "prompt")).contains(out), || {
        format!("prompt must read the compressed key `{out}`")
    })
}

/// A step writing `output_key` from `source_key`, followed by the matched
/// operator with its new prompt.
pub(super) fn compress_before(
    input: &RewriteInput<'_>,
    op_type: OperatorType,
    body: String,
    output_key: &str,
    prompt: String,
    extras: &[(&str, Value)],
) -> PipelineSpec {
    let op = &window(input)[0];
    let source = str_param(input.params, "source_key");
    let mut ids = Ids::new(input.pipeline);
    let mut step = match op_type {
        CodeMap => OperatorConfig::code(
            ids.fresh(&format!("compress_{source}")),
            CodeMap,
            body,
            one_key(output_key, SchemaType::String),
        ),
        other => OperatorConfig::llm(
            ids.fresh(&format!("compress_{source}")),
            other,
            body,
            one_key(output_key, SchemaType::String),
            model_for(input, "model"),
        ),
    };
    step.extras.insert("source_key".into(), Value::from(source));
    for (k, v) in extras {
        step.extras.insert(k.to_string(), v.clone());
    }
    let mut rewritten = op.clone();
    rewritten.prompt_template = Some(prompt);
    splice(
        input.pipeline,
        input.span,
        vec![tagged(step, input.name), tagged(rewritten, input.name)],
    )
}

fn compression_code_rewrite(input: &RewriteInput<'_>) -> Result<PipelineSpec, DirectiveError> {
    let mut extras = Vec::new();
    if let Some(r) = input.params.get("compression_ratio") {
        extras.push(("compression_ratio", r.clone()));
    }
    Ok(compress_before(
        input,
        CodeMap,
        str_param(input.params, "code").to_string(),
        str_param(input.params, "output_key"),
        str_param(input.params, "prompt").to_string(),
        &extras,
    ))
}

fn head_tail_check(params: &Value, ctx: &ParamContext<'_>) -> Result<(), String> {
    let source = str_param(params, "source_key");
    check_source(ctx, source)?;
    let head = int_param(params, "head_words").unwrap_or(0);
    let tail = int_param(params, "tail_words").unwrap_or(0);
    require(head + tail >= 1, || "head_words + tail_words must be at least 1".into())?;
    if let (Some(prompt), Some(out)) = (opt_str(params, "prompt"), opt_str(params, "output_key")) {
        require(placeholders(prompt).contains(out), || {
            format!("prompt must read the truncated key `{out}`")
        })?;
    }
    Ok(())
}

pub(super) fn head_tail_code(source: &str, output: &str, head: i64, tail: i64) -> String {
    format!(
        "def transform(input):\n    words = input[\"{source}\"].split()\n    if len(words) <= {head} + {tail}:\n        return {{\"{output}\": \" \".join(words)}}\n    return {{\"{output}\": \" \".join(words[:{head}] + words[len(words) - {tail}:])}}\n"
    )
}

fn head_tail_rewrite(input: &RewriteInput<'_>) -> Result<PipelineSpec, DirectiveError> {
    let op = &window(input)[0];
    let source = str_param(input.params, "source_key");
    let head = int_param(input.params, "head_words").unwrap_or(0);
    let tail = int_param(input.params, "tail_words").unwrap_or(0);
    let output = opt_str(input.params, "output_key").map_or_else(
        || fresh_key(input.pipeline, &input.ctx.env, &format!("{source}_head_tail")),
        str::to_string,
    );
    let prompt = opt_str(input.params, "prompt").map_or_else(
        || {
            replace_placeholder(
                op.prompt_template.as_deref().unwrap_or_default(),
                source,
                &placeholder(&output),
            )
        },
        str::to_string,
    );
    Ok(compress_before(
        input,
        CodeMap,
        head_tail_code(source, &output, head, tail),
        &output,
        prompt,
        &[("head_words", Value::from(head)), ("tail_words", Value::from(tail))],
    ))
}
