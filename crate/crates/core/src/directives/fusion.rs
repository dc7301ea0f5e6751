use std::collections::BTreeSet;

use serde_json::Value;

use super::support::*;
use super::{
    Category, Directive, DirectiveError, Field, FieldKind, LhsPattern, ParamContext, ParamSchema,
    RewriteInput, FILTER_MAP_FUSION, MAP_FILTER_FUSION, MAP_REDUCE_FUSION, REORDERING,
    SAME_TYPE_FUSION,
};
use crate::ir::{KeyEnv, OperatorConfig, OperatorType, PipelineSpec, SchemaType, LINEAGE_KEY};

use OperatorType::*;

const FUSED_FIELDS: &[Field] = &[
    Field::req("prompt", FieldKind::Template, "prompt of the fused operator"),
    Field::req("output_schema", FieldKind::Schema, "output schema of the fused operator"),
    Field::opt("model", FieldKind::Model, "model for the fused operator; defaults to the first operator's"),
];

const FUSED_WITH_FILTER_FIELDS: &[Field] = &[
    Field::req("prompt", FieldKind::Template, "prompt computing both tasks"),
    Field::req(
        "output_schema",
        FieldKind::Schema,
        "union of both schemas; must include the filter's boolean key",
    ),
    Field::opt("model", FieldKind::Model, "model for the fused map"),
    Field::opt("filter_code", FieldKind::Code, "body of the code filter; defaults to a flag check"),
];

pub(super) fn directives() -> Vec<Directive> {
    vec![
        Directive {
            name: SAME_TYPE_FUSION,
            category: Category::FusionReordering,
            short_doc: "Fuses two adjacent operators of the same type (map-map, filter-filter, reduce-reduce) into one. Use to cut LLM calls when both steps read the same documents.",
            guidance: "Write one prompt covering both tasks and union the output schemas. Keys only the second operator consumed may be dropped. Reduces must share their group-by keys.",
            example: r#"{"prompt": "From {{ input.notes }} list the officers involved and the enhancement factors.", "output_schema": {"officers": "list[string]", "factors": "list[string]"}}"#,
            lhs: LhsPattern::Sequence {
                steps: &[&[Map, Filter, Reduce], &[Map, Filter, Reduce]],
                guard: Some(same_type_guard),
            },
            params: ParamSchema::with_check(FUSED_FIELDS, same_type_check),
            candidate_count: 1,
            rewrite: same_type_rewrite,
        },
        Directive {
            name: MAP_REDUCE_FUSION,
            category: Category::FusionReordering,
            short_doc: "Folds a map into the reduce that follows it, so the reduce does the per-document work inside its aggregation call. Use when the map only prepares input for the reduce.",
            guidance: "Rewrite the reduce prompt to also perform the map's task on each document of the group. Only applies when the map does not produce any group-by key.",
            example: r#"{"prompt": "For these reports {{ input.notes }}, extract enhancement factors from each and summarize them per case type.", "output_schema": {"summary": "string"}}"#,
            lhs: LhsPattern::Sequence {
                steps: &[&[Map], &[Reduce]],
                guard: Some(map_reduce_guard),
            },
            params: ParamSchema::new(FUSED_FIELDS),
            candidate_count: 1,
            rewrite: map_reduce_rewrite,
        },
        Directive {
            name: MAP_FILTER_FUSION,
            category: Category::FusionReordering,
            short_doc: "Extends a map to also compute the predicate of the filter after it, then drops documents with a code filter. Use to remove one LLM pass.",
            guidance: "The fused map's schema is the map's schema plus the filter's boolean key. The code filter keeps documents whose flag is true.",
            example: r#"{"prompt": "Extract excessive-force snippets from {{ input.notes }} and say whether a firearm is involved.", "output_schema": {"snippets": "list[string]", "is_firearm": "boolean"}}"#,
            lhs: LhsPattern::Sequence {
                steps: &[&[Map], &[Filter]],
                guard: Some(map_filter_guard),
            },
            params: ParamSchema::with_check(FUSED_WITH_FILTER_FIELDS, map_filter_check),
            candidate_count: 1,
            rewrite: map_filter_rewrite,
        },
        Directive {
            name: FILTER_MAP_FUSION,
            category: Category::FusionReordering,
            short_doc: "Fuses a filter and the map after it into one map that also emits the filter's flag, followed by a code filter. Use when the filter is not much cheaper or not very selective.",
            guidance: "The fused map computes the map's outputs and the filter's boolean key for every document; a code filter then drops the rejected ones. Filtering now happens after the map, so every document pays for the map.",
            example: r#"{"prompt": "Decide if {{ input.notes }} describes a violent incident and extract excessive-force snippets.", "output_schema": {"is_violent": "boolean", "snippets": "list[string]"}}"#,
            lhs: LhsPattern::Sequence {
                steps: &[&[Filter], &[Map]],
                guard: Some(filter_map_guard),
            },
            params: ParamSchema::with_check(FUSED_WITH_FILTER_FIELDS, filter_map_check),
            candidate_count: 1,
            rewrite: filter_map_rewrite,
        },
        Directive {
            name: REORDERING,
            category: Category::FusionReordering,
            short_doc: "Swaps two commuting operators so a filter or code step runs before an LLM step. Use to shrink the work done by expensive operators.",
            guidance: "Only offered when the moved operator reads nothing the other produces and neither writes the other's keys. Reduces and restructuring operators never move.",
            example: "{}",
            lhs: LhsPattern::Sequence {
                steps: &[
                    &[Map, ParallelMap, Filter, Extract, CodeMap, CodeFilter],
                    &[Map, ParallelMap, Filter, Extract, CodeMap, CodeFilter],
                ],
                guard: Some(reorder_guard),
            },
            params: ParamSchema::new(&[]),
            candidate_count: 1,
            rewrite: reorder_rewrite,
        },
    ]
}

fn same_type_guard(w: &[OperatorConfig], _: &KeyEnv) -> bool {
    let (a, b) = (&w[0], &w[1]);
    a.op_type == b.op_type
        && (!a.op_type.is_reduce()
            || a.group_by_keys == b.group_by_keys && a.extra_bool("pass_through") == b.extra_bool("pass_through"))
}

fn same_type_check(params: &Value, ctx: &ParamContext<'_>) -> Result<(), String> {
    if ctx.first().op_type == Filter {
        let schema = schema_param(params, "output_schema");
        require(
            schema.len() == 1 && schema.values().all(SchemaType::is_boolean),
            || "a fused filter outputs exactly one boolean key".into(),
        )?;
    }
    Ok(())
}

/// Fused operator built from the window's first operator, with the
/// combined lineage of the whole window.
fn fused(input: &RewriteInput<'_>, op_type: OperatorType, ids: &mut Ids) -> OperatorConfig {
    let w = window(input);
    let mut op = OperatorConfig::llm(
        ids.fresh(&format!("fused_{}", w[0].id)),
        op_type,
        str_param(input.params, "prompt"),
        schema_param(input.params, "output_schema"),
        model_for(input, "model"),
    );
    for src in w {
        for (k, v) in &src.extras {
            op.extras.entry(k.clone()).or_insert_with(|| v.clone());
        }
    }
    op.extras
        .insert(LINEAGE_KEY.to_string(), merged_lineage(w, input.name));
    op
}

fn same_type_rewrite(input: &RewriteInput<'_>) -> Result<PipelineSpec, DirectiveError> {
    let w = window(input);
    let mut ids = Ids::new(input.pipeline);
    let mut op = fused(input, w[0].op_type, &mut ids);
    op.group_by_keys = w[0].group_by_keys.clone();
    Ok(splice(input.pipeline, input.span, vec![op]))
}

fn map_reduce_guard(w: &[OperatorConfig], _: &KeyEnv) -> bool {
    let (map, reduce) = (&w[0], &w[1]);
    !reduce.extra_bool("pass_through")
        && reduce
            .group_by_keys
            .iter()
            .all(|k| !map.output_schema.contains_key(k))
}

fn map_reduce_rewrite(input: &RewriteInput<'_>) -> Result<PipelineSpec, DirectiveError> {
    let w = window(input);
    let mut ids = Ids::new(input.pipeline);
    let mut op = fused(input, Reduce, &mut ids);
    op.group_by_keys = w[1].group_by_keys.clone();
    Ok(splice(input.pipeline, input.span, vec![op]))
}

fn flag_guard(filter: &OperatorConfig, map: &OperatorConfig) -> bool {
    filter_flag(filter).is_some_and(|flag| !map.output_schema.contains_key(flag))
}

fn map_filter_guard(w: &[OperatorConfig], _: &KeyEnv) -> bool {
    flag_guard(&w[1], &w[0])
}

fn filter_map_guard(w: &[OperatorConfig], _: &KeyEnv) -> bool {
    flag_guard(&w[0], &w[1])
}

fn flag_check(params: &Value, filter: &OperatorConfig) -> Result<(), String> {
    let flag = filter_flag(filter).unwrap_or_default();
    let schema = schema_param(params, "output_schema");
    require(schema.get(flag).is_some_and(SchemaType::is_boolean), || {
        format!("output_schema must include the filter's boolean key `{flag}`")
    })
}

fn map_filter_check(params: &Value, ctx: &ParamContext<'_>) -> Result<(), String> {
    flag_check(params, &ctx.pipeline.operators[ctx.span.start + 1])
}

fn filter_map_check(params: &Value, ctx: &ParamContext<'_>) -> Result<(), String> {
    flag_check(params, ctx.first())
}

fn map_then_code_filter(input: &RewriteInput<'_>, filter: &OperatorConfig) -> PipelineSpec {
    let mut ids = Ids::new(input.pipeline);
    let mut map = fused(input, Map, &mut ids);
    map.extras.remove("selectivity");
    let flag = filter_flag(filter).unwrap_or_default().to_string();
    let code = opt_str(input.params, "filter_code")
        .map_or_else(|| default_filter_code(&flag), str::to_string);
    let mut check = OperatorConfig::code(
        ids.fresh(&format!("{}_check", filter.id)),
        CodeFilter,
        code,
        one_key(&flag, SchemaType::Boolean),
    );
    if let Some(s) = filter.extras.get("selectivity") {
        check.extras.insert("selectivity".into(), s.clone());
    }
    let check = tagged(check, input.name);
    splice(input.pipeline, input.span, vec![map, check])
}

fn map_filter_rewrite(input: &RewriteInput<'_>) -> Result<PipelineSpec, DirectiveError> {
    let filter = window(input)[1].clone();
    Ok(map_then_code_filter(input, &filter))
}

fn filter_map_rewrite(input: &RewriteInput<'_>) -> Result<PipelineSpec, DirectiveError> {
    let filter = window(input)[0].clone();
    Ok(map_then_code_filter(input, &filter))
}

fn reorder_guard(w: &[OperatorConfig], _: &KeyEnv) -> bool {
    let (a, b) = (&w[0], &w[1]);
    let cheaper_first = (b.op_type.is_code() && a.op_type.is_llm())
        || (b.op_type == Filter && matches!(a.op_type, Map | ParallelMap | Extract));
    if !cheaper_first {
        return false;
    }
    let a_out: BTreeSet<String> = a.effective_schema().into_keys().collect();
    let b_out: BTreeSet<String> = b.effective_schema().into_keys().collect();
    a_out.is_disjoint(&b_out)
        && b.referenced_keys().is_disjoint(&a_out)
        && a.referenced_keys().is_disjoint(&b_out)
}

fn reorder_rewrite(input: &RewriteInput<'_>) -> Result<PipelineSpec, DirectiveError> {
    let w = window(input);
    let moved = tagged(w[1].clone(), input.name);
    Ok(splice(input.pipeline, input.span, vec![moved, w[0].clone()]))
}
