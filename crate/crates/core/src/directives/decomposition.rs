use serde_json::Value;

use super::support::*;
use super::{
    Category, Directive, DirectiveError, Field, FieldKind, LhsPattern, ParamContext, ParamSchema,
    RewriteInput, CASCADE_FILTERING, CHUNK_SAMPLING, DOC_CHUNKING, DOC_SAMPLING,
};
use crate::ir::{
    placeholders, split_chunk_key, split_doc_id_key, KeyEnv, OperatorConfig, OperatorType, PipelineSpec,
    SamplingMethod, SamplingSpec, SchemaType, LINEAGE_KEY,
};

use OperatorType::*;

const METHODS: &[&str] = &["random", "bm25", "embedding", "stratified"];

const SAMPLING_FIELDS: &[Field] = &[
    Field::req("method", FieldKind::Choice(METHODS), "sampling method"),
    Field::req("k", FieldKind::Integer { min: 1, max: 100_000 }, "items kept per group"),
    Field::opt("query", FieldKind::Text, "retrieval query; required for bm25 and embedding"),
    Field::opt("strata_keys", FieldKind::KeyList, "strata; required for stratified"),
];

const CASCADE_FIELDS: &[Field] = &[
    Field::opt("code_prefilter", FieldKind::Code, "python predicate run first; should rarely reject true positives"),
    Field::opt("llm_prefilter", FieldKind::Template, "short prompt for a cheap LLM pre-filter"),
    Field::opt("llm_prefilter_model", FieldKind::Model, "model for the LLM pre-filter"),
];

const CHUNKING_FIELDS: &[Field] = &[
    Field::req("source_key", FieldKind::Key, "text key to split into chunks"),
    Field::req("chunk_size", FieldKind::Integer { min: 50, max: 1_000_000 }, "tokens per chunk"),
    Field::opt(
        "peripheral_chunks",
        FieldKind::Integer { min: 0, max: 8 },
        "neighbouring chunks added as context on each side",
    ),
    Field::req("map_prompt", FieldKind::Template, "per-chunk prompt reading `<source_key>_chunk`"),
    Field::req("reduce_prompt", FieldKind::Template, "prompt merging the chunk results of one document"),
    Field::opt("model", FieldKind::Model, "model for the merge reduce"),
];

pub(super) fn directives() -> Vec<Directive> {
    vec![
        Directive {
            name: CHUNK_SAMPLING,
            category: Category::DataDecomposition,
            short_doc: "Samples the most relevant chunks (random, BM25 or embedding top-k) between gather and the chunk map. Use when only a few chunks of each document matter.",
            guidance: "Give two configurations: a precision one (stricter query, small k such as bm25 with k=10) and a recall one (broader query, larger k such as embedding with k=30). Sampling is per source document.",
            example: r#"{"method": "bm25", "k": 10, "query": "firearm injury kidnapping weapon harm"}"#,
            lhs: LhsPattern::Sequence {
                steps: &[&[Split], &[Gather], &[Map], &[Reduce]],
                guard: Some(chunk_pipeline_guard),
            },
            params: ParamSchema::with_check(SAMPLING_FIELDS, sampling_check),
            candidate_count: 2,
            rewrite: chunk_sampling_rewrite,
        },
        Directive {
            name: DOC_SAMPLING,
            category: Category::DataDecomposition,
            short_doc: "Samples a subset of documents within each group before a reduce. Use when groups are large and many documents carry little signal.",
            guidance: "Give two configurations: a precision one (small k, strict keyword query) and a recall one (larger k, broader retrieval). k is per group.",
            example: r#"{"method": "embedding", "k": 30, "query": "mentions of injuries, weapons, or threats"}"#,
            lhs: LhsPattern::Sequence {
                steps: &[&[Reduce]],
                guard: None,
            },
            params: ParamSchema::with_check(SAMPLING_FIELDS, sampling_check),
            candidate_count: 2,
            rewrite: doc_sampling_rewrite,
        },
        Directive {
            name: CASCADE_FILTERING,
            category: Category::DataDecomposition,
            short_doc: "Inserts cheaper pre-filters (a code filter and/or a short prompt on a cheap model) before an expensive LLM filter. Use when many documents are obviously irrelevant.",
            guidance: "Pre-filters must favour recall: they may let negatives through but should almost never drop a document the original filter keeps. Order is code first, then the LLM pre-filter, then the original filter. Give two different cascade configurations.",
            example: r#"{"code_prefilter": "def keep(input):\n    return any(w in input[\"notes\"].lower() for w in (\"gun\", \"pistol\", \"firearm\", \"weapon\"))", "llm_prefilter": "Does this report describe a violent incident? {{ input.notes }}"}"#,
            lhs: LhsPattern::Sequence {
                steps: &[&[Filter]],
                guard: None,
            },
            params: ParamSchema::with_check(CASCADE_FIELDS, cascade_check),
            candidate_count: 2,
            rewrite: cascade_rewrite,
        },
        Directive {
            name: DOC_CHUNKING,
            category: Category::DataDecomposition,
            short_doc: "Splits the largest text field into chunks, runs the map per chunk and merges the results per document. Use when documents are long and recall suffers.",
            guidance: "The split writes `<source_key>_chunk` and `<source_key>_doc_id`. The map prompt must read the chunk key; the merge reduce groups by the doc id and keeps the document's other keys.",
            example: r#"{"source_key": "notes", "chunk_size": 1000, "map_prompt": "Extract enhancement factors from {{ input.notes_chunk }}.", "reduce_prompt": "Merge the factors {{ input.factors }} found in each chunk."}"#,
            lhs: LhsPattern::Sequence {
                steps: &[&[Map]],
                guard: Some(chunking_guard),
            },
            params: ParamSchema::with_check(CHUNKING_FIELDS, chunking_check),
            candidate_count: 1,
            rewrite: chunking_rewrite,
        },
    ]
}

fn chunk_pipeline_guard(w: &[OperatorConfig], _: &KeyEnv) -> bool {
    let (split, gather, map, reduce) = (&w[0], &w[1], &w[2], &w[3]);
    let (Some(chunk), Some(doc_id)) = (split_chunk_key(split), split_doc_id_key(split)) else {
        return false;
    };
    gather.extra_str("content_key") == Some(chunk.as_str())
        && gather.extra_str("doc_id_key") == Some(doc_id.as_str())
        && map.referenced_keys().contains(&chunk)
        && reduce.group_by_keys.contains(&doc_id)
}

pub(crate) fn sampling_from_params(params: &Value) -> Option<SamplingSpec> {
    let method: SamplingMethod = serde_json::from_value(params.get("method")?.clone()).ok()?;
    Some(SamplingSpec {
        method,
        k: u32::try_from(params.get("k")?.as_u64()?).ok()?,
        query: opt_str(params, "query").map(str::to_string),
        strata_keys: params
            .get("strata_keys")
            .and_then(Value::as_array)
            .map(|a| a.iter().filter_map(|v| v.as_str().map(str::to_string)).collect())
            .unwrap_or_default(),
    })
}

fn sampling_check(params: &Value, _: &ParamContext<'_>) -> Result<(), String> {
    let spec = sampling_from_params(params).ok_or_else(|| "malformed sampling parameters".to_string())?;
    require(spec.method.needs_query() == spec.query.is_some(), || {
        "query is required exactly for bm25 and embedding".into()
    })?;
    require(
        (spec.method == SamplingMethod::Stratified) == !spec.strata_keys.is_empty(),
        || "strata_keys are required exactly for stratified".into(),
    )
}

fn sample_op(input: &RewriteInput<'_>, ids: &mut Ids, group_by: Vec<String>) -> OperatorConfig {
    let spec = sampling_from_params(input.params).expect("validated sampling parameters");
    let mut op = OperatorConfig::auxiliary(ids.fresh("sample"), Sample).with_sampling(spec);
    op.group_by_keys = group_by;
    tagged(op, input.name)
}

fn chunk_sampling_rewrite(input: &RewriteInput<'_>) -> Result<PipelineSpec, DirectiveError> {
    let w = window(input);
    let doc_id = split_doc_id_key(&w[0]).expect("guard ensures a doc id key");
    let mut ids = Ids::new(input.pipeline);
    let sample = sample_op(input, &mut ids, vec![doc_id]);
    let mut ops = w.to_vec();
    ops.insert(2, sample);
    Ok(splice(input.pipeline, input.span, ops))
}

fn doc_sampling_rewrite(input: &RewriteInput<'_>) -> Result<PipelineSpec, DirectiveError> {
    let reduce = window(input)[0].clone();
    let mut ids = Ids::new(input.pipeline);
    let sample = sample_op(input, &mut ids, reduce.group_by_keys.clone());
    Ok(splice(input.pipeline, input.span, vec![sample, reduce]))
}

fn cascade_check(params: &Value, _: &ParamContext<'_>) -> Result<(), String> {
    let code = opt_str(params, "code_prefilter").is_some();
    let llm = opt_str(params, "llm_prefilter").is_some();
    require(code || llm, || "give at least one of code_prefilter and llm_prefilter".into())?;
    require(llm || params.get("llm_prefilter_model").is_none(), || {
        "llm_prefilter_model needs llm_prefilter".into()
    })
}

/// Pre-filters favour recall, so they pass more documents than the
/// filter they guard.
const PREFILTER_SELECTIVITY: [f64; 2] = [0.8, 0.7];

fn cascade_rewrite(input: &RewriteInput<'_>) -> Result<PipelineSpec, DirectiveError> {
    let filter = window(input)[0].clone();
    let flag = filter_flag(&filter).unwrap_or("keep").to_string();
    let mut ids = Ids::new(input.pipeline);
    let mut ops = Vec::new();
    let mut taken = input.ctx.env.clone();
    let mut new_key = |base: String| {
        let k = fresh_key(input.pipeline, &taken, &base);
        taken.insert(k.clone(), Some(SchemaType::Boolean));
        k
    };
    if let Some(code) = opt_str(input.params, "code_prefilter") {
        let key = new_key(format!("{flag}_code_pass"));
        let op = OperatorConfig::code(
            ids.fresh(&format!("{}_code_prefilter", filter.id)),
            CodeFilter,
            code,
            one_key(&key, SchemaType::Boolean),
        )
        .with_extra("selectivity", PREFILTER_SELECTIVITY[0]);
        ops.push(tagged(op, input.name));
    }
    if let Some(prompt) = opt_str(input.params, "llm_prefilter") {
        let key = new_key(format!("{flag}_llm_pass"));
        let model = opt_str(input.params, "llm_prefilter_model")
            .map_or_else(|| model_for(input, "llm_prefilter_model"), str::to_string);
        let op = OperatorConfig::llm(
            ids.fresh(&format!("{}_llm_prefilter", filter.id)),
            Filter,
            prompt,
            one_key(&key, SchemaType::Boolean),
            model,
        )
        .with_extra("selectivity", PREFILTER_SELECTIVITY[1]);
        ops.push(tagged(op, input.name));
    }
    ops.push(filter);
    Ok(splice(input.pipeline, input.span, ops))
}

/// Text keys of the map that can be chunked without clashing with an
/// existing `<key>_chunk` or `<key>_doc_id`.
pub(crate) fn chunkable_keys(map: &OperatorConfig, env: &KeyEnv) -> Vec<String> {
    text_keys(map, env)
        .into_iter()
        .filter(|k| {
            !env.contains_key(&format!("{k}_chunk")) && !env.contains_key(&format!("{k}_doc_id"))
        })
        .collect()
}

fn chunking_guard(w: &[OperatorConfig], env: &KeyEnv) -> bool {
    !chunkable_keys(&w[0], env).is_empty()
}

fn chunking_check(params: &Value, ctx: &ParamContext<'_>) -> Result<(), String> {
    let source = str_param(params, "source_key");
    require(chunkable_keys(ctx.first(), &ctx.env).iter().any(|k| k == source), || {
        format!("`{source}` is not a chunkable text key read by the map")
    })?;
    let chunk = format!("{source}_chunk");
    require(placeholders(str_param(params, "map_prompt")).contains(&chunk), || {
        format!("map_prompt must read `{chunk}`")
    })
}

fn chunking_rewrite(input: &RewriteInput<'_>) -> Result<PipelineSpec, DirectiveError> {
    let map = window(input)[0].clone();
    let source = str_param(input.params, "source_key");
    let chunk = format!("{source}_chunk");
    let doc_id = format!("{source}_doc_id");
    let mut ids = Ids::new(input.pipeline);

    let split = OperatorConfig::auxiliary(ids.fresh(&format!("split_{source}")), Split)
        .with_extra("split_key", source)
        .with_extra("chunk_size", input.params["chunk_size"].clone())
        .with_extra("chunk_key_out", chunk.as_str())
        .with_extra("doc_id_key", doc_id.as_str());
    let mut gather = OperatorConfig::auxiliary(ids.fresh(&format!("gather_{source}")), Gather)
        .with_extra("content_key", chunk.as_str())
        .with_extra("doc_id_key", doc_id.as_str());
    if let Some(p) = input.params.get("peripheral_chunks") {
        gather.extras.insert("peripheral_chunks".into(), p.clone());
    }

    let mut chunk_map = map.clone();
    chunk_map.prompt_template = Some(str_param(input.params, "map_prompt").to_string());
    let mut merge = OperatorConfig::llm(
        ids.fresh(&format!("{}_merge", map.id)),
        Reduce,
        str_param(input.params, "reduce_prompt"),
        map.output_schema.clone(),
        model_for(input, "model"),
    )
    .with_group_by([doc_id.as_str()])
    .with_extra("pass_through", true);
    merge
        .extras
        .insert(LINEAGE_KEY.to_string(), Value::from(vec![input.name]));

    Ok(splice(
        input.pipeline,
        input.span,
        vec![
            tagged(split, input.name),
            tagged(gather, input.name),
            tagged(chunk_map, input.name),
            merge,
        ],
    ))
}
