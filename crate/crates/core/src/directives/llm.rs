use std::collections::BTreeMap;

use serde_json::Value;

use super::support::*;
use super::{
    Category, Directive, DirectiveError, Field, FieldKind, LhsPattern, ParamContext, ParamSchema,
    RewriteInput, ARBITRARY_REWRITE, CLARIFY_INSTRUCTIONS, FEW_SHOT_EXAMPLES, MODEL_SUBSTITUTION,
};
use crate::ir::{KeyEnv, OperatorConfig, PipelineSpec, LINEAGE_KEY};

const MODEL_FIELDS: &[Field] = &[Field::req("model", FieldKind::Model, "replacement model")];

const CLARIFY_FIELDS: &[Field] = &[Field::req(
    "prompt",
    FieldKind::PreservingTemplate,
    "clarified prompt keeping every original placeholder",
)];

const EXAMPLE_FIELDS: &[Field] = &[
    Field::req("input", FieldKind::Text, "example input"),
    Field::req("output", FieldKind::Text, "expected output"),
];

const FEW_SHOT_FIELDS: &[Field] = &[
    Field::req(
        "examples",
        FieldKind::Records {
            fields: EXAMPLE_FIELDS,
            min: 1,
        },
        "input/output demonstrations",
    ),
    Field::opt("prompt", FieldKind::PreservingTemplate, "prompt the examples are appended to"),
];

const EDIT_FIELDS: &[Field] = &[
    Field::req("search", FieldKind::Text, "text occurring exactly once in the pipeline YAML"),
    Field::req("replace", FieldKind::AnyText, "replacement text"),
];

const ARBITRARY_FIELDS: &[Field] = &[Field::req(
    "edits",
    FieldKind::Records {
        fields: EDIT_FIELDS,
        min: 1,
    },
    "search-and-replace blocks applied in order",
)];

/// Extras key counting embedded demonstrations.
pub(crate) const FEW_SHOT_COUNT: &str = "few_shot_count";

pub(super) fn directives() -> Vec<Directive> {
    vec![
        Directive {
            name: MODEL_SUBSTITUTION,
            category: Category::LlmCentric,
            short_doc: "Switches one operator to a different model. Use cheaper models for easy steps and stronger ones where accuracy suffers.",
            guidance: "Consult the per-model cost and accuracy of the original pipeline, context windows and prices. The new model must differ from the current one.",
            example: r#"{"model": "gpt-4o-mini"}"#,
            lhs: LhsPattern::Sequence {
                steps: &[ANY_LLM],
                guard: None,
            },
            params: ParamSchema::with_check(MODEL_FIELDS, model_check),
            candidate_count: 1,
            rewrite: model_rewrite,
        },
        Directive {
            name: CLARIFY_INSTRUCTIONS,
            category: Category::LlmCentric,
            short_doc: "Rewrites a prompt to be more specific and detailed. Use when outputs show the model misreading ambiguous instructions.",
            guidance: "Read sample documents, find ambiguous terms and spell out what counts. Keep every original placeholder. Give two prompts that follow different clarification strategies.",
            example: r#"{"prompt": "Extract evidence of threatening with a firearm from {{ input.notes }}. Count any mention of a gun, pistol, rifle or weapon that is pointed, brandished or displayed to intimidate."}"#,
            lhs: LhsPattern::Sequence {
                steps: &[PROMPTED],
                guard: None,
            },
            params: ParamSchema::with_check(CLARIFY_FIELDS, clarify_check),
            candidate_count: 2,
            rewrite: clarify_rewrite,
        },
        Directive {
            name: FEW_SHOT_EXAMPLES,
            category: Category::LlmCentric,
            short_doc: "Adds input/output demonstrations to a prompt. Use when the expected output format or judgment is easier to show than to describe.",
            guidance: "Build examples from real sample documents. They are appended to the prompt after an `Examples:` header.",
            example: r#"{"examples": [{"input": "Officer drew his pistol and pointed it at the suspect.", "output": "{\"factors\": [\"firearm\"]}"}]}"#,
            lhs: LhsPattern::Sequence {
                steps: &[PROMPTED],
                guard: Some(no_examples_yet),
            },
            params: ParamSchema::new(FEW_SHOT_FIELDS),
            candidate_count: 1,
            rewrite: few_shot_rewrite,
        },
        Directive {
            name: ARBITRARY_REWRITE,
            category: Category::LlmCentric,
            short_doc: "Free-form edit of the whole pipeline YAML through search-and-replace blocks. Use for improvements no other directive expresses.",
            guidance: "Each search string must occur exactly once in the current YAML. Blocks apply in order; the result must parse and validate.",
            example: r#"{"edits": [{"search": "Extract enhancement factors", "replace": "Extract every enhancement factor"}]}"#,
            lhs: LhsPattern::Whole,
            params: ParamSchema::new(ARBITRARY_FIELDS),
            candidate_count: 1,
            rewrite: arbitrary_rewrite,
        },
    ]
}

fn model_check(params: &Value, ctx: &ParamContext<'_>) -> Result<(), String> {
    let model = str_param(params, "model");
    require(ctx.first().model.as_deref() != Some(model), || {
        format!("operator already uses `{model}`")
    })
}

fn model_rewrite(input: &RewriteInput<'_>) -> Result<PipelineSpec, DirectiveError> {
    let mut op = window(input)[0].clone();
    op.model = Some(str_param(input.params, "model").to_string());
    Ok(splice(input.pipeline, input.span, vec![tagged(op, input.name)]))
}

fn clarify_check(params: &Value, ctx: &ParamContext<'_>) -> Result<(), String> {
    require(
        ctx.first().prompt_template.as_deref() != Some(str_param(params, "prompt")),
        || "clarified prompt is identical to the original".into(),
    )
}

fn clarify_rewrite(input: &RewriteInput<'_>) -> Result<PipelineSpec, DirectiveError> {
    let mut op = window(input)[0].clone();
    op.prompt_template = Some(str_param(input.params, "prompt").to_string());
    Ok(splice(input.pipeline, input.span, vec![tagged(op, input.name)]))
}

fn no_examples_yet(w: &[OperatorConfig], _: &KeyEnv) -> bool {
    !w[0].extras.contains_key(FEW_SHOT_COUNT)
}

/// Example text must not introduce template placeholders.
fn inert(text: &str) -> String {
    text.replace("{{", "{ {").replace("}}", "} }")
}

fn few_shot_rewrite(input: &RewriteInput<'_>) -> Result<PipelineSpec, DirectiveError> {
    let mut op = window(input)[0].clone();
    let base = opt_str(input.params, "prompt")
        .map(str::to_string)
        .or_else(|| op.prompt_template.clone())
        .unwrap_or_default();
    let examples = input.params["examples"].as_array().cloned().unwrap_or_default();
    let mut prompt = format!("{base}\n\nExamples:");
    for ex in &examples {
        prompt.push_str(&format!(
            "\nInput: {}\nOutput: {}",
            inert(str_param(ex, "input")),
            inert(str_param(ex, "output"))
        ));
    }
    op.prompt_template = Some(prompt);
    op.extras
        .insert(FEW_SHOT_COUNT.to_string(), Value::from(examples.len()));
    Ok(splice(input.pipeline, input.span, vec![tagged(op, input.name)]))
}

fn without_lineage(op: &OperatorConfig) -> OperatorConfig {
    let mut op = op.clone();
    op.extras.remove(LINEAGE_KEY);
    op
}

fn arbitrary_rewrite(input: &RewriteInput<'_>) -> Result<PipelineSpec, DirectiveError> {
    let invalid = |message: String| DirectiveError::InvalidParams {
        directive: input.name.to_string(),
        message,
    };
    let mut yaml = input.pipeline.to_yaml();
    let edits = input.params["edits"].as_array().cloned().unwrap_or_default();
    for (i, edit) in edits.iter().enumerate() {
        let search = str_param(edit, "search");
        let count = yaml.matches(search).count();
        if count != 1 {
            return Err(invalid(format!(
                "edits[{i}].search occurs {count} times in the pipeline; it must occur exactly once"
            )));
        }
        yaml = yaml.replacen(search, str_param(edit, "replace"), 1);
    }
    let mut out = PipelineSpec::from_yaml(&yaml).map_err(|e| DirectiveError::RewriteProducesInvalidPipeline {
        directive: input.name.to_string(),
        detail: e.to_string(),
    })?;
    if out == *input.pipeline {
        return Err(invalid("edits leave the pipeline unchanged".into()));
    }
    let before: BTreeMap<&str, OperatorConfig> = input
        .pipeline
        .operators
        .iter()
        .map(|op| (op.id.as_str(), without_lineage(op)))
        .collect();
    for op in &mut out.operators {
        let unchanged = before
            .get(op.id.as_str())
            .is_some_and(|old| *old == without_lineage(op));
        if !unchanged {
            op.push_lineage(input.name);
        }
    }
    Ok(out)
}
