//! Rewrite directives: what a rewrite matches, what parameters it needs and
//! how it rebuilds the matched operators.
//!
//! A [`Directive`] is pure data plus a rewrite function. Matching and
//! applying never mutate the input pipeline.

mod code;
mod decomposition;
mod fusion;
mod llm;
mod params;
mod projection;
pub(crate) mod support;

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::ir::{key_env_after, validate_pipeline, KeyEnv, ModelCatalog, OperatorConfig, OperatorType, PipelineSpec};

pub use params::{Field, FieldKind, ParamContext, ParamSchema};
pub(crate) use decomposition::chunkable_keys;

pub const SAME_TYPE_FUSION: &str = "same_type_fusion";
pub const MAP_REDUCE_FUSION: &str = "map_reduce_fusion";
pub const MAP_FILTER_FUSION: &str = "map_filter_fusion";
pub const FILTER_MAP_FUSION: &str = "filter_map_fusion";
pub const REORDERING: &str = "reordering";
pub const CODE_SUBSTITUTION: &str = "code_substitution";
pub const CODE_SUB_REDUCE: &str = "code_sub_reduce";
pub const DOC_COMPRESSION_CODE: &str = "doc_compression_code";
pub const HEAD_TAIL_COMPRESSION: &str = "head_tail_compression";
pub const CHUNK_SAMPLING: &str = "chunk_sampling";
pub const DOC_SAMPLING: &str = "doc_sampling";
pub const CASCADE_FILTERING: &str = "cascade_filtering";
pub const DOC_SUMMARIZATION: &str = "doc_summarization";
pub const DOC_COMPRESSION_LLM: &str = "doc_compression_llm";
pub const MODEL_SUBSTITUTION: &str = "model_substitution";
pub const CLARIFY_INSTRUCTIONS: &str = "clarify_instructions";
pub const FEW_SHOT_EXAMPLES: &str = "few_shot_examples";
pub const ARBITRARY_REWRITE: &str = "arbitrary_rewrite";
pub const DOC_CHUNKING: &str = "doc_chunking";

/// Directives whose right-hand side a fusion could collapse again.
pub const CHAINING_DIRECTIVES: [&str; 5] = [
    DOC_CHUNKING,
    CODE_SUB_REDUCE,
    DOC_SUMMARIZATION,
    DOC_COMPRESSION_LLM,
    DOC_COMPRESSION_CODE,
];

pub const FUSION_DIRECTIVES: [&str; 4] = [
    SAME_TYPE_FUSION,
    MAP_REDUCE_FUSION,
    MAP_FILTER_FUSION,
    FILTER_MAP_FUSION,
];

pub const COMPRESSION_DIRECTIVES: [&str; 4] = [
    DOC_COMPRESSION_CODE,
    HEAD_TAIL_COMPRESSION,
    DOC_SUMMARIZATION,
    DOC_COMPRESSION_LLM,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    FusionReordering,
    CodeSynthesis,
    DataDecomposition,
    ProjectionSynthesis,
    LlmCentric,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    ImproveAccuracy,
    ReduceCost,
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Objective::ImproveAccuracy => "improve_accuracy",
            Objective::ReduceCost => "reduce_cost",
        })
    }
}

/// Inclusive operator index range `[start, end]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    pub fn single(i: usize) -> Self {
        Span { start: i, end: i }
    }

    pub fn len(&self) -> usize {
        self.end + 1 - self.start
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

impl From<[usize; 2]> for Span {
    fn from([start, end]: [usize; 2]) -> Self {
        Span { start, end }
    }
}

impl From<Span> for [usize; 2] {
    fn from(s: Span) -> Self {
        [s.start, s.end]
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.start, self.end)
    }
}

/// One concrete application of a directive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewriteRecord {
    pub directive: String,
    pub span: Span,
    pub params: Value,
    /// Absent for the model sweep performed at initialization.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub objective: Option<Objective>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DirectiveError {
    #[error("unknown directive `{0}`")]
    UnknownDirective(String),
    #[error("{directive} does not match at {span}")]
    SpanNotMatched { directive: String, span: Span },
    #[error("invalid parameters for {directive}: {message}")]
    InvalidParams { directive: String, message: String },
    #[error("{directive} produced an invalid pipeline: {detail}")]
    RewriteProducesInvalidPipeline { directive: String, detail: String },
}

/// Extra condition on a matched window, given the typed keys visible at
/// its first operator.
pub type Guard = fn(&[OperatorConfig], &KeyEnv) -> bool;

#[derive(Clone)]
pub enum LhsPattern {
    /// A contiguous run of operators, one type set per position.
    Sequence {
        steps: &'static [&'static [OperatorType]],
        guard: Option<Guard>,
    },
    /// The whole pipeline as one span.
    Whole,
}

impl LhsPattern {
    pub fn signature(&self) -> String {
        match self {
            LhsPattern::Whole => "pipeline".to_string(),
            LhsPattern::Sequence { steps, .. } => steps
                .iter()
                .map(|set| {
                    let names: Vec<&str> = set.iter().map(|t| t.as_str()).collect();
                    if names.len() == 1 {
                        names[0].to_string()
                    } else {
                        format!("({})", names.join("|"))
                    }
                })
                .collect::<Vec<_>>()
                .join(" -> "),
        }
    }

    fn sites(&self, p: &PipelineSpec) -> Vec<Span> {
        match self {
            LhsPattern::Whole => {
                if p.is_empty() {
                    vec![]
                } else {
                    vec![Span::new(0, p.len() - 1)]
                }
            }
            LhsPattern::Sequence { steps, guard } => {
                let width = steps.len();
                if width == 0 || p.len() < width {
                    return vec![];
                }
                let mut out = Vec::new();
                let mut env = key_env_after(p, 0).expect("index 0 is always valid");
                for start in 0..=p.len() - width {
                    let window = &p.operators[start..start + width];
                    let types_match = window
                        .iter()
                        .zip(steps.iter())
                        .all(|(op, set)| set.contains(&op.op_type));
                    if types_match && guard.is_none_or(|g| g(window, &env)) {
                        out.push(Span::new(start, start + width - 1));
                    }
                    env = key_env_after(p, start + 1).expect("index within bounds");
                }
                out
            }
        }
    }
}

/// Everything a rewrite body needs besides the pipeline.
pub struct RewriteInput<'a> {
    pub pipeline: &'a PipelineSpec,
    pub span: Span,
    pub params: &'a Value,
    pub ctx: &'a ParamContext<'a>,
    pub name: &'static str,
}

pub type RewriteFn = fn(&RewriteInput<'_>) -> Result<PipelineSpec, DirectiveError>;

#[derive(Clone)]
pub struct Directive {
    pub name: &'static str,
    pub category: Category,
    /// One-line description plus when to use it; the only text shown when
    /// an agent is choosing among directives.
    pub short_doc: &'static str,
    /// Longer guidance shown once the directive has been chosen.
    pub guidance: &'static str,
    /// Worked example of a parameter object.
    pub example: &'static str,
    pub lhs: LhsPattern,
    pub params: ParamSchema,
    pub candidate_count: usize,
    pub(crate) rewrite: RewriteFn,
}

impl fmt::Debug for Directive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Directive")
            .field("name", &self.name)
            .field("category", &self.category)
            .field("lhs", &self.lhs.signature())
            .field("candidate_count", &self.candidate_count)
            .finish()
    }
}

impl Directive {
    pub fn param_sensitive(&self) -> bool {
        self.candidate_count >= 2
    }

    /// Instantiation schema, guidance and example: the text revealed after
    /// the directive is chosen.
    pub fn full_doc(&self) -> String {
        let schema = serde_json::to_string_pretty(&self.params.describe()).expect("schema is JSON");
        let mut doc = format!(
            "{name}: {short}\n\n{guidance}\n\nMatches: {lhs}\n\nParameters (JSON object):\n{schema}\n\nExample parameters:\n{example}\n",
            name = self.name,
            short = self.short_doc,
            guidance = self.guidance,
            lhs = self.lhs.signature(),
            example = self.example,
        );
        if self.param_sensitive() {
            doc.push_str(&format!(
                "\nSubmit {} distinct parameter objects exploring different trade-offs; the most accurate one is kept.\n",
                self.candidate_count
            ));
        }
        doc
    }

    /// Entry used by the registry dump and the stage-1 brief.
    pub fn brief(&self) -> Value {
        json!({
            "name": self.name,
            "category": self.category,
            "short_doc": self.short_doc,
            "lhs": self.lhs.signature(),
        })
    }

    /// All spans where the pattern and its guard hold, by ascending start.
    pub fn match_sites(&self, p: &PipelineSpec) -> Vec<Span> {
        self.lhs.sites(p)
    }

    /// Checks `params` against the parameter schema at `span`.
    pub fn check_params(&self, ctx: &ParamContext<'_>, params: &Value) -> Result<(), DirectiveError> {
        self.params
            .validate(params, ctx)
            .map_err(|message| DirectiveError::InvalidParams {
                directive: self.name.to_string(),
                message,
            })
    }

    /// Rewrites the span named by `r` and validates the result.
    pub fn apply(
        &self,
        p: &PipelineSpec,
        r: &RewriteRecord,
        catalog: &ModelCatalog,
    ) -> Result<PipelineSpec, DirectiveError> {
        if r.directive != self.name {
            return Err(DirectiveError::UnknownDirective(r.directive.clone()));
        }
        if !self.match_sites(p).contains(&r.span) {
            return Err(DirectiveError::SpanNotMatched {
                directive: self.name.to_string(),
                span: r.span,
            });
        }
        let ctx = ParamContext::new(p, r.span, catalog);
        self.check_params(&ctx, &r.params)?;
        let input = RewriteInput {
            pipeline: p,
            span: r.span,
            params: &r.params,
            ctx: &ctx,
            name: self.name,
        };
        let out = (self.rewrite)(&input)?;
        let report = validate_pipeline(&out);
        if !report.is_ok() {
            return Err(DirectiveError::RewriteProducesInvalidPipeline {
                directive: self.name.to_string(),
                detail: report.to_string(),
            });
        }
        let before = p.models();
        if let Some(m) = out
            .models()
            .into_iter()
            .find(|m| !before.contains(m) && !catalog.contains(m))
        {
            return Err(DirectiveError::RewriteProducesInvalidPipeline {
                directive: self.name.to_string(),
                detail: format!("model `{m}` is not in the catalog"),
            });
        }
        Ok(out)
    }
}

/// The compiled-in directive catalog.
#[derive(Debug, Clone)]
pub struct Registry {
    directives: Vec<Directive>,
}

impl Default for Registry {
    fn default() -> Self {
        Registry::standard()
    }
}

impl Registry {
    pub fn standard() -> Self {
        let mut directives = Vec::new();
        directives.extend(fusion::directives());
        directives.extend(code::directives());
        directives.extend(decomposition::directives());
        directives.extend(projection::directives());
        directives.extend(llm::directives());
        Registry { directives }
    }

    pub fn directives(&self) -> &[Directive] {
        &self.directives
    }

    pub fn iter(&self) -> impl Iterator<Item = &Directive> {
        self.directives.iter()
    }

    pub fn get(&self, name: &str) -> Option<&Directive> {
        self.directives.iter().find(|d| d.name == name)
    }

    pub fn len(&self) -> usize {
        self.directives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directives.is_empty()
    }

    /// Overrides the number of candidates a parameter-sensitive directive
    /// produces. Counts below 2 make it an ordinary directive.
    pub fn set_candidate_count(&mut self, name: &str, k: usize) -> Result<(), DirectiveError> {
        let d = self
            .directives
            .iter_mut()
            .find(|d| d.name == name)
            .ok_or_else(|| DirectiveError::UnknownDirective(name.to_string()))?;
        d.candidate_count = k.max(1);
        Ok(())
    }

    pub fn apply(
        &self,
        p: &PipelineSpec,
        r: &RewriteRecord,
        catalog: &ModelCatalog,
    ) -> Result<PipelineSpec, DirectiveError> {
        self.get(&r.directive)
            .ok_or_else(|| DirectiveError::UnknownDirective(r.directive.clone()))?
            .apply(p, r, catalog)
    }

    /// JSON listing of the catalog.
    pub fn dump(&self) -> Value {
        Value::Array(
            self.directives
                .iter()
                .map(|d| {
                    let mut b = d.brief();
                    b["candidate_count"] = json!(d.candidate_count);
                    b["param_sensitive"] = json!(d.param_sensitive());
                    b
                })
                .collect(),
        )
    }
}

/// Drops directives that would undo or repeat the rewrite that produced
/// `p_star`:
/// fusions right after a chaining rewrite, model substitution on a model
/// sweep variant, chunking once a split exists, and a second compression
/// right after a compression.
pub fn prune_registry<'r>(
    p_star: &PipelineSpec,
    path: &[RewriteRecord],
    candidates: &[&'r Directive],
) -> Vec<&'r Directive> {
    let last = path.last().map(|r| r.directive.as_str());
    let after_chaining = last.is_some_and(|l| CHAINING_DIRECTIVES.contains(&l));
    let after_compression = last.is_some_and(|l| COMPRESSION_DIRECTIVES.contains(&l));
    let sweep_variant = path.len() == 1 && path[0].directive == MODEL_SUBSTITUTION;
    let has_split = p_star.contains(OperatorType::Split);
    candidates
        .iter()
        .copied()
        .filter(|d| {
            !(after_chaining && FUSION_DIRECTIVES.contains(&d.name)
                || sweep_variant && d.name == MODEL_SUBSTITUTION
                || has_split && d.name == DOC_CHUNKING
                || after_compression && COMPRESSION_DIRECTIVES.contains(&d.name))
        })
        .collect()
}
