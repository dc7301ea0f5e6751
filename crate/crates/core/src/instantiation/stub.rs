//! Rule-based offline instantiator.
//!
//! Choice follows fixed per-objective preference tiers. Parameters come from
//! templates over the matched operators, so the same request always yields
//! the same candidates.

use std::collections::BTreeSet;

use serde_json::{json, Map, Value};

use super::{AgentContext, Choice, ChooseRequest, DocPeek, InstantiateRequest, InstantiationError, Instantiator};
use crate::directives::support::{filter_flag, fresh_key, text_keys};
use crate::directives::*;
use crate::ir::{
    placeholder, placeholders, replace_placeholder, ModelCatalog, OperatorConfig, OperatorType, OutputSchema,
    PipelineSpec, SchemaType,
};

const REDUCE_COST_TIERS: &[&[&str]] = &[
    &[MODEL_SUBSTITUTION],
    &[SAME_TYPE_FUSION, MAP_REDUCE_FUSION, MAP_FILTER_FUSION, FILTER_MAP_FUSION],
    &[CODE_SUBSTITUTION, CODE_SUB_REDUCE, DOC_COMPRESSION_CODE, HEAD_TAIL_COMPRESSION],
];

const IMPROVE_ACCURACY_TIERS: &[&[&str]] = &[&[CLARIFY_INSTRUCTIONS], &[DOC_CHUNKING], &[FEW_SHOT_EXAMPLES]];

const CLARIFY_SUFFIXES: &[&str] = &[
    "Be precise: consider every relevant passage, count borderline cases only when the text states them explicitly, and follow the output format exactly.",
    "Before answering, list the terms in the text that relate to the task, resolve synonyms and indirect descriptions, then answer using only evidence stated in the text.",
];

const STOPWORDS: &[&str] = &[
    "about", "above", "after", "again", "answer", "based", "below", "between", "could", "document",
    "documents", "each", "every", "extract", "following", "from", "given", "input", "other", "should",
    "their", "there", "these", "those", "under", "using", "where", "which", "while", "whether", "would",
];

/// Deterministic rule-based instantiator; needs no network access.
#[derive(Debug, Clone, Copy, Default)]
pub struct StubInstantiator;

impl Instantiator for StubInstantiator {
    fn choose_directive(&self, req: &ChooseRequest<'_>) -> Result<Choice, InstantiationError> {
        stub_choose(req)
    }

    fn instantiate(
        &self,
        req: &InstantiateRequest<'_>,
        peek: &mut dyn DocPeek,
    ) -> Result<Vec<Value>, InstantiationError> {
        stub_instantiate(req, peek)
    }
}

fn tier_of(name: &str, tiers: &[&[&str]]) -> usize {
    tiers
        .iter()
        .position(|t| t.contains(&name))
        .unwrap_or(tiers.len())
}

/// Models already assigned along the current rewrite path.
fn path_models(ctx: &AgentContext) -> Vec<String> {
    ctx.current_path
        .iter()
        .filter(|r| r.directive == MODEL_SUBSTITUTION)
        .filter_map(|r| r.params.get("model").and_then(Value::as_str).map(str::to_string))
        .collect()
}

/// Replacement model for one operator, or `None` when no catalog model
/// moves it in the direction of the objective.
fn substitution_target(
    op: &OperatorConfig,
    p: &PipelineSpec,
    objective: Objective,
    catalog: &ModelCatalog,
    used: &[String],
) -> Option<String> {
    let current = op.model.as_deref().unwrap_or_default();
    let mut exclude: Vec<&str> = used.iter().map(String::as_str).collect();
    let in_pipeline = p.models();
    exclude.extend(in_pipeline.iter().map(String::as_str));
    exclude.push(current);
    let entry = catalog.get(current);
    match objective {
        Objective::ReduceCost => {
            let m = catalog.cheapest_except(&exclude)?;
            entry
                .is_none_or(|e| m.unit_price() < e.unit_price())
                .then(|| m.model_id.clone())
        }
        Objective::ImproveAccuracy => {
            let m = catalog.strongest_except(&exclude)?;
            entry
                .is_none_or(|e| m.quality_hint > e.quality_hint)
                .then(|| m.model_id.clone())
        }
    }
}

/// Match sites the stub can instantiate.
fn eligible_sites(d: &Directive, req: &ChooseRequest<'_>) -> Vec<Span> {
    let sites = d.match_sites(req.pipeline);
    if d.name != MODEL_SUBSTITUTION {
        return sites;
    }
    let used = path_models(req.context);
    sites
        .into_iter()
        .filter(|s| {
            let op = &req.pipeline.operators[s.start];
            substitution_target(op, req.pipeline, req.context.objective, req.catalog, &used).is_some()
        })
        .collect()
}

/// Walks the objective's preference tiers. Within a tier directives are
/// ordered by usage count, then name. A directive used `n` times targets
/// its `n`-th eligible site, so repeated choices reach new pipelines; a
/// directive whose sites are exhausted is skipped.
pub(crate) fn stub_choose(req: &ChooseRequest<'_>) -> Result<Choice, InstantiationError> {
    let tiers = match req.context.objective {
        Objective::ReduceCost => REDUCE_COST_TIERS,
        Objective::ImproveAccuracy => IMPROVE_ACCURACY_TIERS,
    };
    let mut ranked: Vec<&Directive> = req.candidates.to_vec();
    ranked.sort_by_key(|d| (tier_of(d.name, tiers), req.context.usage_of(d.name), d.name));
    for d in ranked {
        let used = req.context.usage_of(d.name) as usize;
        if let Some(span) = eligible_sites(d, req).get(used) {
            return Ok(Choice {
                directive: d.name.to_string(),
                span: *span,
            });
        }
    }
    Err(InstantiationError::NoApplicableDirective)
}

pub(crate) fn stub_instantiate(
    req: &InstantiateRequest<'_>,
    peek: &mut dyn DocPeek,
) -> Result<Vec<Value>, InstantiationError> {
    let d = req.directive;
    let k = d.candidate_count.max(1);
    let site = Site::new(req);
    let failed = |msg: String| InstantiationError::InstantiationFailed {
        attempts: 1,
        last_error: msg,
    };
    let out: Vec<Value> = match d.name {
        SAME_TYPE_FUSION => vec![site.same_type()],
        MAP_REDUCE_FUSION => vec![site.map_reduce()],
        MAP_FILTER_FUSION => vec![site.map_filter()],
        FILTER_MAP_FUSION => vec![site.filter_map()],
        REORDERING => vec![json!({})],
        CODE_SUBSTITUTION => vec![site.code_substitution()],
        CODE_SUB_REDUCE => vec![site.code_sub_reduce()],
        DOC_COMPRESSION_CODE => (0..k).map(|i| site.compression_code(i)).collect(),
        HEAD_TAIL_COMPRESSION => (0..k).map(|i| site.head_tail(i)).collect(),
        CHUNK_SAMPLING | DOC_SAMPLING => (0..k).map(|i| site.sampling(i)).collect(),
        CASCADE_FILTERING => (0..k).map(|i| site.cascade(i)).collect(),
        DOC_CHUNKING => vec![site.chunking()],
        DOC_SUMMARIZATION => vec![site.summarization()],
        DOC_COMPRESSION_LLM => vec![site.llm_compression()],
        MODEL_SUBSTITUTION => vec![site.model_substitution().ok_or_else(|| failed("no replacement model".into()))?],
        CLARIFY_INSTRUCTIONS => (0..k).map(|i| site.clarify(i)).collect(),
        FEW_SHOT_EXAMPLES => vec![site.few_shot(peek)],
        ARBITRARY_REWRITE => vec![site.arbitrary().ok_or_else(|| failed("no edit available".into()))?],
        other => return Err(failed(format!("unknown directive `{other}`"))),
    };
    // Directives with a single natural candidate repeat it when more are requested.
    let mut out = out;
    while out.len() < k {
        out.push(out[out.len() - 1].clone());
    }
    out.truncate(k);
    Ok(out)
}

struct Site<'a> {
    req: &'a InstantiateRequest<'a>,
    ctx: ParamContext<'a>,
}

impl<'a> Site<'a> {
    fn new(req: &'a InstantiateRequest<'a>) -> Self {
        Site {
            req,
            ctx: ParamContext::new(req.pipeline, req.span, req.catalog),
        }
    }

    fn op(&self, i: usize) -> &OperatorConfig {
        &self.req.pipeline.operators[self.req.span.start + i]
    }

    fn prompt(&self, i: usize) -> String {
        self.op(i).prompt_template.clone().unwrap_or_default()
    }

    fn keywords(&self, limit: usize) -> Vec<String> {
        keywords(&self.op(0).prompts().join(" "), limit)
    }

    fn text_source(&self) -> String {
        text_keys(self.op(0), &self.ctx.env)
            .into_iter()
            .next()
            .unwrap_or_default()
    }

    fn fresh(&self, base: &str) -> String {
        fresh_key(self.req.pipeline, &self.ctx.env, base)
    }

    /// Keys the operator's prompts read that exist at the span start.
    fn read_keys(&self, i: usize) -> Vec<String> {
        self.op(i)
            .referenced_keys()
            .into_iter()
            .filter(|k| self.ctx.env.contains_key(k))
            .collect()
    }

    fn same_type(&self) -> Value {
        let (a, b) = (self.op(0), self.op(1));
        if a.op_type == OperatorType::Filter {
            let (fa, fb) = (filter_flag(a).unwrap_or_default(), filter_flag(b).unwrap_or_default());
            let later = self.keys_read_after();
            let flag = if later.contains(fa) && !later.contains(fb) { fa } else { fb };
            let prompt = format!(
                "{}\n\nKeep the document only if this also holds: {}",
                self.prompt(0),
                inline(&self.prompt(1), &[fa.to_string()])
            );
            return json!({"prompt": prompt, "output_schema": {flag: "boolean"}});
        }
        let produced: Vec<String> = a.effective_schema().into_keys().collect();
        let prompt = format!("{}\n\nThen: {}", self.prompt(0), inline(&self.prompt(1), &produced));
        let mut schema = a.effective_schema();
        schema.extend(b.effective_schema());
        json!({"prompt": prompt, "output_schema": schema_value(&schema)})
    }

    fn map_reduce(&self) -> Value {
        let (map, reduce) = (self.op(0), self.op(1));
        let produced: Vec<String> = map.effective_schema().into_keys().collect();
        let prompt = format!(
            "For each document in the group: {}\n\nThen, over the whole group: {}",
            self.prompt(0),
            inline(&self.prompt(1), &produced)
        );
        json!({"prompt": prompt, "output_schema": schema_value(&reduce.effective_schema())})
    }

    fn map_filter(&self) -> Value {
        let (map, filter) = (self.op(0), self.op(1));
        let flag = filter_flag(filter).unwrap_or_default();
        let produced: Vec<String> = map.effective_schema().into_keys().collect();
        let prompt = format!(
            "{}\n\nAlso set `{flag}` to true exactly when: {}",
            self.prompt(0),
            inline(&self.prompt(1), &produced)
        );
        let mut schema = map.effective_schema();
        schema.insert(flag.to_string(), SchemaType::Boolean);
        json!({"prompt": prompt, "output_schema": schema_value(&schema)})
    }

    fn filter_map(&self) -> Value {
        let (filter, map) = (self.op(0), self.op(1));
        let flag = filter_flag(filter).unwrap_or_default();
        let prompt = format!(
            "Set `{flag}` to true exactly when: {}\n\nThen: {}",
            self.prompt(0),
            inline(&self.prompt(1), &[flag.to_string()])
        );
        let mut schema = map.effective_schema();
        schema.insert(flag.to_string(), SchemaType::Boolean);
        json!({"prompt": prompt, "output_schema": schema_value(&schema)})
    }

    fn keys_read_after(&self) -> BTreeSet<String> {
        self.req.pipeline.operators[self.req.span.end + 1..]
            .iter()
            .flat_map(|op| {
                let mut keys = op.referenced_keys();
                keys.extend(op.group_by_keys.iter().cloned());
                keys
            })
            .collect()
    }

    fn code_substitution(&self) -> Value {
        let op = self.op(0);
        let reads = self.read_keys(0);
        let kw = self.keywords(6);
        let code = match op.op_type {
            OperatorType::Filter => format!(
                "import re\n\nKEYWORDS = {}\n\ndef keep(input):\n{}{}    return bool(hits)\n",
                py_list(&kw),
                text_line(&reads),
                HITS_LINES
            ),
            OperatorType::Reduce => format!(
                "import re\n\nKEYWORDS = {}\n\ndef aggregate(group):\n    parts = []\n    for input in group:\n        parts.append({})\n    text = \" \".join(parts)\n{}    return {}\n",
                py_list(&kw),
                join_expr(&reads),
                HITS_LINES,
                return_dict(&op.effective_schema())
            ),
            _ => format!(
                "import re\n\nKEYWORDS = {}\n\ndef transform(input):\n{}{}    return {}\n",
                py_list(&kw),
                text_line(&reads),
                HITS_LINES,
                return_dict(&op.effective_schema())
            ),
        };
        json!({ "code": code })
    }

    fn code_sub_reduce(&self) -> Value {
        let op = self.op(0);
        let items = self.fresh(&format!("{}_items", op.id));
        let count = self.fresh(&format!("{}_count", op.id));
        let reads: Vec<String> = self
            .read_keys(0)
            .into_iter()
            .filter(|k| !op.group_by_keys.contains(k))
            .collect();
        let code = format!(
            "def aggregate(group):\n    items = []\n    for input in group:\n        items.append({})\n    return {{\"{items}\": items, \"{count}\": len(group)}}\n",
            join_expr(&reads)
        );
        let prompt = format!(
            "Using the collected items {} from {} documents: {}",
            placeholder(&items),
            placeholder(&count),
            inline(&self.prompt(0), &reads)
        );
        let schema: OutputSchema = [(items, SchemaType::StringList), (count, SchemaType::Number)]
            .into_iter()
            .collect();
        json!({"code": code, "code_output_schema": schema_value(&schema), "prompt": prompt})
    }

    /// Variant 0 keeps matching sentences (precision); variant 1 keeps
    /// matching paragraphs for a broader keyword set (recall).
    fn compression_code(&self, i: usize) -> Value {
        let src = self.text_source();
        let out = self.fresh(&format!("{src}_compressed"));
        let recall = i % 2 == 1;
        let kw = self.keywords(if recall { 12 } else { 5 });
        let (splitter, joiner, ratio) = if recall {
            (r#"re.split(r"\n\s*\n", text)"#, "\"\\n\\n\"", 0.4)
        } else {
            (r#"re.split(r"(?<=[.!?])\s+", text)"#, "\" \"", 0.15)
        };
        let code = format!(
            "import re\n\nKEYWORDS = {}\n\ndef transform(input):\n    text = str(input[\"{src}\"])\n    parts = [p for p in {splitter} if p.strip()]\n    kept = [p for p in parts if any(w in p.lower() for w in KEYWORDS)]\n    return {{\"{out}\": {joiner}.join(kept)}}\n",
            py_list(&kw)
        );
        let prompt = replace_placeholder(&self.prompt(0), &src, &placeholder(&out));
        json!({
            "code": code,
            "source_key": src,
            "output_key": out,
            "prompt": prompt,
            "compression_ratio": ratio,
        })
    }

    /// (100, 50), (300, 150), then tripling.
    fn head_tail(&self, i: usize) -> Value {
        let head = 100 * 3_i64.pow(i.min(8) as u32);
        json!({"head_words": head, "tail_words": head / 2, "source_key": self.text_source()})
    }

    /// Variant 0 is a BM25 top-10 precision sample, variant 1 an embedding
    /// top-30 recall sample.
    fn sampling(&self, i: usize) -> Value {
        let op = match self.req.directive.name {
            CHUNK_SAMPLING => self.op(2),
            _ => self.op(0),
        };
        let kw = keywords(&op.prompts().join(" "), 8);
        let k = 10 * 3_i64.pow(i.min(8) as u32);
        if i.is_multiple_of(2) {
            let query = if kw.is_empty() { "relevant".to_string() } else { kw.join(" ") };
            json!({"method": "bm25", "k": k, "query": query})
        } else {
            let query = if kw.is_empty() {
                "passages relevant to the task".to_string()
            } else {
                format!("passages about {}", kw.join(", "))
            };
            json!({"method": "embedding", "k": k, "query": query})
        }
    }

    fn cascade(&self, i: usize) -> Value {
        let reads = self.read_keys(0);
        let kw = self.keywords(if i.is_multiple_of(2) { 6 } else { 12 });
        let test = if kw.is_empty() {
            "True".to_string()
        } else {
            "any(w in text for w in KEYWORDS)".to_string()
        };
        let code = format!(
            "KEYWORDS = {}\n\ndef keep(input):\n    text = {}.lower()\n    return {test}\n",
            py_list(&kw),
            join_expr(&reads)
        );
        if i.is_multiple_of(2) {
            return json!({ "code_prefilter": code });
        }
        let mut out = json!({
            "code_prefilter": code,
            "llm_prefilter": format!(
                "Answer true unless the document clearly fails this condition: {}",
                self.prompt(0)
            ),
        });
        if let Some(m) = self.req.catalog.cheapest_except(&[]) {
            out["llm_prefilter_model"] = Value::from(m.model_id.clone());
        }
        out
    }

    fn chunking(&self) -> Value {
        let src = crate::directives::chunkable_keys(self.op(0), &self.ctx.env)
            .into_iter()
            .next()
            .unwrap_or_default();
        let chunk = format!("{src}_chunk");
        let outputs: Vec<String> = self
            .op(0)
            .effective_schema()
            .keys()
            .map(|k| placeholder(k))
            .collect();
        json!({
            "source_key": src,
            "chunk_size": 1000,
            "map_prompt": replace_placeholder(&self.prompt(0), &src, &placeholder(&chunk)),
            "reduce_prompt": format!(
                "Combine the results found in each chunk of one document into a single answer: {}",
                outputs.join(" ")
            ),
        })
    }

    fn summarization(&self) -> Value {
        let src = self.text_source();
        let key = self.fresh(&format!("{src}_summary"));
        json!({
            "summary_prompt": format!(
                "Summarize {}, keeping every detail needed for this task: {}",
                placeholder(&src),
                inert_placeholders(&self.prompt(0))
            ),
            "source_key": src,
            "summary_key": key,
            "prompt": replace_placeholder(&self.prompt(0), &src, &placeholder(&key)),
        })
    }

    fn llm_compression(&self) -> Value {
        let src = self.text_source();
        let key = self.fresh(&format!("{src}_relevant"));
        json!({
            "extract_prompt": format!(
                "Return the line ranges of {} that are relevant to this task: {}",
                placeholder(&src),
                inert_placeholders(&self.prompt(0))
            ),
            "source_key": src,
            "output_key": key,
            "prompt": replace_placeholder(&self.prompt(0), &src, &placeholder(&key)),
        })
    }

    fn model_substitution(&self) -> Option<Value> {
        let op = self.op(0);
        let used = path_models(self.req.context);
        let target = substitution_target(op, self.req.pipeline, self.req.objective, self.req.catalog, &used)
            .or_else(|| {
                let current = op.model.as_deref().unwrap_or_default();
                let m = match self.req.objective {
                    Objective::ReduceCost => self.req.catalog.cheapest_except(&[current]),
                    Objective::ImproveAccuracy => self.req.catalog.strongest_except(&[current]),
                };
                m.map(|m| m.model_id.clone())
            })?;
        Some(json!({ "model": target }))
    }

    fn clarify(&self, i: usize) -> Value {
        let mut suffix = CLARIFY_SUFFIXES[i % CLARIFY_SUFFIXES.len()].to_string();
        if i >= CLARIFY_SUFFIXES.len() {
            suffix.push_str(&format!(" (Pass {}.)", i + 1));
        }
        json!({ "prompt": format!("{}\n\n{suffix}", self.prompt(0)) })
    }

    fn few_shot(&self, peek: &mut dyn DocPeek) -> Value {
        let op = self.op(0);
        let src = self.text_source();
        let output = serde_json::to_string(&blank_output(&op.effective_schema())).unwrap_or_default();
        let mut examples = Vec::new();
        while examples.len() < 2 {
            let Some(doc) = peek.read_next_doc() else { break };
            let text = match doc.get(&src) {
                Some(Value::String(s)) => s.clone(),
                Some(v) => v.to_string(),
                None => doc.to_string(),
            };
            let text: String = text.chars().take(300).collect();
            if text.trim().is_empty() {
                continue;
            }
            examples.push(json!({"input": text, "output": output}));
        }
        if examples.is_empty() {
            examples.push(json!({"input": "(no sample document available)", "output": output}));
        }
        json!({ "examples": examples })
    }

    /// One search/replace block turning the current YAML into an edited
    /// pipeline: a cheaper model for the first LLM operator when reducing
    /// cost, an added verification sentence when improving accuracy.
    fn arbitrary(&self) -> Option<Value> {
        let p = self.req.pipeline;
        let mut edited = p.clone();
        let cheapest = self.req.catalog.cheapest_except(&[]).map(|m| m.model_id.clone());
        let swap = match (self.req.objective, cheapest) {
            (Objective::ReduceCost, Some(cheap)) => edited
                .operators
                .iter_mut()
                .find(|op| op.op_type.is_llm() && op.model.is_some() && op.model.as_deref() != Some(&cheap))
                .map(|op| op.model = Some(cheap))
                .is_some(),
            _ => false,
        };
        if !swap {
            let op = edited.operators.iter_mut().find(|op| op.prompt_template.is_some())?;
            let prompt = op.prompt_template.as_mut()?;
            prompt.push_str("\n\nDouble-check the answer against the text before responding.");
        }
        let (search, replace) = line_edit(&p.to_yaml(), &edited.to_yaml())?;
        Some(json!({"edits": [{"search": search, "replace": replace}]}))
    }
}

/// Filters `text`, `hits` from `text` and `KEYWORDS`.
const HITS_LINES: &str = "    sentences = [s.strip() for s in re.split(r\"(?<=[.!?])\\s+\", text) if s.strip()]\n    hits = [s for s in sentences if any(w in s.lower() for w in KEYWORDS)]\n";

fn join_expr(keys: &[String]) -> String {
    if keys.is_empty() {
        return "\"\"".to_string();
    }
    let parts: Vec<String> = keys.iter().map(|k| format!("str(input[\"{k}\"])")).collect();
    format!("\" \".join([{}])", parts.join(", "))
}

fn text_line(keys: &[String]) -> String {
    format!("    text = {}\n", join_expr(keys))
}

fn py_list(words: &[String]) -> String {
    serde_json::to_string(words).unwrap_or_else(|_| "[]".into())
}

fn return_dict(schema: &OutputSchema) -> String {
    let entries: Vec<String> = schema
        .iter()
        .map(|(k, t)| {
            let v = match t {
                SchemaType::String => "\" \".join(hits)".to_string(),
                SchemaType::Number => "len(hits)".to_string(),
                SchemaType::Boolean => "bool(hits)".to_string(),
                SchemaType::StringList => "hits".to_string(),
                SchemaType::ObjectList(fields) => {
                    let first = fields.first().cloned().unwrap_or_default();
                    let rest: String = fields[1.min(fields.len())..]
                        .iter()
                        .map(|f| format!(", \"{f}\": \"\""))
                        .collect();
                    format!("[{{\"{first}\": s{rest}}} for s in hits]")
                }
            };
            format!("\"{k}\": {v}")
        })
        .collect();
    format!("{{{}}}", entries.join(", "))
}

fn blank_output(schema: &OutputSchema) -> Value {
    let mut m = Map::new();
    for (k, t) in schema {
        let v = match t {
            SchemaType::String => json!("..."),
            SchemaType::Number => json!(0),
            SchemaType::Boolean => json!(false),
            SchemaType::StringList | SchemaType::ObjectList(_) => json!([]),
        };
        m.insert(k.clone(), v);
    }
    Value::Object(m)
}

fn schema_value(schema: &OutputSchema) -> Value {
    serde_json::to_value(schema).unwrap_or(Value::Null)
}

/// Replaces the placeholders of `keys` with plain references, for prompts
/// whose inputs are now produced inside the same call.
fn inline(prompt: &str, keys: &[String]) -> String {
    keys.iter()
        .fold(prompt.to_string(), |acc, k| replace_placeholder(&acc, k, &format!("the `{k}` value")))
}

fn inert_placeholders(prompt: &str) -> String {
    let keys: Vec<String> = placeholders(prompt).into_iter().collect();
    keys.iter()
        .fold(prompt.to_string(), |acc, k| replace_placeholder(&acc, k, &format!("`{k}`")))
}

/// Distinct lowercase words of five or more letters, in order of appearance,
/// skipping template placeholders and common filler.
fn keywords(text: &str, limit: usize) -> Vec<String> {
    let keys: Vec<String> = placeholders(text).into_iter().collect();
    let text = keys.iter().fold(text.to_string(), |acc, k| replace_placeholder(&acc, k, " "));
    let mut out: Vec<String> = Vec::new();
    for word in text.split(|c: char| !c.is_ascii_alphabetic()) {
        let w = word.to_ascii_lowercase();
        if w.len() >= 5 && !STOPWORDS.contains(&w.as_str()) && !out.contains(&w) {
            out.push(w);
            if out.len() == limit {
                break;
            }
        }
    }
    out
}

/// Smallest block of whole lines around the first difference between `old`
/// and `new` that occurs exactly once in `old`.
fn line_edit(old: &str, new: &str) -> Option<(String, String)> {
    if old == new {
        return None;
    }
    let a: Vec<&str> = old.split('\n').collect();
    let b: Vec<&str> = new.split('\n').collect();
    let prefix = a.iter().zip(&b).take_while(|(x, y)| x == y).count();
    let max_suffix = a.len().min(b.len()) - prefix;
    let suffix = a
        .iter()
        .rev()
        .zip(b.iter().rev())
        .take(max_suffix)
        .take_while(|(x, y)| x == y)
        .count();
    let (mut lo, mut hi) = (prefix, a.len() - suffix);
    loop {
        let search = a[lo..hi].join("\n");
        if !search.trim().is_empty() && old.matches(&search).count() == 1 {
            let mut replace: Vec<&str> = a[lo..prefix].to_vec();
            replace.extend_from_slice(&b[prefix..b.len() - suffix]);
            replace.extend_from_slice(&a[a.len() - suffix..hi]);
            return Some((search, replace.join("\n")));
        }
        if lo == 0 && hi == a.len() {
            return None;
        }
        lo = lo.saturating_sub(1);
        hi = (hi + 1).min(a.len());
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keyword_extraction_skips_placeholders_and_filler() {
        let kw = keywords("Extract firearm mentions from {{ input.police_notes }} and injuries.", 5);
        assert_eq!(kw, vec!["firearm", "mentions", "injuries"]);
    }

    #[test]
    fn line_edit_roundtrip() {
        let old = "a: 1\nb: 2\nc: 3\nb: 2\n";
        let new = "a: 1\nb: 2\nc: 4\nb: 2\n";
        let (search, replace) = line_edit(old, new).unwrap();
        assert_eq!(old.matches(&search).count(), 1);
        assert_eq!(old.replacen(&search, &replace, 1), new);
    }

    #[test]
    fn line_edit_expands_until_unique() {
        let old = "x\ny\nx\nz";
        let new = "x\ny\nw\nz";
        let (search, replace) = line_edit(old, new).unwrap();
        assert_eq!(old.matches(&search).count(), 1);
        assert_eq!(old.replacen(&search, &replace, 1), new);
    }
}
