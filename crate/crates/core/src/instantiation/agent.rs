//! Adapter for an external agent reached over JSON/HTTP.
//!
//! Every request carries the whole conversation so far as `{role, content}`
//! messages; the agent answers with one JSON action. See `PROTOCOL.md` at
//! the repository root for the message schemas.

use std::time::Duration;

use serde::Deserialize;
use serde_json::{json, Value};

use super::{Choice, ChooseRequest, DocPeek, InstantiateRequest, InstantiationError, Instantiator};
use crate::directives::{ParamContext, Span};

/// Environment variable naming the agent endpoint.
pub const AGENT_ENDPOINT_VAR: &str = "AGENT_ENDPOINT";

/// Attempts per stage before giving up.
pub const MAX_ATTEMPTS: usize = 3;

/// Document reads allowed during one instantiation.
pub const MAX_DOC_READS: usize = 32;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{0}")]
pub struct TransportError(pub String);

/// One request/response exchange with the agent.
pub trait Transport: Send + Sync {
    fn post(&self, payload: &Value) -> Result<Value, TransportError>;
}

/// Posts JSON to an HTTP endpoint, one connection per call.
#[derive(Debug, Clone)]
pub struct HttpTransport {
    pub endpoint: String,
    pub timeout: Duration,
}

impl HttpTransport {
    pub fn new(endpoint: impl Into<String>) -> Self {
        HttpTransport {
            endpoint: endpoint.into(),
            timeout: Duration::from_secs(120),
        }
    }
}

impl Transport for HttpTransport {
    fn post(&self, payload: &Value) -> Result<Value, TransportError> {
        let agent = ureq::AgentBuilder::new().timeout(self.timeout).build();
        let resp = agent
            .post(&self.endpoint)
            .send_json(payload.clone())
            .map_err(|e| TransportError(e.to_string()))?;
        resp.into_json::<Value>().map_err(|e| TransportError(e.to_string()))
    }
}

#[derive(Debug, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
enum Action {
    Choose { directive: String, span: Span },
    ReadNextDoc,
    Submit { params: Vec<Value> },
}

pub struct AgentInstantiator<T: Transport = HttpTransport> {
    transport: T,
}

impl AgentInstantiator<HttpTransport> {
    /// The adapter for `$AGENT_ENDPOINT`, if set.
    pub fn from_env() -> Option<Self> {
        let endpoint = std::env::var(AGENT_ENDPOINT_VAR).ok()?;
        (!endpoint.trim().is_empty()).then(|| AgentInstantiator::new(HttpTransport::new(endpoint)))
    }
}

fn msg(role: &str, content: impl Into<String>) -> Value {
    json!({"role": role, "content": content.into()})
}

const SYSTEM_PROMPT: &str = "You optimize document-processing pipelines built from LLM operators. Reply with exactly one JSON object holding an `action` field.";

impl<T: Transport> AgentInstantiator<T> {
    pub fn new(transport: T) -> Self {
        AgentInstantiator { transport }
    }

    pub fn transport(&self) -> &T {
        &self.transport
    }

    fn exchange(&self, stage: &str, messages: &[Value]) -> Result<Value, InstantiationError> {
        let payload = json!({"stage": stage, "messages": messages});
        self.transport
            .post(&payload)
            .map_err(|e| InstantiationError::EndpointError(e.0))
    }
}

/// First-stage user message: the context with directive briefs only.
pub(crate) fn choose_message(req: &ChooseRequest<'_>) -> String {
    let body = json!({
        "task": "Choose one directive and the operator span to apply it to. Reply {\"action\": \"choose\", \"directive\": <name>, \"span\": [start, end]}.",
        "context": req.context,
    });
    body.to_string()
}

fn instantiate_message(req: &InstantiateRequest<'_>) -> String {
    let d = req.directive;
    let ops = &req.pipeline.operators[req.span.start..=req.span.end];
    let body = json!({
        "task": format!(
            "Instantiate `{}` on span [{}, {}]. Reply {{\"action\": \"submit\", \"params\": [...]}} with {} parameter object(s), or {{\"action\": \"read_next_doc\"}} to see a sample document.",
            d.name, req.span.start, req.span.end, d.candidate_count
        ),
        "objective": req.objective,
        "directive": d.full_doc(),
        "pipeline_yaml": req.pipeline.to_yaml(),
        "matched_operators": ops,
    });
    body.to_string()
}

impl<T: Transport> Instantiator for AgentInstantiator<T> {
    fn choose_directive(&self, req: &ChooseRequest<'_>) -> Result<Choice, InstantiationError> {
        let mut messages = vec![msg("system", SYSTEM_PROMPT), msg("user", choose_message(req))];
        let mut last_error = String::new();
        for _ in 0..MAX_ATTEMPTS {
            let reply = self.exchange("choose", &messages)?;
            messages.push(msg("assistant", reply.to_string()));
            let problem = match serde_json::from_value::<Action>(reply) {
                Ok(Action::Choose { directive, span }) => {
                    match req.candidates.iter().find(|d| d.name == directive) {
                        None => format!("`{directive}` is not one of the offered directives"),
                        Some(d) if !d.match_sites(req.pipeline).contains(&span) => format!(
                            "span [{}, {}] does not match `{directive}`; matching spans: {:?}",
                            span.start,
                            span.end,
                            d.match_sites(req.pipeline)
                        ),
                        Some(_) => return Ok(Choice { directive, span }),
                    }
                }
                Ok(_) => "expected a `choose` action".to_string(),
                Err(e) => format!("malformed reply: {e}"),
            };
            messages.push(msg("user", format!("Error: {problem}. Try again.")));
            last_error = problem;
        }
        Err(InstantiationError::InstantiationFailed {
            attempts: MAX_ATTEMPTS,
            last_error,
        })
    }

    fn instantiate(
        &self,
        req: &InstantiateRequest<'_>,
        peek: &mut dyn DocPeek,
    ) -> Result<Vec<Value>, InstantiationError> {
        let d = req.directive;
        let ctx = ParamContext::new(req.pipeline, req.span, req.catalog);
        let mut messages = vec![msg("system", SYSTEM_PROMPT), msg("user", instantiate_message(req))];
        let mut attempts = 0;
        let mut reads = 0;
        let mut last_error = String::new();
        while attempts < MAX_ATTEMPTS {
            let reply = self.exchange("instantiate", &messages)?;
            messages.push(msg("assistant", reply.to_string()));
            let problem = match serde_json::from_value::<Action>(reply) {
                Ok(Action::ReadNextDoc) if reads < MAX_DOC_READS => {
                    reads += 1;
                    let doc = peek.read_next_doc().unwrap_or(Value::Null);
                    messages.push(msg("tool", json!({ "document": doc }).to_string()));
                    continue;
                }
                Ok(Action::ReadNextDoc) => format!("document read limit of {MAX_DOC_READS} reached; submit now"),
                Ok(Action::Submit { params }) if params.len() != d.candidate_count => format!(
                    "expected {} parameter object(s), got {}",
                    d.candidate_count,
                    params.len()
                ),
                Ok(Action::Submit { params }) => {
                    let errors: Vec<String> = params
                        .iter()
                        .enumerate()
                        .filter_map(|(i, p)| d.check_params(&ctx, p).err().map(|e| format!("params[{i}]: {e}")))
                        .collect();
                    if errors.is_empty() {
                        return Ok(params);
                    }
                    errors.join("; ")
                }
                Ok(Action::Choose { .. }) => "expected a `submit` or `read_next_doc` action".to_string(),
                Err(e) => format!("malformed reply: {e}"),
            };
            attempts += 1;
            messages.push(msg("user", format!("Error: {problem}. Fix the parameters and resubmit.")));
            last_error = problem;
        }
        Err(InstantiationError::InstantiationFailed {
            attempts: MAX_ATTEMPTS,
            last_error,
        })
    }
}
