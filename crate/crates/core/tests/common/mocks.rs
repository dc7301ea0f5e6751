//! Fault-injecting evaluators and instantiators, and a recording endpoint.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use pipeopt::directives::Directive;
use pipeopt::eval::{EvalError, EvalResult, Evaluator, LandscapeEvaluator};
use pipeopt::instantiation::{
    Choice, ChooseRequest, DocPeek, InstantiateRequest, InstantiationError, Instantiator, StubInstantiator, Transport,
    TransportError,
};
use pipeopt::ir::PipelineSpec;
use serde_json::Value;

/// Stub choices; instantiation fails whenever `fails(call)` holds.
pub struct Flaky {
    pub calls: AtomicUsize,
    pub fails: fn(usize) -> bool,
}

impl Flaky {
    pub fn new(fails: fn(usize) -> bool) -> Self {
        Flaky {
            calls: AtomicUsize::new(0),
            fails,
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Instantiator for Flaky {
    fn choose_directive(&self, req: &ChooseRequest<'_>) -> Result<Choice, InstantiationError> {
        StubInstantiator.choose_directive(req)
    }

    fn instantiate(&self, req: &InstantiateRequest<'_>, peek: &mut dyn DocPeek) -> Result<Vec<Value>, InstantiationError> {
        let call = self.calls.fetch_add(1, Ordering::SeqCst);
        if (self.fails)(call) {
            return Err(InstantiationError::InstantiationFailed {
                attempts: 3,
                last_error: "unparseable reply".into(),
            });
        }
        StubInstantiator.instantiate(req, peek)
    }
}

/// Landscape results, with transport failures on the calls `fails` picks.
pub struct Unreliable {
    pub inner: LandscapeEvaluator,
    pub calls: AtomicUsize,
    pub fails: fn(usize) -> bool,
}

impl Unreliable {
    pub fn new(inner: LandscapeEvaluator, fails: fn(usize) -> bool) -> Self {
        Unreliable {
            inner,
            calls: AtomicUsize::new(0),
            fails,
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Evaluator for Unreliable {
    fn evaluate(&self, p: &PipelineSpec) -> Result<EvalResult, EvalError> {
        let call = self.calls.fetch_add(1, Ordering::SeqCst);
        if (self.fails)(call) {
            return Err(EvalError::Transport("connection reset".into()));
        }
        self.inner.evaluate(p)
    }
}

/// An agent endpoint that never answers.
pub struct DeadEndpoint(pub AtomicUsize);

impl Transport for DeadEndpoint {
    fn post(&self, _payload: &Value) -> Result<Value, TransportError> {
        self.0.fetch_add(1, Ordering::SeqCst);
        Err(TransportError("connection refused".into()))
    }
}

/// Replays canned replies and records every request.
pub struct Recorder {
    replies: Mutex<VecDeque<Value>>,
    requests: Mutex<Vec<Value>>,
}

impl Recorder {
    pub fn new(replies: Vec<Value>) -> Self {
        Recorder {
            replies: Mutex::new(replies.into()),
            requests: Mutex::new(Vec::new()),
        }
    }

    pub fn requests(&self) -> Vec<Value> {
        self.requests.lock().unwrap().clone()
    }
}

impl Transport for Recorder {
    fn post(&self, payload: &Value) -> Result<Value, TransportError> {
        self.requests.lock().unwrap().push(payload.clone());
        self.replies
            .lock()
            .unwrap()
            .pop_front()
            .ok_or_else(|| TransportError("script exhausted".into()))
    }
}

/// Every string inside a message: the content itself and, when the
/// content is JSON, every string value within it.
fn strings(message: &Value) -> Vec<String> {
    fn walk(v: &Value, out: &mut Vec<String>) {
        match v {
            Value::String(s) => out.push(s.clone()),
            Value::Array(a) => a.iter().for_each(|x| walk(x, out)),
            Value::Object(o) => o.values().for_each(|x| walk(x, out)),
            _ => {}
        }
    }
    let content = message["content"].as_str().unwrap().to_string();
    let mut out = vec![content.clone()];
    if let Ok(parsed) = serde_json::from_str::<Value>(&content) {
        walk(&parsed, &mut out);
    }
    out
}

pub fn leaks_full_doc(request: &Value, registry: &[Directive]) -> bool {
    request["messages"].as_array().unwrap().iter().flat_map(strings).any(|s| {
        s.contains("Parameters (JSON object)") || registry.iter().any(|d| s.contains(d.guidance) || s.contains(&d.full_doc()))
    })
}

/// The opening user message of a request, parsed.
pub fn opening(request: &Value) -> Value {
    let m = &request["messages"][1];
    assert_eq!(m["role"], "user");
    serde_json::from_str(m["content"].as_str().unwrap()).unwrap()
}

pub fn last_user(request: &Value) -> String {
    let msgs = request["messages"].as_array().unwrap();
    let m = msgs.iter().rev().find(|m| m["role"] == "user").unwrap();
    m["content"].as_str().unwrap().to_string()
}
