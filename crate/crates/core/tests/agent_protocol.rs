mod common;

use std::sync::Mutex;

use common::mocks::{last_user, leaks_full_doc, opening, Recorder};
use pipeopt::directives::{Directive, Objective, ParamContext, Span, CLARIFY_INSTRUCTIONS};
use pipeopt::instantiation::{
    AgentContext, AgentInstantiator, ChooseRequest, InstantiateRequest, InstantiationError, Instantiator,
    StubInstantiator, Transport, TransportError, MAX_ATTEMPTS,
};
use pipeopt::ir::PipelineSpec;
use pipeopt::search::{Outcome, Phase, SearchConfig, Strategy};
use serde_json::{json, Value};

struct Fixture {
    pipeline: PipelineSpec,
    catalog: pipeopt::ir::ModelCatalog,
    registry: pipeopt::directives::Registry,
}

impl Fixture {
    fn new() -> Self {
        Fixture {
            pipeline: common::pipeline("police_misconduct"),
            catalog: common::catalog(),
            registry: common::registry(),
        }
    }

    fn candidates(&self) -> Vec<&Directive> {
        self.registry.iter().collect()
    }

    fn stub_params(&self, d: &Directive, span: Span) -> Vec<Value> {
        let all = self.candidates();
        let ctx = AgentContext::fresh(&self.pipeline, &all, Objective::ImproveAccuracy);
        let req = InstantiateRequest {
            directive: d,
            pipeline: &self.pipeline,
            span,
            objective: Objective::ImproveAccuracy,
            catalog: &self.catalog,
            context: &ctx,
        };
        StubInstantiator.instantiate(&req, &mut common::sample().cursor()).unwrap()
    }

    fn choose(&self, agent: &AgentInstantiator<Recorder>) -> Result<pipeopt::instantiation::Choice, InstantiationError> {
        let all = self.candidates();
        let ctx = AgentContext::fresh(&self.pipeline, &all, Objective::ReduceCost);
        agent.choose_directive(&ChooseRequest {
            pipeline: &self.pipeline,
            candidates: &all,
            context: &ctx,
            catalog: &self.catalog,
            seed: 0,
        })
    }

    fn instantiate(&self, agent: &AgentInstantiator<Recorder>, d: &Directive, span: Span) -> Result<Vec<Value>, InstantiationError> {
        let all = self.candidates();
        let ctx = AgentContext::fresh(&self.pipeline, &all, Objective::ImproveAccuracy);
        let req = InstantiateRequest {
            directive: d,
            pipeline: &self.pipeline,
            span,
            objective: Objective::ImproveAccuracy,
            catalog: &self.catalog,
            context: &ctx,
        };
        agent.instantiate(&req, &mut common::sample().cursor())
    }
}

#[test]
fn choose_stage_shows_briefs_only() {
    let f = Fixture::new();
    assert!(f.registry.iter().all(|d| !d.guidance.is_empty()));
    let agent = AgentInstantiator::new(Recorder::new(vec![
        json!({"action": "choose", "directive": CLARIFY_INSTRUCTIONS, "span": [0, 0]}),
    ]));
    let choice = f.choose(&agent).unwrap();
    assert_eq!(choice.directive, CLARIFY_INSTRUCTIONS);
    assert_eq!(choice.span, Span::single(0));
    let requests = agent.transport().requests();
    assert_eq!(requests.len(), 1);
    assert_eq!(requests[0]["stage"], "choose");
    assert!(!leaks_full_doc(&requests[0], f.registry.directives()));
    let briefs = &opening(&requests[0])["context"]["directive_briefs"];
    assert_eq!(briefs.as_array().unwrap().len(), f.registry.len());
    assert_eq!(briefs[0], f.registry.directives()[0].brief());
}

#[test]
fn choose_errors_are_echoed_and_retried() {
    let f = Fixture::new();
    let agent = AgentInstantiator::new(Recorder::new(vec![
        json!({"action": "choose", "directive": "no_such_directive", "span": [0, 0]}),
        json!("not an action"),
        json!({"action": "choose", "directive": CLARIFY_INSTRUCTIONS, "span": [0, 0]}),
    ]));
    assert!(f.choose(&agent).is_ok());
    let requests = agent.transport().requests();
    assert_eq!(requests.len(), 3);
    assert!(last_user(&requests[1]).contains("no_such_directive"));
    assert!(last_user(&requests[2]).starts_with("Error: malformed reply"));
    assert!(requests.iter().all(|r| !leaks_full_doc(r, f.registry.directives())));

    let agent = AgentInstantiator::new(Recorder::new(vec![
        json!({"action": "choose", "directive": CLARIFY_INSTRUCTIONS, "span": [7, 9]}); 3
    ]));
    match f.choose(&agent) {
        Err(InstantiationError::InstantiationFailed { attempts, last_error }) => {
            assert_eq!(attempts, MAX_ATTEMPTS);
            assert!(last_error.contains("does not match"));
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn instantiate_stage_shows_full_doc_and_echoes_validation_errors() {
    let f = Fixture::new();
    let d = f.registry.get(CLARIFY_INSTRUCTIONS).unwrap();
    let span = Span::single(0);
    let good = f.stub_params(d, span);
    let bad = json!({"unexpected": true});
    let mut one_bad = good.clone();
    one_bad[0] = bad.clone();
    let too_many = vec![good[0].clone(); good.len() + 1];
    let agent = AgentInstantiator::new(Recorder::new(vec![
        json!({"action": "read_next_doc"}),
        json!({"action": "submit", "params": one_bad}),
        json!({"action": "submit", "params": too_many}),
        json!({"action": "submit", "params": good}),
    ]));
    let params = f.instantiate(&agent, d, span).unwrap();
    assert_eq!(params, good);

    let requests = agent.transport().requests();
    assert_eq!(requests.len(), 4);
    for r in &requests {
        assert_eq!(r["stage"], "instantiate");
        assert_eq!(opening(r)["directive"], d.full_doc());
    }
    let tool = &requests[1]["messages"].as_array().unwrap().last().unwrap().clone();
    assert_eq!(tool["role"], "tool");
    let doc: Value = serde_json::from_str(tool["content"].as_str().unwrap()).unwrap();
    assert_eq!(doc["document"], common::sample().docs()[0]);

    let ctx = ParamContext::new(&f.pipeline, span, &f.catalog);
    let expected = d.check_params(&ctx, &bad).unwrap_err().to_string();
    let echo = last_user(&requests[2]);
    assert!(echo.starts_with("Error: params[0]: "), "{echo}");
    assert!(echo.contains(&expected), "{echo}\n{expected}");
    let count = format!("expected {} parameter object(s), got {}", good.len(), good.len() + 1);
    assert!(last_user(&requests[3]).contains(&count));
}

#[test]
fn three_invalid_submissions_fail_the_stage() {
    let f = Fixture::new();
    let d = f.registry.get(CLARIFY_INSTRUCTIONS).unwrap();
    let agent = AgentInstantiator::new(Recorder::new(vec![
        json!({"action": "submit", "params": [{}]}); 4
    ]));
    let err = f.instantiate(&agent, d, Span::single(0)).unwrap_err();
    assert!(matches!(err, InstantiationError::InstantiationFailed { attempts: 3, .. }), "{err}");
    assert_eq!(agent.transport().requests().len(), MAX_ATTEMPTS);
}

#[test]
fn transport_failure_is_an_endpoint_error() {
    let f = Fixture::new();
    let agent = AgentInstantiator::new(Recorder::new(vec![]));
    assert!(matches!(f.choose(&agent), Err(InstantiationError::EndpointError(_))));
}

/// An agent that answers like the stub, reading everything it needs from
/// the messages it receives.
struct EchoAgent {
    registry: pipeopt::directives::Registry,
    catalog: pipeopt::ir::ModelCatalog,
    requests: Mutex<Vec<Value>>,
}

impl Transport for EchoAgent {
    fn post(&self, payload: &Value) -> Result<Value, TransportError> {
        self.requests.lock().unwrap().push(payload.clone());
        let body = opening(payload);
        match payload["stage"].as_str().unwrap() {
            "choose" => {
                let ctx: AgentContext = serde_json::from_value(body["context"].clone()).unwrap();
                let p = PipelineSpec::from_yaml(&ctx.pipeline_yaml).unwrap();
                let offered: Vec<&Directive> = ctx
                    .directive_briefs
                    .iter()
                    .map(|b| self.registry.get(b["name"].as_str().unwrap()).unwrap())
                    .collect();
                let choice = StubInstantiator
                    .choose_directive(&ChooseRequest {
                        pipeline: &p,
                        candidates: &offered,
                        context: &ctx,
                        catalog: &self.catalog,
                        seed: 0,
                    })
                    .map_err(|e| TransportError(e.to_string()))?;
                Ok(json!({"action": "choose", "directive": choice.directive, "span": choice.span}))
            }
            _ => {
                let p = PipelineSpec::from_yaml(body["pipeline_yaml"].as_str().unwrap()).unwrap();
                let doc = body["directive"].as_str().unwrap();
                let d = self.registry.get(doc.split(':').next().unwrap()).unwrap();
                let task = body["task"].as_str().unwrap();
                let nums: Vec<usize> = task
                    .split_once("span [")
                    .unwrap()
                    .1
                    .split(']')
                    .next()
                    .unwrap()
                    .split(", ")
                    .map(|n| n.parse().unwrap())
                    .collect();
                let objective: Objective = serde_json::from_value(body["objective"].clone()).unwrap();
                let all: Vec<&Directive> = self.registry.iter().collect();
                let ctx = AgentContext::fresh(&p, &all, objective);
                let params = StubInstantiator
                    .instantiate(
                        &InstantiateRequest {
                            directive: d,
                            pipeline: &p,
                            span: Span::new(nums[0], nums[1]),
                            objective,
                            catalog: &self.catalog,
                            context: &ctx,
                        },
                        &mut common::sample().cursor(),
                    )
                    .map_err(|e| TransportError(e.to_string()))?;
                Ok(json!({"action": "submit", "params": params}))
            }
        }
    }
}

#[test]
fn full_run_through_the_adapter_keeps_stages_apart() {
    let catalog = common::catalog();
    let agent = AgentInstantiator::new(EchoAgent {
        registry: common::registry(),
        catalog: catalog.clone(),
        requests: Mutex::new(Vec::new()),
    });
    let out = common::search_with(
        &common::pipeline("police_misconduct"),
        &catalog,
        &common::landscape("default").evaluator(&catalog),
        &agent,
        &SearchConfig::new(24, 0).with_workers(1),
        Strategy::Moar,
    )
    .unwrap();
    assert!(out
        .records
        .iter()
        .any(|r| r.phase == Phase::Main && r.outcome == Outcome::Added));

    let registry = common::registry();
    let requests = agent.transport().requests.lock().unwrap().clone();
    let (mut choose, mut instantiate) = (0, 0);
    for r in &requests {
        match r["stage"].as_str().unwrap() {
            "choose" => {
                choose += 1;
                assert!(!leaks_full_doc(r, registry.directives()));
            }
            "instantiate" => {
                instantiate += 1;
                let doc = opening(r)["directive"].as_str().unwrap().to_string();
                assert!(registry.iter().any(|d| d.full_doc() == doc));
            }
            other => panic!("unknown stage {other}"),
        }
    }
    assert!(choose > 0 && instantiate > 0);
}
