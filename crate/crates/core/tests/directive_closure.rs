mod common;

use std::collections::BTreeMap;

use pipeopt::directives::{Directive, DirectiveError, Objective, ParamContext, RewriteRecord, MAP_FILTER_FUSION};
use pipeopt::instantiation::{AgentContext, InstantiateRequest, Instantiator, StubInstantiator};
use pipeopt::ir::{validate_pipeline, ModelCatalog, PipelineSpec};

struct Outcome {
    applied: usize,
    rejected: usize,
    results: Vec<PipelineSpec>,
}

fn stub_params(d: &Directive, p: &PipelineSpec, span: pipeopt::directives::Span, objective: Objective, catalog: &ModelCatalog) -> Vec<serde_json::Value> {
    let ctx = AgentContext::fresh(p, &[d], objective);
    let req = InstantiateRequest {
        directive: d,
        pipeline: p,
        span,
        objective,
        catalog,
        context: &ctx,
    };
    let docs = common::sample();
    StubInstantiator.instantiate(&req, &mut docs.cursor()).unwrap()
}

fn exercise(d: &Directive, p: &PipelineSpec, catalog: &ModelCatalog, out: &mut Outcome) {
    for span in d.match_sites(p) {
        for objective in [Objective::ReduceCost, Objective::ImproveAccuracy] {
            let params = stub_params(d, p, span, objective, catalog);
            assert_eq!(params.len(), d.candidate_count, "{} candidate count", d.name);
            let ctx = ParamContext::new(p, span, catalog);
            for prm in params {
                if let Err(e) = d.check_params(&ctx, &prm) {
                    panic!("{} on {} at {:?}: stub params invalid: {e}\n{prm:#}", d.name, p.name, span);
                }
                let record = RewriteRecord {
                    directive: d.name.to_string(),
                    span,
                    params: prm.clone(),
                    objective: Some(objective),
                };
                match d.apply(p, &record, catalog) {
                    Ok(q) => {
                        let report = validate_pipeline(&q);
                        assert!(report.is_ok(), "{} on {}: silently invalid: {report}", d.name, p.name);
                        out.applied += 1;
                        out.results.push(q);
                    }
                    Err(DirectiveError::RewriteProducesInvalidPipeline { .. }) => out.rejected += 1,
                    Err(e) => panic!("{} on {} at {:?}: unexpected error {e}\n{prm:#}", d.name, p.name, span),
                }
            }
        }
    }
}

#[test]
fn every_directive_yields_valid_pipelines_on_seed_and_derived_pipelines() {
    let registry = common::registry();
    let catalog = common::catalog();
    let seeds = common::seeds();
    let mut per_directive: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    let mut derived = Vec::new();
    for d in registry.iter() {
        let mut out = Outcome {
            applied: 0,
            rejected: 0,
            results: Vec::new(),
        };
        for p in &seeds {
            exercise(d, p, &catalog, &mut out);
        }
        derived.append(&mut out.results);
        per_directive.insert(d.name, (out.applied, out.rejected));
    }
    for d in registry.iter() {
        let mut out = Outcome {
            applied: 0,
            rejected: 0,
            results: Vec::new(),
        };
        for p in &derived {
            exercise(d, p, &catalog, &mut out);
        }
        let e = per_directive.get_mut(d.name).unwrap();
        e.0 += out.applied;
        e.1 += out.rejected;
    }
    for (name, (applied, rejected)) in &per_directive {
        assert!(*applied > 0, "{name} never applied ({rejected} rejections)");
    }
}

#[test]
fn map_filter_fusion_removes_one_llm_pass() {
    let registry = common::registry();
    let catalog = common::catalog();
    let p = common::pipeline("police_misconduct");
    let d = registry.get(MAP_FILTER_FUSION).unwrap();
    let span = d.match_sites(&p)[0];
    let params = stub_params(d, &p, span, Objective::ReduceCost, &catalog);
    let record = RewriteRecord {
        directive: d.name.into(),
        span,
        params: params[0].clone(),
        objective: Some(Objective::ReduceCost),
    };
    let q = d.apply(&p, &record, &catalog).unwrap();
    assert_eq!(p.llm_call_sites(), 2);
    assert_eq!(q.llm_call_sites(), 1);
}
