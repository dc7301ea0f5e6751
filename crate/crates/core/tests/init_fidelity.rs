mod common;

use std::collections::{BTreeMap, BTreeSet};

use common::audit;
use pipeopt::ir::ModelCatalog;
use pipeopt::search::{sweep_models, Outcome, Phase, SearchConfig, SearchTree, Strategy};

fn per_family(catalog: &ModelCatalog, models: &[String]) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for m in models {
        let family = catalog.models.iter().find(|c| &c.model_id == m).unwrap().family.clone();
        *out.entry(family).or_default() += 1;
    }
    out
}

#[test]
fn large_catalog_sweeps_twelve_models_at_most_three_per_family() {
    let catalog = common::large_catalog();
    assert_eq!(catalog.len(), 14);
    let landscape = common::landscape("default");
    for seed in 0..8 {
        let p = common::pipeline(common::SEED_PIPELINES[seed as usize % common::SEED_PIPELINES.len()]);
        let config = SearchConfig::new(40, seed).with_workers(1);
        let (out, _) = common::search(&p, &catalog, &landscape.reseeded(seed), &config, Strategy::Moar);
        audit::init(&out, &catalog, config.model_cap).unwrap();
        audit::visits(&out).unwrap();
    }
}

#[test]
fn small_catalog_sweeps_every_model() {
    let catalog = common::catalog();
    let landscape = common::landscape("default");
    for (i, name) in common::SEED_PIPELINES.iter().enumerate() {
        let config = SearchConfig::new(40, i as u64).with_workers(1);
        let (out, _) = common::search(&common::pipeline(name), &catalog, &landscape, &config, Strategy::Moar);
        audit::init(&out, &catalog, config.model_cap).unwrap();
    }
}

#[test]
fn sweep_subsample_depends_on_seed_but_respects_limits() {
    let catalog = common::large_catalog();
    let mut distinct = BTreeSet::new();
    for seed in 0..30 {
        let models = sweep_models(&catalog, &SearchConfig::new(40, seed));
        assert_eq!(models.len(), 12);
        assert!(per_family(&catalog, &models).values().all(|&n| n <= 3));
        assert_eq!(models, sweep_models(&catalog, &SearchConfig::new(40, seed)));
        distinct.insert(models);
    }
    assert!(distinct.len() > 1);

    let mut tight = SearchConfig::new(40, 0);
    tight.model_cap = 5;
    tight.per_family = 1;
    let models = sweep_models(&catalog, &tight);
    assert_eq!(models.len(), 5);
    assert!(per_family(&catalog, &models).values().all(|&n| n == 1));
}

#[test]
fn root_shares_the_matching_variant_evaluation() {
    let catalog = common::catalog();
    let p = common::pipeline("police_misconduct");
    let (out, calls) = common::search(
        &p,
        &catalog,
        &common::landscape("default"),
        &SearchConfig::new(40, 0).with_workers(1),
        Strategy::Moar,
    );
    let root = out.tree.node(SearchTree::ROOT);
    assert!(!root.counted);
    let twin = out
        .tree
        .nodes()
        .iter()
        .skip(1)
        .find(|n| n.eval.pipeline_key == root.eval.pipeline_key)
        .unwrap();
    assert_eq!(twin.eval, root.eval);
    assert!(out.records.iter().all(|r| r.child != Some(SearchTree::ROOT)));
    assert!(calls <= 40);
    // |V| after initialization is |M| + 2|F|
    let init = out.records.iter().filter(|r| r.phase != Phase::Main && r.outcome == Outcome::Added).count();
    let seeds = out.records.iter().filter(|r| r.phase == Phase::Seed).count();
    assert_eq!(init, catalog.len() + seeds);
}

#[test]
fn non_frontier_variants_are_never_selected_by_any_strategy() {
    let catalog = common::large_catalog();
    for strategy in Strategy::ALL {
        for seed in 0..4 {
            let p = common::pipeline("case_summary");
            let config = SearchConfig::new(40, seed).with_workers(1);
            let (out, _) = common::search(&p, &catalog, &common::landscape("default"), &config, strategy);
            assert!(out.tree.nodes().iter().any(|n| n.disabled), "{strategy} seed {seed}");
            audit::disabled(&out).unwrap();
        }
    }
}
