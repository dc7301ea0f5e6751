use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use pipeopt::directives::Registry;
use pipeopt::eval::Landscape;
use pipeopt::harness::{self, RunSpec};
use pipeopt::instantiation::{AgentInstantiator, HttpTransport, Instantiator, SampleDocs, AGENT_ENDPOINT_VAR};
use pipeopt::ir::{validate_pipeline, ModelCatalog, PipelineSpec};
use pipeopt::search::trace::{parse_jsonl, to_jsonl};
use pipeopt::search::{frontier_json, Search, SearchConfig, SearchError, SearchOutcome, Strategy};

const EXIT_VALIDATION: u8 = 2;
const EXIT_INFRA: u8 = 3;

#[derive(Parser)]
#[command(name = "pipeopt", version, about = "Cost/accuracy rewrite search for LLM document pipelines")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Search for cost/accuracy trade-offs of a pipeline.
    Optimize {
        #[arg(long)]
        pipeline: PathBuf,
        #[arg(long)]
        models: PathBuf,
        #[arg(long, default_value_t = 40)]
        budget: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 3)]
        workers: usize,
        /// Landscape file, or the name of a built-in landscape.
        #[arg(long, default_value = "default")]
        landscape: String,
        /// Agent endpoint; falls back to $AGENT_ENDPOINT, then to the offline stub.
        #[arg(long)]
        agent_endpoint: Option<String>,
        /// Optimization sample as JSON lines or a JSON array.
        #[arg(long)]
        sample: Option<PathBuf>,
        #[arg(long, default_value = "moar")]
        strategy: Strategy,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recompute and print the frontier recorded in a trace.
    Frontier {
        #[arg(long)]
        trace: PathBuf,
    },
    /// Re-run a single-worker trace and check it reproduces exactly.
    Replay {
        #[arg(long)]
        trace: PathBuf,
    },
    /// Compare strategies over several seeds.
    Bench {
        #[arg(long)]
        pipeline: PathBuf,
        #[arg(long)]
        models: PathBuf,
        #[arg(long, default_value = "adversarial")]
        landscape: String,
        #[arg(long, default_value_t = 40)]
        budget: usize,
        #[arg(long, value_delimiter = ',', default_value = "moar,greedy,random")]
        strategies: Vec<Strategy>,
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        #[arg(long)]
        sample: Option<PathBuf>,
    },
    /// Directive catalog operations.
    Registry {
        #[command(subcommand)]
        action: RegistryAction,
    },
}

#[derive(Subcommand)]
enum RegistryAction {
    /// Print every directive as JSON.
    Dump,
}

/// An error with the exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

fn invalid(error: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: EXIT_VALIDATION,
        error: error.into(),
    }
}

fn infra(error: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: EXIT_INFRA,
        error: error.into(),
    }
}

fn search_failure(e: SearchError) -> Failure {
    match e {
        SearchError::InvalidConfig(_) | SearchError::InvalidPipeline(_) => invalid(e),
        SearchError::BudgetExhausted { .. } | SearchError::Evaluation(_) => infra(e),
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))
        .map_err(invalid)
}

fn load_pipeline(path: &Path) -> Result<PipelineSpec, Failure> {
    let p = PipelineSpec::from_yaml(&read(path)?)
        .with_context(|| format!("in {}", path.display()))
        .map_err(invalid)?;
    let report = validate_pipeline(&p);
    if !report.is_ok() {
        return Err(invalid(anyhow::anyhow!("{} is invalid:\n{report}", path.display())));
    }
    Ok(p)
}

fn load_models(path: &Path) -> Result<ModelCatalog, Failure> {
    ModelCatalog::from_yaml(&read(path)?)
        .with_context(|| format!("in {}", path.display()))
        .map_err(invalid)
}

fn load_landscape(arg: &str) -> Result<Landscape, Failure> {
    if let Some(l) = Landscape::builtin(arg) {
        return Ok(l);
    }
    Landscape::from_path(Path::new(arg))
        .with_context(|| format!("landscape `{arg}` is neither built in nor a readable file"))
        .map_err(invalid)
}

fn load_sample(path: Option<&Path>) -> Result<SampleDocs, Failure> {
    match path {
        Some(p) => SampleDocs::from_path(p)
            .with_context(|| format!("in {}", p.display()))
            .map_err(invalid),
        None => Ok(SampleDocs::default()),
    }
}

fn write_outputs(out: &Path, outcome: &SearchOutcome, trace: &str) -> Result<(), Failure> {
    fs::create_dir_all(out)
        .with_context(|| format!("cannot create {}", out.display()))
        .map_err(infra)?;
    let frontier = frontier_json(outcome);
    let json_text = serde_json::to_string_pretty(&frontier).expect("frontier serializes");
    fs::write(out.join("frontier.json"), json_text).map_err(infra)?;
    let mut csv = csv::Writer::from_path(out.join("frontier.csv")).map_err(infra)?;
    csv.write_record(["node", "cost", "accuracy", "pipeline_key", "path"]).map_err(infra)?;
    for n in outcome.frontier() {
        let path: Vec<&str> = n.path.iter().map(|r| r.directive.as_str()).collect();
        csv.write_record([
            n.id.to_string(),
            n.eval.cost().to_string(),
            n.eval.accuracy.to_string(),
            n.eval.pipeline_key.clone(),
            path.join(" > "),
        ])
        .map_err(infra)?;
    }
    csv.flush().map_err(infra)?;
    fs::write(out.join("trace.jsonl"), trace).map_err(infra)?;
    Ok(())
}

fn print_frontier(outcome: &SearchOutcome) {
    println!("{:>5}  {:>12}  {:>8}  path", "node", "cost", "accuracy");
    for n in outcome.frontier() {
        let path: Vec<&str> = n.path.iter().map(|r| r.directive.as_str()).collect();
        println!("{:>5}  {:>12.6}  {:>8.4}  {}", n.id, n.eval.cost(), n.eval.accuracy, path.join(" > "));
    }
}

#[allow(clippy::too_many_arguments)]
fn optimize(
    pipeline: &Path,
    models: &Path,
    config: SearchConfig,
    landscape: &str,
    agent_endpoint: Option<String>,
    sample: Option<&Path>,
    strategy: Strategy,
    out: &Path,
) -> Result<(), Failure> {
    let p = load_pipeline(pipeline)?;
    let catalog = load_models(models)?;
    let landscape = load_landscape(landscape)?;
    let docs = load_sample(sample)?;
    let endpoint = agent_endpoint.or_else(|| std::env::var(AGENT_ENDPOINT_VAR).ok().filter(|e| !e.trim().is_empty()));
    let (outcome, trace) = match endpoint {
        None => {
            let spec = RunSpec {
                pipeline: p,
                catalog,
                landscape,
                sample: docs.docs().to_vec(),
                config,
                strategy,
            };
            let outcome = spec.run().map_err(search_failure)?;
            let trace = spec.trace(&outcome);
            (outcome, trace)
        }
        Some(url) => {
            log::info!("using agent at {url}");
            let agent = AgentInstantiator::new(HttpTransport::new(url));
            let registry = Registry::standard();
            let evaluator = landscape.evaluator(&catalog);
            let instantiator: &dyn Instantiator = &agent;
            let outcome = Search {
                registry: &registry,
                catalog: &catalog,
                evaluator: &evaluator,
                instantiator,
                sample: &docs,
            }
            .run(&p, &config, strategy)
            .map_err(search_failure)?;
            let header = harness::live_header(&p, &catalog, &docs, &config, strategy);
            let trace = to_jsonl(&header, &outcome.records);
            (outcome, trace)
        }
    };
    write_outputs(out, &outcome, &trace)?;
    print_frontier(&outcome);
    eprintln!(
        "{} evaluations, {} nodes, stopped: {:?}; results in {}",
        outcome.budget_used,
        outcome.tree.len(),
        outcome.stop,
        out.display()
    );
    Ok(())
}

fn frontier(trace: &Path) -> Result<(), Failure> {
    let (_, records) = parse_jsonl(&read(trace)?).map_err(invalid)?;
    println!("{:>12}  {:>8}  node", "cost", "accuracy");
    for p in harness::frontier_from_records(&records) {
        println!("{:>12.6}  {:>8.4}  {}", p.cost(), p.accuracy, p.pipeline_key);
    }
    Ok(())
}

fn replay(trace: &Path) -> Result<(), Failure> {
    let report = harness::replay(&read(trace)?).map_err(|e| match e {
        harness::HarnessError::Search(_) => infra(e),
        _ => invalid(e),
    })?;
    if report.identical() {
        println!("replay identical: {} records", report.records);
        Ok(())
    } else {
        Err(infra(anyhow::anyhow!(
            "replay diverged at record {} ({} recorded, {} replayed)",
            report.first_mismatch.unwrap_or(report.recorded_len.min(report.replayed_len)),
            report.recorded_len,
            report.replayed_len
        )))
    }
}

#[allow(clippy::too_many_arguments)]
fn bench(
    pipeline: &Path,
    models: &Path,
    landscape: &str,
    budget: usize,
    strategies: &[Strategy],
    seeds: u64,
    sample: Option<&Path>,
) -> Result<(), Failure> {
    let spec = RunSpec {
        pipeline: load_pipeline(pipeline)?,
        catalog: load_models(models)?,
        landscape: load_landscape(landscape)?,
        sample: load_sample(sample)?.docs().to_vec(),
        config: SearchConfig::new(budget, 0).with_workers(1),
        strategy: Strategy::Moar,
    };
    let seed_list: Vec<u64> = (0..seeds).collect();
    let rows = harness::bench(&spec, strategies, &seed_list).map_err(search_failure)?;
    println!("{:<8}  {:>6}  {:>8}  {:>8}  {:>8}", "strategy", "runs", "mean", "min", "max");
    for &s in strategies {
        let acc: Vec<f64> = rows.iter().filter(|r| r.strategy == s).map(|r| r.best_accuracy).collect();
        let mean = acc.iter().sum::<f64>() / acc.len().max(1) as f64;
        let min = acc.iter().copied().fold(f64::INFINITY, f64::min);
        let max = acc.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        println!("{:<8}  {:>6}  {mean:>8.4}  {min:>8.4}  {max:>8.4}", s.to_string(), acc.len());
    }
    if strategies.contains(&Strategy::Moar) {
        for &other in strategies.iter().filter(|&&s| s != Strategy::Moar) {
            let (mut wins, mut ties, mut losses) = (0, 0, 0);
            for &seed in &seed_list {
                let best = |s: Strategy| {
                    rows.iter()
                        .find(|r| r.strategy == s && r.seed == seed)
                        .map_or(0.0, |r| r.best_accuracy)
                };
                let (m, o) = (best(Strategy::Moar), best(other));
                if m > o {
                    wins += 1;
                } else if m < o {
                    losses += 1;
                } else {
                    ties += 1;
                }
            }
            println!(
                "moar vs {other}: {wins} wins, {ties} ties, {losses} losses, sign test p = {:.4}",
                harness::sign_test_p(wins, losses)
            );
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Optimize {
            pipeline,
            models,
            budget,
            seed,
            workers,
            landscape,
            agent_endpoint,
            sample,
            strategy,
            out,
        } => optimize(
            &pipeline,
            &models,
            SearchConfig::new(budget, seed).with_workers(workers),
            &landscape,
            agent_endpoint,
            sample.as_deref(),
            strategy,
            &out,
        ),
        Command::Frontier { trace } => frontier(&trace),
        Command::Replay { trace } => replay(&trace),
        Command::Bench {
            pipeline,
            models,
            landscape,
            budget,
            strategies,
            seeds,
            sample,
        } => bench(&pipeline, &models, &landscape, budget, &strategies, seeds, sample.as_deref()),
        Command::Registry {
            action: RegistryAction::Dump,
        } => {
            let dump = Registry::standard().dump();
            println!("{}", serde_json::to_string_pretty(&dump).expect("registry serializes"));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
