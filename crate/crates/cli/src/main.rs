//! `hyperplan` command-line front end.

mod eval;

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use tracing::info;

use hyperplan_core::anchoring::{anchor_question, build_question_subgraph};
use hyperplan_core::chunks::DirChunks;
use hyperplan_core::config::{BackendSpec, Preset};
use hyperplan_core::construction::{augment, ingest_facts};
use hyperplan_core::graph::{load_graph, save_graph};
use hyperplan_core::pipeline::{write_jsonl, RunLayout};
use hyperplan_core::{
    EdgeKind, Engine, Error, IndexSet, KnowledgeHypergraph, QueryResult, RunConfig, SearchStrategy,
};

#[derive(Parser, Debug)]
#[command(
    name = "hyperplan",
    version,
    about = "Plan-guided multi-hop QA over knowledge hypergraphs"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Run directory holding graph.bin, indexes/, manifest.json and reports.
    #[arg(long, global = true, default_value = "run")]
    run_dir: PathBuf,
    /// Graph file; defaults to <run-dir>/graph.bin.
    #[arg(long, global = true)]
    graph: Option<PathBuf>,
    /// JSON config file; flags below override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// full (alias proh) or lite (alias proh-lite).
    #[arg(long, global = true)]
    preset: Option<Preset>,
    /// Shorthand for `--preset lite`.
    #[arg(long, global = true)]
    lite: bool,
    /// Mock oracle fixture file; selects the mock backend.
    #[arg(long, global = true)]
    mock_fixtures: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    strategy: Option<SearchStrategy>,
    /// Completed DAGs to collect (K).
    #[arg(long, global = true)]
    k: Option<usize>,
    /// Initial plans (n0).
    #[arg(long, global = true)]
    n0: Option<usize>,
    /// Beam width (b).
    #[arg(long, global = true)]
    beam: Option<usize>,
    /// Retrieval depth limit.
    #[arg(long, global = true)]
    d_max: Option<usize>,
    #[arg(long, global = true)]
    plan_depth: Option<usize>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// -v for info, -vv for debug logs on stderr.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Ingest JSONL fact records into a graph.
    Build {
        #[arg(long)]
        facts: PathBuf,
        /// Output graph; defaults to <run-dir>/graph.bin.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Directory of <chunk_id>.txt source chunks copied into the run.
        #[arg(long)]
        chunks: Option<PathBuf>,
    },
    /// Add synonym hyperedges confirmed by the judge.
    Augment {
        #[arg(long)]
        tau: Option<f64>,
        /// Output graph; defaults to overwriting the input.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build the embedding indexes for the graph.
    Index,
    /// Show how a question anchors in the graph.
    Anchor {
        #[arg(long)]
        question: String,
    },
    /// Answer one question.
    Query {
        #[arg(long)]
        question: String,
    },
    /// Answer and score a JSONL QA file; reruns skip finished ids.
    Eval {
        #[arg(long)]
        qa: PathBuf,
    },
    /// Graph and run statistics.
    Stats,
}

impl Global {
    fn layout(&self) -> RunLayout {
        RunLayout::new(&self.run_dir)
    }

    fn graph_path(&self) -> PathBuf {
        self.graph.clone().unwrap_or_else(|| self.layout().graph())
    }

    fn effective_config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::from_path(p)?,
            None => RunConfig::default(),
        };
        if let Some(p) = self.preset {
            cfg.apply_preset(p);
        }
        if self.lite {
            cfg.apply_preset(Preset::Lite);
        }
        if let Some(f) = &self.mock_fixtures {
            cfg.backend = BackendSpec::Mock {
                fixtures: Some(f.clone()),
            };
        }
        macro_rules! set {
            ($($flag:ident => $($field:ident).+),* $(,)?) => {
                $(if let Some(v) = self.$flag { cfg.$($field).+ = v; })*
            };
        }
        set!(
            seed => seed,
            strategy => strategy,
            k => k,
            n0 => n0,
            beam => retrieval.beam,
            d_max => retrieval.d_max,
            plan_depth => plan_depth,
            workers => workers,
        );
        cfg.validate()?;
        eprintln!("effective config: {}", serde_json::to_string(&cfg)?);
        Ok(cfg)
    }

    fn engine(&self, cfg: RunConfig) -> Result<Engine> {
        let layout = self.layout();
        let graph = load_graph(&self.graph_path())?;
        let indexes = IndexSet::load(&layout.indexes())?;
        let gateway = cfg.gateway()?;
        Ok(Engine::new(
            graph,
            indexes,
            gateway,
            Box::new(DirChunks::new(layout.chunks())),
            cfg,
        )?)
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

#[derive(Serialize)]
struct GraphSummary {
    entities: usize,
    hyperedges: usize,
    synonym_edges: usize,
    max_arity: usize,
    mean_arity: f64,
    isolated_entities: usize,
    content_hash: String,
}

fn summarize(g: &KnowledgeHypergraph) -> GraphSummary {
    let arities: Vec<usize> = g.hyperedges().map(|e| e.entities.len()).collect();
    GraphSummary {
        entities: g.entity_count(),
        hyperedges: g.edge_count(),
        synonym_edges: g
            .hyperedges()
            .filter(|e| e.kind == EdgeKind::Synonym)
            .count(),
        max_arity: arities.iter().copied().max().unwrap_or(0),
        mean_arity: if arities.is_empty() {
            0.0
        } else {
            arities.iter().sum::<usize>() as f64 / arities.len() as f64
        },
        isolated_entities: g
            .entity_ids()
            .filter(|v| g.incident_edges(*v).map(|s| s.is_empty()).unwrap_or(true))
            .count(),
        content_hash: g.content_hash(),
    }
}

fn copy_chunks(from: &Path, to: &Path) -> Result<usize> {
    fs::create_dir_all(to)?;
    let mut copied = 0;
    for entry in
        fs::read_dir(from).with_context(|| format!("reading chunks from {}", from.display()))?
    {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "txt") {
            fs::copy(&path, to.join(path.file_name().expect("file has a name")))?;
            copied += 1;
        }
    }
    Ok(copied)
}

/// Compact view of a query result for the terminal.
#[derive(Serialize)]
struct QueryView<'a> {
    answer: &'a str,
    no_evidence: bool,
    relaxed_anchoring: bool,
    d_avg: Option<f64>,
    dags: Vec<DagView>,
}

#[derive(Serialize)]
struct DagView {
    digest: String,
    edges: Vec<(usize, usize)>,
    levels: Vec<Vec<usize>>,
    steps: Vec<StepView>,
}

#[derive(Serialize)]
struct StepView {
    id: usize,
    question: String,
    answer: String,
    path: Vec<String>,
}

fn view<'a>(engine: &Engine, r: &'a QueryResult) -> QueryView<'a> {
    let dags = r
        .completed
        .iter()
        .map(|dag| DagView {
            digest: dag.digest(),
            edges: dag.edges(),
            levels: dag.levels.clone(),
            steps: dag
                .plan
                .subquestions
                .iter()
                .map(|s| {
                    let pair = dag.ap.get(&s.id).and_then(|v| v.first());
                    StepView {
                        id: s.id,
                        question: s.text.clone(),
                        answer: pair.map(|p| p.answer.clone()).unwrap_or_default(),
                        path: pair
                            .map(|p| {
                                p.path
                                    .edges()
                                    .iter()
                                    .map(|e| {
                                        engine
                                            .graph
                                            .edge(*e)
                                            .map(|x| x.name.clone())
                                            .unwrap_or_default()
                                    })
                                    .collect()
                            })
                            .unwrap_or_default(),
                    }
                })
                .collect(),
        })
        .collect();
    QueryView {
        answer: &r.answer,
        no_evidence: r.no_evidence,
        relaxed_anchoring: r.relaxed_anchoring,
        d_avg: r.d_avg,
        dags,
    }
}

#[derive(Serialize)]
struct TraceLine<'a, T: Serialize> {
    question: &'a str,
    #[serde(flatten)]
    record: &'a T,
}

fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    let layout = g.layout();
    match &cli.command {
        Command::Build { facts, out, chunks } => {
            let file = fs::File::open(facts)
                .map_err(Error::from)
                .with_context(|| format!("opening {}", facts.display()))?;
            let graph = ingest_facts(BufReader::new(file))?;
            let out = out.clone().unwrap_or_else(|| g.graph_path());
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            save_graph(&graph, &out)?;
            if let Some(dir) = chunks {
                let n = copy_chunks(dir, &layout.chunks())?;
                info!(chunks = n, "copied source chunks");
            }
            print_json(&summarize(&graph))
        }
        Command::Augment { tau, out } => {
            let mut cfg = g.effective_config()?;
            if let Some(t) = tau {
                cfg.tau = *t;
                cfg.validate()?;
            }
            let path = g.graph_path();
            let graph = load_graph(&path)?;
            let gateway = cfg.gateway()?;
            let outcome = augment(&graph, &gateway, cfg.tau, cfg.judge_batch)?;
            save_graph(&outcome.graph, out.as_ref().unwrap_or(&path))?;
            eprintln!("indexes are now stale; rerun `hyperplan index`");
            print_json(&serde_json::json!({
                "added": outcome.added.len(),
                "skipped_batches": outcome.skipped_batches,
                "graph": summarize(&outcome.graph),
            }))
        }
        Command::Index => {
            let cfg = g.effective_config()?;
            let graph = load_graph(&g.graph_path())?;
            let gateway = cfg.gateway()?;
            let indexes = IndexSet::build(&graph, &gateway)?;
            fs::create_dir_all(layout.indexes())?;
            indexes.save(&layout.indexes())?;
            print_json(&serde_json::json!({
                "entities": indexes.entity_name.len(),
                "hyperedges": indexes.hyperedge_name.len(),
                "dim": indexes.entity_name.dim(),
            }))
        }
        Command::Anchor { question } => {
            let cfg = g.effective_config()?;
            let engine = g.engine(cfg)?;
            let anchoring = anchor_question(
                &engine.gateway,
                &engine.indexes,
                question,
                &engine.config.anchor,
            )?;
            let hq = build_question_subgraph(
                &engine.graph,
                &anchoring.anchors,
                engine.config.anchor.d_max,
            )?;
            print_json(&serde_json::json!({
                "anchors": anchoring.anchors,
                "relaxed": anchoring.relaxed,
                "no_evidence": anchoring.no_evidence,
                "subgraph": {
                    "entities": hq.graph.entity_count(),
                    "hyperedges": hq.graph.edge_count(),
                    "merged_entities": hq.merge_map.len(),
                },
            }))
        }
        Command::Query { question } => {
            let cfg = g.effective_config()?;
            let engine = g.engine(cfg)?;
            let started = Instant::now();
            let result = engine.query(question)?;
            let manifest = engine.manifest(&[&result], Some(started.elapsed()));
            fs::create_dir_all(&layout.root)?;
            write_json(&layout.manifest(), &manifest)?;
            write_jsonl(
                &layout.trace(),
                result
                    .trace
                    .iter()
                    .map(|record| TraceLine { question, record }),
            )?;
            print_json(&view(&engine, &result))
        }
        Command::Eval { qa } => {
            let cfg = g.effective_config()?;
            let engine = g.engine(cfg)?;
            let report = eval::run_eval(&engine, qa, &layout)?;
            print_json(&report.aggregate)
        }
        Command::Stats => {
            let graph = load_graph(&g.graph_path())?;
            let indexes = IndexSet::load(&layout.indexes()).ok();
            let manifest: Option<serde_json::Value> = fs::read_to_string(layout.manifest())
                .ok()
                .and_then(|t| serde_json::from_str(&t).ok());
            print_json(&serde_json::json!({
                "graph": summarize(&graph),
                "indexes": indexes.map(|i| if i.matches(&graph) { "fresh" } else { "stale" }).unwrap_or("missing"),
                "last_run": manifest.map(|m| serde_json::json!({
                    "questions": m["questions"],
                    "no_evidence": m["no_evidence"],
                    "stats": m["stats"],
                    "d_avg": m["d_avg"],
                    "lite_mode": m["lite_mode"],
                })),
            }))
        }
    }
}

/// 1 usage or config, 2 data, 3 oracle backend.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<Error>()) {
        Some(Error::Config(_)) => 1,
        Some(
            Error::BackendUnreachable(_)
            | Error::Backend(_)
            | Error::OracleItem { .. }
            | Error::SchemaViolation { .. },
        ) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(level));
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .init();

    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_classes_map_to_exit_codes() {
        let code = |e: Error| exit_code(&anyhow::Error::new(e).context("while running"));
        assert_eq!(code(Error::Config("bad".into())), 1);
        assert_eq!(
            code(Error::MalformedRecord {
                line: 3,
                reason: "x".into()
            }),
            2
        );
        assert_eq!(
            code(Error::MissingArtifact {
                path: "g".into(),
                hint: "build".into()
            }),
            2
        );
        assert_eq!(code(Error::BackendUnreachable("down".into())), 3);
        assert_eq!(code(Error::Backend("500".into())), 3);
        assert_eq!(exit_code(&anyhow::anyhow!("csv failure")), 2);
    }
}
