//! End-to-end question answering: anchor, plan, search, generate.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use tracing::{info, warn};

use crate::anchoring::{anchor_question, build_question_subgraph, AnchorSet, QuestionSubgraph};
use crate::chunks::ChunkStore;
use crate::config::RunConfig;
use crate::embed::IndexSet;
use crate::error::{Error, Result};
use crate::eval::{f1_score, generation_eval, retrieval_similarity, EvalResult, EvalRow, QaRecord};
use crate::generation::{generate_final_answer, CandidateAnswer};
use crate::graph::KnowledgeHypergraph;
use crate::oracle::{CallSite, OracleGateway, UsageTotals};
use crate::planning::{build_plan_context_graph, form_plan_context, propose_initial_plans};
use crate::planning::{build_reasoning_dag, ReasoningDag, ReasoningPlan};
use crate::reasoning::{reason, refine_dag, SearchStats, StepResolver, TraceRecord};
use crate::retrieval::{retrieve_answers_with_paths, AnswerPathPair, RetrievalEnv};

/// Standard file layout of a run directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunLayout {
    pub root: PathBuf,
}

impl RunLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn graph(&self) -> PathBuf {
        self.root.join("graph.bin")
    }

    pub fn indexes(&self) -> PathBuf {
        self.root.join("indexes")
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn report_json(&self) -> PathBuf {
        self.root.join("report.json")
    }

    pub fn report_csv(&self) -> PathBuf {
        self.root.join("report.csv")
    }

    pub fn trace(&self) -> PathBuf {
        self.root.join("trace.jsonl")
    }

    pub fn chunks(&self) -> PathBuf {
        self.root.join("chunks")
    }
}

/// Answer, plans, completed DAGs and statistics for one question.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryResult {
    pub question: String,
    pub answer: String,
    pub no_evidence: bool,
    pub candidates: Vec<CandidateAnswer>,
    pub anchors: AnchorSet,
    pub relaxed_anchoring: bool,
    pub plans: Vec<ReasoningPlan>,
    pub completed: Vec<ReasoningDag>,
    pub stats: SearchStats,
    /// Mean depth at which subquestion retrieval stopped.
    pub d_avg: Option<f64>,
    pub trace: Vec<TraceRecord>,
}

impl QueryResult {
    fn without_evidence(question: &str, answer: String, anchors: AnchorSet, relaxed: bool) -> Self {
        Self {
            question: question.to_string(),
            answer,
            no_evidence: true,
            candidates: Vec::new(),
            anchors,
            relaxed_anchoring: relaxed,
            plans: Vec::new(),
            completed: Vec::new(),
            stats: SearchStats::default(),
            d_avg: None,
            trace: Vec::new(),
        }
    }

    /// The DAG the winning answer came from.
    pub fn best_dag(&self) -> Option<&ReasoningDag> {
        let digest = &self.candidates.first()?.source_dag_digest;
        self.completed.iter().find(|d| &d.digest() == digest)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub wall_ms: u64,
}

/// Everything needed to reproduce and audit a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: RunConfig,
    pub config_hash: String,
    pub graph_hash: String,
    pub backend: String,
    pub lite_mode: bool,
    pub questions: usize,
    pub no_evidence: usize,
    pub usage: BTreeMap<String, UsageTotals>,
    pub calls_by_kind: BTreeMap<String, u64>,
    /// Summed over questions; peaks are maxima.
    pub stats: SearchStats,
    pub d_avg: Option<f64>,
    /// Left out in deterministic mode so manifests compare byte for byte.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timing: Option<Timing>,
}

/// Merges per-question statistics: visits add up, peaks take the maximum.
pub fn merge_stats(all: impl IntoIterator<Item = SearchStats>) -> SearchStats {
    all.into_iter()
        .fold(SearchStats::default(), |acc, s| SearchStats {
            states_visited: acc.states_visited + s.states_visited,
            peak_frontier_width: acc.peak_frontier_width.max(s.peak_frontier_width),
            peak_depth: acc.peak_depth.max(s.peak_depth),
        })
}

/// A loaded graph plus everything needed to query it.
pub struct Engine {
    pub graph: KnowledgeHypergraph,
    pub indexes: IndexSet,
    pub gateway: OracleGateway,
    pub chunks: Box<dyn ChunkStore>,
    pub config: RunConfig,
}

impl Engine {
    pub fn new(
        graph: KnowledgeHypergraph,
        indexes: IndexSet,
        gateway: OracleGateway,
        chunks: Box<dyn ChunkStore>,
        config: RunConfig,
    ) -> Result<Self> {
        config.validate()?;
        if !indexes.matches(&graph) {
            return Err(Error::MissingArtifact {
                path: PathBuf::from("indexes"),
                hint: "indexes are stale for this graph; rerun `hyperplan index`".into(),
            });
        }
        Ok(Self {
            graph,
            indexes,
            gateway,
            chunks,
            config,
        })
    }

    /// Loads `graph.bin` and `indexes/` from a run directory.
    pub fn open(
        layout: &RunLayout,
        config: RunConfig,
        chunks: Box<dyn ChunkStore>,
    ) -> Result<Self> {
        let graph = crate::graph::load_graph(&layout.graph())?;
        let indexes = IndexSet::load(&layout.indexes())?;
        let gateway = config.gateway()?;
        Self::new(graph, indexes, gateway, chunks, config)
    }

    pub fn manifest(
        &self,
        results: &[&QueryResult],
        elapsed: Option<std::time::Duration>,
    ) -> RunManifest {
        let depths: Vec<f64> = results.iter().filter_map(|r| r.d_avg).collect();
        RunManifest {
            config: self.config.clone(),
            config_hash: self.config.config_hash(),
            graph_hash: self.graph.content_hash(),
            backend: self.gateway.backend_name().to_string(),
            lite_mode: self.config.retrieval.lite_mode,
            questions: results.len(),
            no_evidence: results.iter().filter(|r| r.no_evidence).count(),
            usage: self.gateway.usage_report(),
            calls_by_kind: self.gateway.calls_by_kind(),
            stats: merge_stats(results.iter().map(|r| r.stats)),
            d_avg: (!depths.is_empty()).then(|| depths.iter().sum::<f64>() / depths.len() as f64),
            timing: match (self.config.gateway.deterministic, elapsed) {
                (false, Some(d)) => Some(Timing {
                    wall_ms: d.as_millis() as u64,
                }),
                _ => None,
            },
        }
    }

    pub fn query(&self, question: &str) -> Result<QueryResult> {
        let started = Instant::now();
        let cfg = &self.config;
        let anchoring = anchor_question(&self.gateway, &self.indexes, question, &cfg.anchor)?;
        if anchoring.no_evidence {
            info!(question, "no anchors found");
            let out = generate_final_answer(&self.gateway, question, &[], cfg.answer_budget)?;
            return Ok(QueryResult::without_evidence(
                question,
                out.answer,
                anchoring.anchors,
                anchoring.relaxed,
            ));
        }
        let anchors = anchoring.anchors;
        let hq = build_question_subgraph(&self.graph, &anchors, cfg.anchor.d_max)?;
        let local = AnchorSet {
            topics: anchors
                .topics
                .iter()
                .map(|v| hq.canonical(*v))
                .filter(|v| hq.graph.has_entity(*v))
                .collect(),
            targets: anchors
                .targets
                .iter()
                .copied()
                .filter(|e| hq.graph.has_edge(*e))
                .collect(),
            keywords: anchors.keywords.clone(),
        };

        let query = self.gateway.embed(CallSite::Planning, question)?;
        let pcg = build_plan_context_graph(
            &hq.graph,
            &local,
            &query,
            &self.indexes.entity_desc,
            cfg.plan_depth,
            cfg.plan_width,
            cfg.retrieval.aggregator,
        )?;
        let context = form_plan_context(&pcg, cfg.plan_budget);
        let topic_names: Vec<String> = local
            .topics
            .iter()
            .filter_map(|v| hq.graph.entity(*v).ok().map(|e| e.name.clone()))
            .collect();
        let plans =
            match propose_initial_plans(&self.gateway, question, &topic_names, &context, cfg.n0) {
                Ok(p) => p,
                Err(Error::NoFeasiblePlan) => {
                    warn!(question, "no feasible plan, using the question itself");
                    vec![ReasoningPlan::single(question)]
                }
                Err(e) => return Err(e),
            };
        let initial = plans
            .iter()
            .map(|p| build_reasoning_dag(question, p.clone()))
            .collect::<Result<Vec<_>>>()?;

        let mut resolver = PipelineResolver {
            env: RetrievalEnv {
                gateway: &self.gateway,
                indexes: &self.indexes,
                chunks: self.chunks.as_ref(),
                anchor: &cfg.anchor,
                config: &cfg.retrieval,
            },
            hq: &hq,
            cache: BTreeMap::new(),
            depths: Vec::new(),
        };
        let outcome = reason(initial, &cfg.reason_config(), &mut resolver)?;
        let depths = resolver.depths;
        let final_answer = generate_final_answer(
            &self.gateway,
            question,
            &outcome.completed,
            cfg.answer_budget,
        )?;
        info!(
            question,
            answer = %final_answer.answer,
            completed = outcome.completed.len(),
            ms = started.elapsed().as_millis() as u64,
            "query done"
        );
        Ok(QueryResult {
            question: question.to_string(),
            answer: final_answer.answer,
            no_evidence: final_answer.no_evidence,
            candidates: final_answer.candidates,
            anchors,
            relaxed_anchoring: anchoring.relaxed,
            plans,
            completed: outcome.completed,
            stats: outcome.stats,
            d_avg: (!depths.is_empty())
                .then(|| depths.iter().sum::<usize>() as f64 / depths.len() as f64),
            trace: outcome.trace,
        })
    }

    /// Answers and scores one QA record. Per-question failures become an
    /// error row; an unreachable backend aborts.
    pub fn evaluate(&self, id: &str, record: &QaRecord) -> Result<(EvalRow, Option<QueryResult>)> {
        let mut row = EvalRow {
            id: id.to_string(),
            question: record.question.clone(),
            golden_answer: record.golden_answer.clone(),
            answer: String::new(),
            result: None,
            d_avg: None,
            error: None,
        };
        let result = match self.query(&record.question) {
            Ok(r) => r,
            Err(e @ Error::BackendUnreachable(_)) => return Err(e),
            Err(e) => {
                warn!(id, error = %e, "question failed");
                row.error = Some(e.to_string());
                return Ok((row, None));
            }
        };
        let retrieved = result
            .candidates
            .first()
            .map(|c| c.aggregated_context.as_str())
            .unwrap_or("");
        let rs = match &record.context {
            Some(gold) => Some(retrieval_similarity(
                &self.gateway,
                retrieved,
                &gold.joined(),
            )?),
            None => None,
        };
        row.answer = result.answer.clone();
        row.d_avg = result.d_avg;
        row.result = Some(EvalResult {
            f1: f1_score(&result.answer, &record.golden_answer),
            rs,
            ge: generation_eval(
                &self.gateway,
                &record.question,
                &result.answer,
                &record.golden_answer,
            ),
        });
        Ok((row, Some(result)))
    }
}

type CacheKey = (String, Vec<String>, String);

/// Resolves subquestions by retrieval inside `H_q`. Results are cached per
/// subquestion, keyed together with its known prerequisite answers.
struct PipelineResolver<'a> {
    env: RetrievalEnv<'a>,
    hq: &'a QuestionSubgraph,
    cache: BTreeMap<CacheKey, Vec<AnswerPathPair>>,
    depths: Vec<usize>,
}

fn known_answers(dag: &ReasoningDag, id: usize) -> String {
    let mut preds: BTreeSet<usize> = BTreeSet::new();
    let mut stack = dag.predecessors(id);
    while let Some(p) = stack.pop() {
        if preds.insert(p) {
            stack.extend(dag.predecessors(p));
        }
    }
    preds
        .into_iter()
        .filter_map(|p| {
            let text = &dag.plan.subquestion(p)?.text;
            let answer = &dag.ap.get(&p)?.first()?.answer;
            Some(format!("- {text} {answer}\n"))
        })
        .collect()
}

impl StepResolver for PipelineResolver<'_> {
    fn resolve(&mut self, dag: &ReasoningDag, id: usize) -> Result<Vec<AnswerPathPair>> {
        let Some(sq) = dag.plan.subquestion(id) else {
            return Err(Error::InvalidPlan(format!("no subquestion {id}")));
        };
        let known = known_answers(dag, id);
        let key = (sq.text.clone(), sq.topics.clone(), known.clone());
        if let Some(hit) = self.cache.get(&key) {
            return Ok(hit.clone());
        }
        let found = retrieve_answers_with_paths(self.env, self.hq, &sq.text, &sq.topics, &known)?;
        if !found.anchors.is_empty() {
            self.depths
                .push(found.depth.unwrap_or(self.env.config.d_max));
        }
        self.cache.insert(key, found.pairs.clone());
        Ok(found.pairs)
    }

    fn refine(
        &mut self,
        dag: &ReasoningDag,
        assignment: &BTreeMap<usize, AnswerPathPair>,
    ) -> Result<ReasoningDag> {
        refine_dag(dag, assignment, self.env.gateway)
    }
}

/// Writes one JSON object per line.
pub fn write_jsonl<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    use std::io::Write;
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for row in rows {
        serde_json::to_writer(&mut out, &row)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}
