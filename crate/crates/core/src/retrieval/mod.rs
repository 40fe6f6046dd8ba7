//! Subquestion retrieval: path scoring plus the answer/path search.

mod beam;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tracing::warn;

use crate::anchoring::{anchor_with, AnchorConfig, AnchorSet, QuestionSubgraph};
use crate::chunks::ChunkStore;
use crate::embed::{EmbeddingVector, IndexSet, VectorIndex};
use crate::error::{Error, Result};
use crate::graph::{EntityId, HyperedgeId, KnowledgeHypergraph, ReasoningPath};
use crate::oracle::{CallSite, OracleGateway, Outcome};
use crate::planning::{score_entity_embedding, Aggregator};

pub use beam::{
    beam_search, lite_select_paths, oracle_select_directions, oracle_select_paths, top_b,
    BeamOutcome, BeamParams, BeamPolicy, ScoredDirection,
};

/// A step answer and the reasoning path supporting it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerPathPair {
    pub answer: String,
    pub path: ReasoningPath,
    /// Path score of `path`.
    pub score: f64,
    pub context_digest: String,
    /// Fused knowledge the answer was drawn from.
    pub context: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalConfig {
    pub d_max: usize,
    pub beam: usize,
    pub theta_emb: f64,
    pub lite_mode: bool,
    /// Paths offered to path selection per depth.
    pub path_shortlist: usize,
    pub aggregator: Aggregator,
    /// Character budget of one fused context.
    pub fuse_budget: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            d_max: 3,
            beam: 4,
            theta_emb: 0.5,
            lite_mode: false,
            path_shortlist: 5,
            aggregator: Aggregator::Mean,
            fuse_budget: 4000,
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_max < 1 || self.beam < 1 || self.path_shortlist < 1 {
            return Err(Error::Config(
                "d_max, beam and path_shortlist must be at least 1".into(),
            ));
        }
        if !(-1.0..=1.0).contains(&self.theta_emb) {
            return Err(Error::Config(format!(
                "theta_emb = {} outside [-1, 1]",
                self.theta_emb
            )));
        }
        Ok(())
    }
}

/// `EW(v | q)`: zero below the embedding gate, otherwise the embedding
/// score itself in lite mode or the oracle's score. A failed oracle score
/// falls back to the embedding score.
pub fn entity_weight(
    se: f64,
    theta_emb: f64,
    lite_mode: bool,
    oracle_score: impl FnOnce() -> Option<f64>,
) -> f64 {
    if se < theta_emb {
        return 0.0;
    }
    let se = se.clamp(0.0, 1.0);
    if lite_mode {
        se
    } else {
        oracle_score().unwrap_or(se)
    }
}

/// `EWO(e', e)`: aggregate entity weight over `V(e') ∩ V(e)`.
pub fn ewo_score(
    g: &KnowledgeHypergraph,
    candidate: HyperedgeId,
    from: HyperedgeId,
    ew: &mut dyn FnMut(EntityId) -> Result<f64>,
    agg: Aggregator,
) -> Result<f64> {
    let shared = g.overlap(candidate, from)?;
    if shared.is_empty() {
        return Err(Error::EmptyOverlap(candidate, from));
    }
    let weights = shared
        .into_iter()
        .map(&mut *ew)
        .collect::<Result<Vec<_>>>()?;
    Ok(agg.apply(weights).expect("non-empty overlap"))
}

/// `SP(p)`: aggregate entity weight over the distinct entities of `p`.
pub fn path_score(
    g: &KnowledgeHypergraph,
    p: &ReasoningPath,
    ew: &mut dyn FnMut(EntityId) -> Result<f64>,
    agg: Aggregator,
) -> Result<f64> {
    let mut entities = BTreeSet::new();
    for e in p.edges() {
        entities.extend(g.edge(*e)?.entities.iter().copied());
    }
    let weights = entities
        .into_iter()
        .map(&mut *ew)
        .collect::<Result<Vec<_>>>()?;
    Ok(agg.apply(weights).unwrap_or(0.0))
}

/// Memoized entity weights for one subquestion.
pub struct EntityWeigher<'a> {
    graph: &'a KnowledgeHypergraph,
    desc_index: &'a VectorIndex,
    gateway: &'a OracleGateway,
    question: String,
    query: EmbeddingVector,
    theta_emb: f64,
    lite_mode: bool,
    memo: BTreeMap<EntityId, f64>,
}

impl<'a> EntityWeigher<'a> {
    pub fn new(
        graph: &'a KnowledgeHypergraph,
        desc_index: &'a VectorIndex,
        gateway: &'a OracleGateway,
        question: &str,
        cfg: &RetrievalConfig,
    ) -> Result<Self> {
        Ok(Self {
            graph,
            desc_index,
            gateway,
            question: question.to_string(),
            query: gateway.embed(CallSite::Retrieval, question)?,
            theta_emb: cfg.theta_emb,
            lite_mode: cfg.lite_mode,
            memo: BTreeMap::new(),
        })
    }

    pub fn weight(&mut self, v: EntityId) -> f64 {
        if let Some(w) = self.memo.get(&v) {
            return *w;
        }
        let se = score_entity_embedding(self.graph, self.desc_index, v, &self.query);
        let (graph, gateway, question) = (self.graph, self.gateway, &self.question);
        let w = entity_weight(se, self.theta_emb, self.lite_mode, || {
            let entity = graph.entity(v).ok()?;
            match gateway.score_entity(
                CallSite::Retrieval,
                v,
                &entity.name,
                &entity.description,
                question,
            ) {
                Ok(Outcome::Answer(r)) => Some(r.score),
                Ok(Outcome::Refused(reason)) => {
                    warn!(entity = %v, %reason, "entity scoring refused, using embedding score");
                    None
                }
                Err(e) => {
                    warn!(entity = %v, error = %e, "entity scoring failed, using embedding score");
                    None
                }
            }
        });
        self.memo.insert(v, w);
        w
    }

    pub fn memo(&self) -> &BTreeMap<EntityId, f64> {
        &self.memo
    }
}

/// Oracle-backed policy: full mode asks the oracle for directions and
/// sufficient paths, lite mode ranks by embedding weights alone.
pub struct GraphPolicy<'a, 'w> {
    pub weigher: &'w mut EntityWeigher<'a>,
    pub gateway: &'a OracleGateway,
    pub graph: &'a KnowledgeHypergraph,
    pub question: &'a str,
    pub lite_mode: bool,
}

impl BeamPolicy for GraphPolicy<'_, '_> {
    fn entity_weight(&mut self, v: EntityId) -> Result<f64> {
        Ok(self.weigher.weight(v))
    }

    fn select_directions(
        &mut self,
        ranked: Vec<ScoredDirection>,
        beam: Option<usize>,
    ) -> Result<Vec<ScoredDirection>> {
        if self.lite_mode {
            return Ok(top_b(ranked, beam));
        }
        Ok(oracle_select_directions(
            self.gateway,
            self.graph,
            self.question,
            ranked,
            beam,
        ))
    }

    fn select_paths(
        &mut self,
        ranked: Vec<(ReasoningPath, f64)>,
    ) -> Result<Vec<(ReasoningPath, f64)>> {
        if self.lite_mode {
            return Ok(lite_select_paths(ranked));
        }
        Ok(oracle_select_paths(
            self.gateway,
            self.graph,
            self.question,
            ranked,
        ))
    }
}

pub fn digest_text(text: &str) -> String {
    hex::encode(&Sha256::digest(text.as_bytes())[..8])
}

fn truncate_chars(s: &mut String, budget: usize) {
    if let Some((idx, _)) = s.char_indices().nth(budget) {
        s.truncate(idx);
    }
}

/// Knowledge for one path. Lite mode: the hyperedge names in path order.
/// Full mode: hyperedge names, then the covered entities with their
/// descriptions, then the de-duplicated source chunks. Over budget, the
/// lowest-weight entities go first, then chunks from the end, then the
/// text is cut.
pub fn fuse_knowledge(
    g: &KnowledgeHypergraph,
    p: &ReasoningPath,
    chunks: &dyn ChunkStore,
    lite_mode: bool,
    budget: usize,
    ew: &mut dyn FnMut(EntityId) -> f64,
) -> Result<String> {
    let mut names = Vec::with_capacity(p.len());
    for e in p.edges() {
        names.push(g.edge(*e)?.name.clone());
    }
    if lite_mode {
        let mut text = names.join("\n");
        truncate_chars(&mut text, budget);
        return Ok(text);
    }
    let mut entities: Vec<(EntityId, String, f64)> = Vec::new();
    let mut chunk_ids: Vec<String> = Vec::new();
    for e in p.edges() {
        let edge = g.edge(*e)?;
        for v in &edge.entities {
            if entities.iter().any(|(id, _, _)| id == v) {
                continue;
            }
            let entity = g.entity(*v)?;
            let mut line = format!("- {}: {}", entity.name, entity.description);
            for m in &entity.merged {
                line.push_str(&format!(" (also {}: {})", m.name, m.description));
            }
            entities.push((*v, line, ew(*v)));
        }
        if let Some(c) = &edge.source_ref {
            if !chunk_ids.contains(c) {
                chunk_ids.push(c.clone());
            }
        }
    }
    let mut sources: Vec<String> = chunk_ids
        .into_iter()
        .filter_map(|c| match chunks.get(&c) {
            Some(text) => Some(format!("- [{c}] {}", text.trim())),
            None => {
                warn!(chunk = %c, "source chunk missing, skipped");
                None
            }
        })
        .collect();
    let render = |entities: &[(EntityId, String, f64)], sources: &[String]| {
        let mut out = String::from("Hyperedges:\n");
        for n in &names {
            out.push_str(&format!("- {n}\n"));
        }
        if !entities.is_empty() {
            out.push_str("Entities:\n");
            for (_, line, _) in entities {
                out.push_str(line);
                out.push('\n');
            }
        }
        if !sources.is_empty() {
            out.push_str("Sources:\n");
            for s in sources {
                out.push_str(s);
                out.push('\n');
            }
        }
        out
    };
    loop {
        let mut text = render(&entities, &sources);
        if text.chars().count() <= budget {
            return Ok(text);
        }
        if !entities.is_empty() {
            let weakest = entities
                .iter()
                .enumerate()
                .min_by(|a, b| a.1 .2.total_cmp(&b.1 .2).then(b.0.cmp(&a.0)))
                .map(|(i, _)| i)
                .expect("non-empty");
            entities.remove(weakest);
        } else if !sources.is_empty() {
            sources.pop();
        } else {
            truncate_chars(&mut text, budget);
            return Ok(text);
        }
    }
}

/// Everything retrieval needs besides the question subgraph.
#[derive(Clone, Copy)]
pub struct RetrievalEnv<'a> {
    pub gateway: &'a OracleGateway,
    pub indexes: &'a IndexSet,
    pub chunks: &'a dyn ChunkStore,
    pub anchor: &'a AnchorConfig,
    pub config: &'a RetrievalConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubquestionRetrieval {
    pub pairs: Vec<AnswerPathPair>,
    /// Depth at which sufficient paths were found.
    pub depth: Option<usize>,
    pub anchors: AnchorSet,
}

/// Re-anchors `question` inside `hq`, runs the beam search and answers
/// every selected path. `topics` are tried as keywords first; `known`
/// (answers to prerequisite subquestions) is prepended to each context.
pub fn retrieve_answers_with_paths(
    env: RetrievalEnv<'_>,
    hq: &QuestionSubgraph,
    question: &str,
    topics: &[String],
    known: &str,
) -> Result<SubquestionRetrieval> {
    let cfg = env.config;
    let names = env
        .indexes
        .entity_name
        .restricted(|id| hq.covers_entity(EntityId(id)));
    let edges = env
        .indexes
        .hyperedge_name
        .restricted(|id| hq.graph.has_edge(HyperedgeId(id)));
    let anchoring = anchor_with(
        env.gateway,
        CallSite::Retrieval,
        question,
        topics,
        &names,
        &edges,
        env.anchor,
        |v| hq.canonical(v),
    )?;
    let anchors = anchoring.anchors;
    let topics_in_graph: BTreeSet<EntityId> = anchors
        .topics
        .iter()
        .copied()
        .filter(|v| hq.graph.has_entity(*v))
        .collect();
    let seeds = hq
        .graph
        .k_hop_neighborhood(&topics_in_graph, &anchors.targets, 0)?;
    if seeds.is_empty() {
        return Ok(SubquestionRetrieval {
            pairs: Vec::new(),
            depth: None,
            anchors,
        });
    }

    let mut weigher = EntityWeigher::new(
        &hq.graph,
        &env.indexes.entity_desc,
        env.gateway,
        question,
        cfg,
    )?;
    let params = BeamParams {
        d_max: cfg.d_max,
        beam: Some(cfg.beam),
        shortlist: Some(cfg.path_shortlist),
        aggregator: cfg.aggregator,
    };
    let outcome = {
        let mut policy = GraphPolicy {
            weigher: &mut weigher,
            gateway: env.gateway,
            graph: &hq.graph,
            question,
            lite_mode: cfg.lite_mode,
        };
        beam_search(&hq.graph, &seeds, &anchors.targets, &params, &mut policy)?
    };

    let mut pairs = Vec::new();
    for (path, score) in outcome.selected {
        let fused = fuse_knowledge(
            &hq.graph,
            &path,
            env.chunks,
            cfg.lite_mode,
            cfg.fuse_budget,
            &mut |v| weigher.weight(v),
        )?;
        let context = if known.trim().is_empty() {
            fused
        } else {
            format!("Known answers:\n{}\n{fused}", known.trim_end())
        };
        match env
            .gateway
            .answer_step(CallSite::Retrieval, question, &context)
        {
            Ok(Outcome::Answer(r)) => pairs.push(AnswerPathPair {
                answer: r.answer.trim().to_string(),
                path,
                score,
                context_digest: digest_text(&context),
                context,
            }),
            Ok(Outcome::Refused(reason)) => warn!(%reason, %path, "step answer refused"),
            Err(e @ Error::BackendUnreachable(_)) => return Err(e),
            Err(e) => warn!(error = %e, %path, "step answer failed"),
        }
    }
    Ok(SubquestionRetrieval {
        pairs,
        depth: outcome.depth,
        anchors,
    })
}
