//! Plan context graph and initial plan generation.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use tracing::warn;

use super::{Aggregator, ReasoningPlan};
use crate::anchoring::AnchorSet;
use crate::embed::{EmbeddingVector, VectorIndex};
use crate::error::{Error, Result};
use crate::graph::{EntityId, HyperedgeId, KnowledgeHypergraph};
use crate::oracle::{CallSite, OracleGateway, Outcome};

/// `SE(v, q)`: cosine between the entity's description embedding and the
/// question. Entities without a description score 0; a missing embedding
/// also scores 0.
pub fn score_entity_embedding(
    g: &KnowledgeHypergraph,
    desc_index: &VectorIndex,
    v: EntityId,
    query: &EmbeddingVector,
) -> f64 {
    match g.entity(v) {
        Ok(entity) if entity.description.trim().is_empty() => return 0.0,
        Ok(_) => {}
        Err(_) => {
            warn!(entity = %v, "entity missing from graph, scoring 0");
            return 0.0;
        }
    }
    match desc_index.similarity(v.0, query) {
        Some(Ok(s)) => s,
        Some(Err(e)) => {
            warn!(entity = %v, error = %e, "description embedding unusable, scoring 0");
            0.0
        }
        None => {
            warn!(entity = %v, "no description embedding, scoring 0");
            0.0
        }
    }
}

/// `SH(e', e)`: aggregate of entity scores over `V(e') ∩ V(e)`.
pub fn score_hyperedge(
    g: &KnowledgeHypergraph,
    candidate: HyperedgeId,
    from: HyperedgeId,
    mut entity_score: impl FnMut(EntityId) -> f64,
    agg: Aggregator,
) -> Result<f64> {
    let shared = g.overlap(candidate, from)?;
    agg.apply(shared.into_iter().map(&mut entity_score))
        .ok_or(Error::EmptyOverlap(candidate, from))
}

/// `H_p` plus the discovery layer and relevance score of every edge.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlanContextGraph {
    pub graph: KnowledgeHypergraph,
    pub layer_of: BTreeMap<HyperedgeId, usize>,
    /// Seeds: mean entity score. Later layers: the edge score that selected it.
    pub score_of: BTreeMap<HyperedgeId, f64>,
}

fn by_score_then_id(a: &(HyperedgeId, f64), b: &(HyperedgeId, f64)) -> Ordering {
    b.1.partial_cmp(&a.1)
        .unwrap_or(Ordering::Equal)
        .then(a.0.cmp(&b.0))
}

/// Builds `H_p` with a caller-supplied entity scorer.
///
/// Layer 0 holds `targets ∪ E(topics)`. For each later layer every frontier
/// edge keeps its `width` best-scoring neighbors not yet in `H_p`; an edge
/// keeps the first layer it was found at.
pub fn build_plan_context_graph_with(
    h_q: &KnowledgeHypergraph,
    topics: &BTreeSet<EntityId>,
    targets: &BTreeSet<HyperedgeId>,
    depth: usize,
    width: usize,
    mut entity_score: impl FnMut(EntityId) -> f64,
    agg: Aggregator,
) -> Result<PlanContextGraph> {
    let seeds = h_q.k_hop_neighborhood(topics, targets, 0)?;
    let mut memo: BTreeMap<EntityId, f64> = BTreeMap::new();
    let mut score = |v: EntityId| *memo.entry(v).or_insert_with(|| entity_score(v));

    let mut layer_of = BTreeMap::new();
    let mut score_of = BTreeMap::new();
    for &e in &seeds {
        let edge = h_q.edge(e)?;
        let s = agg
            .apply(edge.entities.iter().map(|v| score(*v)))
            .unwrap_or(0.0);
        layer_of.insert(e, 0);
        score_of.insert(e, s);
    }
    let mut frontier: Vec<HyperedgeId> = seeds.into_iter().collect();
    for d in 1..=depth {
        let mut next = Vec::new();
        for &f in &frontier {
            let mut ranked = Vec::new();
            for n in h_q.neighbors(f)? {
                if layer_of.contains_key(&n) {
                    continue;
                }
                ranked.push((n, score_hyperedge(h_q, n, f, &mut score, agg)?));
            }
            ranked.sort_by(by_score_then_id);
            for (n, s) in ranked.into_iter().take(width) {
                if let std::collections::btree_map::Entry::Vacant(slot) = layer_of.entry(n) {
                    slot.insert(d);
                    score_of.insert(n, s);
                    next.push(n);
                }
            }
        }
        if next.is_empty() {
            break;
        }
        frontier = next;
    }
    let edges: BTreeSet<HyperedgeId> = layer_of.keys().copied().collect();
    Ok(PlanContextGraph {
        graph: h_q.induced_subgraph(&edges)?,
        layer_of,
        score_of,
    })
}

/// Builds `H_p` scoring entities by description similarity to `query`.
#[allow(clippy::too_many_arguments)]
pub fn build_plan_context_graph(
    h_q: &KnowledgeHypergraph,
    anchors: &AnchorSet,
    query: &EmbeddingVector,
    desc_index: &VectorIndex,
    depth: usize,
    width: usize,
    agg: Aggregator,
) -> Result<PlanContextGraph> {
    build_plan_context_graph_with(
        h_q,
        &anchors.topics,
        &anchors.targets,
        depth,
        width,
        |v| score_entity_embedding(h_q, desc_index, v, query),
        agg,
    )
}

/// Renders `H_p` one edge per line, nearest layer first and higher scores
/// first within a layer. Lines that would overflow `budget` characters end
/// the rendering.
pub fn form_plan_context(pcg: &PlanContextGraph, budget: usize) -> String {
    let mut rows: Vec<(usize, HyperedgeId, f64)> = pcg
        .layer_of
        .iter()
        .map(|(e, l)| (*l, *e, pcg.score_of.get(e).copied().unwrap_or(0.0)))
        .collect();
    rows.sort_by(|a, b| {
        a.0.cmp(&b.0)
            .then(b.2.partial_cmp(&a.2).unwrap_or(Ordering::Equal))
            .then(a.1.cmp(&b.1))
    });
    let mut out = String::new();
    let mut used = 0usize;
    for (layer, e, _) in rows {
        let Ok(edge) = pcg.graph.edge(e) else {
            continue;
        };
        let names: Vec<&str> = edge
            .entities
            .iter()
            .filter_map(|v| pcg.graph.entity(*v).ok().map(|x| x.name.as_str()))
            .collect();
        let line = format!(
            "[hop {layer}] {} | entities: {}\n",
            edge.name,
            names.join("; ")
        );
        let len = line.chars().count();
        if used + len > budget {
            break;
        }
        used += len;
        out.push_str(&line);
    }
    out
}

/// Asks the oracle for up to `n0` plans. A plan that fails validation is
/// asked for once more and then dropped; duplicates are dropped. Errors
/// with [`Error::NoFeasiblePlan`] when nothing valid remains.
pub fn propose_initial_plans(
    gateway: &OracleGateway,
    question: &str,
    topics: &[String],
    context: &str,
    n0: usize,
) -> Result<Vec<ReasoningPlan>> {
    let mut plans: Vec<ReasoningPlan> = Vec::new();
    for variant in 0..n0.max(1) {
        for attempt in 0..2 {
            let reply = gateway.propose_plan(
                CallSite::Planning,
                question,
                topics.to_vec(),
                context,
                variant,
            );
            let plan = match reply {
                Ok(Outcome::Answer(r)) => r.plan.validated(),
                Ok(Outcome::Refused(reason)) => {
                    warn!(variant, %reason, "plan proposal refused");
                    break;
                }
                Err(Error::SchemaViolation { diagnostics, .. }) => {
                    Err(Error::InvalidPlan(diagnostics))
                }
                Err(e) => return Err(e),
            };
            match plan {
                Ok(p) => {
                    if !plans.contains(&p) {
                        plans.push(p);
                    }
                    break;
                }
                Err(e) => warn!(variant, attempt, error = %e, "invalid plan from oracle"),
            }
        }
    }
    if plans.is_empty() {
        return Err(Error::NoFeasiblePlan);
    }
    Ok(plans)
}
