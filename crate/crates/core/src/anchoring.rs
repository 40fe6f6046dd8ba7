//! Question anchoring: keywords, topic entities, target hyperedges and the
//! synonym-merged question subgraph.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::embed::{IndexSet, VectorIndex};
use crate::error::{Error, Result};
use crate::graph::{
    EdgeKind, Entity, EntityId, GraphBuilder, HyperedgeId, KnowledgeHypergraph, MergedEntity,
};
use crate::oracle::{CallSite, OracleGateway, Outcome};
use crate::text::{dedup_folded, fold};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnchorConfig {
    pub theta_v: f64,
    pub theta_e: f64,
    pub k_v: usize,
    pub k_e: usize,
    /// Hop radius of the question subgraph.
    pub d_max: usize,
}

impl Default for AnchorConfig {
    fn default() -> Self {
        Self {
            theta_v: 0.75,
            theta_e: 0.70,
            k_v: 3,
            k_e: 5,
            d_max: 4,
        }
    }
}

impl AnchorConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, t) in [("theta_v", self.theta_v), ("theta_e", self.theta_e)] {
            if !(-1.0..=1.0).contains(&t) {
                return Err(Error::Config(format!("{name} = {t} outside [-1, 1]")));
            }
        }
        if self.k_v == 0 || self.k_e == 0 {
            return Err(Error::Config("k_v and k_e must be at least 1".into()));
        }
        Ok(())
    }

    fn relaxed(&self) -> Self {
        Self {
            theta_v: (self.theta_v - 0.1).max(-1.0),
            theta_e: (self.theta_e - 0.1).max(-1.0),
            ..*self
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnchorSet {
    pub topics: BTreeSet<EntityId>,
    pub targets: BTreeSet<HyperedgeId>,
    pub keywords: Vec<String>,
}

impl AnchorSet {
    pub fn is_empty(&self) -> bool {
        self.topics.is_empty() && self.targets.is_empty()
    }
}

/// Anchors plus how they were obtained.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Anchoring {
    pub anchors: AnchorSet,
    /// Thresholds were lowered once because the first pass found nothing.
    pub relaxed: bool,
    /// Nothing was found even after relaxing.
    pub no_evidence: bool,
}

/// Order-preserving, de-duplicated keywords; empty on oracle failure.
pub fn extract_keywords(
    gateway: &OracleGateway,
    call_site: CallSite,
    question: &str,
) -> Vec<String> {
    if fold(question).is_empty() {
        return Vec::new();
    }
    match gateway.extract_keywords(call_site, question) {
        Ok(Outcome::Answer(r)) => {
            dedup_folded(r.keywords.into_iter().map(|k| k.trim().to_string()))
        }
        Ok(Outcome::Refused(reason)) => {
            warn!(%reason, "keyword extraction refused");
            Vec::new()
        }
        Err(e) => {
            warn!(error = %e, "keyword extraction failed");
            Vec::new()
        }
    }
}

/// Union over keywords of the `k_v` best name matches scoring `>= theta_v`.
pub fn link_topic_entities(
    gateway: &OracleGateway,
    call_site: CallSite,
    keywords: &[String],
    name_index: &VectorIndex,
    theta_v: f64,
    k_v: usize,
) -> Result<BTreeSet<EntityId>> {
    let mut out = BTreeSet::new();
    for kw in keywords {
        let q = gateway.embed(call_site, kw)?;
        out.extend(
            name_index
                .top_k_above(&q, k_v, theta_v)?
                .into_iter()
                .map(|(id, _)| EntityId(id)),
        );
    }
    Ok(out)
}

/// The `k_e` hyperedges whose names best match the full question.
pub fn match_target_hyperedges(
    gateway: &OracleGateway,
    call_site: CallSite,
    question: &str,
    edge_index: &VectorIndex,
    theta_e: f64,
    k_e: usize,
) -> Result<BTreeSet<HyperedgeId>> {
    if edge_index.is_empty() || fold(question).is_empty() {
        return Ok(BTreeSet::new());
    }
    let q = gateway.embed(call_site, question)?;
    Ok(edge_index
        .top_k_above(&q, k_e, theta_e)?
        .into_iter()
        .map(|(id, _)| HyperedgeId(id))
        .collect())
}

/// Anchors against explicit indexes. `extra_keywords` are tried before the
/// extracted ones. Found ids pass through `canon` (the merge map when
/// re-anchoring inside a question subgraph).
#[allow(clippy::too_many_arguments)]
pub fn anchor_with(
    gateway: &OracleGateway,
    call_site: CallSite,
    question: &str,
    extra_keywords: &[String],
    name_index: &VectorIndex,
    edge_index: &VectorIndex,
    cfg: &AnchorConfig,
    canon: impl Fn(EntityId) -> EntityId,
) -> Result<Anchoring> {
    let mut keywords = extra_keywords.to_vec();
    keywords.extend(extract_keywords(gateway, call_site, question));
    let keywords = dedup_folded(keywords);
    let run = |c: &AnchorConfig| -> Result<AnchorSet> {
        let topics =
            link_topic_entities(gateway, call_site, &keywords, name_index, c.theta_v, c.k_v)?;
        Ok(AnchorSet {
            topics: topics.into_iter().map(&canon).collect(),
            targets: match_target_hyperedges(
                gateway, call_site, question, edge_index, c.theta_e, c.k_e,
            )?,
            keywords: keywords.clone(),
        })
    };
    let anchors = run(cfg)?;
    if !anchors.is_empty() {
        return Ok(Anchoring {
            anchors,
            relaxed: false,
            no_evidence: false,
        });
    }
    let anchors = run(&cfg.relaxed())?;
    let no_evidence = anchors.is_empty();
    Ok(Anchoring {
        anchors,
        relaxed: true,
        no_evidence,
    })
}

/// Anchors a question in the full graph.
pub fn anchor_question(
    gateway: &OracleGateway,
    indexes: &IndexSet,
    question: &str,
    cfg: &AnchorConfig,
) -> Result<Anchoring> {
    anchor_with(
        gateway,
        CallSite::Anchoring,
        question,
        &[],
        &indexes.entity_name,
        &indexes.hyperedge_name,
        cfg,
        |v| v,
    )
}

/// `H_q` after synonym merging.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuestionSubgraph {
    pub graph: KnowledgeHypergraph,
    /// Every member of a synonym group mapped to its canonical entity.
    pub merge_map: BTreeMap<EntityId, EntityId>,
}

impl QuestionSubgraph {
    pub fn canonical(&self, v: EntityId) -> EntityId {
        self.merge_map.get(&v).copied().unwrap_or(v)
    }

    /// Entity ids of the unmerged subgraph: current entities plus every
    /// entity folded into one.
    pub fn covers_entity(&self, v: EntityId) -> bool {
        self.graph.has_entity(v) || self.merge_map.contains_key(&v)
    }
}

fn find(parent: &mut BTreeMap<EntityId, EntityId>, v: EntityId) -> EntityId {
    let p = *parent.entry(v).or_insert(v);
    if p == v {
        return v;
    }
    let root = find(parent, p);
    parent.insert(v, root);
    root
}

/// Collapses entities joined by synonym edges. The canonical member has the
/// longest description (ties: lowest id); fact edges are rewritten to
/// canonical ids and synonym edges are dropped.
pub fn merge_synonyms(g: &KnowledgeHypergraph) -> Result<QuestionSubgraph> {
    let mut parent = BTreeMap::new();
    for e in g.hyperedges().filter(|e| e.kind == EdgeKind::Synonym) {
        let first = e.entities[0];
        for &v in &e.entities[1..] {
            let (a, b) = (find(&mut parent, first), find(&mut parent, v));
            if a != b {
                parent.insert(a.max(b), a.min(b));
            }
        }
    }
    let members: Vec<EntityId> = parent.keys().copied().collect();
    let mut groups: BTreeMap<EntityId, Vec<EntityId>> = BTreeMap::new();
    for v in members {
        let root = find(&mut parent, v);
        groups.entry(root).or_default().push(v);
    }
    let mut merge_map = BTreeMap::new();
    let mut absorbed: BTreeMap<EntityId, Vec<EntityId>> = BTreeMap::new();
    for group in groups.values().filter(|g| g.len() >= 2) {
        let mut canonical = group[0];
        for &v in group {
            let (dv, dc) = (
                g.entity(v)?.description.chars().count(),
                g.entity(canonical)?.description.chars().count(),
            );
            if dv > dc || (dv == dc && v < canonical) {
                canonical = v;
            }
        }
        for &v in group {
            merge_map.insert(v, canonical);
            if v != canonical {
                absorbed.entry(canonical).or_default().push(v);
            }
        }
    }

    let mut b = GraphBuilder::new();
    for entity in g.entities() {
        if merge_map.get(&entity.id).is_some_and(|c| *c != entity.id) {
            continue;
        }
        let mut merged: Entity = entity.clone();
        for &other in absorbed
            .get(&entity.id)
            .map(Vec::as_slice)
            .unwrap_or_default()
        {
            let o = g.entity(other)?;
            merged.merged.push(MergedEntity {
                id: o.id,
                name: o.name.clone(),
                description: o.description.clone(),
            });
        }
        b.insert_entity(merged)?;
    }
    for e in g.hyperedges().filter(|e| e.kind == EdgeKind::Fact) {
        let mut rewritten = e.clone();
        let mut seen = BTreeSet::new();
        rewritten.entities = e
            .entities
            .iter()
            .map(|v| merge_map.get(v).copied().unwrap_or(*v))
            .filter(|v| seen.insert(*v))
            .collect();
        b.insert_edge(rewritten)?;
    }
    let graph = b.freeze();
    graph.check_integrity()?;
    Ok(QuestionSubgraph { graph, merge_map })
}

/// `H_q`: the subgraph induced by the `d_max`-hop neighborhood of the
/// anchors, synonym-merged.
pub fn build_question_subgraph(
    g: &KnowledgeHypergraph,
    anchors: &AnchorSet,
    d_max: usize,
) -> Result<QuestionSubgraph> {
    let edges = g.k_hop_neighborhood(&anchors.topics, &anchors.targets, d_max)?;
    merge_synonyms(&g.induced_subgraph(&edges)?)
}
