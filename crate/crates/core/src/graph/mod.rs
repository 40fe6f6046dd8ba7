//! Knowledge hypergraph data model.
//!
//! A [`KnowledgeHypergraph`] stores entities once, hyperedges as ordered
//! lists of entity ids, and an incidence index `E(v)` mapping every entity to
//! the hyperedges containing it. Graphs are assembled through a
//! [`GraphBuilder`] and frozen before query time; every derived graph
//! (induced subgraphs, synonym augmentation, merges) is a new value.

mod persist;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use persist::{load_graph, save_graph, GRAPH_FORMAT_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EntityId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct HyperedgeId(pub u32);

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v{}", self.0)
    }
}

impl fmt::Display for HyperedgeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e{}", self.0)
    }
}

/// Record of an entity folded into a canonical representative.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergedEntity {
    pub id: EntityId,
    pub name: String,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub id: EntityId,
    pub name: String,
    pub description: String,
    /// Canonical representative this entity was merged into, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub canonical_of: Option<EntityId>,
    /// Entities merged into this one, with their original descriptions.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub merged: Vec<MergedEntity>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeKind {
    Fact,
    Synonym,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hyperedge {
    pub id: HyperedgeId,
    pub name: String,
    pub entities: Vec<EntityId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_ref: Option<String>,
    pub kind: EdgeKind,
}

impl Hyperedge {
    pub fn contains(&self, v: EntityId) -> bool {
        self.entities.contains(&v)
    }

    fn entity_set(&self) -> BTreeSet<EntityId> {
        self.entities.iter().copied().collect()
    }
}

fn validate_edge(
    name: &str,
    entities: &[EntityId],
    source_ref: Option<&str>,
    kind: EdgeKind,
) -> Result<()> {
    if entities.is_empty() {
        return Err(Error::InvalidEdge(format!("{name:?} has no entities")));
    }
    let mut seen = HashSet::with_capacity(entities.len());
    for v in entities {
        if !seen.insert(*v) {
            return Err(Error::InvalidEdge(format!("{name:?} repeats entity {v}")));
        }
    }
    if kind == EdgeKind::Synonym {
        if entities.len() < 2 {
            return Err(Error::InvalidEdge(
                "synonym edge needs at least two entities".into(),
            ));
        }
        if source_ref.is_some() {
            return Err(Error::InvalidEdge(
                "synonym edge cannot carry a source chunk".into(),
            ));
        }
    }
    Ok(())
}

/// A connected sequence of hyperedges.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<HyperedgeId>", into = "Vec<HyperedgeId>")]
pub struct ReasoningPath {
    edges: Vec<HyperedgeId>,
}

impl ReasoningPath {
    pub fn new(edges: Vec<HyperedgeId>) -> Result<Self> {
        if edges.is_empty() {
            return Err(Error::InvalidPath("empty path".into()));
        }
        if let Some(w) = edges.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::InvalidPath(format!(
                "{} repeated consecutively",
                w[0]
            )));
        }
        Ok(Self { edges })
    }

    pub fn single(e: HyperedgeId) -> Self {
        Self { edges: vec![e] }
    }

    pub fn edges(&self) -> &[HyperedgeId] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn first(&self) -> HyperedgeId {
        self.edges[0]
    }

    pub fn terminal(&self) -> HyperedgeId {
        *self.edges.last().expect("paths are non-empty")
    }

    pub fn contains(&self, e: HyperedgeId) -> bool {
        self.edges.contains(&e)
    }

    /// Appends `e`; fails if `e` is already the terminal edge.
    pub fn extended(&self, e: HyperedgeId) -> Result<Self> {
        let mut edges = self.edges.clone();
        edges.push(e);
        Self::new(edges)
    }

    /// The first `len` edges, or `None` when `len` is zero or too long.
    pub fn prefix(&self, len: usize) -> Option<Self> {
        (len >= 1 && len <= self.edges.len()).then(|| Self {
            edges: self.edges[..len].to_vec(),
        })
    }
}

impl TryFrom<Vec<HyperedgeId>> for ReasoningPath {
    type Error = Error;
    fn try_from(edges: Vec<HyperedgeId>) -> Result<Self> {
        Self::new(edges)
    }
}

impl From<ReasoningPath> for Vec<HyperedgeId> {
    fn from(p: ReasoningPath) -> Self {
        p.edges
    }
}

impl fmt::Display for ReasoningPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.edges.iter().map(|e| e.to_string()).collect();
        f.write_str(&parts.join(" -> "))
    }
}

/// Immutable knowledge hypergraph.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeHypergraph {
    entities: BTreeMap<EntityId, Entity>,
    hyperedges: BTreeMap<HyperedgeId, Hyperedge>,
    incidence: BTreeMap<EntityId, BTreeSet<HyperedgeId>>,
}

static EMPTY_EDGES: BTreeSet<HyperedgeId> = BTreeSet::new();

impl KnowledgeHypergraph {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn entity_count(&self) -> usize {
        self.entities.len()
    }

    pub fn edge_count(&self) -> usize {
        self.hyperedges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty() && self.hyperedges.is_empty()
    }

    pub fn entities(&self) -> impl Iterator<Item = &Entity> {
        self.entities.values()
    }

    pub fn hyperedges(&self) -> impl Iterator<Item = &Hyperedge> {
        self.hyperedges.values()
    }

    pub fn entity_ids(&self) -> impl Iterator<Item = EntityId> + '_ {
        self.entities.keys().copied()
    }

    pub fn edge_ids(&self) -> impl Iterator<Item = HyperedgeId> + '_ {
        self.hyperedges.keys().copied()
    }

    pub fn incidence(&self) -> &BTreeMap<EntityId, BTreeSet<HyperedgeId>> {
        &self.incidence
    }

    pub fn has_entity(&self, v: EntityId) -> bool {
        self.entities.contains_key(&v)
    }

    pub fn has_edge(&self, e: HyperedgeId) -> bool {
        self.hyperedges.contains_key(&e)
    }

    pub fn entity(&self, v: EntityId) -> Result<&Entity> {
        self.entities.get(&v).ok_or(Error::UnknownEntity(v))
    }

    pub fn edge(&self, e: HyperedgeId) -> Result<&Hyperedge> {
        self.hyperedges.get(&e).ok_or(Error::UnknownEdge(e))
    }

    /// First entity whose name matches exactly.
    pub fn find_entity(&self, name: &str) -> Option<&Entity> {
        self.entities.values().find(|v| v.name == name)
    }

    /// First hyperedge whose name matches exactly.
    pub fn find_edge(&self, name: &str) -> Option<&Hyperedge> {
        self.hyperedges.values().find(|e| e.name == name)
    }

    /// `E(v)`: hyperedges containing `v`.
    pub fn incident_edges(&self, v: EntityId) -> Result<&BTreeSet<HyperedgeId>> {
        if !self.has_entity(v) {
            return Err(Error::UnknownEntity(v));
        }
        Ok(self.incidence.get(&v).unwrap_or(&EMPTY_EDGES))
    }

    /// `Nbr(e)`: other hyperedges sharing at least one entity with `e`.
    pub fn neighbors(&self, e: HyperedgeId) -> Result<BTreeSet<HyperedgeId>> {
        let edge = self.edge(e)?;
        let mut out = BTreeSet::new();
        for v in &edge.entities {
            if let Some(inc) = self.incidence.get(v) {
                out.extend(inc.iter().copied().filter(|&other| other != e));
            }
        }
        Ok(out)
    }

    /// `V(a) ∩ V(b)` in ascending id order.
    pub fn overlap(&self, a: HyperedgeId, b: HyperedgeId) -> Result<Vec<EntityId>> {
        let ea = self.edge(a)?.entity_set();
        let eb = self.edge(b)?.entity_set();
        Ok(ea.intersection(&eb).copied().collect())
    }

    /// Subgraph induced by `edge_set`: its edges plus every member entity.
    pub fn induced_subgraph(&self, edge_set: &BTreeSet<HyperedgeId>) -> Result<Self> {
        let mut b = GraphBuilder::new();
        for &e in edge_set {
            let edge = self.edge(e)?;
            for v in &edge.entities {
                if !b.graph.has_entity(*v) {
                    b.insert_entity(self.entity(*v)?.clone())?;
                }
            }
            b.insert_edge(edge.clone())?;
        }
        Ok(b.freeze())
    }

    /// Hop 0 is `seed_edges ∪ E(seed_entities)`; each further hop adds the
    /// neighbors of the previous hop's new edges.
    pub fn k_hop_neighborhood(
        &self,
        seed_entities: &BTreeSet<EntityId>,
        seed_edges: &BTreeSet<HyperedgeId>,
        depth: usize,
    ) -> Result<BTreeSet<HyperedgeId>> {
        let mut reached = BTreeSet::new();
        for &e in seed_edges {
            self.edge(e)?;
            reached.insert(e);
        }
        for &v in seed_entities {
            reached.extend(self.incident_edges(v)?.iter().copied());
        }
        let mut layer: Vec<HyperedgeId> = reached.iter().copied().collect();
        for _ in 0..depth {
            let mut next = Vec::new();
            for e in layer {
                for n in self.neighbors(e)? {
                    if reached.insert(n) {
                        next.push(n);
                    }
                }
            }
            if next.is_empty() {
                break;
            }
            layer = next;
        }
        Ok(reached)
    }

    /// True iff every consecutive pair of edges overlaps.
    pub fn is_connected_path(&self, p: &ReasoningPath) -> Result<bool> {
        for e in p.edges() {
            self.edge(*e)?;
        }
        for w in p.edges().windows(2) {
            if self.overlap(w[0], w[1])?.is_empty() {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// Hop distance (in edges) from the seed set to every reachable edge.
    pub fn edge_distances(
        &self,
        seeds: &BTreeSet<HyperedgeId>,
    ) -> Result<BTreeMap<HyperedgeId, usize>> {
        let mut dist = BTreeMap::new();
        let mut queue = VecDeque::new();
        for &s in seeds {
            self.edge(s)?;
            dist.insert(s, 0);
            queue.push_back(s);
        }
        while let Some(e) = queue.pop_front() {
            let d = dist[&e];
            for n in self.neighbors(e)? {
                if let std::collections::btree_map::Entry::Vacant(slot) = dist.entry(n) {
                    slot.insert(d + 1);
                    queue.push_back(n);
                }
            }
        }
        Ok(dist)
    }

    /// Checks the incidence index against edge membership and entity references.
    pub fn check_integrity(&self) -> Result<()> {
        for (id, v) in &self.entities {
            if *id != v.id {
                return Err(Error::Integrity(format!("entity key {id} holds {}", v.id)));
            }
            if v.name.trim().is_empty() {
                return Err(Error::Integrity(format!("entity {id} has an empty name")));
            }
        }
        let mut expected: BTreeMap<EntityId, BTreeSet<HyperedgeId>> = self
            .entities
            .keys()
            .map(|&v| (v, BTreeSet::new()))
            .collect();
        for (id, e) in &self.hyperedges {
            if *id != e.id {
                return Err(Error::Integrity(format!("edge key {id} holds {}", e.id)));
            }
            validate_edge(&e.name, &e.entities, e.source_ref.as_deref(), e.kind)?;
            for v in &e.entities {
                expected
                    .get_mut(v)
                    .ok_or_else(|| {
                        Error::Integrity(format!("edge {id} references missing entity {v}"))
                    })?
                    .insert(*id);
            }
        }
        if expected != self.incidence {
            return Err(Error::Integrity(
                "incidence index is not the inverse of edge membership".into(),
            ));
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON encoding.
    pub fn content_hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("graph serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn next_entity_id(&self) -> EntityId {
        EntityId(self.entities.keys().next_back().map_or(0, |v| v.0 + 1))
    }

    pub fn next_edge_id(&self) -> HyperedgeId {
        HyperedgeId(self.hyperedges.keys().next_back().map_or(0, |e| e.0 + 1))
    }

    pub(crate) fn from_parts(
        entities: BTreeMap<EntityId, Entity>,
        hyperedges: BTreeMap<HyperedgeId, Hyperedge>,
        incidence: BTreeMap<EntityId, BTreeSet<HyperedgeId>>,
    ) -> Result<Self> {
        let g = Self {
            entities,
            hyperedges,
            incidence,
        };
        g.check_integrity()?;
        Ok(g)
    }
}

/// Append-only construction of a [`KnowledgeHypergraph`].
#[derive(Debug, Default)]
pub struct GraphBuilder {
    graph: KnowledgeHypergraph,
    by_name: HashMap<String, EntityId>,
    edge_keys: HashSet<(String, BTreeSet<EntityId>)>,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Starts from an existing graph, keeping all ids.
    pub fn from_graph(g: &KnowledgeHypergraph) -> Self {
        let by_name = g.entities().map(|v| (v.name.clone(), v.id)).collect();
        let edge_keys = g
            .hyperedges()
            .map(|e| (e.name.clone(), e.entity_set()))
            .collect();
        Self {
            graph: g.clone(),
            by_name,
            edge_keys,
        }
    }

    pub fn entity_id(&self, name: &str) -> Option<EntityId> {
        self.by_name.get(name).copied()
    }

    /// Adds an entity or returns the existing one with the same exact name.
    /// A new non-empty description is appended to an existing entity's.
    pub fn add_entity(&mut self, name: &str, description: &str) -> Result<EntityId> {
        if name.trim().is_empty() {
            return Err(Error::InvalidEntity("blank entity name".into()));
        }
        if let Some(&id) = self.by_name.get(name) {
            let entity = self
                .graph
                .entities
                .get_mut(&id)
                .expect("name index in sync");
            let description = description.trim();
            if !description.is_empty() && !entity.description.contains(description) {
                if !entity.description.is_empty() {
                    entity.description.push('\n');
                }
                entity.description.push_str(description);
            }
            return Ok(id);
        }
        let id = self.graph.next_entity_id();
        self.insert_entity(Entity {
            id,
            name: name.to_string(),
            description: description.trim().to_string(),
            canonical_of: None,
            merged: Vec::new(),
        })?;
        Ok(id)
    }

    /// Inserts an entity with a caller-chosen id.
    pub fn insert_entity(&mut self, entity: Entity) -> Result<()> {
        if entity.name.trim().is_empty() {
            return Err(Error::InvalidEntity(format!(
                "{} has a blank name",
                entity.id
            )));
        }
        if self.graph.entities.contains_key(&entity.id) {
            return Err(Error::InvalidEntity(format!("duplicate id {}", entity.id)));
        }
        self.by_name.entry(entity.name.clone()).or_insert(entity.id);
        self.graph.incidence.entry(entity.id).or_default();
        self.graph.entities.insert(entity.id, entity);
        Ok(())
    }

    /// Adds a hyperedge; returns `None` when an edge with the same name and
    /// entity set already exists.
    pub fn add_edge(
        &mut self,
        name: &str,
        entities: Vec<EntityId>,
        source_ref: Option<String>,
        kind: EdgeKind,
    ) -> Result<Option<HyperedgeId>> {
        let id = self.graph.next_edge_id();
        let edge = Hyperedge {
            id,
            name: name.to_string(),
            entities,
            source_ref,
            kind,
        };
        if self
            .edge_keys
            .contains(&(edge.name.clone(), edge.entity_set()))
        {
            validate_edge(
                &edge.name,
                &edge.entities,
                edge.source_ref.as_deref(),
                edge.kind,
            )?;
            return Ok(None);
        }
        self.insert_edge(edge)?;
        Ok(Some(id))
    }

    /// Inserts a hyperedge with a caller-chosen id.
    pub fn insert_edge(&mut self, edge: Hyperedge) -> Result<()> {
        validate_edge(
            &edge.name,
            &edge.entities,
            edge.source_ref.as_deref(),
            edge.kind,
        )?;
        if self.graph.hyperedges.contains_key(&edge.id) {
            return Err(Error::InvalidEdge(format!("duplicate id {}", edge.id)));
        }
        for v in &edge.entities {
            if !self.graph.has_entity(*v) {
                return Err(Error::UnknownEntity(*v));
            }
        }
        for v in &edge.entities {
            self.graph.incidence.entry(*v).or_default().insert(edge.id);
        }
        self.edge_keys
            .insert((edge.name.clone(), edge.entity_set()));
        self.graph.hyperedges.insert(edge.id, edge);
        Ok(())
    }

    pub fn freeze(self) -> KnowledgeHypergraph {
        self.graph
    }
}
