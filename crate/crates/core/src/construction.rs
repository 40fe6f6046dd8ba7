//! Graph construction from pre-extracted fact records and synonym
//! augmentation.
//!
//! Input is JSONL, one record per line:
//!
//! ```json
//! {"edge_name": "...", "entity_names": ["A", "B"],
//!  "entity_descriptions": {"A": "..."}, "chunk_id": "c1"}
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use tracing::{info, warn};

use crate::embed::{build_index, cosine_similarity, IndexKind, VectorIndex};
use crate::error::{Error, Result};
use crate::graph::{EdgeKind, EntityId, GraphBuilder, HyperedgeId, KnowledgeHypergraph};
use crate::oracle::{CallSite, EntityBrief, OracleGateway, Outcome};

pub const DEFAULT_JUDGE_BATCH: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactRecord {
    pub edge_name: String,
    pub entity_names: Vec<String>,
    #[serde(default)]
    pub entity_descriptions: BTreeMap<String, String>,
    #[serde(default)]
    pub chunk_id: String,
}

impl FactRecord {
    fn check(&self) -> std::result::Result<(), String> {
        if self.edge_name.trim().is_empty() {
            return Err("edge_name is blank".into());
        }
        if self.entity_names.is_empty() {
            return Err("entity_names is empty".into());
        }
        if self.entity_names.iter().any(|n| n.trim().is_empty()) {
            return Err("entity name is blank".into());
        }
        Ok(())
    }
}

/// Adds one record; returns the new edge id, or `None` for a duplicate.
fn add_record(b: &mut GraphBuilder, rec: &FactRecord) -> Result<Option<HyperedgeId>> {
    let mut ids = Vec::with_capacity(rec.entity_names.len());
    for name in &rec.entity_names {
        let name = name.trim();
        let desc = rec
            .entity_descriptions
            .get(name)
            .map(String::as_str)
            .unwrap_or("");
        let id = b.add_entity(name, desc)?;
        if !ids.contains(&id) {
            ids.push(id);
        }
    }
    let chunk = Some(rec.chunk_id.trim().to_string()).filter(|c| !c.is_empty());
    b.add_edge(rec.edge_name.trim(), ids, chunk, EdgeKind::Fact)
}

/// Builds a graph from records. Entities are shared by exact (trimmed)
/// name; records repeating an edge name and entity set are dropped.
pub fn ingest_records<I: IntoIterator<Item = FactRecord>>(
    records: I,
) -> Result<KnowledgeHypergraph> {
    let mut b = GraphBuilder::new();
    for (i, rec) in records.into_iter().enumerate() {
        rec.check().map_err(|reason| Error::MalformedRecord {
            line: i + 1,
            reason,
        })?;
        add_record(&mut b, &rec)?;
    }
    Ok(b.freeze())
}

/// Reads JSONL fact records. Blank lines are skipped; errors carry the
/// 1-based line number.
pub fn ingest_facts(reader: impl BufRead) -> Result<KnowledgeHypergraph> {
    let mut b = GraphBuilder::new();
    let mut dropped = 0usize;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |reason: String| Error::MalformedRecord {
            line: i + 1,
            reason,
        };
        let rec: FactRecord = serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        rec.check().map_err(malformed)?;
        if add_record(&mut b, &rec)?.is_none() {
            dropped += 1;
        }
    }
    let g = b.freeze();
    info!(
        entities = g.entity_count(),
        edges = g.edge_count(),
        dropped,
        "ingested facts"
    );
    Ok(g)
}

/// Unordered entity pair whose name similarity reached the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityEdge {
    pub a: EntityId,
    pub b: EntityId,
    pub score: f64,
}

/// All entity pairs with name similarity `>= tau`, ordered by `(a, b)`.
pub fn similarity_candidates(name_index: &VectorIndex, tau: f64) -> Result<Vec<SimilarityEdge>> {
    let ids = name_index.ids();
    let vectors: Vec<_> = ids
        .iter()
        .map(|id| name_index.vector(*id).expect("indexed id"))
        .collect();
    let mut out = Vec::new();
    for i in 0..ids.len() {
        for j in i + 1..ids.len() {
            let score = cosine_similarity(&vectors[i], &vectors[j])?;
            if score >= tau {
                out.push(SimilarityEdge {
                    a: EntityId(ids[i]),
                    b: EntityId(ids[j]),
                    score,
                });
            }
        }
    }
    Ok(out)
}

/// Connected components of the similarity graph, singletons excluded,
/// ordered by smallest member.
pub fn similarity_components(edges: &[SimilarityEdge]) -> Vec<BTreeSet<EntityId>> {
    let mut parent: BTreeMap<EntityId, EntityId> = BTreeMap::new();
    fn root(parent: &mut BTreeMap<EntityId, EntityId>, v: EntityId) -> EntityId {
        let mut r = *parent.entry(v).or_insert(v);
        while parent[&r] != r {
            r = parent[&r];
        }
        let mut cur = v;
        while parent[&cur] != r {
            let next = parent[&cur];
            parent.insert(cur, r);
            cur = next;
        }
        r
    }
    for e in edges {
        let (ra, rb) = (root(&mut parent, e.a), root(&mut parent, e.b));
        if ra != rb {
            parent.insert(ra.max(rb), ra.min(rb));
        }
    }
    let mut groups: BTreeMap<EntityId, BTreeSet<EntityId>> = BTreeMap::new();
    let members: Vec<EntityId> = parent.keys().copied().collect();
    for v in members {
        let r = root(&mut parent, v);
        groups.entry(r).or_default().insert(v);
    }
    groups.into_values().filter(|g| g.len() >= 2).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AugmentOutcome {
    pub graph: KnowledgeHypergraph,
    pub added: Vec<HyperedgeId>,
    /// Judge batches that failed and were skipped.
    pub skipped_batches: usize,
}

/// Asks the judge which members of each component are synonyms and adds a
/// synonym hyperedge over every confirmed set of two or more. Components
/// larger than `batch` are judged in slices.
pub fn augment_synonyms(
    g: &KnowledgeHypergraph,
    components: &[BTreeSet<EntityId>],
    gateway: &OracleGateway,
    batch: usize,
) -> Result<AugmentOutcome> {
    let mut b = GraphBuilder::from_graph(g);
    let mut added = Vec::new();
    let mut skipped = 0usize;
    for component in components {
        let members: Vec<EntityId> = component.iter().copied().collect();
        for slice in members.chunks(batch.max(2)) {
            if slice.len() < 2 {
                continue;
            }
            let briefs = slice
                .iter()
                .map(|v| {
                    let e = g.entity(*v)?;
                    Ok(EntityBrief {
                        id: e.id,
                        name: e.name.clone(),
                        description: e.description.clone(),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let confirmed: Vec<EntityId> = match gateway
                .judge_synonyms(CallSite::Construction, briefs)
            {
                Ok(Outcome::Answer(r)) if r.synonymous => {
                    let mut m: Vec<EntityId> = r
                        .members
                        .into_iter()
                        .filter(|v| slice.contains(v))
                        .collect();
                    m.sort();
                    m.dedup();
                    m
                }
                Ok(_) => Vec::new(),
                Err(e) => {
                    warn!(error = %e, first = %slice[0], "synonym judge failed, skipping batch");
                    skipped += 1;
                    Vec::new()
                }
            };
            if confirmed.len() < 2 {
                continue;
            }
            let names = confirmed
                .iter()
                .map(|v| g.entity(*v).map(|e| e.name.clone()))
                .collect::<Result<Vec<_>>>()?;
            let name = format!("synonyms: {}", names.join(" | "));
            if let Some(id) = b.add_edge(&name, confirmed, None, EdgeKind::Synonym)? {
                added.push(id);
            }
        }
    }
    Ok(AugmentOutcome {
        graph: b.freeze(),
        added,
        skipped_batches: skipped,
    })
}

/// Candidate pairing and judging in one step.
pub fn augment(
    g: &KnowledgeHypergraph,
    gateway: &OracleGateway,
    tau: f64,
    batch: usize,
) -> Result<AugmentOutcome> {
    let index = build_index(g, IndexKind::EntityName, gateway)?;
    let pairs = similarity_candidates(&index, tau)?;
    let components = similarity_components(&pairs);
    info!(
        pairs = pairs.len(),
        components = components.len(),
        "synonym candidates"
    );
    augment_synonyms(g, &components, gateway, batch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::MockFixtures;
    use proptest::prelude::*;

    fn rec(edge: &str, names: &[&str]) -> FactRecord {
        FactRecord {
            edge_name: edge.into(),
            entity_names: names.iter().map(|s| s.to_string()).collect(),
            entity_descriptions: BTreeMap::new(),
            chunk_id: "c1".into(),
        }
    }

    fn pair(a: u32, b: u32) -> SimilarityEdge {
        SimilarityEdge {
            a: EntityId(a),
            b: EntityId(b),
            score: 1.0,
        }
    }

    #[test]
    fn ingest_examples() {
        let one = ingest_records([rec("x", &["A", "B", "C"])]).unwrap();
        assert_eq!((one.entity_count(), one.edge_count()), (3, 1));

        let fig = ingest_records([rec(
            "Mario + Rabbids Kingdom Battle is the first major collaboration between Nintendo and Ubisoft.",
            &["Mario + Rabbids Kingdom Battle", "Nintendo", "Ubisoft"],
        )])
        .unwrap();
        assert_eq!(fig.hyperedges().next().unwrap().entities.len(), 3);

        let shared =
            ingest_records([rec("f1", &["GAAP", "X"]), rec("f2", &["GAAP", "Y"])]).unwrap();
        let gaap = shared.find_entity("GAAP").unwrap().id;
        assert_eq!(shared.incident_edges(gaap).unwrap().len(), 2);
        assert_eq!(shared.entity_count(), 3);
    }

    #[test]
    fn jsonl_ingest_drops_duplicates_and_reports_lines() {
        let text = r#"{"edge_name": "f1", "entity_names": ["A", "B"], "entity_descriptions": {"A": "first"}, "chunk_id": "c1"}

{"edge_name": "f1", "entity_names": ["B", "A"], "chunk_id": "c9"}
{"edge_name": "f2", "entity_names": ["A"], "chunk_id": ""}
"#;
        let g = ingest_facts(text.as_bytes()).unwrap();
        assert_eq!(g.edge_count(), 2);
        assert_eq!(g.find_entity("A").unwrap().description, "first");
        assert_eq!(g.find_edge("f2").unwrap().source_ref, None);

        let bad = "{\"edge_name\": \"f1\", \"entity_names\": [\"A\"]}\n{\"edge_name\": \"f2\", \"entity_names\": []}\n";
        match ingest_facts(bad.as_bytes()) {
            Err(Error::MalformedRecord { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            ingest_facts("not json\n".as_bytes()),
            Err(Error::MalformedRecord { line: 1, .. })
        ));
    }

    #[test]
    fn component_examples() {
        let c = similarity_components(&[pair(0, 1), pair(1, 2)]);
        assert_eq!(
            c,
            vec![BTreeSet::from([EntityId(0), EntityId(1), EntityId(2)])]
        );
        let c = similarity_components(&[pair(0, 1), pair(2, 3)]);
        assert_eq!(c.len(), 2);
        assert!(similarity_components(&[]).is_empty());
    }

    #[test]
    fn candidate_examples() {
        let gw = OracleGateway::mock(MockFixtures::default());
        let g = ingest_records([rec("f", &["New  York", "New York", "Ubisoft"])]).unwrap();
        let idx = build_index(&g, IndexKind::EntityName, &gw).unwrap();
        let pairs = similarity_candidates(&idx, 0.85).unwrap();
        assert_eq!(pairs.len(), 1);
        assert!((pairs[0].score - 1.0).abs() < 1e-9);

        let random = ingest_records([rec("f", &["qzxv", "bnmlk", "wrtyp", "ghjd"])]).unwrap();
        let idx = build_index(&random, IndexKind::EntityName, &gw).unwrap();
        assert!(similarity_candidates(&idx, 0.99).unwrap().is_empty());

        let single = ingest_records([rec("f", &["A"])]).unwrap();
        let idx = build_index(&single, IndexKind::EntityName, &gw).unwrap();
        assert!(similarity_candidates(&idx, -1.0).unwrap().is_empty());
    }

    #[test]
    fn augmentation() {
        let gw = OracleGateway::mock(MockFixtures {
            aliases: vec![vec!["NY".into(), "New York".into()]],
            ..Default::default()
        });
        let g = ingest_records([
            rec("f1", &["NY", "New York"]),
            rec("f2", &["bank (river)", "bank (finance)"]),
        ])
        .unwrap();
        let id = |n: &str| g.find_entity(n).unwrap().id;
        let comps = vec![
            BTreeSet::from([id("NY"), id("New York")]),
            BTreeSet::from([id("bank (river)"), id("bank (finance)")]),
        ];
        let out = augment_synonyms(&g, &comps, &gw, DEFAULT_JUDGE_BATCH).unwrap();
        assert_eq!(out.added.len(), 1);
        let syn = out.graph.edge(out.added[0]).unwrap();
        assert_eq!(syn.kind, EdgeKind::Synonym);
        assert_eq!(syn.entities.len(), 2);
        for e in g.hyperedges() {
            assert_eq!(out.graph.edge(e.id).unwrap(), e);
        }
        let same = augment_synonyms(&g, &[], &gw, DEFAULT_JUDGE_BATCH).unwrap();
        assert_eq!(same.graph, g);
    }

    #[test]
    fn big_components_are_judged_in_batches() {
        let gw = OracleGateway::mock(MockFixtures::default());
        let names: Vec<String> = (0..45).map(|i| format!("n{i}")).collect();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let g = ingest_records([rec("f", &refs)]).unwrap();
        let comp: BTreeSet<EntityId> = g.entity_ids().collect();
        augment_synonyms(&g, &[comp], &gw, 20).unwrap();
        assert_eq!(gw.calls_of(crate::oracle::OracleKind::SynonymJudge), 3);
    }

    fn brute_components(n: u32, edges: &[SimilarityEdge]) -> Vec<BTreeSet<EntityId>> {
        let mut reach = vec![vec![false; n as usize]; n as usize];
        for (i, row) in reach.iter_mut().enumerate() {
            row[i] = true;
        }
        for e in edges {
            reach[e.a.0 as usize][e.b.0 as usize] = true;
            reach[e.b.0 as usize][e.a.0 as usize] = true;
        }
        for k in 0..n as usize {
            for i in 0..n as usize {
                for j in 0..n as usize {
                    if reach[i][k] && reach[k][j] {
                        reach[i][j] = true;
                    }
                }
            }
        }
        let mut out: Vec<BTreeSet<EntityId>> = Vec::new();
        for row in &reach {
            let group: BTreeSet<EntityId> = (0..n as usize)
                .filter(|&j| row[j])
                .map(|j| EntityId(j as u32))
                .collect();
            if group.len() >= 2 && !out.contains(&group) {
                out.push(group);
            }
        }
        out
    }

    proptest! {
        #[test]
        fn components_match_transitive_closure(raw in proptest::collection::vec((0u32..12, 0u32..12), 0..20)) {
            let edges: Vec<SimilarityEdge> = raw.into_iter().filter(|(a, b)| a != b).map(|(a, b)| pair(a.min(b), a.max(b))).collect();
            prop_assert_eq!(similarity_components(&edges), brute_components(12, &edges));
        }
    }
}
