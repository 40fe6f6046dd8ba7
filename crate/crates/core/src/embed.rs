//! Embedding vectors and exact cosine top-k indexes.
//!
//! Three indexes are kept per graph: entity names, entity descriptions and
//! hyperedge names. Lookups are exact brute-force scans; vectors are
//! L2-normalized on insert.
//!
//! Index files are a binary header (`magic, version, kind, dim, count,
//! sha256 of the source texts`) followed by packed little-endian `f32` rows,
//! plus a JSON sidecar `<file>.ids.json` mapping row number to item id.

use std::cmp::Ordering;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::KnowledgeHypergraph;
use crate::oracle::{CallSite, OracleGateway};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    values: Vec<f32>,
}

impl EmbeddingVector {
    /// Rejects empty and zero vectors; normalizes to unit length.
    pub fn new(values: Vec<f32>) -> Result<Self> {
        Self::raw(values)?.normalized()
    }

    /// Keeps the values as given (still rejects empty or zero input).
    pub fn raw(values: Vec<f32>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::DimensionMismatch { left: 0, right: 0 });
        }
        let v = Self { values };
        if v.norm() == 0.0 {
            return Err(Error::ZeroVector);
        }
        Ok(v)
    }

    fn normalized(self) -> Result<Self> {
        let n = self.norm();
        Ok(Self {
            values: self.values.iter().map(|x| (*x as f64 / n) as f32).collect(),
        })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    fn norm(&self) -> f64 {
        self.values
            .iter()
            .map(|x| (*x as f64).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

fn cosine_slices(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let (mut dot, mut na, mut nb) = (0f64, 0f64, 0f64);
    for (x, y) in a.iter().zip(b) {
        let (x, y) = (*x as f64, *y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((dot / (na * nb).sqrt()).clamp(-1.0, 1.0))
}

/// Cosine similarity in `[-1, 1]`.
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    cosine_slices(&a.values, &b.values)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndexKind {
    EntityName,
    EntityDesc,
    HyperedgeName,
}

impl IndexKind {
    pub const ALL: [IndexKind; 3] = [
        IndexKind::EntityName,
        IndexKind::EntityDesc,
        IndexKind::HyperedgeName,
    ];

    pub fn file_stem(self) -> &'static str {
        match self {
            IndexKind::EntityName => "entity_name",
            IndexKind::EntityDesc => "entity_desc",
            IndexKind::HyperedgeName => "hyperedge_name",
        }
    }

    fn code(self) -> u8 {
        match self {
            IndexKind::EntityName => 0,
            IndexKind::EntityDesc => 1,
            IndexKind::HyperedgeName => 2,
        }
    }

    fn from_code(c: u8) -> Result<Self> {
        Ok(match c {
            0 => IndexKind::EntityName,
            1 => IndexKind::EntityDesc,
            2 => IndexKind::HyperedgeName,
            _ => return Err(Error::Format(format!("unknown index kind {c}"))),
        })
    }

    /// `(id, text)` pairs in ascending id order. Entities without a
    /// description are embedded by name.
    pub fn source_texts(self, g: &KnowledgeHypergraph) -> Vec<(u32, String)> {
        match self {
            IndexKind::EntityName => g.entities().map(|v| (v.id.0, v.name.clone())).collect(),
            IndexKind::EntityDesc => g
                .entities()
                .map(|v| {
                    let text = if v.description.trim().is_empty() {
                        &v.name
                    } else {
                        &v.description
                    };
                    (v.id.0, text.clone())
                })
                .collect(),
            IndexKind::HyperedgeName => g.hyperedges().map(|e| (e.id.0, e.name.clone())).collect(),
        }
    }
}

pub fn source_hash(texts: &[(u32, String)]) -> [u8; 32] {
    let mut h = Sha256::new();
    for (id, text) in texts {
        h.update(id.to_le_bytes());
        h.update((text.len() as u64).to_le_bytes());
        h.update(text.as_bytes());
    }
    h.finalize().into()
}

/// Exact cosine index keyed by raw entity or hyperedge id.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex {
    kind: IndexKind,
    dim: usize,
    ids: Vec<u32>,
    rows: Vec<f32>,
    source_hash: [u8; 32],
}

const INDEX_MAGIC: &[u8; 8] = b"KHVINDEX";
pub const INDEX_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Sidecar {
    kind: IndexKind,
    ids: Vec<u32>,
}

impl VectorIndex {
    /// Builds from `(id, vector)` pairs; vectors are normalized.
    pub fn from_vectors(
        kind: IndexKind,
        mut entries: Vec<(u32, EmbeddingVector)>,
        source_hash: [u8; 32],
    ) -> Result<Self> {
        entries.sort_by_key(|(id, _)| *id);
        if let Some(w) = entries.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(Error::Format(format!("duplicate index id {}", w[0].0)));
        }
        let dim = entries.first().map_or(0, |(_, v)| v.dim());
        let mut ids = Vec::with_capacity(entries.len());
        let mut rows = Vec::with_capacity(entries.len() * dim);
        for (id, v) in entries {
            if v.dim() != dim {
                return Err(Error::DimensionMismatch {
                    left: dim,
                    right: v.dim(),
                });
            }
            let v = v.normalized()?;
            ids.push(id);
            rows.extend_from_slice(v.values());
        }
        Ok(Self {
            kind,
            dim,
            ids,
            rows,
            source_hash,
        })
    }

    pub fn kind(&self) -> IndexKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn source_hash_hex(&self) -> String {
        hex::encode(self.source_hash)
    }

    fn row(&self, i: usize) -> &[f32] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }

    pub fn get(&self, id: u32) -> Option<&[f32]> {
        self.ids.binary_search(&id).ok().map(|i| self.row(i))
    }

    pub fn vector(&self, id: u32) -> Option<EmbeddingVector> {
        self.get(id).map(|r| EmbeddingVector { values: r.to_vec() })
    }

    /// Cosine between the stored vector for `id` and `query`.
    pub fn similarity(&self, id: u32, query: &EmbeddingVector) -> Option<Result<f64>> {
        self.get(id).map(|r| cosine_slices(r, query.values()))
    }

    /// Up to `k` entries scoring at least `threshold`, by score descending
    /// then id ascending.
    pub fn top_k_above(
        &self,
        query: &EmbeddingVector,
        k: usize,
        threshold: f64,
    ) -> Result<Vec<(u32, f64)>> {
        if self.is_empty() || k == 0 {
            return Ok(Vec::new());
        }
        let mut scored = Vec::new();
        for (i, id) in self.ids.iter().enumerate() {
            let s = cosine_slices(self.row(i), query.values())?;
            if s >= threshold {
                scored.push((*id, s));
            }
        }
        scored.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .unwrap_or(Ordering::Equal)
                .then(a.0.cmp(&b.0))
        });
        scored.truncate(k);
        Ok(scored)
    }

    /// Copy containing only the ids accepted by `keep`.
    pub fn restricted(&self, keep: impl Fn(u32) -> bool) -> Self {
        let mut ids = Vec::new();
        let mut rows = Vec::new();
        for (i, id) in self.ids.iter().enumerate() {
            if keep(*id) {
                ids.push(*id);
                rows.extend_from_slice(self.row(i));
            }
        }
        Self {
            kind: self.kind,
            dim: self.dim,
            ids,
            rows,
            source_hash: self.source_hash,
        }
    }

    pub fn sidecar_path(path: &Path) -> PathBuf {
        let mut s = path.as_os_str().to_owned();
        s.push(".ids.json");
        PathBuf::from(s)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + self.rows.len() * 4);
        out.extend_from_slice(INDEX_MAGIC);
        out.extend_from_slice(&INDEX_FORMAT_VERSION.to_le_bytes());
        out.push(self.kind.code());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.ids.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.source_hash);
        for x in &self.rows {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(path, self.to_bytes())?;
        let sidecar = Sidecar {
            kind: self.kind,
            ids: self.ids.clone(),
        };
        fs::write(Self::sidecar_path(path), serde_json::to_vec(&sidecar)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact {
                path: path.to_path_buf(),
                hint: "run `hyperplan index --graph <graph>` first".into(),
            });
        }
        let bytes = fs::read(path)?;
        let header = 8 + 4 + 1 + 4 + 4 + 32;
        if bytes.len() < header || &bytes[..8] != INDEX_MAGIC {
            return Err(Error::Format(format!(
                "{} is not an index file",
                path.display()
            )));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
        let version = u32_at(8);
        if version != INDEX_FORMAT_VERSION {
            return Err(Error::Format(format!("index version {version}")));
        }
        let kind = IndexKind::from_code(bytes[12])?;
        let dim = u32_at(13) as usize;
        let count = u32_at(17) as usize;
        let source_hash: [u8; 32] = bytes[21..53].try_into().expect("32 bytes");
        let body = &bytes[header..];
        if body.len() != dim * count * 4 {
            return Err(Error::Format(format!(
                "index body has {} bytes, expected {}",
                body.len(),
                dim * count * 4
            )));
        }
        let rows = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let sidecar: Sidecar = serde_json::from_slice(&fs::read(Self::sidecar_path(path))?)?;
        if sidecar.kind != kind || sidecar.ids.len() != count {
            return Err(Error::Format("index sidecar does not match header".into()));
        }
        Ok(Self {
            kind,
            dim,
            ids: sidecar.ids,
            rows,
            source_hash,
        })
    }
}

/// Embeds every item of `kind` through the gateway.
pub fn build_index(
    g: &KnowledgeHypergraph,
    kind: IndexKind,
    gateway: &OracleGateway,
) -> Result<VectorIndex> {
    let texts = kind.source_texts(g);
    let hash = source_hash(&texts);
    let mut entries = Vec::with_capacity(texts.len());
    for (id, text) in &texts {
        let v = gateway
            .embed(CallSite::EmbedIndex, text)
            .map_err(|e| Error::OracleItem {
                kind: "Embed",
                item: format!("{kind:?}#{id}"),
                source: Box::new(e),
            })?;
        entries.push((*id, v));
    }
    VectorIndex::from_vectors(kind, entries, hash)
}

/// The three indexes a graph is queried through.
#[derive(Debug, Clone)]
pub struct IndexSet {
    pub entity_name: VectorIndex,
    pub entity_desc: VectorIndex,
    pub hyperedge_name: VectorIndex,
}

impl IndexSet {
    pub fn build(g: &KnowledgeHypergraph, gateway: &OracleGateway) -> Result<Self> {
        Ok(Self {
            entity_name: build_index(g, IndexKind::EntityName, gateway)?,
            entity_desc: build_index(g, IndexKind::EntityDesc, gateway)?,
            hyperedge_name: build_index(g, IndexKind::HyperedgeName, gateway)?,
        })
    }

    pub fn get(&self, kind: IndexKind) -> &VectorIndex {
        match kind {
            IndexKind::EntityName => &self.entity_name,
            IndexKind::EntityDesc => &self.entity_desc,
            IndexKind::HyperedgeName => &self.hyperedge_name,
        }
    }

    pub fn path_for(dir: &Path, kind: IndexKind) -> PathBuf {
        dir.join(format!("{}.idx", kind.file_stem()))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        for kind in IndexKind::ALL {
            self.get(kind).save(&Self::path_for(dir, kind))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Ok(Self {
            entity_name: VectorIndex::load(&Self::path_for(dir, IndexKind::EntityName))?,
            entity_desc: VectorIndex::load(&Self::path_for(dir, IndexKind::EntityDesc))?,
            hyperedge_name: VectorIndex::load(&Self::path_for(dir, IndexKind::HyperedgeName))?,
        })
    }

    /// True when every index was built from the graph's current texts.
    pub fn matches(&self, g: &KnowledgeHypergraph) -> bool {
        IndexKind::ALL
            .iter()
            .all(|k| self.get(*k).source_hash == source_hash(&k.source_texts(g)))
    }
}
