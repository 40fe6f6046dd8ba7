//! Versioned graph files.
//!
//! Binary layout (little endian), used for every extension except `.json`:
//!
//! ```text
//! magic "KHGRAPH\0" | u32 version
//! u32 n_entities  { u32 id | str name | str desc | opt<u32> canonical_of
//!                   | u32 n_merged { u32 id | str name | str desc } }
//! u32 n_edges     { u32 id | str name | u8 kind | opt<str> source_ref
//!                   | u32 arity { u32 entity } }
//! u32 n_incidence { u32 entity | u32 len { u32 edge } }
//! ```
//!
//! `str` is a u32 byte length followed by UTF-8; `opt<T>` is a u8 flag then
//! `T`. `.json` files hold `{format, version, graph}`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    EdgeKind, Entity, EntityId, Hyperedge, HyperedgeId, KnowledgeHypergraph, MergedEntity,
};
use crate::error::{Error, Result};

pub const GRAPH_FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"KHGRAPH\0";
const JSON_FORMAT: &str = "kh-graph";

#[derive(Serialize, Deserialize)]
struct JsonEnvelope {
    format: String,
    version: u32,
    graph: KnowledgeHypergraph,
}

fn is_json(path: &Path) -> bool {
    path.extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

pub fn save_graph(g: &KnowledgeHypergraph, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    if is_json(path) {
        let env = JsonEnvelope {
            format: JSON_FORMAT.into(),
            version: GRAPH_FORMAT_VERSION,
            graph: g.clone(),
        };
        fs::write(path, serde_json::to_vec_pretty(&env)?)?;
    } else {
        let mut buf = Vec::new();
        encode(g, &mut buf)?;
        fs::write(path, buf)?;
    }
    Ok(())
}

pub fn load_graph(path: &Path) -> Result<KnowledgeHypergraph> {
    if !path.exists() {
        return Err(Error::MissingArtifact {
            path: path.to_path_buf(),
            hint: "run `hyperplan build --facts <facts.jsonl> --out <graph>` first".into(),
        });
    }
    let bytes = fs::read(path)?;
    let g = if is_json(path) {
        let env: JsonEnvelope = serde_json::from_slice(&bytes)?;
        if env.format != JSON_FORMAT || env.version != GRAPH_FORMAT_VERSION {
            return Err(Error::Format(format!("{} v{}", env.format, env.version)));
        }
        KnowledgeHypergraph::from_parts(
            env.graph.entities,
            env.graph.hyperedges,
            env.graph.incidence,
        )?
    } else {
        decode(&mut bytes.as_slice())?
    };
    Ok(g)
}

fn put_u32(w: &mut impl Write, v: u32) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_len(w: &mut impl Write, n: usize) -> Result<()> {
    let n = u32::try_from(n).map_err(|_| Error::Format("length exceeds u32".into()))?;
    Ok(put_u32(w, n)?)
}

fn put_str(w: &mut impl Write, s: &str) -> Result<()> {
    put_len(w, s.len())?;
    Ok(w.write_all(s.as_bytes())?)
}

fn encode(g: &KnowledgeHypergraph, w: &mut impl Write) -> Result<()> {
    w.write_all(MAGIC)?;
    put_u32(w, GRAPH_FORMAT_VERSION)?;

    put_len(w, g.entities.len())?;
    for v in g.entities.values() {
        put_u32(w, v.id.0)?;
        put_str(w, &v.name)?;
        put_str(w, &v.description)?;
        match v.canonical_of {
            Some(c) => {
                w.write_all(&[1])?;
                put_u32(w, c.0)?;
            }
            None => w.write_all(&[0])?,
        }
        put_len(w, v.merged.len())?;
        for m in &v.merged {
            put_u32(w, m.id.0)?;
            put_str(w, &m.name)?;
            put_str(w, &m.description)?;
        }
    }

    put_len(w, g.hyperedges.len())?;
    for e in g.hyperedges.values() {
        put_u32(w, e.id.0)?;
        put_str(w, &e.name)?;
        w.write_all(&[match e.kind {
            EdgeKind::Fact => 0,
            EdgeKind::Synonym => 1,
        }])?;
        match &e.source_ref {
            Some(r) => {
                w.write_all(&[1])?;
                put_str(w, r)?;
            }
            None => w.write_all(&[0])?,
        }
        put_len(w, e.entities.len())?;
        for v in &e.entities {
            put_u32(w, v.0)?;
        }
    }

    put_len(w, g.incidence.len())?;
    for (v, edges) in &g.incidence {
        put_u32(w, v.0)?;
        put_len(w, edges.len())?;
        for e in edges {
            put_u32(w, e.0)?;
        }
    }
    Ok(())
}

struct Reader<'a, R: Read>(&'a mut R);

impl<R: Read> Reader<'_, R> {
    fn u8(&mut self) -> Result<u8> {
        let mut b = [0u8; 1];
        self.0.read_exact(&mut b).map_err(truncated)?;
        Ok(b[0])
    }

    fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.0.read_exact(&mut b).map_err(truncated)?;
        Ok(u32::from_le_bytes(b))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let mut buf = vec![0u8; n];
        self.0.read_exact(&mut buf).map_err(truncated)?;
        String::from_utf8(buf).map_err(|e| Error::Format(format!("invalid UTF-8: {e}")))
    }

    fn flag(&mut self) -> Result<bool> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            b => Err(Error::Format(format!("bad flag byte {b}"))),
        }
    }
}

fn truncated(e: io::Error) -> Error {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        Error::Format("truncated graph file".into())
    } else {
        Error::Io(e)
    }
}

fn decode(r: &mut impl Read) -> Result<KnowledgeHypergraph> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a hypergraph file".into()));
    }
    let mut r = Reader(r);
    let version = r.u32()?;
    if version != GRAPH_FORMAT_VERSION {
        return Err(Error::Format(format!(
            "graph version {version} (expected {GRAPH_FORMAT_VERSION})"
        )));
    }

    let mut entities = BTreeMap::new();
    for _ in 0..r.u32()? {
        let id = EntityId(r.u32()?);
        let name = r.string()?;
        let description = r.string()?;
        let canonical_of = if r.flag()? {
            Some(EntityId(r.u32()?))
        } else {
            None
        };
        let mut merged = Vec::new();
        for _ in 0..r.u32()? {
            merged.push(MergedEntity {
                id: EntityId(r.u32()?),
                name: r.string()?,
                description: r.string()?,
            });
        }
        entities.insert(
            id,
            Entity {
                id,
                name,
                description,
                canonical_of,
                merged,
            },
        );
    }

    let mut hyperedges = BTreeMap::new();
    for _ in 0..r.u32()? {
        let id = HyperedgeId(r.u32()?);
        let name = r.string()?;
        let kind = match r.u8()? {
            0 => EdgeKind::Fact,
            1 => EdgeKind::Synonym,
            k => return Err(Error::Format(format!("bad edge kind {k}"))),
        };
        let source_ref = if r.flag()? { Some(r.string()?) } else { None };
        let arity = r.u32()?;
        let members = (0..arity)
            .map(|_| r.u32().map(EntityId))
            .collect::<Result<Vec<_>>>()?;
        hyperedges.insert(
            id,
            Hyperedge {
                id,
                name,
                entities: members,
                source_ref,
                kind,
            },
        );
    }

    let mut incidence = BTreeMap::new();
    for _ in 0..r.u32()? {
        let v = EntityId(r.u32()?);
        let len = r.u32()?;
        let edges = (0..len)
            .map(|_| r.u32().map(HyperedgeId))
            .collect::<Result<BTreeSet<_>>>()?;
        incidence.insert(v, edges);
    }

    KnowledgeHypergraph::from_parts(entities, hyperedges, incidence)
}
