//! Plan-guided multi-hop question answering over knowledge hypergraphs.
//!
//! The pipeline anchors a question in a [`graph::KnowledgeHypergraph`],
//! sketches a plan context, asks an oracle for reasoning plans, searches
//! over partially completed reasoning DAGs and retrieves answer paths with
//! an entity-weighted beam search. Every LLM or embedding call goes through
//! [`oracle::OracleGateway`], which ships with a deterministic mock backend.

pub mod anchoring;
pub mod chunks;
pub mod config;
pub mod construction;
pub mod embed;
pub mod error;
pub mod eval;
pub mod generation;
pub mod graph;
pub mod oracle;
pub mod pipeline;
pub mod planning;
pub mod reasoning;
pub mod retrieval;
pub mod text;

pub use anchoring::{AnchorConfig, AnchorSet, QuestionSubgraph};
pub use config::{Preset, RunConfig, SearchStrategy};
pub use embed::{cosine_similarity, EmbeddingVector, IndexKind, IndexSet, VectorIndex};
pub use error::{Error, Result};
pub use eval::{f1_score, EvalResult};
pub use graph::{
    EdgeKind, Entity, EntityId, GraphBuilder, Hyperedge, HyperedgeId, KnowledgeHypergraph,
    ReasoningPath,
};
pub use oracle::{CallSite, MockFixtures, OracleGateway};
pub use pipeline::{Engine, QueryResult, RunManifest};
pub use planning::{Aggregator, ReasoningDag, ReasoningPlan, Subquestion};
pub use reasoning::SearchStats;
pub use retrieval::{AnswerPathPair, RetrievalConfig};
