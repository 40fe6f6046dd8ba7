use std::path::PathBuf;

use crate::graph::{EntityId, HyperedgeId};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("unknown hyperedge {0}")]
    UnknownEdge(HyperedgeId),

    #[error("unknown entity {0}")]
    UnknownEntity(EntityId),

    #[error("invalid hyperedge: {0}")]
    InvalidEdge(String),

    #[error("invalid entity: {0}")]
    InvalidEntity(String),

    #[error("invalid reasoning path: {0}")]
    InvalidPath(String),

    #[error("graph invariant violated: {0}")]
    Integrity(String),

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("zero-norm vector")]
    ZeroVector,

    #[error("malformed record at line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },

    #[error("hyperedges {0} and {1} do not overlap")]
    EmptyOverlap(HyperedgeId, HyperedgeId),

    #[error("dependency cycle: {}", format_cycle(.0))]
    Cycle(Vec<usize>),

    #[error("invalid plan: {0}")]
    InvalidPlan(String),

    #[error("no feasible plan")]
    NoFeasiblePlan,

    #[error("oracle {kind} failed on {item}: {source}")]
    OracleItem {
        kind: &'static str,
        item: String,
        #[source]
        source: Box<Error>,
    },

    #[error("oracle schema violation for {kind}: {diagnostics}")]
    SchemaViolation {
        kind: &'static str,
        diagnostics: String,
    },

    #[error("oracle backend unreachable: {0}")]
    BackendUnreachable(String),

    #[error("oracle backend error: {0}")]
    Backend(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("unsupported file format: {0}")]
    Format(String),

    #[error("missing artifact {path}: {hint}")]
    MissingArtifact { path: PathBuf, hint: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures caused by the oracle backend rather than by data.
    pub fn is_oracle(&self) -> bool {
        matches!(
            self,
            Error::OracleItem { .. }
                | Error::SchemaViolation { .. }
                | Error::BackendUnreachable(_)
                | Error::Backend(_)
        )
    }
}

fn format_cycle(nodes: &[usize]) -> String {
    nodes
        .iter()
        .map(|n| n.to_string())
        .collect::<Vec<_>>()
        .join(" -> ")
}
