//! Source chunk lookup for knowledge fusion.

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

pub trait ChunkStore: Send + Sync {
    fn get(&self, chunk_id: &str) -> Option<String>;
}

/// Chunks kept in memory.
#[derive(Debug, Clone, Default)]
pub struct MemoryChunks(pub BTreeMap<String, String>);

impl ChunkStore for MemoryChunks {
    fn get(&self, chunk_id: &str) -> Option<String> {
        self.0.get(chunk_id).cloned()
    }
}

/// One `<chunk_id>.txt` file per chunk under a directory.
#[derive(Debug, Clone)]
pub struct DirChunks {
    root: PathBuf,
}

impl DirChunks {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    fn path(&self, chunk_id: &str) -> Option<PathBuf> {
        let safe = !chunk_id.is_empty()
            && chunk_id
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
            && !chunk_id.starts_with('.');
        safe.then(|| self.root.join(format!("{chunk_id}.txt")))
    }
}

impl ChunkStore for DirChunks {
    fn get(&self, chunk_id: &str) -> Option<String> {
        fs::read_to_string(self.path(chunk_id)?).ok()
    }
}

/// A store without chunks.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoChunks;

impl ChunkStore for NoChunks {
    fn get(&self, _: &str) -> Option<String> {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn directory_store() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("c1.txt"), "chunk one").unwrap();
        let store = DirChunks::new(dir.path());
        assert_eq!(store.get("c1").as_deref(), Some("chunk one"));
        assert!(store.get("c2").is_none());
        assert!(store.get("../c1").is_none());
    }
}
