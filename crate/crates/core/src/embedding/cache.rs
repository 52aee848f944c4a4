use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::jsonl::{self, Appender, JsonlError};

/// One line of the embedding cache file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub id: String,
    pub model: String,
    pub vector: Vec<f32>,
}

pub fn read_cache(path: &Path) -> Result<Vec<CacheEntry>, JsonlError> {
    jsonl::read_all_or_empty(path)
}

/// Append-only embedding cache keyed by `(id, model)`.
pub struct EmbeddingCache {
    entries: HashMap<(String, String), Vec<f32>>,
    appender: Appender,
}

impl EmbeddingCache {
    pub fn open(path: &Path) -> Result<Self, JsonlError> {
        let mut entries = HashMap::new();
        for e in read_cache(path)? {
            entries.insert((e.id, e.model), e.vector);
        }
        Ok(EmbeddingCache {
            entries,
            appender: Appender::open(path)?,
        })
    }

    pub fn get(&self, id: &str, model: &str) -> Option<&Vec<f32>> {
        self.entries.get(&(id.to_string(), model.to_string()))
    }

    pub fn insert(&mut self, id: &str, model: &str, vector: Vec<f32>) -> Result<(), JsonlError> {
        let entry = CacheEntry {
            id: id.into(),
            model: model.into(),
            vector,
        };
        self.appender.append(&entry)?;
        self.entries.insert((entry.id, entry.model), entry.vector);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reopen_sees_previous_entries() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("emb.jsonl");
        {
            let mut c = EmbeddingCache::open(&p).unwrap();
            c.insert("a", "m", vec![0.5, 0.25]).unwrap();
            c.insert("a", "other", vec![1.0]).unwrap();
        }
        let c = EmbeddingCache::open(&p).unwrap();
        assert_eq!(c.get("a", "m").unwrap(), &vec![0.5, 0.25]);
        assert_eq!(c.len(), 2);
        assert!(c.get("b", "m").is_none());
        let raw = std::fs::read_to_string(&p).unwrap();
        assert!(raw.starts_with(r#"{"id":"a","model":"m","vector":[0.5,0.25]}"#));
    }
}
