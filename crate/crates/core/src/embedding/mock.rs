use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::Rng;
use rand_distr::StandardNormal;

use super::Embedder;
use crate::llm_backend::{BackendError, ErrorClass};
use crate::seed::derive_rng;

/// Deterministic stand-in for an embedding model: each text maps to a
/// pseudo-random unit vector seeded by SHA-256 of `(model_tag, text)`.
/// Identical texts embed bitwise-identically; distinct texts land on
/// effectively independent random directions.
pub struct HashEmbedder {
    model_tag: String,
    dim: usize,
    calls: AtomicUsize,
}

impl HashEmbedder {
    pub fn new(model_tag: impl Into<String>, dim: usize) -> Self {
        assert!(dim > 0, "mock embedding dim must be > 0");
        HashEmbedder {
            model_tag: model_tag.into(),
            dim,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn vector_for(&self, text: &str) -> Vec<f32> {
        let mut rng = derive_rng(0, &[&self.model_tag, text]);
        let raw: Vec<f64> = (0..self.dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        raw.iter().map(|x| (x / norm) as f32).collect()
    }

    /// Number of `embed_chunk` calls served so far.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Embedder for HashEmbedder {
    fn model_tag(&self) -> &str {
        &self.model_tag
    }

    fn embed_chunk(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        Ok(texts.iter().map(|t| self.vector_for(t)).collect())
    }
}

/// Lookup-table embedder for hand-built fixtures. Unknown texts fail with
/// [`ErrorClass::ScriptedMiss`], or fall back to a [`HashEmbedder`] if one is set.
pub struct FixedEmbedder {
    model_tag: String,
    table: HashMap<String, Vec<f32>>,
    fallback: Option<HashEmbedder>,
}

impl FixedEmbedder {
    pub fn new(model_tag: impl Into<String>) -> Self {
        FixedEmbedder {
            model_tag: model_tag.into(),
            table: HashMap::new(),
            fallback: None,
        }
    }

    pub fn with(mut self, text: impl Into<String>, vector: Vec<f32>) -> Self {
        self.table.insert(text.into(), vector);
        self
    }

    pub fn with_hash_fallback(mut self, dim: usize) -> Self {
        self.fallback = Some(HashEmbedder::new(self.model_tag.clone(), dim));
        self
    }
}

impl Embedder for FixedEmbedder {
    fn model_tag(&self) -> &str {
        &self.model_tag
    }

    fn embed_chunk(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, BackendError> {
        texts
            .iter()
            .map(|t| match (self.table.get(t), &self.fallback) {
                (Some(v), _) => Ok(v.clone()),
                (None, Some(h)) => Ok(h.vector_for(t)),
                (None, None) => Err(BackendError::new(
                    ErrorClass::ScriptedMiss,
                    format!("no fixed embedding for {t:?}"),
                )),
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_norm_and_model_sensitive() {
        let a = HashEmbedder::new("m1", 32);
        let b = HashEmbedder::new("m2", 32);
        let va = a.vector_for("x");
        let norm: f64 = va.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-6);
        assert_ne!(va, b.vector_for("x"));
        assert_eq!(va, a.vector_for("x"));
    }
}
