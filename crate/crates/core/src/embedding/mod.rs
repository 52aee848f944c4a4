//! Text embeddings and vector similarity.
//!
//! Backends implement [`Embedder`] (one request per chunk); [`EmbeddingClient`]
//! handles chunking, bounded concurrency, retries and cross-chunk
//! consistency checks.

mod cache;
mod http;
mod mock;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::llm_backend::{retry_call, BackendError, ErrorClass, InFlightLimiter, RetryPolicy};
use crate::scalar::{dist_sq, dot, norm_sq, Scalar};

pub use cache::{read_cache, CacheEntry, EmbeddingCache};
pub use http::HttpEmbedder;
pub use mock::{FixedEmbedder, HashEmbedder};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EmbeddingError {
    #[error("embedding must have dim > 0")]
    EmptyVector,
    #[error("embedding coordinate {index} is not finite")]
    NonFinite { index: usize },
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("cosine similarity is undefined for a zero vector")]
    ZeroVector,
    #[error("invalid embedding input: {0}")]
    InvalidInput(String),
    #[error("embedding backend failed on chunk {chunk}: {source}")]
    Backend {
        chunk: usize,
        #[source]
        source: BackendError,
    },
    #[error("inconsistent embedding response: {0}")]
    Consistency(String),
}

/// Fixed-dimension embedding of one text, tagged with the producing model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct EmbeddingVector<S: Scalar = f32> {
    values: Vec<S>,
    model_tag: String,
}

impl<S: Scalar> EmbeddingVector<S> {
    pub fn new(values: Vec<S>, model_tag: impl Into<String>) -> Result<Self, EmbeddingError> {
        if values.is_empty() {
            return Err(EmbeddingError::EmptyVector);
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite { index });
        }
        Ok(EmbeddingVector {
            values,
            model_tag: model_tag.into(),
        })
    }

    /// Builds from f64 coordinates, narrowing to the storage type.
    pub fn from_f64(values: &[f64], model_tag: impl Into<String>) -> Result<Self, EmbeddingError> {
        Self::new(values.iter().map(|&v| S::narrow(v)).collect(), model_tag)
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn model_tag(&self) -> &str {
        &self.model_tag
    }

    pub fn norm(&self) -> f64 {
        norm_sq(&self.values).sqrt()
    }

    pub fn into_values(self) -> Vec<S> {
        self.values
    }
}

fn check_dims(left: usize, right: usize) -> Result<(), EmbeddingError> {
    if left != right {
        Err(EmbeddingError::DimensionMismatch { left, right })
    } else {
        Ok(())
    }
}

/// `dot(a, b) / (|a| |b|)`, computed in f64 and clamped to [-1, 1].
pub fn cosine_similarity<S: Scalar>(
    a: &EmbeddingVector<S>,
    b: &EmbeddingVector<S>,
) -> Result<f64, EmbeddingError> {
    check_dims(a.dim(), b.dim())?;
    cosine_slices(a.values(), b.values())
}

pub(crate) fn cosine_slices<S: Scalar>(a: &[S], b: &[S]) -> Result<f64, EmbeddingError> {
    let (na, nb) = (norm_sq(a), norm_sq(b));
    if na == 0.0 || nb == 0.0 {
        return Err(EmbeddingError::ZeroVector);
    }
    Ok((dot(a, b) / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

pub fn euclidean_distance<S: Scalar>(
    a: &EmbeddingVector<S>,
    b: &EmbeddingVector<S>,
) -> Result<f64, EmbeddingError> {
    check_dims(a.dim(), b.dim())?;
    Ok(dist_sq(a.values(), b.values()).sqrt())
}

/// A backend producing raw vectors for one chunk of texts per call.
pub trait Embedder: Send + Sync {
    fn model_tag(&self) -> &str;
    fn embed_chunk(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, BackendError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingBackendKind {
    Http,
    #[default]
    Mock,
}

/// Serializable backend description used by pipeline configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingBackendConfig {
    pub kind: EmbeddingBackendKind,
    pub endpoint: Option<String>,
    pub model_name: String,
    pub api_key_env: String,
    pub batch_size: usize,
    pub timeout_secs: f64,
    pub max_concurrent: usize,
    /// Output dimension of the mock backend.
    pub dim: usize,
    pub retry: RetryPolicy,
}

impl Default for EmbeddingBackendConfig {
    fn default() -> Self {
        EmbeddingBackendConfig {
            kind: EmbeddingBackendKind::Mock,
            endpoint: None,
            model_name: "mock-hash-embedding".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            batch_size: 64,
            timeout_secs: 60.0,
            max_concurrent: 4,
            dim: 64,
            retry: RetryPolicy::default(),
        }
    }
}

impl EmbeddingBackendConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.batch_size < 1 {
            return Err("embedding batch_size must be >= 1".into());
        }
        if !(self.timeout_secs > 0.0) {
            return Err("embedding timeout_secs must be > 0".into());
        }
        if self.kind == EmbeddingBackendKind::Mock && self.dim == 0 {
            return Err("mock embedding dim must be > 0".into());
        }
        if self.kind == EmbeddingBackendKind::Http && self.endpoint.is_none() {
            return Err("http embedding backend needs an endpoint".into());
        }
        self.retry.validate()
    }

    pub fn build_embedder(&self) -> Result<Arc<dyn Embedder>, BackendError> {
        Ok(match self.kind {
            EmbeddingBackendKind::Mock => Arc::new(HashEmbedder::new(&self.model_name, self.dim)),
            EmbeddingBackendKind::Http => Arc::new(HttpEmbedder::from_config(self)?),
        })
    }

    pub fn build_client(&self) -> Result<EmbeddingClient, BackendError> {
        self.validate()
            .map_err(|m| BackendError::new(ErrorClass::Config, m))?;
        Ok(EmbeddingClient {
            embedder: self.build_embedder()?,
            batch_size: self.batch_size,
            max_concurrent: self.max_concurrent.max(1),
            retry: self.retry.clone(),
            limiter: InFlightLimiter::new(self.max_concurrent.max(1)),
        })
    }
}

/// Chunking, concurrent, retrying front end over an [`Embedder`].
#[derive(Clone)]
pub struct EmbeddingClient {
    embedder: Arc<dyn Embedder>,
    batch_size: usize,
    max_concurrent: usize,
    retry: RetryPolicy,
    limiter: InFlightLimiter,
}

impl EmbeddingClient {
    pub fn new(embedder: Arc<dyn Embedder>, batch_size: usize, retry: RetryPolicy) -> Self {
        EmbeddingClient {
            embedder,
            batch_size: batch_size.max(1),
            max_concurrent: 1,
            retry,
            limiter: InFlightLimiter::new(1),
        }
    }

    pub fn with_concurrency(mut self, n: usize) -> Self {
        self.max_concurrent = n.max(1);
        self.limiter = InFlightLimiter::new(self.max_concurrent);
        self
    }

    pub fn model_tag(&self) -> &str {
        self.embedder.model_tag()
    }

    /// One vector per text, in input order, all of one dimension.
    pub fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        if texts.is_empty() {
            return Err(EmbeddingError::InvalidInput("no texts to embed".into()));
        }
        if let Some(i) = texts.iter().position(|t| t.is_empty()) {
            return Err(EmbeddingError::InvalidInput(format!("text {i} is empty")));
        }
        let chunks: Vec<&[String]> = texts.chunks(self.batch_size).collect();
        let mut results: Vec<Option<Result<Vec<Vec<f32>>, BackendError>>> =
            (0..chunks.len()).map(|_| None).collect();
        for (window_idx, window) in chunks.chunks(self.max_concurrent).enumerate() {
            let base = window_idx * self.max_concurrent;
            let out: Vec<_> = if window.len() == 1 {
                vec![self.call_chunk(window[0])]
            } else {
                std::thread::scope(|s| {
                    let handles: Vec<_> = window
                        .iter()
                        .map(|chunk| s.spawn(move || self.call_chunk(chunk)))
                        .collect();
                    handles
                        .into_iter()
                        .map(|h| h.join().expect("embedding worker panicked"))
                        .collect()
                })
            };
            for (j, r) in out.into_iter().enumerate() {
                results[base + j] = Some(r);
            }
            // stop early on the first failed window
            if let Some(pos) = results[base..base + window.len()]
                .iter()
                .position(|r| matches!(r, Some(Err(_))))
            {
                let chunk = base + pos;
                if let Some(Err(source)) = results[chunk].take() {
                    return Err(EmbeddingError::Backend { chunk, source });
                }
            }
        }

        let tag = self.embedder.model_tag().to_string();
        let mut out = Vec::with_capacity(texts.len());
        let mut dim = None;
        for (ci, (chunk, res)) in chunks.iter().zip(results).enumerate() {
            let vectors = res.expect("every chunk ran").expect("errors returned above");
            if vectors.len() != chunk.len() {
                return Err(EmbeddingError::Consistency(format!(
                    "chunk {ci}: {} texts but {} vectors",
                    chunk.len(),
                    vectors.len()
                )));
            }
            for v in vectors {
                match dim {
                    None => dim = Some(v.len()),
                    Some(d) if d != v.len() => {
                        return Err(EmbeddingError::Consistency(format!(
                            "chunk {ci}: dimension {} differs from {d}",
                            v.len()
                        )))
                    }
                    _ => {}
                }
                out.push(EmbeddingVector::new(v, tag.clone())?);
            }
        }
        Ok(out)
    }

    fn call_chunk(&self, chunk: &[String]) -> Result<Vec<Vec<f32>>, BackendError> {
        retry_call(&self.retry, &self.limiter, || self.embedder.embed_chunk(chunk)).map(|(v, _)| v)
    }
}
