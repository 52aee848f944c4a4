pub mod corpus;
pub mod discriminator;
pub mod exemplar_db;
pub mod generator;
pub mod hermetic;
pub mod coreset;
pub mod decontam;
pub mod embedding;
pub mod emitter;
pub mod jsonl;
pub mod llm_backend;
pub mod pipeline;
pub mod scalar;
pub mod seed;
pub mod taskspec;

pub use scalar::Scalar;

/// Embedding stored at 32-bit precision (the default storage type).
pub type Embedding = embedding::EmbeddingVector<f32>;
/// Embedding stored at 64-bit precision.
pub type Embedding64 = embedding::EmbeddingVector<f64>;
