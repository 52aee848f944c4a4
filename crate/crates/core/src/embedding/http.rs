use serde_json::{json, Value};

use super::{Embedder, EmbeddingBackendConfig};
use crate::llm_backend::http::{build_client, post_json};
use crate::llm_backend::{BackendError, ErrorClass};

/// Client for the common `embeddings` endpoint shape:
/// request `{"model", "input": [..]}`, response `{"data": [{"index", "embedding"}]}`.
pub struct HttpEmbedder {
    endpoint: String,
    model: String,
    api_key: String,
    client: reqwest::blocking::Client,
}

impl HttpEmbedder {
    pub fn from_config(cfg: &EmbeddingBackendConfig) -> Result<Self, BackendError> {
        let endpoint = cfg
            .endpoint
            .clone()
            .ok_or_else(|| BackendError::new(ErrorClass::Config, "embedding endpoint not set"))?;
        let api_key = std::env::var(&cfg.api_key_env).map_err(|_| {
            BackendError::new(
                ErrorClass::Config,
                format!("credential env var {} is not set", cfg.api_key_env),
            )
        })?;
        Self::with_key(&endpoint, &cfg.model_name, api_key, cfg.timeout_secs)
    }

    pub fn with_key(
        endpoint: &str,
        model: &str,
        api_key: impl Into<String>,
        timeout_secs: f64,
    ) -> Result<Self, BackendError> {
        Ok(HttpEmbedder {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key: api_key.into(),
            client: build_client(timeout_secs)?,
        })
    }
}

pub(crate) fn parse_embedding_response(
    v: &Value,
    expected: usize,
) -> Result<Vec<Vec<f32>>, BackendError> {
    let proto = |m: String| BackendError::new(ErrorClass::Protocol, m);
    let data = v
        .get("data")
        .and_then(Value::as_array)
        .ok_or_else(|| proto("response lacks a data array".into()))?;
    if data.len() != expected {
        return Err(proto(format!("expected {expected} embeddings, got {}", data.len())));
    }
    let mut slots: Vec<Option<Vec<f32>>> = vec![None; expected];
    for (pos, item) in data.iter().enumerate() {
        let index = item
            .get("index")
            .and_then(Value::as_u64)
            .map(|i| i as usize)
            .unwrap_or(pos);
        let emb = item
            .get("embedding")
            .and_then(Value::as_array)
            .ok_or_else(|| proto(format!("item {pos} lacks an embedding array")))?;
        let vector = emb
            .iter()
            .map(|x| x.as_f64().map(|f| f as f32))
            .collect::<Option<Vec<f32>>>()
            .ok_or_else(|| proto(format!("item {pos} has a non-numeric coordinate")))?;
        match slots.get_mut(index) {
            Some(slot @ None) => *slot = Some(vector),
            _ => return Err(proto(format!("bad or repeated index {index}"))),
        }
    }
    Ok(slots.into_iter().map(|s| s.expect("all slots filled")).collect())
}

impl Embedder for HttpEmbedder {
    fn model_tag(&self) -> &str {
        &self.model
    }

    fn embed_chunk(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, BackendError> {
        let body = json!({ "model": self.model, "input": texts });
        let v = post_json(&self.client, &self.endpoint, &self.api_key, &body)?;
        parse_embedding_response(&v, texts.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reorders_by_index() {
        let v: Value = serde_json::from_str(
            r#"{"data":[{"index":1,"embedding":[2.0]},{"index":0,"embedding":[1.0]}]}"#,
        )
        .unwrap();
        assert_eq!(parse_embedding_response(&v, 2).unwrap(), vec![vec![1.0], vec![2.0]]);
    }

    #[test]
    fn rejects_bad_shapes() {
        for body in [
            r#"{}"#,
            r#"{"data":[{"index":0,"embedding":[1.0]}]}"#,
            r#"{"data":[{"index":0,"embedding":["x"]},{"index":1,"embedding":[1]}]}"#,
            r#"{"data":[{"index":0,"embedding":[1]},{"index":0,"embedding":[1]}]}"#,
        ] {
            let v: Value = serde_json::from_str(body).unwrap();
            assert_eq!(
                parse_embedding_response(&v, 2).unwrap_err().class,
                ErrorClass::Protocol,
                "{body}"
            );
        }
    }
}
