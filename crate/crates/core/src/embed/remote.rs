use std::time::Duration;

use serde_json::{json, Value};

use super::{EmbedError, EmbeddingBackend};
use crate::http::JsonEndpoint;

/// Client for an OpenAI-style `/embeddings` endpoint.
#[derive(Debug, Clone)]
pub struct EmbeddingsBackend {
    endpoint: JsonEndpoint,
    model: String,
    dim: usize,
}

impl EmbeddingsBackend {
    pub fn new(
        url: impl Into<String>,
        model: impl Into<String>,
        dim: usize,
        token: Option<String>,
        timeout: Duration,
    ) -> Self {
        EmbeddingsBackend {
            endpoint: JsonEndpoint::new(url, token, timeout),
            model: model.into(),
            dim,
        }
    }
}

pub fn embeddings_request_body(model: &str, texts: &[String]) -> Value {
    json!({ "model": model, "input": texts })
}

/// Reads `data[*].embedding` ordered by `index`; a bare list of arrays is
/// also accepted.
pub fn parse_embeddings_response(value: &Value) -> Result<Vec<Vec<f32>>, EmbedError> {
    let as_floats = |v: &Value| -> Result<Vec<f32>, EmbedError> {
        v.as_array()
            .ok_or_else(|| EmbedError::Protocol("embedding is not an array".into()))?
            .iter()
            .map(|x| {
                x.as_f64()
                    .map(|f| f as f32)
                    .ok_or_else(|| EmbedError::Protocol("non-numeric embedding entry".into()))
            })
            .collect()
    };
    if let Some(list) = value.as_array() {
        return list.iter().map(as_floats).collect();
    }
    let data = value
        .get("data")
        .and_then(Value::as_array)
        .ok_or_else(|| EmbedError::Protocol("response has no `data` array".into()))?;
    let mut rows = Vec::with_capacity(data.len());
    for (pos, item) in data.iter().enumerate() {
        let emb = item
            .get("embedding")
            .ok_or_else(|| EmbedError::Protocol("item without `embedding`".into()))?;
        let index = item.get("index").and_then(Value::as_u64).unwrap_or(pos as u64);
        rows.push((index, as_floats(emb)?));
    }
    rows.sort_by_key(|(i, _)| *i);
    Ok(rows.into_iter().map(|(_, r)| r).collect())
}

impl EmbeddingBackend for EmbeddingsBackend {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, EmbedError> {
        let value = self
            .endpoint
            .post(&embeddings_request_body(&self.model, texts))
            .map_err(EmbedError::Transport)?;
        parse_embeddings_response(&value)
    }

    fn describe(&self) -> String {
        format!("embeddings {} ({})", self.endpoint.url, self.model)
    }
}
