use std::time::Duration;

use serde_json::{json, Value};

use super::{CompletionBackend, CompletionRequest, TransportError};
use crate::http::JsonEndpoint;

/// Client for an OpenAI-style `/chat/completions` endpoint.
#[derive(Debug, Clone)]
pub struct ChatCompletionsBackend {
    endpoint: JsonEndpoint,
    model: String,
}

impl ChatCompletionsBackend {
    pub fn new(url: impl Into<String>, model: impl Into<String>, token: Option<String>, timeout: Duration) -> Self {
        ChatCompletionsBackend {
            endpoint: JsonEndpoint::new(url, token, timeout),
            model: model.into(),
        }
    }
}

pub fn chat_request_body(model: &str, req: &CompletionRequest<'_>) -> Value {
    let mut body = json!({
        "model": model,
        "messages": [{"role": "user", "content": req.prompt}],
        "temperature": req.temperature,
        "max_tokens": req.max_output_tokens,
        "n": req.n,
    });
    if let Some(seed) = req.seed {
        body["seed"] = json!(seed.wrapping_add(req.first_index as u64));
    }
    body
}

/// Extracts `choices[*].message.content` in choice order.
pub fn parse_chat_response(value: &Value) -> Result<Vec<String>, String> {
    let choices = value
        .get("choices")
        .and_then(Value::as_array)
        .ok_or("response has no `choices` array")?;
    let mut indexed: Vec<(u64, String)> = Vec::with_capacity(choices.len());
    for (pos, choice) in choices.iter().enumerate() {
        let content = choice
            .pointer("/message/content")
            .and_then(Value::as_str)
            .ok_or("choice without `message.content`")?;
        let index = choice.get("index").and_then(Value::as_u64).unwrap_or(pos as u64);
        indexed.push((index, content.to_string()));
    }
    indexed.sort_by_key(|(i, _)| *i);
    Ok(indexed.into_iter().map(|(_, c)| c).collect())
}

impl CompletionBackend for ChatCompletionsBackend {
    fn complete(&self, req: &CompletionRequest<'_>) -> Result<Vec<String>, TransportError> {
        let body = chat_request_body(&self.model, req);
        let value = self.endpoint.post(&body).map_err(TransportError)?;
        parse_chat_response(&value).map_err(TransportError)
    }

    fn describe(&self) -> String {
        format!("chat-completions {}", self.endpoint.url)
    }
}
