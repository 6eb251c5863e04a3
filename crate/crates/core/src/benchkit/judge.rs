//! Asking a judge model for a JSON verdict, with one repair retry.

use serde_json::{Map, Value};

use crate::textgen::{GeneratorClient, SamplingConfig};

pub const REPAIR_REMINDER: &str =
    "\n\nYour previous reply could not be parsed. Reply with only the JSON object described above, with every required key.";

/// Parses the first JSON object embedded in `raw`, tolerating code fences
/// and surrounding prose.
pub fn extract_json_object(raw: &str) -> Result<Map<String, Value>, String> {
    for (start, _) in raw.match_indices('{') {
        let mut stream = serde_json::Deserializer::from_str(&raw[start..]).into_iter::<Value>();
        if let Some(Ok(Value::Object(map))) = stream.next() {
            return Ok(map);
        }
    }
    Err("no JSON object in judge reply".into())
}

pub(crate) fn number(map: &Map<String, Value>, key: &str) -> Result<f64, String> {
    match map.get(key) {
        Some(Value::Number(n)) => n.as_f64().ok_or_else(|| format!("`{key}` is not a finite number")),
        Some(Value::String(s)) => s.trim().parse().map_err(|_| format!("`{key}` is not a number")),
        Some(_) => Err(format!("`{key}` is not a number")),
        None => Err(format!("missing `{key}`")),
    }
}

pub(crate) fn string(map: &Map<String, Value>, key: &str) -> Result<String, String> {
    match map.get(key) {
        Some(Value::String(s)) => Ok(s.clone()),
        Some(_) => Err(format!("`{key}` is not a string")),
        None => Err(format!("missing `{key}`")),
    }
}

/// First string-valued key among `keys`, or empty.
pub(crate) fn rationale(map: &Map<String, Value>, keys: &[&str]) -> String {
    keys.iter()
        .find_map(|k| map.get(*k).and_then(Value::as_str))
        .unwrap_or_default()
        .to_string()
}

pub(crate) fn string_list(map: &Map<String, Value>, key: &str) -> Result<Vec<String>, String> {
    match map.get(key) {
        Some(Value::Array(items)) => items
            .iter()
            .map(|v| v.as_str().map(str::to_string).ok_or_else(|| format!("`{key}` must hold strings")))
            .collect(),
        Some(_) => Err(format!("`{key}` is not a list")),
        None => Err(format!("missing `{key}`")),
    }
}

pub(crate) fn index_list(map: &Map<String, Value>, key: &str) -> Result<Vec<usize>, String> {
    match map.get(key) {
        Some(Value::Array(items)) => items
            .iter()
            .map(|v| match v {
                Value::Number(n) => n.as_u64().map(|x| x as usize),
                Value::String(s) => s.trim().trim_matches(|c| c == '[' || c == ']').parse().ok(),
                _ => None,
            })
            .map(|x| x.ok_or_else(|| format!("`{key}` must hold passage numbers")))
            .collect(),
        Some(_) => Err(format!("`{key}` is not a list")),
        None => Err(format!("missing `{key}`")),
    }
}

/// A judge call that could not produce a usable verdict.
#[derive(Debug, Clone, PartialEq)]
pub struct JudgeFailure {
    pub raw: String,
    pub error: String,
}

pub(crate) fn judge_sampling(seed: u64) -> SamplingConfig {
    SamplingConfig {
        temperature: 0.0,
        max_output_tokens: 1024,
        seed: Some(seed),
        num_samples: 1,
    }
}

/// Sends `prompt`, parses the reply with `read`, and on failure asks once
/// more with a format reminder.
pub fn ask_json<T>(
    judge: &GeneratorClient,
    prompt: &str,
    seed: u64,
    read: impl Fn(&Map<String, Value>) -> Result<T, String>,
) -> Result<T, JudgeFailure> {
    let cfg = judge_sampling(seed);
    let mut last = JudgeFailure {
        raw: String::new(),
        error: String::new(),
    };
    let repaired = format!("{prompt}{REPAIR_REMINDER}");
    for p in [prompt, repaired.as_str()] {
        let raw = match judge.generate(p, &cfg) {
            Ok(mut out) => out.remove(0),
            Err(e) => {
                last = JudgeFailure {
                    raw: String::new(),
                    error: e.to_string(),
                };
                continue;
            }
        };
        match extract_json_object(&raw).and_then(|m| read(&m)) {
            Ok(v) => return Ok(v),
            Err(error) => last = JudgeFailure { raw, error },
        }
    }
    Err(last)
}
