//! An offline judge that answers the benchmark prompts with keyword and
//! token-overlap rules. Deterministic; useful in tests and dry runs.

use std::collections::BTreeSet;

use serde_json::json;

use super::judge::REPAIR_REMINDER;
use crate::retrieval::{tokenize, Tokenizer};
use crate::textgen::{CompletionBackend, CompletionRequest, TransportError};

const MEDICAL_TERMS: &[&str] = &[
    "medical", "medicine", "disease", "symptom", "symptoms", "treatment", "therapy", "patient", "patients",
    "doctor", "clinical", "diagnosis", "drug", "drugs", "dose", "infection", "virus", "vaccine", "cancer",
    "tumor", "pain", "fever", "blood", "heart", "surgery", "hospital", "health", "chronic", "acute",
    "inflammation", "diabetes", "hypertension", "covid", "antibiotic", "antibiotics", "insulin", "syndrome",
];

const MEDICAL_CHARS: &[char] = &[
    '病', '医', '药', '症', '疗', '诊', '患', '痛', '炎', '癌', '血', '疫', '治', '菌', '毒', '肿', '瘤', '康',
];

/// Fraction of query tokens a sentence must share to count as evidence.
pub const EVIDENCE_OVERLAP: f64 = 0.25;

#[derive(Debug, Clone, Copy, Default)]
pub struct HeuristicJudge;

fn tokens(text: &str) -> BTreeSet<String> {
    tokenize(text, Tokenizer::CjkBigram).into_iter().collect()
}

/// Share of `query` tokens present in `text`.
fn coverage(query: &BTreeSet<String>, text: &BTreeSet<String>) -> f64 {
    if query.is_empty() {
        return 0.0;
    }
    query.intersection(text).count() as f64 / query.len() as f64
}

fn dice(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    2.0 * a.intersection(b).count() as f64 / (a.len() + b.len()) as f64
}

/// Text after the last line starting with `label`, up to the next line that
/// starts with one of `stops`.
fn field<'a>(prompt: &'a str, label: &str, stops: &[&str]) -> &'a str {
    let start = if prompt.starts_with(label) {
        Some(0)
    } else {
        prompt.rfind(&format!("\n{label}")).map(|p| p + 1)
    };
    let Some(start) = start else { return "" };
    let body = &prompt[start + label.len()..];
    let mut end = body.len();
    let mut offset = 0;
    for line in body.split_inclusive('\n') {
        if offset > 0 && stops.iter().any(|s| line.starts_with(s)) {
            end = offset;
            break;
        }
        offset += line.len();
    }
    body[..end].trim()
}

pub fn is_medical(text: &str) -> bool {
    let lower = text.to_lowercase();
    lower
        .split(|c: char| !c.is_alphanumeric())
        .any(|w| MEDICAL_TERMS.contains(&w))
        || text.chars().any(|c| MEDICAL_CHARS.contains(&c))
}

fn sentences(text: &str) -> Vec<&str> {
    text.split_inclusive(['.', '。', '!', '！', '?', '？', ';', '；', '\n'])
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .collect()
}

fn answer(prompt: &str) -> String {
    if prompt.contains("related to the medical field") {
        let q = field(prompt, "Question:", &["Answer:"]);
        let a = field(prompt, "Answer:", &[]);
        let label = i32::from(is_medical(q) || is_medical(a));
        let reason = if label == 1 { "mentions medical terms" } else { "no medical terms" };
        return json!({"reason": reason, "label": label}).to_string();
    }
    if prompt.contains("rank the passages") {
        let q = tokens(field(prompt, "Question:", &["Passages:"]));
        let mut scored: Vec<(f64, u64)> = field(prompt, "Passages:", &[])
            .lines()
            .filter_map(|l| {
                let l = l.trim().strip_prefix('[')?;
                let (n, text) = l.split_once(']')?;
                Some((coverage(&q, &tokens(text)), n.trim().parse().ok()?))
            })
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let ranking: Vec<u64> = scored.iter().map(|s| s.1).collect();
        return json!({"ranking": ranking, "reason": "token overlap with the question"}).to_string();
    }
    if prompt.contains("extract evidence spans") {
        let q = field(prompt, "Question:", &["Answer:", "Document:"]);
        let a = field(prompt, "Answer:", &["Document:"]);
        let need = tokens(&format!("{q} {a}"));
        let spans: Vec<&str> = sentences(field(prompt, "Document:", &[]))
            .into_iter()
            .filter(|s| coverage(&need, &tokens(s)) >= EVIDENCE_OVERLAP)
            .collect();
        return json!({"evidence_spans": spans}).to_string();
    }
    if prompt.contains("based solely on the provided evidence spans") {
        let raw = field(prompt, "Evidence Spans:", &[]);
        let spans: Vec<String> = serde_json::from_str(raw).unwrap_or_default();
        let answer = if spans.is_empty() {
            "The evidence passage can not answer the question.".to_string()
        } else {
            spans.join(" ")
        };
        return json!({"answer": answer, "reason": "restates the evidence"}).to_string();
    }
    if prompt.contains("content similarity") {
        let r = tokens(field(prompt, "Reference Answer:", &["Model-generated Answer:"]));
        let m = tokens(field(prompt, "Model-generated Answer:", &[]));
        let score = (dice(&r, &m) * 100.0).round() / 100.0;
        return json!({"similarity_score": score, "explanation": "token overlap"}).to_string();
    }
    if prompt.contains("quality of query-passage pairs") {
        let q = tokens(field(prompt, "Query:", &["Passage:"]));
        let p = tokens(field(prompt, "Passage:", &[]));
        let score = 1 + (4.0 * coverage(&q, &p)).round() as i64;
        return json!({"quality_score": score, "explanation": "query coverage"}).to_string();
    }
    "{}".into()
}

impl CompletionBackend for HeuristicJudge {
    fn complete(&self, req: &CompletionRequest<'_>) -> Result<Vec<String>, TransportError> {
        let prompt = req.prompt.strip_suffix(REPAIR_REMINDER).unwrap_or(req.prompt);
        Ok(vec![answer(prompt); req.n])
    }

    fn describe(&self) -> String {
        "heuristic-judge".into()
    }
}
