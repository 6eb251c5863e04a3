//! Plain-text prompt templates with `{SLOT}` markers.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use super::TextgenError;

/// Where a shipped template body comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TemplateOrigin {
    /// Reproduced from the published method description.
    Published,
    /// Written for this project; no published body exists.
    Authored,
    /// Loaded from a user-supplied file.
    User,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub name: String,
    pub body: String,
    pub origin: TemplateOrigin,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Piece<'a> {
    Text(&'a str),
    Slot(&'a str),
}

fn is_slot_name(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_uppercase())
        && chars.all(|c| c.is_ascii_uppercase() || c.is_ascii_digit() || c == '_')
}

fn pieces(body: &str) -> Vec<Piece<'_>> {
    let mut out = Vec::new();
    let mut rest = body;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) if is_slot_name(&after[..close]) => {
                if open > 0 {
                    out.push(Piece::Text(&rest[..open]));
                }
                out.push(Piece::Slot(&after[..close]));
                rest = &after[close + 1..];
            }
            _ => {
                out.push(Piece::Text(&rest[..=open]));
                rest = after;
            }
        }
    }
    if !rest.is_empty() {
        out.push(Piece::Text(rest));
    }
    out
}

impl PromptTemplate {
    pub fn new(name: impl Into<String>, body: impl Into<String>, origin: TemplateOrigin) -> Self {
        PromptTemplate {
            name: name.into(),
            body: body.into(),
            origin,
        }
    }

    pub fn from_file(name: impl Into<String>, path: impl AsRef<Path>) -> Result<Self, TextgenError> {
        let path = path.as_ref();
        let body = std::fs::read_to_string(path).map_err(|e| TextgenError::Template {
            name: path.display().to_string(),
            message: e.to_string(),
        })?;
        Ok(Self::new(name, body.trim_end(), TemplateOrigin::User))
    }

    /// Slot names in order of first appearance.
    pub fn slots(&self) -> Vec<&str> {
        let mut seen = Vec::new();
        for p in pieces(&self.body) {
            if let Piece::Slot(s) = p {
                if !seen.contains(&s) {
                    seen.push(s);
                }
            }
        }
        seen
    }

    /// Substitutes every slot in a single pass; slot values are inserted
    /// verbatim and never re-expanded.
    pub fn render<S: AsRef<str>>(&self, slots: &HashMap<&str, S>) -> Result<String, TextgenError> {
        let mut out = String::with_capacity(self.body.len());
        for p in pieces(&self.body) {
            match p {
                Piece::Text(t) => out.push_str(t),
                Piece::Slot(s) => match slots.get(s) {
                    Some(v) => out.push_str(v.as_ref()),
                    None => return Err(TextgenError::MissingSlot(s.to_string())),
                },
            }
        }
        Ok(out)
    }
}

pub fn render_prompt<S: AsRef<str>>(
    template: &PromptTemplate,
    slots: &HashMap<&str, S>,
) -> Result<String, TextgenError> {
    template.render(slots)
}

pub const Q2P: &str = "Q2P";
pub const T2P: &str = "T2P";
pub const P2P: &str = "P2P";
pub const QUERY_GEN: &str = "QUERY_GEN";
pub const PSEUDO_GEN: &str = "PSEUDO_GEN";
pub const MEDICAL_RELEVANCE: &str = "MEDICAL_RELEVANCE";
pub const PASSAGE_RERANKING: &str = "PASSAGE_RERANKING";
pub const EVIDENCE_EXTRACTING: &str = "EVIDENCE_EXTRACTING";
pub const ANSWER_BY_EVIDENCE: &str = "ANSWER_BY_EVIDENCE";
pub const VALIDATE_ANSWER: &str = "VALIDATE_ANSWER";
pub const QUERY_DOC_RELEVANCE: &str = "QUERY_DOC_RELEVANCE";

const BUILTIN: &[(&str, &str, TemplateOrigin)] = &[
    (Q2P, include_str!("../../prompts/q2p.txt"), TemplateOrigin::Published),
    (T2P, include_str!("../../prompts/t2p.txt"), TemplateOrigin::Published),
    (P2P, include_str!("../../prompts/p2p.txt"), TemplateOrigin::Published),
    (QUERY_GEN, include_str!("../../prompts/query_gen.txt"), TemplateOrigin::Authored),
    (PSEUDO_GEN, include_str!("../../prompts/pseudo_gen.txt"), TemplateOrigin::Authored),
    (
        MEDICAL_RELEVANCE,
        include_str!("../../prompts/medical_relevance.txt"),
        TemplateOrigin::Published,
    ),
    (
        PASSAGE_RERANKING,
        include_str!("../../prompts/passage_reranking.txt"),
        TemplateOrigin::Authored,
    ),
    (
        EVIDENCE_EXTRACTING,
        include_str!("../../prompts/evidence_extracting.txt"),
        TemplateOrigin::Published,
    ),
    (
        ANSWER_BY_EVIDENCE,
        include_str!("../../prompts/answer_by_evidence.txt"),
        TemplateOrigin::Published,
    ),
    (
        VALIDATE_ANSWER,
        include_str!("../../prompts/validate_answer.txt"),
        TemplateOrigin::Published,
    ),
    (
        QUERY_DOC_RELEVANCE,
        include_str!("../../prompts/query_doc_relevance.txt"),
        TemplateOrigin::Published,
    ),
];

fn file_stem_for(name: &str) -> String {
    name.to_ascii_lowercase()
}

/// Named template set: the shipped defaults, optionally overridden from a
/// directory of `<name>.txt` files (lowercase names, e.g. `q2p.txt`).
#[derive(Debug, Clone)]
pub struct PromptLibrary {
    templates: BTreeMap<String, PromptTemplate>,
}

impl Default for PromptLibrary {
    fn default() -> Self {
        Self::builtin()
    }
}

impl PromptLibrary {
    pub fn builtin() -> Self {
        let templates = BUILTIN
            .iter()
            .map(|(name, body, origin)| {
                (
                    name.to_string(),
                    PromptTemplate::new(*name, body.trim_end(), *origin),
                )
            })
            .collect();
        PromptLibrary { templates }
    }

    /// Replaces built-in templates with any matching files found in `dir`.
    pub fn with_overrides(mut self, dir: impl AsRef<Path>) -> Result<Self, TextgenError> {
        let dir = dir.as_ref();
        let names: Vec<String> = self.templates.keys().cloned().collect();
        for name in names {
            let path = dir.join(format!("{}.txt", file_stem_for(&name)));
            if path.exists() {
                self.templates
                    .insert(name.clone(), PromptTemplate::from_file(name, &path)?);
            }
        }
        Ok(self)
    }

    pub fn insert(&mut self, template: PromptTemplate) {
        self.templates.insert(template.name.clone(), template);
    }

    pub fn get(&self, name: &str) -> Result<&PromptTemplate, TextgenError> {
        self.templates
            .get(name)
            .ok_or_else(|| TextgenError::UnknownTemplate(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = &PromptTemplate> {
        self.templates.values()
    }

    pub fn render(&self, name: &str, slots: &[(&str, &str)]) -> Result<String, TextgenError> {
        let map: HashMap<&str, &str> = slots.iter().copied().collect();
        self.get(name)?.render(&map)
    }

    /// Writes every template as `<name>.txt` into `dir`.
    pub fn write_to(&self, dir: impl AsRef<Path>) -> std::io::Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        for t in self.templates.values() {
            std::fs::write(dir.join(format!("{}.txt", file_stem_for(&t.name))), &t.body)?;
        }
        Ok(())
    }
}
