//! Prompt templates that turn a language model into a question generator.
//!
//! A [`PromptCatalog`] holds one [`PromptTemplate`] per (model family,
//! dataset) pair. The crate ships a default catalog covering T5, Flan-T5,
//! T0, LLaMA, Falcon, Alpaca, StableLM and StableVicuna on TREC-COVID,
//! DBpedia, FiQA and Robust04.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use tracing::debug;

use crate::corpus::Document;
use crate::error::{Error, Result};

pub const DOC_PLACEHOLDER: &str = "{doc}";
pub const DEFAULT_DOC_MAX_CHARS: usize = 4000;
pub const FEWSHOT_SIZE: usize = 3;

const DEFAULT_CATALOG_JSON: &str = include_str!("../../data/default_catalog.json");
const PLACEHOLDER_FEWSHOT_JSON: &str = include_str!("../../data/gbq_placeholder.json");

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PromptTemplate {
    #[serde(default)]
    pub system_prefix: String,
    pub body: String,
    #[serde(default)]
    pub suffix: String,
}

impl PromptTemplate {
    pub fn new(
        system_prefix: impl Into<String>,
        body: impl Into<String>,
        suffix: impl Into<String>,
    ) -> Result<Self> {
        let template = Self {
            system_prefix: system_prefix.into(),
            body: body.into(),
            suffix: suffix.into(),
        };
        template.validate()?;
        Ok(template)
    }

    pub fn validate(&self) -> Result<()> {
        match self.body.matches(DOC_PLACEHOLDER).count() {
            1 => Ok(()),
            n => Err(Error::Catalog(format!(
                "template body must contain `{DOC_PLACEHOLDER}` exactly once, found {n}: {:?}",
                self.body
            ))),
        }
    }

    fn fill(&self, doc_text: &str) -> String {
        self.body.replacen(DOC_PLACEHOLDER, doc_text, 1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FewShotExample {
    pub document: String,
    pub good_question: String,
    pub bad_question: String,
}

impl FewShotExample {
    fn validate(&self) -> Result<()> {
        if [&self.document, &self.good_question, &self.bad_question]
            .iter()
            .any(|f| f.trim().is_empty())
        {
            return Err(Error::Catalog(
                "few-shot example fields must all be non-empty".into(),
            ));
        }
        Ok(())
    }
}

fn validate_fewshot(examples: &[FewShotExample]) -> Result<()> {
    if examples.len() != FEWSHOT_SIZE {
        return Err(Error::Catalog(format!(
            "few-shot block needs exactly {FEWSHOT_SIZE} examples, got {}",
            examples.len()
        )));
    }
    examples.iter().try_for_each(FewShotExample::validate)
}

/// Three placeholder (document, good question, bad question) triples.
pub fn placeholder_fewshot() -> Vec<FewShotExample> {
    serde_json::from_str(PLACEHOLDER_FEWSHOT_JSON).expect("bundled few-shot file is valid")
}

/// Reads a JSON array of few-shot triples.
pub fn load_fewshot(path: impl AsRef<Path>) -> Result<Vec<FewShotExample>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let examples: Vec<FewShotExample> = serde_json::from_str(&text)
        .map_err(|e| Error::Catalog(format!("{}: {e}", path.display())))?;
    validate_fewshot(&examples)?;
    Ok(examples)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CatalogEntry {
    pub template: PromptTemplate,
    pub fewshot: Option<Vec<FewShotExample>>,
}

#[derive(Serialize, Deserialize)]
struct CatalogRecord {
    model_family: String,
    dataset: String,
    #[serde(flatten)]
    template: PromptTemplate,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fewshot: Option<Vec<FewShotExample>>,
}

/// Prompt templates keyed by (model family, dataset).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PromptCatalog {
    entries: BTreeMap<(String, String), CatalogEntry>,
}

impl PromptCatalog {
    pub fn from_json(text: &str) -> Result<Self> {
        let records: Vec<CatalogRecord> =
            serde_json::from_str(text).map_err(|e| Error::Catalog(e.to_string()))?;
        let mut catalog = PromptCatalog::default();
        for r in records {
            r.template.validate()?;
            if let Some(fs) = &r.fewshot {
                validate_fewshot(fs)?;
            }
            let key = (r.model_family, r.dataset);
            if catalog.entries.contains_key(&key) {
                return Err(Error::Catalog(format!(
                    "duplicate entry for ({}, {})",
                    key.0, key.1
                )));
            }
            catalog.entries.insert(
                key,
                CatalogEntry {
                    template: r.template,
                    fewshot: r.fewshot,
                },
            );
        }
        Ok(catalog)
    }

    pub fn to_json(&self) -> String {
        let records: Vec<CatalogRecord> = self
            .entries
            .iter()
            .map(|((family, dataset), e)| CatalogRecord {
                model_family: family.clone(),
                dataset: dataset.clone(),
                template: e.template.clone(),
                fewshot: e.fewshot.clone(),
            })
            .collect();
        serde_json::to_string_pretty(&records).expect("catalog serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Catalog(m) => Error::Catalog(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// The bundled catalog transcribing the per-model, per-dataset prompts.
    pub fn builtin() -> Self {
        Self::from_json(DEFAULT_CATALOG_JSON).expect("bundled catalog is valid")
    }

    pub fn get(&self, model_family: &str, dataset: &str) -> Option<&CatalogEntry> {
        self.entries
            .get(&(model_family.to_string(), dataset.to_string()))
    }

    pub fn insert(
        &mut self,
        model_family: impl Into<String>,
        dataset: impl Into<String>,
        template: PromptTemplate,
        fewshot: Option<Vec<FewShotExample>>,
    ) -> Result<()> {
        template.validate()?;
        if let Some(fs) = &fewshot {
            validate_fewshot(fs)?;
        }
        let key = (model_family.into(), dataset.into());
        if self.entries.contains_key(&key) {
            return Err(Error::Catalog(format!(
                "duplicate entry for ({}, {})",
                key.0, key.1
            )));
        }
        self.entries.insert(key, CatalogEntry { template, fewshot });
        Ok(())
    }

    pub fn keys(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.keys().map(|(f, d)| (f.as_str(), d.as_str()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Cuts `text` to at most `max_chars` characters, backing off to the last
/// whitespace when the cut would split a word.
fn truncate_text(text: &str, max_chars: usize) -> &str {
    let Some((cut, next)) = text.char_indices().nth(max_chars).map(|(i, c)| (i, c)) else {
        return text;
    };
    let head = &text[..cut];
    if next.is_whitespace() {
        return head.trim_end();
    }
    match head.rfind(char::is_whitespace) {
        Some(ws) if !head[..ws].trim_end().is_empty() => head[..ws].trim_end(),
        _ => head,
    }
}

fn document_text(doc: &Document, doc_max_chars: usize) -> Result<String> {
    if doc_max_chars == 0 {
        return Err(Error::invalid("doc_max_chars must be at least 1"));
    }
    let full = doc.display_text();
    let text = truncate_text(&full, doc_max_chars);
    if text.len() < full.len() {
        debug!(doc = %doc.id, from = full.chars().count(), to = text.chars().count(), "document truncated");
    }
    Ok(text.to_string())
}

/// Zero-shot prompt: prefix, body with the document substituted, suffix.
pub fn render_prompt(
    template: &PromptTemplate,
    doc: &Document,
    doc_max_chars: usize,
) -> Result<String> {
    let doc_text = document_text(doc, doc_max_chars)?;
    Ok(format!(
        "{}{}{}",
        template.system_prefix,
        template.fill(&doc_text),
        template.suffix
    ))
}

/// Few-shot prompt: three good/bad question demonstrations followed by the
/// target document, ending right after `Good question:`.
pub fn render_fewshot(
    template: &PromptTemplate,
    examples: &[FewShotExample],
    doc: &Document,
    doc_max_chars: usize,
) -> Result<String> {
    validate_fewshot(examples)?;
    let doc_text = document_text(doc, doc_max_chars)?;
    let mut out = template.system_prefix.clone();
    for ex in examples {
        out.push_str(&template.fill(&ex.document));
        out.push_str("\nGood question: ");
        out.push_str(&ex.good_question);
        out.push_str("\nBad question: ");
        out.push_str(&ex.bad_question);
        out.push_str("\n\n");
    }
    out.push_str(&template.fill(&doc_text));
    out.push_str("\nGood question:");
    Ok(out)
}

/// A fully specified prompting strategy.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub enum Prompt {
    ZeroShot(PromptTemplate),
    FewShot {
        template: PromptTemplate,
        examples: Vec<FewShotExample>,
    },
}

impl Prompt {
    pub fn few_shot(template: PromptTemplate, examples: Vec<FewShotExample>) -> Result<Self> {
        validate_fewshot(&examples)?;
        Ok(Prompt::FewShot { template, examples })
    }

    pub fn render(&self, doc: &Document, doc_max_chars: usize) -> Result<String> {
        match self {
            Prompt::ZeroShot(t) => render_prompt(t, doc, doc_max_chars),
            Prompt::FewShot { template, examples } => {
                render_fewshot(template, examples, doc, doc_max_chars)
            }
        }
    }

    pub fn is_few_shot(&self) -> bool {
        matches!(self, Prompt::FewShot { .. })
    }

    /// Stable 64-bit FNV-1a digest of the prompt definition.
    pub fn fingerprint(&self) -> u64 {
        let bytes = serde_json::to_vec(self).expect("prompt serializes");
        bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
            (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
        })
    }
}
