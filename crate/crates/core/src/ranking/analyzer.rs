use std::collections::BTreeSet;

use rust_stemmers::{Algorithm, Stemmer};
use serde::{Deserialize, Serialize};

/// Text analysis shared by indexing and query processing.
///
/// Tokens are maximal runs of alphanumeric characters. Lowercasing happens
/// before stopword filtering, stemming after it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Analyzer {
    pub lowercase: bool,
    pub stopwords: BTreeSet<String>,
    pub stem: bool,
}

impl Default for Analyzer {
    fn default() -> Self {
        Self {
            lowercase: true,
            stopwords: BTreeSet::new(),
            stem: false,
        }
    }
}

impl Analyzer {
    pub fn analyze(&self, text: &str) -> Vec<String> {
        let stemmer = self.stem.then(|| Stemmer::create(Algorithm::English));
        text.split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .map(|t| {
                if self.lowercase {
                    t.to_lowercase()
                } else {
                    t.to_string()
                }
            })
            .filter(|t| !self.stopwords.contains(t))
            .map(|t| match &stemmer {
                Some(s) => s.stem(&t).into_owned(),
                None => t,
            })
            .collect()
    }
}
