use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::analyzer::Analyzer;
use crate::corpus::Document;
use crate::error::{Error, Result};
use crate::scalar::Score;

const FORMAT_NAME: &str = "qlmrank-index";
const FORMAT_VERSION: u32 = 1;

/// One entry of a postings list: internal document number and term frequency.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Posting {
    pub doc: u32,
    pub tf: u32,
}

/// Postings plus the collection statistics needed by BM25 and Dirichlet
/// query likelihood. Immutable once built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvertedIndex {
    analyzer: Analyzer,
    doc_ids: Vec<String>,
    doc_lens: Vec<u32>,
    postings: BTreeMap<String, Vec<Posting>>,
    collection_freq: BTreeMap<String, u64>,
    total_terms: u64,
    #[serde(skip)]
    lookup: HashMap<String, u32>,
}

#[derive(Serialize, Deserialize)]
struct IndexFile {
    format: String,
    version: u32,
    index: InvertedIndex,
}

impl InvertedIndex {
    /// Indexes `title + " " + body` of every document.
    pub fn build(docs: &[Document], analyzer: Analyzer) -> Result<Self> {
        if docs.is_empty() {
            return Err(Error::invalid("cannot index an empty collection"));
        }
        let mut doc_ids = Vec::with_capacity(docs.len());
        let mut doc_lens = Vec::with_capacity(docs.len());
        let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        let mut collection_freq: BTreeMap<String, u64> = BTreeMap::new();
        let mut lookup = HashMap::with_capacity(docs.len());
        let mut total_terms = 0u64;

        for (num, doc) in docs.iter().enumerate() {
            let num = u32::try_from(num).map_err(|_| Error::invalid("collection too large"))?;
            if lookup.insert(doc.id.clone(), num).is_some() {
                return Err(Error::DuplicateId {
                    kind: "document",
                    id: doc.id.clone(),
                });
            }
            let tokens = analyzer.analyze(&format!("{} {}", doc.title, doc.body));
            let mut tfs: BTreeMap<String, u32> = BTreeMap::new();
            for token in &tokens {
                *tfs.entry(token.clone()).or_default() += 1;
            }
            for (term, tf) in tfs {
                *collection_freq.entry(term.clone()).or_default() += u64::from(tf);
                postings
                    .entry(term)
                    .or_default()
                    .push(Posting { doc: num, tf });
            }
            let len =
                u32::try_from(tokens.len()).map_err(|_| Error::invalid("document too long"))?;
            doc_ids.push(doc.id.clone());
            doc_lens.push(len);
            total_terms += u64::from(len);
        }

        Ok(Self {
            analyzer,
            doc_ids,
            doc_lens,
            postings,
            collection_freq,
            total_terms,
            lookup,
        })
    }

    pub fn analyzer(&self) -> &Analyzer {
        &self.analyzer
    }

    pub fn num_docs(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn total_terms(&self) -> u64 {
        self.total_terms
    }

    pub fn avgdl<S: Score>(&self) -> S {
        S::lit(self.total_terms as f64) / S::from_count(self.num_docs())
    }

    pub fn doc_id(&self, num: u32) -> &str {
        &self.doc_ids[num as usize]
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn doc_number(&self, doc_id: &str) -> Result<u32> {
        self.lookup
            .get(doc_id)
            .copied()
            .ok_or_else(|| Error::UnknownDocument(doc_id.to_string()))
    }

    pub fn doc_len(&self, doc_id: &str) -> Result<u32> {
        Ok(self.doc_lens[self.doc_number(doc_id)? as usize])
    }

    pub(crate) fn doc_len_by_number(&self, num: u32) -> u32 {
        self.doc_lens[num as usize]
    }

    pub fn postings(&self, term: &str) -> &[Posting] {
        self.postings.get(term).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn terms(&self) -> impl Iterator<Item = &str> {
        self.postings.keys().map(String::as_str)
    }

    /// Number of documents containing `term`.
    pub fn df(&self, term: &str) -> usize {
        self.postings(term).len()
    }

    /// Total occurrences of `term` in the collection.
    pub fn cf(&self, term: &str) -> u64 {
        self.collection_freq.get(term).copied().unwrap_or(0)
    }

    pub(crate) fn tf_by_number(&self, term: &str, num: u32) -> u32 {
        let list = self.postings(term);
        list.binary_search_by_key(&num, |p| p.doc)
            .map(|i| list[i].tf)
            .unwrap_or(0)
    }

    pub fn tf(&self, term: &str, doc_id: &str) -> Result<u32> {
        Ok(self.tf_by_number(term, self.doc_number(doc_id)?))
    }

    /// Checks the cross-statistic invariants; used after deserialization.
    fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::IndexFormat(m));
        if self.doc_ids.is_empty() || self.doc_ids.len() != self.doc_lens.len() {
            return fail("document table is empty or inconsistent".into());
        }
        let lens: u64 = self.doc_lens.iter().map(|&l| u64::from(l)).sum();
        if lens != self.total_terms {
            return fail(format!(
                "total_terms {} != sum of lengths {lens}",
                self.total_terms
            ));
        }
        if self.postings.len() != self.collection_freq.len() {
            return fail("postings and collection frequencies cover different terms".into());
        }
        let n = self.doc_ids.len() as u32;
        for (term, list) in &self.postings {
            let sum: u64 = list.iter().map(|p| u64::from(p.tf)).sum();
            if Some(&sum) != self.collection_freq.get(term) {
                return fail(format!(
                    "collection frequency of `{term}` disagrees with postings"
                ));
            }
            if list.windows(2).any(|w| w[0].doc >= w[1].doc)
                || list.iter().any(|p| p.doc >= n || p.tf == 0)
            {
                return fail(format!("postings of `{term}` are malformed"));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let file = IndexFile {
            format: FORMAT_NAME.to_string(),
            version: FORMAT_VERSION,
            index: self.clone(),
        };
        serde_json::to_string(&file).map_err(|e| Error::IndexFormat(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: IndexFile =
            serde_json::from_str(text).map_err(|e| Error::IndexFormat(e.to_string()))?;
        if file.format != FORMAT_NAME || file.version != FORMAT_VERSION {
            return Err(Error::IndexFormat(format!(
                "unsupported index format {} v{}",
                file.format, file.version
            )));
        }
        let mut index = file.index;
        index.lookup = HashMap::with_capacity(index.doc_ids.len());
        for (num, id) in index.doc_ids.iter().enumerate() {
            if index.lookup.insert(id.clone(), num as u32).is_some() {
                return Err(Error::IndexFormat(format!("duplicate document `{id}`")));
            }
        }
        index.validate()?;
        Ok(index)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ranking::tests::toy_c3;

    #[test]
    fn c3_statistics_by_hand() {
        let index = InvertedIndex::build(&toy_c3(), Analyzer::default()).unwrap();
        assert_eq!(index.num_docs(), 3);
        assert_eq!(index.total_terms(), 8);
        assert_eq!(index.avgdl::<f64>(), 8.0 / 3.0);
        assert_eq!((index.cf("a"), index.cf("b"), index.cf("c")), (2, 2, 4));
        assert_eq!(
            ["d1", "d2", "d3"].map(|d| index.doc_len(d).unwrap()),
            [3, 2, 3]
        );
        assert_eq!(index.df("c"), 2);
        assert_eq!(index.tf("c", "d3").unwrap(), 3);
        assert!(index.doc_len("nope").is_err());
    }

    #[test]
    fn build_is_deterministic_and_rejects_empty() {
        let a = InvertedIndex::build(&toy_c3(), Analyzer::default()).unwrap();
        let b = InvertedIndex::build(&toy_c3(), Analyzer::default()).unwrap();
        assert_eq!(a, b);
        assert!(InvertedIndex::build(&[], Analyzer::default()).is_err());
    }

    #[test]
    fn json_round_trip_is_exact() {
        let index = InvertedIndex::build(&toy_c3(), Analyzer::default()).unwrap();
        let back = InvertedIndex::from_json(&index.to_json().unwrap()).unwrap();
        assert_eq!(back, index);
        assert_eq!(back.doc_number("d2").unwrap(), 1);
    }

    #[test]
    fn load_rejects_wrong_version_and_corruption() {
        let index = InvertedIndex::build(&toy_c3(), Analyzer::default()).unwrap();
        let json = index.to_json().unwrap();
        assert!(InvertedIndex::from_json(&json.replace("\"version\":1", "\"version\":9")).is_err());
        assert!(
            InvertedIndex::from_json(&json.replace("\"total_terms\":8", "\"total_terms\":9"))
                .is_err()
        );
    }
}
