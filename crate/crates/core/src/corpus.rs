//! BEIR-format datasets and TREC-format run files.
//!
//! Corpus and query files are JSON lines (`_id`, optional `title`, `text`),
//! relevance judgments are `query-id<TAB>corpus-id<TAB>score` rows, and runs
//! use the six-column TREC layout `qid Q0 docid rank score tag`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde_json::Value;
use tracing::warn;

use crate::error::{Error, Result};
use crate::scalar::Score;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub id: String,
    pub title: String,
    pub body: String,
}

impl Document {
    pub fn new(id: impl Into<String>, title: impl Into<String>, body: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            title: title.into(),
            body: body.into(),
        }
    }

    /// Title and body joined by a newline, or just the body when the title is empty.
    pub fn display_text(&self) -> String {
        if self.title.is_empty() {
            self.body.clone()
        } else {
            format!("{}\n{}", self.title, self.body)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Query {
    pub id: String,
    pub text: String,
}

impl Query {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
        }
    }
}

/// Graded relevance judgments. Absent pairs are unjudged.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct QrelSet {
    judgments: BTreeMap<String, BTreeMap<String, u32>>,
}

impl QrelSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records a judgment, returning the grade it replaced if any.
    pub fn insert(
        &mut self,
        query_id: impl Into<String>,
        doc_id: impl Into<String>,
        grade: u32,
    ) -> Option<u32> {
        self.judgments
            .entry(query_id.into())
            .or_default()
            .insert(doc_id.into(), grade)
    }

    pub fn grade(&self, query_id: &str, doc_id: &str) -> Option<u32> {
        self.judgments.get(query_id)?.get(doc_id).copied()
    }

    pub fn for_query(&self, query_id: &str) -> Option<&BTreeMap<String, u32>> {
        self.judgments.get(query_id)
    }

    pub fn queries(&self) -> impl Iterator<Item = (&str, &BTreeMap<String, u32>)> {
        self.judgments.iter().map(|(q, j)| (q.as_str(), j))
    }

    /// Total number of judged (query, document) pairs.
    pub fn len(&self) -> usize {
        self.judgments.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl<Q: Into<String>, D: Into<String>> FromIterator<(Q, D, u32)> for QrelSet {
    fn from_iter<I: IntoIterator<Item = (Q, D, u32)>>(iter: I) -> Self {
        let mut qrels = QrelSet::new();
        for (q, d, g) in iter {
            qrels.insert(q, d, g);
        }
        qrels
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredDoc<S = f64> {
    pub doc_id: String,
    pub score: S,
}

impl<S> ScoredDoc<S> {
    pub fn new(doc_id: impl Into<String>, score: S) -> Self {
        Self {
            doc_id: doc_id.into(),
            score,
        }
    }
}

/// Run ordering: score descending, then doc id ascending.
pub fn sort_ranking<S: Score>(ranking: &mut [ScoredDoc<S>]) {
    ranking.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .expect("ranking scores are never NaN")
            .then_with(|| a.doc_id.cmp(&b.doc_id))
    });
}

/// Per-query ranked lists of scored documents.
///
/// Every ranking is kept sorted by [`sort_ranking`] and holds each document
/// at most once; scores are never NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct Run<S = f64> {
    tag: String,
    rankings: BTreeMap<String, Vec<ScoredDoc<S>>>,
}

impl<S: Score> Run<S> {
    pub fn new(tag: impl Into<String>) -> Self {
        Self {
            tag: tag.into(),
            rankings: BTreeMap::new(),
        }
    }

    pub fn tag(&self) -> &str {
        &self.tag
    }

    pub fn set_tag(&mut self, tag: impl Into<String>) {
        self.tag = tag.into();
    }

    /// Sets the ranking of one query, replacing any previous one.
    pub fn insert<I, D>(&mut self, query_id: impl Into<String>, docs: I) -> Result<()>
    where
        I: IntoIterator<Item = (D, S)>,
        D: Into<String>,
    {
        let query_id = query_id.into();
        let mut ranking: Vec<ScoredDoc<S>> = docs
            .into_iter()
            .map(|(d, s)| ScoredDoc::new(d, s))
            .collect();
        let mut seen = HashSet::with_capacity(ranking.len());
        for entry in &ranking {
            if entry.score.is_nan() {
                return Err(Error::invalid(format!(
                    "NaN score for document `{}` in query `{query_id}`",
                    entry.doc_id
                )));
            }
            if !seen.insert(entry.doc_id.as_str()) {
                return Err(Error::DuplicateId {
                    kind: "run document",
                    id: format!("{query_id}/{}", entry.doc_id),
                });
            }
        }
        if ranking.is_empty() {
            // Nothing to write in TREC form; keep memory and disk views identical.
            self.rankings.remove(&query_id);
            return Ok(());
        }
        sort_ranking(&mut ranking);
        self.rankings.insert(query_id, ranking);
        Ok(())
    }

    pub fn get(&self, query_id: &str) -> Option<&[ScoredDoc<S>]> {
        self.rankings.get(query_id).map(Vec::as_slice)
    }

    /// Rankings in ascending query-id order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &[ScoredDoc<S>])> {
        self.rankings
            .iter()
            .map(|(q, r)| (q.as_str(), r.as_slice()))
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.rankings.keys().map(String::as_str)
    }

    /// Number of queries.
    pub fn len(&self) -> usize {
        self.rankings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rankings.is_empty()
    }

    /// Applies `f` to every score, then re-sorts. Fails if `f` yields NaN.
    pub fn try_map_scores<T: Score>(&self, mut f: impl FnMut(&str, S) -> T) -> Result<Run<T>> {
        let mut out = Run::new(self.tag.clone());
        for (qid, ranking) in self.iter() {
            out.insert(
                qid,
                ranking
                    .iter()
                    .map(|e| (e.doc_id.clone(), f(qid, e.score)))
                    .collect::<Vec<_>>(),
            )?;
        }
        Ok(out)
    }

    /// Serializes in six-column TREC format, queries in ascending id order,
    /// ranks starting at 1. Scores use shortest round-trip formatting.
    pub fn to_trec_string(&self) -> Result<String> {
        let tag = if self.tag.is_empty() {
            "run"
        } else {
            &self.tag
        };
        check_token("run tag", tag)?;
        let mut out = String::new();
        for (qid, ranking) in self.iter() {
            check_token("query id", qid)?;
            for (rank, entry) in ranking.iter().enumerate() {
                check_token("document id", &entry.doc_id)?;
                writeln!(
                    out,
                    "{qid} Q0 {} {} {} {tag}",
                    entry.doc_id,
                    rank + 1,
                    entry.score
                )
                .expect("writing to String");
            }
        }
        Ok(out)
    }

    pub fn from_trec_str(text: &str, origin: &Path) -> Result<Self> {
        let mut tag: Option<String> = None;
        let mut grouped: BTreeMap<String, Vec<(String, S)>> = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split_whitespace().collect();
            if cols.len() != 6 {
                return Err(Error::parse(
                    origin,
                    lineno + 1,
                    format!("expected 6 columns, found {}", cols.len()),
                ));
            }
            if cols[3].parse::<i64>().is_err() {
                return Err(Error::parse(
                    origin,
                    lineno + 1,
                    format!("non-integer rank `{}`", cols[3]),
                ));
            }
            let score: S = cols[4]
                .parse()
                .ok()
                .filter(|s: &S| !s.is_nan())
                .ok_or_else(|| {
                    Error::parse(
                        origin,
                        lineno + 1,
                        format!("non-numeric score `{}`", cols[4]),
                    )
                })?;
            tag.get_or_insert_with(|| cols[5].to_string());
            grouped
                .entry(cols[0].to_string())
                .or_default()
                .push((cols[2].to_string(), score));
        }
        let mut run = Run::new(tag.unwrap_or_default());
        for (qid, docs) in grouped {
            run.insert(qid, docs)?;
        }
        Ok(run)
    }
}

fn check_token(what: &str, value: &str) -> Result<()> {
    if value.is_empty() || value.chars().any(char::is_whitespace) {
        return Err(Error::invalid(format!(
            "{what} `{value}` is empty or contains whitespace"
        )));
    }
    Ok(())
}

pub fn read_run<S: Score>(path: impl AsRef<Path>) -> Result<Run<S>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Run::from_trec_str(&text, path)
}

pub fn write_run<S: Score>(run: &Run<S>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, run.to_trec_string()?).map_err(|e| Error::io(path, e))
}

fn read_lines(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn json_id(value: Option<&Value>) -> Option<String> {
    match value? {
        Value::String(s) if !s.is_empty() => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

fn json_text(value: Option<&Value>) -> std::result::Result<Option<String>, ()> {
    match value {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) => Ok(Some(s.clone())),
        Some(_) => Err(()),
    }
}

fn parse_jsonl_records(
    path: &Path,
    text: &str,
) -> Result<Vec<(usize, serde_json::Map<String, Value>)>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(line)
            .map_err(|e| Error::parse(path, lineno + 1, format!("malformed JSON: {e}")))?;
        match value {
            Value::Object(map) => out.push((lineno + 1, map)),
            _ => return Err(Error::parse(path, lineno + 1, "expected a JSON object")),
        }
    }
    Ok(out)
}

/// Parses BEIR `corpus.jsonl` content. Order is preserved.
pub fn parse_corpus(text: &str, origin: &Path) -> Result<Vec<Document>> {
    let mut seen = HashSet::new();
    let mut docs = Vec::new();
    for (line, record) in parse_jsonl_records(origin, text)? {
        let id = json_id(record.get("_id"))
            .ok_or_else(|| Error::parse(origin, line, "missing or empty `_id`"))?;
        let title = json_text(record.get("title"))
            .map_err(|_| Error::parse(origin, line, "`title` must be a string"))?
            .unwrap_or_default();
        let body = json_text(record.get("text"))
            .map_err(|_| Error::parse(origin, line, "`text` must be a string"))?
            .ok_or_else(|| Error::parse(origin, line, "missing `text`"))?;
        if !seen.insert(id.clone()) {
            return Err(Error::DuplicateId {
                kind: "document",
                id,
            });
        }
        docs.push(Document { id, title, body });
    }
    Ok(docs)
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<Document>> {
    let path = path.as_ref();
    parse_corpus(&read_lines(path)?, path)
}

/// Parses BEIR `queries.jsonl` content. Order is preserved.
pub fn parse_queries(text: &str, origin: &Path) -> Result<Vec<Query>> {
    let mut seen = HashSet::new();
    let mut queries = Vec::new();
    for (line, record) in parse_jsonl_records(origin, text)? {
        let id = json_id(record.get("_id"))
            .ok_or_else(|| Error::parse(origin, line, "missing or empty `_id`"))?;
        let text = json_text(record.get("text"))
            .map_err(|_| Error::parse(origin, line, "`text` must be a string"))?
            .filter(|t| !t.trim().is_empty())
            .ok_or_else(|| Error::parse(origin, line, format!("query `{id}` has empty text")))?;
        if !seen.insert(id.clone()) {
            return Err(Error::DuplicateId { kind: "query", id });
        }
        queries.push(Query { id, text });
    }
    Ok(queries)
}

pub fn load_queries(path: impl AsRef<Path>) -> Result<Vec<Query>> {
    let path = path.as_ref();
    parse_queries(&read_lines(path)?, path)
}

/// Parses relevance judgments.
///
/// Accepts BEIR rows (`query-id corpus-id score`, tab or space separated,
/// optional header) and four-column TREC rows (`qid iter docid grade`).
/// A repeated pair overwrites the earlier grade and logs a warning.
pub fn parse_qrels(text: &str, origin: &Path) -> Result<QrelSet> {
    let mut qrels = QrelSet::new();
    for (lineno, line) in text.lines().enumerate() {
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.is_empty() {
            continue;
        }
        let (qid, did, grade) = match cols.as_slice() {
            [q, d, g] | [q, _, d, g] => (*q, *d, *g),
            _ => {
                return Err(Error::parse(
                    origin,
                    lineno + 1,
                    format!("expected 3 columns, found {}", cols.len()),
                ))
            }
        };
        let grade: i64 = match grade.parse() {
            Ok(g) => g,
            Err(_) if lineno == 0 => continue,
            Err(_) => {
                return Err(Error::parse(
                    origin,
                    lineno + 1,
                    format!("non-integer grade `{grade}`"),
                ))
            }
        };
        let grade = u32::try_from(grade).map_err(|_| {
            Error::parse(
                origin,
                lineno + 1,
                format!("grade {grade} is negative or too large"),
            )
        })?;
        if let Some(old) = qrels.insert(qid, did, grade) {
            warn!(
                query = qid,
                doc = did,
                old,
                new = grade,
                "duplicate judgment overwritten"
            );
        }
    }
    Ok(qrels)
}

pub fn load_qrels(path: impl AsRef<Path>) -> Result<QrelSet> {
    let path = path.as_ref();
    parse_qrels(&read_lines(path)?, path)
}

/// Borrowing lookup table from document id to document.
pub fn index_documents(docs: &[Document]) -> HashMap<&str, &Document> {
    docs.iter().map(|d| (d.id.as_str(), d)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn here() -> &'static Path {
        Path::new("test.jsonl")
    }

    #[test]
    fn corpus_fields_map_directly() {
        let docs = parse_corpus(
            "{\"_id\":\"d1\",\"title\":\"T\",\"text\":\"B\"}\n{\"_id\":\"d2\",\"text\":\"only body\"}\n",
            here(),
        )
        .unwrap();
        assert_eq!(
            docs,
            vec![
                Document::new("d1", "T", "B"),
                Document::new("d2", "", "only body")
            ]
        );
    }

    #[test]
    fn corpus_duplicate_id_rejected() {
        let err = parse_corpus(
            "{\"_id\":\"d1\",\"text\":\"x\"}\n{\"_id\":\"d1\",\"text\":\"y\"}\n",
            here(),
        )
        .unwrap_err();
        assert!(
            matches!(
                err,
                Error::DuplicateId {
                    kind: "document",
                    ..
                }
            ),
            "{err}"
        );
    }

    #[test]
    fn corpus_malformed_line_names_line_number() {
        let err = parse_corpus("{\"_id\":\"d1\",\"text\":\"x\"}\n{not json\n", here()).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn query_empty_text_rejected() {
        let q = parse_queries("{\"_id\":\"q1\",\"text\":\"what is x\"}\n", here()).unwrap();
        assert_eq!(q, vec![Query::new("q1", "what is x")]);
        assert!(parse_queries("{\"_id\":\"q1\",\"text\":\"\"}\n", here()).is_err());
        assert!(parse_queries("{\"_id\":\"q1\"}\n", here()).is_err());
    }

    #[test]
    fn qrels_rows_header_and_errors() {
        let q = parse_qrels("q1\td1\t2\n", here()).unwrap();
        assert_eq!(q.grade("q1", "d1"), Some(2));
        let q = parse_qrels("query-id\tcorpus-id\tscore\nq1\td1\t1\n", here()).unwrap();
        assert_eq!(q.len(), 1);
        assert!(parse_qrels("q1\td1\t-1\n", here()).is_err());
        assert!(parse_qrels("q1\td1\t1\nq1\td2\tx\n", here()).is_err());
        let q = parse_qrels("q1\td1\t1\nq1\td1\t3\n", here()).unwrap();
        assert_eq!(q.grade("q1", "d1"), Some(3));
        let q = parse_qrels("q1 0 d1 2\n", here()).unwrap();
        assert_eq!(q.grade("q1", "d1"), Some(2));
    }

    #[test]
    fn run_line_parses() {
        let run: Run = Run::from_trec_str("q1 Q0 d3 1 12.5 bm25\n", here()).unwrap();
        assert_eq!(run.tag(), "bm25");
        assert_eq!(run.get("q1").unwrap(), &[ScoredDoc::new("d3", 12.5)]);
    }

    #[test]
    fn run_rejects_bad_lines() {
        assert!(Run::<f64>::from_trec_str("q1 Q0 d3 1 12.5\n", here()).is_err());
        assert!(Run::<f64>::from_trec_str("q1 Q0 d3 1 abc bm25\n", here()).is_err());
        assert!(Run::<f64>::from_trec_str("q1 Q0 d3 1 NaN bm25\n", here()).is_err());
        assert!(Run::<f64>::from_trec_str("q1 Q0 d3 1 1 t\nq1 Q0 d3 2 0.5 t\n", here()).is_err());
    }

    #[test]
    fn tied_scores_break_by_doc_id() {
        let mut run = Run::new("t");
        run.insert("q1", [("d2", 1.0), ("d1", 1.0)]).unwrap();
        assert_eq!(
            run.to_trec_string().unwrap(),
            "q1 Q0 d1 1 1 t\nq1 Q0 d2 2 1 t\n"
        );
    }

    #[test]
    fn small_run_round_trips() {
        let mut run = Run::new("x");
        run.insert("q1", [("a", 0.5), ("b", -1.25), ("c", 3.0)])
            .unwrap();
        run.insert("q2", [("c", 1e-9), ("a", 2.0 / 3.0), ("b", 7.0)])
            .unwrap();
        let back: Run = Run::from_trec_str(&run.to_trec_string().unwrap(), here()).unwrap();
        assert_eq!(back, run);
    }

    #[test]
    fn write_rejects_whitespace_ids() {
        let mut run = Run::new("t");
        run.insert("q 1", [("d1", 1.0)]).unwrap();
        assert!(run.to_trec_string().is_err());
    }

    fn arb_ranking() -> impl Strategy<Value = Vec<(String, f64)>> {
        proptest::collection::btree_map("[a-z0-9]{1,6}", -1e6f64..1e6, 0..12)
            .prop_map(|m| m.into_iter().collect())
    }

    proptest! {
        #[test]
        fn trec_round_trip_preserves_everything(
            q in proptest::collection::btree_map("q[0-9]{1,3}", arb_ranking(), 0..5)
        ) {
            let mut run = Run::new("tag");
            for (qid, docs) in &q {
                run.insert(qid.clone(), docs.clone()).unwrap();
            }
            let back: Run = Run::from_trec_str(&run.to_trec_string().unwrap(), here()).unwrap();
            let back_f32: Run<f32> = Run::from_trec_str(
                &run.try_map_scores(|_, s| s as f32).unwrap().to_trec_string().unwrap(), here()).unwrap();
            prop_assert!(back.iter().eq(run.iter()));
            prop_assert!(back_f32.iter().eq(run.try_map_scores(|_, s| s as f32).unwrap().iter()));
            if !run.is_empty() {
                prop_assert_eq!(&back, &run);
            }
        }

        #[test]
        fn ordering_is_independent_of_input_order(
            docs in proptest::collection::btree_map("[a-c]{1,2}", 0u8..3, 1..8),
            seed in any::<u64>()
        ) {
            let base: Vec<(String, f64)> = docs.into_iter().map(|(d, s)| (d, f64::from(s))).collect();
            let mut shuffled = base.clone();
            let n = shuffled.len();
            let mut state = seed;
            for i in (1..n).rev() {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                shuffled.swap(i, (state >> 33) as usize % (i + 1));
            }
            let mut a = Run::new("t");
            a.insert("q", base).unwrap();
            let mut b = Run::new("t");
            b.insert("q", shuffled).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
