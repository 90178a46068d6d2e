//! First-stage lexical retrieval: an inverted index with BM25 and
//! Dirichlet-smoothed query-likelihood scoring.

mod analyzer;
mod index;

pub use analyzer::Analyzer;
pub use index::{InvertedIndex, Posting};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{sort_ranking, Query, Run, ScoredDoc};
use crate::error::{Error, Result};
use crate::scalar::Score;

/// BM25 parameters (Lucene variant, non-negative idf).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params<S = f64> {
    pub k1: S,
    pub b: S,
}

impl<S: Score> Default for Bm25Params<S> {
    fn default() -> Self {
        Self {
            k1: S::lit(0.9),
            b: S::lit(0.4),
        }
    }
}

impl<S: Score> Bm25Params<S> {
    pub fn new(k1: S, b: S) -> Result<Self> {
        if !(k1 > S::zero() && k1.is_finite()) {
            return Err(Error::invalid(format!(
                "BM25 k1 must be positive, got {k1}"
            )));
        }
        if !(b >= S::zero() && b <= S::one()) {
            return Err(Error::invalid(format!(
                "BM25 b must lie in [0, 1], got {b}"
            )));
        }
        Ok(Self { k1, b })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirichletParams<S = f64> {
    pub mu: S,
}

impl<S: Score> Default for DirichletParams<S> {
    fn default() -> Self {
        Self { mu: S::lit(1000.0) }
    }
}

impl<S: Score> DirichletParams<S> {
    pub fn new(mu: S) -> Result<Self> {
        if !(mu > S::zero() && mu.is_finite()) {
            return Err(Error::invalid(format!(
                "Dirichlet mu must be positive and finite, got {mu}"
            )));
        }
        Ok(Self { mu })
    }
}

/// Contribution of one query term to a document's BM25 score.
fn bm25_term<S: Score>(
    params: &Bm25Params<S>,
    num_docs: S,
    df: usize,
    tf: u32,
    doc_len: u32,
    avgdl: S,
) -> S {
    let half = S::lit(0.5);
    let df = S::from_count(df);
    let idf = (S::one() + (num_docs - df + half) / (df + half)).ln();
    let tf = S::lit(f64::from(tf));
    let norm = S::one() - params.b + params.b * S::lit(f64::from(doc_len)) / avgdl;
    idf * tf / (tf + params.k1 * norm)
}

/// Contribution of one in-collection query term to a document's Dirichlet score.
fn dirichlet_term<S: Score>(
    params: &DirichletParams<S>,
    tf: u32,
    cf: u64,
    total_terms: S,
    doc_len: u32,
) -> S {
    let background = params.mu * S::lit(cf as f64) / total_terms;
    ((S::lit(f64::from(tf)) + background) / (S::lit(f64::from(doc_len)) + params.mu)).ln()
}

pub fn bm25_score<S: Score>(
    index: &InvertedIndex,
    params: &Bm25Params<S>,
    query_terms: &[String],
    doc_id: &str,
) -> Result<S> {
    let num = index.doc_number(doc_id)?;
    let n = S::from_count(index.num_docs());
    let avgdl = index.avgdl::<S>();
    let dl = index.doc_len_by_number(num);
    let mut score = S::zero();
    for term in query_terms {
        let tf = index.tf_by_number(term, num);
        if tf > 0 {
            score = score + bm25_term(params, n, index.df(term), tf, dl, avgdl);
        }
    }
    Ok(score)
}

/// Query-likelihood with Dirichlet smoothing. Terms absent from the
/// collection are skipped; repeated terms count once per occurrence.
pub fn dirichlet_qlm_score<S: Score>(
    index: &InvertedIndex,
    params: &DirichletParams<S>,
    query_terms: &[String],
    doc_id: &str,
) -> Result<S> {
    let num = index.doc_number(doc_id)?;
    let total = S::lit(index.total_terms() as f64);
    let dl = index.doc_len_by_number(num);
    let mut score = S::zero();
    for term in query_terms {
        let cf = index.cf(term);
        if cf > 0 {
            score = score + dirichlet_term(params, index.tf_by_number(term, num), cf, total, dl);
        }
    }
    Ok(score)
}

fn check_depth(k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::invalid("retrieval depth k must be at least 1"));
    }
    Ok(())
}

fn top_k<S: Score>(index: &InvertedIndex, scores: Vec<(u32, S)>, k: usize) -> Vec<ScoredDoc<S>> {
    let mut ranking: Vec<ScoredDoc<S>> = scores
        .into_iter()
        .map(|(num, s)| ScoredDoc::new(index.doc_id(num), s))
        .collect();
    sort_ranking(&mut ranking);
    ranking.truncate(k);
    ranking
}

/// Top-`k` documents with a positive BM25 score.
pub fn bm25_search<S: Score>(
    index: &InvertedIndex,
    params: &Bm25Params<S>,
    query: &str,
    k: usize,
) -> Result<Vec<ScoredDoc<S>>> {
    check_depth(k)?;
    let terms = index.analyzer().analyze(query);
    let n = S::from_count(index.num_docs());
    let avgdl = index.avgdl::<S>();
    let mut acc: Vec<Option<S>> = vec![None; index.num_docs()];
    // Term-at-a-time, in query order, so sums match bm25_score exactly.
    for term in &terms {
        let df = index.df(term);
        for p in index.postings(term) {
            let contribution =
                bm25_term(params, n, df, p.tf, index.doc_len_by_number(p.doc), avgdl);
            let slot = &mut acc[p.doc as usize];
            *slot = Some(slot.unwrap_or_else(S::zero) + contribution);
        }
    }
    let scored = acc
        .into_iter()
        .enumerate()
        .filter_map(|(num, s)| s.filter(|&s| s > S::zero()).map(|s| (num as u32, s)))
        .collect();
    Ok(top_k(index, scored, k))
}

/// Top-`k` documents by Dirichlet query likelihood, scoring every document.
pub fn dirichlet_search<S: Score>(
    index: &InvertedIndex,
    params: &DirichletParams<S>,
    query: &str,
    k: usize,
) -> Result<Vec<ScoredDoc<S>>> {
    check_depth(k)?;
    let terms: Vec<String> = index
        .analyzer()
        .analyze(query)
        .into_iter()
        .filter(|t| index.cf(t) > 0)
        .collect();
    let total = S::lit(index.total_terms() as f64);
    let n = index.num_docs();
    // Dense tf columns, one per query term occurrence.
    let columns: Vec<(u64, Vec<u32>)> = terms
        .iter()
        .map(|t| {
            let mut col = vec![0u32; n];
            for p in index.postings(t) {
                col[p.doc as usize] = p.tf;
            }
            (index.cf(t), col)
        })
        .collect();
    let scored = (0..n as u32)
        .map(|num| {
            let dl = index.doc_len_by_number(num);
            let score = columns.iter().fold(S::zero(), |acc, (cf, col)| {
                acc + dirichlet_term(params, col[num as usize], *cf, total, dl)
            });
            (num, score)
        })
        .collect();
    Ok(top_k(index, scored, k))
}

/// A configured first-stage retriever.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Retriever<S = f64> {
    Bm25(Bm25Params<S>),
    Dirichlet(DirichletParams<S>),
}

impl<S: Score> Retriever<S> {
    pub fn search(
        &self,
        index: &InvertedIndex,
        query: &str,
        k: usize,
    ) -> Result<Vec<ScoredDoc<S>>> {
        match self {
            Retriever::Bm25(p) => bm25_search(index, p, query, k),
            Retriever::Dirichlet(p) => dirichlet_search(index, p, query, k),
        }
    }

    /// Searches every query (in parallel) and collects the results into a run.
    pub fn search_run(
        &self,
        index: &InvertedIndex,
        queries: &[Query],
        k: usize,
        tag: &str,
    ) -> Result<Run<S>> {
        check_depth(k)?;
        let results: Vec<(String, Vec<ScoredDoc<S>>)> = queries
            .par_iter()
            .map(|q| Ok((q.id.clone(), self.search(index, &q.text, k)?)))
            .collect::<Result<_>>()?;
        let mut run = Run::new(tag);
        for (qid, ranking) in results {
            run.insert(qid, ranking.into_iter().map(|e| (e.doc_id, e.score)))?;
        }
        Ok(run)
    }
}
