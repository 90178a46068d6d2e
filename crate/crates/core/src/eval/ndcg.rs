use std::collections::BTreeMap;

use crate::corpus::{QrelSet, Run};
use crate::error::{Error, Result};
use crate::scalar::{mean, Score};

pub const DEFAULT_CUTOFF: usize = 10;

/// Per-query and mean values of a ranking metric.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport<S = f64> {
    pub per_query: BTreeMap<String, S>,
    pub mean: S,
    pub k: usize,
    pub evaluated_query_count: usize,
}

fn gain<S: Score>(grade: u32) -> S {
    S::lit(2f64.powi(grade as i32) - 1.0)
}

fn discount<S: Score>(rank: usize) -> S {
    // rank is 1-based
    S::from_count(rank + 1).log2()
}

/// DCG@k of a sequence of grades in rank order.
pub fn dcg<S: Score>(grades: impl IntoIterator<Item = u32>, k: usize) -> S {
    grades
        .into_iter()
        .take(k)
        .enumerate()
        .fold(S::zero(), |acc, (i, g)| {
            acc + gain::<S>(g) / discount::<S>(i + 1)
        })
}

/// nDCG@k with exponential gain `2^rel - 1` and `log2(rank + 1)` discount.
///
/// A query is evaluated when it appears in the run and has at least one
/// positively judged document. Unjudged documents have zero gain.
pub fn ndcg_at_k<S: Score>(run: &Run<S>, qrels: &QrelSet, k: usize) -> Result<EvalReport<S>> {
    if k == 0 {
        return Err(Error::invalid("cutoff k must be at least 1"));
    }
    let mut per_query = BTreeMap::new();
    for (qid, ranking) in run.iter() {
        let Some(judged) = qrels.for_query(qid) else {
            continue;
        };
        let mut ideal: Vec<u32> = judged.values().copied().filter(|&g| g > 0).collect();
        if ideal.is_empty() {
            continue;
        }
        ideal.sort_unstable_by(|a, b| b.cmp(a));
        let idcg: S = dcg(ideal, k);
        let actual: S = dcg(
            ranking
                .iter()
                .map(|e| judged.get(&e.doc_id).copied().unwrap_or(0)),
            k,
        );
        per_query.insert(qid.to_string(), actual / idcg);
    }
    let values: Vec<S> = per_query.values().copied().collect();
    let mean = mean(&values).ok_or(Error::NoEvaluableQueries)?;
    Ok(EvalReport {
        evaluated_query_count: per_query.len(),
        per_query,
        mean,
        k,
    })
}

impl<S: Score> EvalReport<S> {
    /// `query_id<TAB>ndcg` rows followed by a summary block.
    pub fn to_tsv(&self) -> String {
        use std::fmt::Write as _;
        let mut out = String::from("query_id\tndcg\n");
        for (qid, v) in &self.per_query {
            writeln!(out, "{qid}\t{v:.6}").expect("writing to String");
        }
        writeln!(out, "\n# summary").expect("writing to String");
        writeln!(out, "metric\tndcg@{}", self.k).expect("writing to String");
        writeln!(out, "queries\t{}", self.evaluated_query_count).expect("writing to String");
        writeln!(out, "mean\t{:.6}", self.mean).expect("writing to String");
        out
    }
}
