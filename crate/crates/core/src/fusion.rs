//! Min-max normalization and linear interpolation of runs.
//!
//! Two runs are fused per query as `alpha * a' + (1 - alpha) * b'`, where
//! `a'` and `b'` are the min-max normalized scores and a document missing
//! from one run gets 0 on that side.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::corpus::{QrelSet, Run};
use crate::error::{Error, Result};
use crate::eval::ndcg_at_k;
use crate::scalar::Score;

/// Weight of the first-stage run when fusing it with re-ranker scores.
pub const DEFAULT_RERANK_ALPHA: f64 = 0.2;
/// Weight used to combine two first-stage retrievers into a hybrid.
pub const DEFAULT_HYBRID_ALPHA: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Normalization {
    #[default]
    MinMax,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionParams<S = f64> {
    pub alpha: S,
    pub normalization: Normalization,
}

impl<S: Score> FusionParams<S> {
    pub fn new(alpha: S) -> Result<Self> {
        check_alpha(alpha)?;
        Ok(Self {
            alpha,
            normalization: Normalization::MinMax,
        })
    }
}

fn check_alpha<S: Score>(alpha: S) -> Result<()> {
    if !(alpha >= S::zero() && alpha <= S::one()) {
        return Err(Error::invalid(format!(
            "alpha must lie in [0, 1], got {alpha}"
        )));
    }
    Ok(())
}

/// Per-query `(s - min) / (max - min)`; constant rankings map to 0.
pub fn minmax_normalize<S: Score>(run: &Run<S>) -> Run<S> {
    let mut out = Run::new(run.tag());
    for (qid, ranking) in run.iter() {
        let (lo, hi) = ranking
            .iter()
            .fold((S::infinity(), S::neg_infinity()), |(lo, hi), e| {
                (lo.min(e.score), hi.max(e.score))
            });
        let range = hi - lo;
        let normalized = ranking.iter().map(|e| {
            let s = if range > S::zero() && range.is_finite() {
                (e.score - lo) / range
            } else {
                S::zero()
            };
            (e.doc_id.clone(), s)
        });
        out.insert(qid, normalized.collect::<Vec<_>>())
            .expect("normalizing a valid run yields a valid run");
    }
    out
}

/// Weighted sum of the min-max normalized runs over the union of their documents.
pub fn interpolate<S: Score>(
    run_a: &Run<S>,
    run_b: &Run<S>,
    alpha: S,
    tag: &str,
) -> Result<Run<S>> {
    check_alpha(alpha)?;
    let a = minmax_normalize(run_a);
    let b = minmax_normalize(run_b);
    let queries: BTreeSet<&str> = a.query_ids().chain(b.query_ids()).collect();
    let beta = S::one() - alpha;
    let mut out = Run::new(tag);
    for qid in queries {
        let mut fused: BTreeMap<&str, (S, S)> = BTreeMap::new();
        for e in a.get(qid).unwrap_or(&[]) {
            fused.entry(&e.doc_id).or_insert((S::zero(), S::zero())).0 = e.score;
        }
        for e in b.get(qid).unwrap_or(&[]) {
            fused.entry(&e.doc_id).or_insert((S::zero(), S::zero())).1 = e.score;
        }
        out.insert(
            qid,
            fused
                .into_iter()
                .map(|(doc, (sa, sb))| (doc.to_string(), alpha * sa + beta * sb))
                .collect::<Vec<_>>(),
        )?;
    }
    Ok(out)
}

/// Keeps the top `k` entries of every query.
pub fn truncate<S: Score>(run: &Run<S>, k: usize) -> Result<Run<S>> {
    if k == 0 {
        return Err(Error::invalid("truncation depth must be at least 1"));
    }
    let mut out = Run::new(run.tag());
    for (qid, ranking) in run.iter() {
        out.insert(
            qid,
            ranking
                .iter()
                .take(k)
                .map(|e| (e.doc_id.clone(), e.score))
                .collect::<Vec<_>>(),
        )?;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow<S = f64> {
    pub alpha: S,
    pub ndcg: S,
}

/// Mean nDCG@k of `interpolate(a, b, alpha)` for every alpha.
pub fn sweep_alpha<S: Score>(
    run_a: &Run<S>,
    run_b: &Run<S>,
    alphas: &[S],
    qrels: &QrelSet,
    k: usize,
) -> Result<Vec<SweepRow<S>>> {
    alphas.iter().try_for_each(|&a| check_alpha(a))?;
    alphas
        .iter()
        .map(|&alpha| {
            let fused = interpolate(run_a, run_b, alpha, "sweep")?;
            Ok(SweepRow {
                alpha,
                ndcg: ndcg_at_k(&fused, qrels, k)?.mean,
            })
        })
        .collect()
}

/// `alpha<TAB>ndcg` lines with a header, ready for plotting.
pub fn sweep_tsv<S: Score>(rows: &[SweepRow<S>]) -> String {
    let mut out = String::from("alpha\tndcg\n");
    for row in rows {
        writeln!(out, "{}\t{:.6}", row.alpha, row.ndcg).expect("writing to String");
    }
    out
}

/// `0, 0.1, ..., 1.0` computed from integer tenths.
pub fn alpha_grid<S: Score>() -> Vec<S> {
    (0..=10).map(|i| S::lit(f64::from(i) / 10.0)).collect()
}
