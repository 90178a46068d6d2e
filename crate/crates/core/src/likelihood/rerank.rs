use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::Serialize;
use tracing::warn;

use crate::corpus::{index_documents, Document, Query, Run, ScoredDoc};
use crate::error::{Error, Result};
use crate::prompts::{Prompt, DEFAULT_DOC_MAX_CHARS};
use crate::scalar::Score;

use super::{score_query_likelihood, LikelihoodProvider, LikelihoodRequest, DEFAULT_LOGPROB_FLOOR};

/// What to do when the provider fails on a document after its retries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OnProviderError {
    /// Abort the query (and the run) with the provider error.
    #[default]
    FailQuery,
    /// Keep the document with the floor score.
    SkipWithFloor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RerankOptions {
    /// Candidates re-ranked per query; the rest of the first-stage list is dropped.
    pub depth: usize,
    pub doc_max_chars: usize,
    /// Maximum provider requests in flight.
    pub concurrency: usize,
    pub on_error: OnProviderError,
    pub floor: f64,
}

impl Default for RerankOptions {
    fn default() -> Self {
        Self {
            depth: 100,
            doc_max_chars: DEFAULT_DOC_MAX_CHARS,
            concurrency: 8,
            on_error: OnProviderError::FailQuery,
            floor: DEFAULT_LOGPROB_FLOOR,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct RerankStats {
    pub provider_requests: u64,
    pub cache_hits: u64,
    pub provider_failures: u64,
}

impl RerankStats {
    pub fn cache_hit_rate(&self) -> f64 {
        let lookups = self.provider_requests + self.cache_hits;
        if lookups == 0 {
            0.0
        } else {
            self.cache_hits as f64 / lookups as f64
        }
    }
}

/// One rendered provider request, for auditing prompts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PromptLogEntry {
    pub query_id: String,
    pub doc_id: String,
    pub few_shot: bool,
    pub context: String,
    pub continuation: String,
}

type CacheKey = (u64, String, String);

/// Scores candidates by mean query-token log-probability and re-sorts them.
///
/// Scores are cached per (prompt fingerprint, document id, query id), so a
/// pair is sent to the provider at most once per reranker.
pub struct Reranker<'a> {
    provider: &'a dyn LikelihoodProvider,
    prompt: Prompt,
    fingerprint: u64,
    options: RerankOptions,
    pool: rayon::ThreadPool,
    cache: Mutex<HashMap<CacheKey, f64>>,
    requests: AtomicU64,
    hits: AtomicU64,
    failures: AtomicU64,
    prompt_log: Option<Mutex<Vec<PromptLogEntry>>>,
}

impl<'a> Reranker<'a> {
    pub fn new(
        provider: &'a dyn LikelihoodProvider,
        prompt: Prompt,
        options: RerankOptions,
    ) -> Result<Self> {
        if options.depth == 0 {
            return Err(Error::invalid("rerank depth must be at least 1"));
        }
        if options.doc_max_chars == 0 {
            return Err(Error::invalid("doc_max_chars must be at least 1"));
        }
        if !options.floor.is_finite() {
            return Err(Error::invalid("logprob floor must be finite"));
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(options.concurrency.max(1))
            .thread_name(|i| format!("rerank-{i}"))
            .build()
            .map_err(|e| Error::invalid(format!("cannot start rerank workers: {e}")))?;
        Ok(Self {
            provider,
            fingerprint: prompt.fingerprint(),
            prompt,
            options,
            pool,
            cache: Mutex::new(HashMap::new()),
            requests: AtomicU64::new(0),
            hits: AtomicU64::new(0),
            failures: AtomicU64::new(0),
            prompt_log: None,
        })
    }

    /// Records every rendered request; see [`Reranker::prompt_log`].
    pub fn with_prompt_log(mut self) -> Self {
        self.prompt_log = Some(Mutex::new(Vec::new()));
        self
    }

    pub fn options(&self) -> &RerankOptions {
        &self.options
    }

    pub fn stats(&self) -> RerankStats {
        RerankStats {
            provider_requests: self.requests.load(Ordering::Relaxed),
            cache_hits: self.hits.load(Ordering::Relaxed),
            provider_failures: self.failures.load(Ordering::Relaxed),
        }
    }

    /// Logged requests ordered by (query id, doc id).
    pub fn prompt_log(&self) -> Vec<PromptLogEntry> {
        let mut entries = self
            .prompt_log
            .as_ref()
            .map(|log| log.lock().expect("prompt log lock").clone())
            .unwrap_or_default();
        entries.sort_by(|a, b| (&a.query_id, &a.doc_id).cmp(&(&b.query_id, &b.doc_id)));
        entries
    }

    /// Query-likelihood score of one (query, document) pair.
    pub fn score(&self, query: &Query, doc: &Document) -> Result<f64> {
        let key = (self.fingerprint, doc.id.clone(), query.id.clone());
        if let Some(&cached) = self.cache.lock().expect("score cache lock").get(&key) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(cached);
        }
        let context = self.prompt.render(doc, self.options.doc_max_chars)?;
        let request = LikelihoodRequest::new(context, &query.text)?;
        if let Some(log) = &self.prompt_log {
            log.lock().expect("prompt log lock").push(PromptLogEntry {
                query_id: query.id.clone(),
                doc_id: doc.id.clone(),
                few_shot: self.prompt.is_few_shot(),
                context: request.context().to_string(),
                continuation: request.continuation().to_string(),
            });
        }
        self.requests.fetch_add(1, Ordering::Relaxed);
        let score = match self.provider.loglikelihood(&request) {
            Ok(result) => score_query_likelihood(&result)?,
            Err(err) => {
                self.failures.fetch_add(1, Ordering::Relaxed);
                match self.options.on_error {
                    OnProviderError::FailQuery => return Err(err.into()),
                    OnProviderError::SkipWithFloor => {
                        warn!(query = %query.id, doc = %doc.id, error = %err, "provider failed; using floor score");
                        self.options.floor
                    }
                }
            }
        };
        self.cache
            .lock()
            .expect("score cache lock")
            .insert(key, score);
        Ok(score)
    }

    /// Re-scores every candidate of one query. The output holds exactly the
    /// input documents.
    pub fn rerank<S: Score>(
        &self,
        query: &Query,
        candidates: &[ScoredDoc<S>],
        docs: &HashMap<&str, &Document>,
    ) -> Result<Vec<ScoredDoc<S>>> {
        if candidates.is_empty() {
            return Ok(Vec::new());
        }
        let mut run = Run::new("");
        run.insert(
            query.id.clone(),
            self.score_pairs(&[(query, candidates)], docs)?.remove(0),
        )?;
        let (_, ranking) = run.iter().next().expect("one query inserted");
        Ok(ranking.to_vec())
    }

    fn score_pairs<S: Score>(
        &self,
        work: &[(&Query, &[ScoredDoc<S>])],
        docs: &HashMap<&str, &Document>,
    ) -> Result<Vec<Vec<(String, S)>>> {
        let mut pairs = Vec::new();
        for (qi, (query, candidates)) in work.iter().enumerate() {
            for c in candidates.iter() {
                let doc = docs
                    .get(c.doc_id.as_str())
                    .ok_or_else(|| Error::UnknownDocument(c.doc_id.clone()))?;
                pairs.push((qi, *query, *doc));
            }
        }
        let scores: Vec<(usize, String, f64)> = self.pool.install(|| {
            pairs
                .par_iter()
                .map(|(qi, q, d)| Ok((*qi, d.id.clone(), self.score(q, d)?)))
                .collect::<Result<_>>()
        })?;
        let mut grouped: Vec<Vec<(String, S)>> = vec![Vec::new(); work.len()];
        for (qi, doc_id, score) in scores {
            let score = S::from_f64(score)
                .filter(|s| !s.is_nan())
                .ok_or_else(|| Error::invalid(format!("score {score} not representable")))?;
            grouped[qi].push((doc_id, score));
        }
        Ok(grouped)
    }

    /// Re-ranks the top `depth` candidates of every query in `run`.
    pub fn rerank_run<S: Score>(
        &self,
        run: &Run<S>,
        queries: &[Query],
        docs: &[Document],
        tag: &str,
    ) -> Result<Run<S>> {
        let by_id: HashMap<&str, &Query> = queries.iter().map(|q| (q.id.as_str(), q)).collect();
        let doc_lookup = index_documents(docs);
        let work: Vec<(&Query, &[ScoredDoc<S>])> = run
            .iter()
            .map(|(qid, ranking)| {
                let query = by_id
                    .get(qid)
                    .copied()
                    .ok_or_else(|| Error::UnknownQuery(qid.to_string()))?;
                Ok((query, &ranking[..ranking.len().min(self.options.depth)]))
            })
            .collect::<Result<_>>()?;
        let scored = self.score_pairs(&work, &doc_lookup)?;
        let mut out = Run::new(tag);
        for ((query, _), ranking) in work.iter().zip(scored) {
            out.insert(query.id.clone(), ranking)?;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use super::*;
    use crate::error::ProviderError;
    use crate::likelihood::{ConstantProvider, ContextBigramProvider, LikelihoodResult};
    use crate::prompts::PromptTemplate;

    /// Scores a document by the number embedded in its body.
    struct TableProvider;

    impl LikelihoodProvider for TableProvider {
        fn loglikelihood(
            &self,
            request: &LikelihoodRequest,
        ) -> Result<LikelihoodResult, ProviderError> {
            if request.context().contains("broken") {
                return Err(ProviderError::Transport {
                    attempts: 3,
                    message: "down".into(),
                });
            }
            let value: f64 = request.context().trim().parse().unwrap();
            LikelihoodResult::new(vec!["q".into()], vec![value])
        }
    }

    fn zero_shot() -> Prompt {
        Prompt::ZeroShot(PromptTemplate::new("", "{doc}", "").unwrap())
    }

    fn candidates(ids: &[&str]) -> Vec<ScoredDoc<f64>> {
        ids.iter()
            .enumerate()
            .map(|(i, d)| ScoredDoc::new(*d, i as f64))
            .collect()
    }

    #[test]
    fn sorts_by_likelihood_regardless_of_input_order() {
        let docs = vec![
            Document::new("x", "", "-2.0"),
            Document::new("y", "", "-1.0"),
        ];
        let lookup = index_documents(&docs);
        let r = Reranker::new(&TableProvider, zero_shot(), RerankOptions::default()).unwrap();
        let q = Query::new("q", "query");
        for order in [["x", "y"], ["y", "x"]] {
            let out = r.rerank(&q, &candidates(&order), &lookup).unwrap();
            assert_eq!(
                out,
                vec![ScoredDoc::new("y", -1.0), ScoredDoc::new("x", -2.0)]
            );
        }
        assert_eq!(r.stats().provider_requests, 2);
        assert_eq!(r.stats().cache_hits, 2);
    }

    #[test]
    fn uniform_provider_gives_tie_break_order() {
        let docs: Vec<Document> = ["d3", "d1", "d2"]
            .iter()
            .map(|d| Document::new(*d, "", "text"))
            .collect();
        let p = ConstantProvider::uniform(10).unwrap();
        let r = Reranker::new(&p, zero_shot(), RerankOptions::default()).unwrap();
        let out = r
            .rerank(
                &Query::new("q", "a b c"),
                &candidates(&["d3", "d1", "d2"]),
                &index_documents(&docs),
            )
            .unwrap();
        let ids: Vec<&str> = out.iter().map(|e| e.doc_id.as_str()).collect();
        assert_eq!(ids, ["d1", "d2", "d3"]);
        assert!(out.iter().all(|e| e.score == -(10f64).ln()));
    }

    #[test]
    fn error_policies() {
        let docs = vec![
            Document::new("ok", "", "-1.0"),
            Document::new("bad", "", "broken"),
        ];
        let lookup = index_documents(&docs);
        let q = Query::new("q", "query");
        let fail = Reranker::new(&TableProvider, zero_shot(), RerankOptions::default()).unwrap();
        let err = fail
            .rerank(&q, &candidates(&["ok", "bad"]), &lookup)
            .unwrap_err();
        assert!(err.is_provider());

        let skip = Reranker::new(
            &TableProvider,
            zero_shot(),
            RerankOptions {
                on_error: OnProviderError::SkipWithFloor,
                ..RerankOptions::default()
            },
        )
        .unwrap();
        let out = skip
            .rerank(&q, &candidates(&["ok", "bad"]), &lookup)
            .unwrap();
        assert_eq!(
            out,
            vec![ScoredDoc::new("ok", -1.0), ScoredDoc::new("bad", -100.0)]
        );
        assert_eq!(skip.stats().provider_failures, 1);
    }

    #[test]
    fn unknown_candidates_and_queries_are_errors() {
        let docs = vec![Document::new("a", "", "-1")];
        let r = Reranker::new(&TableProvider, zero_shot(), RerankOptions::default()).unwrap();
        assert!(matches!(
            r.rerank(
                &Query::new("q", "x"),
                &candidates(&["zzz"]),
                &index_documents(&docs)
            ),
            Err(Error::UnknownDocument(_))
        ));
        let mut run = Run::new("t");
        run.insert("q9", [("a", 1.0)]).unwrap();
        assert!(matches!(
            r.rerank_run(&run, &[], &docs, "x"),
            Err(Error::UnknownQuery(_))
        ));
    }

    #[test]
    fn rerank_run_truncates_to_depth_and_is_deterministic() {
        let docs: Vec<Document> = (0..12)
            .map(|i| {
                Document::new(
                    format!("d{i:02}"),
                    "",
                    format!("alpha beta gamma {}", "alpha ".repeat(i)),
                )
            })
            .collect();
        let queries = vec![
            Query::new("q1", "alpha beta"),
            Query::new("q2", "gamma alpha"),
        ];
        let mut first = Run::new("bm25");
        for q in &queries {
            first
                .insert(
                    q.id.clone(),
                    docs.iter()
                        .enumerate()
                        .map(|(i, d)| (d.id.clone(), i as f64)),
                )
                .unwrap();
        }
        let opts = RerankOptions {
            depth: 5,
            ..RerankOptions::default()
        };
        let serial = Reranker::new(
            &ContextBigramProvider,
            zero_shot(),
            RerankOptions {
                concurrency: 1,
                ..opts.clone()
            },
        )
        .unwrap()
        .rerank_run(&first, &queries, &docs, "qlm")
        .unwrap();
        let parallel = Reranker::new(&ContextBigramProvider, zero_shot(), opts)
            .unwrap()
            .rerank_run(&first, &queries, &docs, "qlm")
            .unwrap();
        assert_eq!(serial, parallel);
        for (qid, ranking) in serial.iter() {
            assert_eq!(ranking.len(), 5);
            let got: BTreeSet<&str> = ranking.iter().map(|e| e.doc_id.as_str()).collect();
            let want: BTreeSet<&str> = first.get(qid).unwrap()[..5]
                .iter()
                .map(|e| e.doc_id.as_str())
                .collect();
            assert_eq!(got, want);
        }
    }

    #[test]
    fn prompt_log_records_rendered_requests() {
        let docs = vec![Document::new("a", "", "-1.5")];
        let r = Reranker::new(&TableProvider, zero_shot(), RerankOptions::default())
            .unwrap()
            .with_prompt_log();
        r.rerank(
            &Query::new("q", "what"),
            &candidates(&["a"]),
            &index_documents(&docs),
        )
        .unwrap();
        let log = r.prompt_log();
        assert_eq!(log.len(), 1);
        assert_eq!(log[0].context, "-1.5");
        assert_eq!(log[0].continuation, " what");
        assert!(!log[0].few_shot);
    }
}
