//! Query-likelihood scoring through pluggable likelihood providers.
//!
//! A provider receives a prompt (which embeds the candidate document) and a
//! continuation (the query) and reports one log-probability per token of the
//! continuation, tokenized however the underlying model tokenizes. The
//! relevance score of a document is the mean of those log-probabilities.

mod bigram;
mod remote;
mod rerank;

pub use bigram::{
    bigram_loglikelihood, bigram_train, word_tokens, ContextBigramProvider, ReferenceLm,
};
pub use remote::{EchoCompletionsProvider, RemoteConfig, RemoteProvider, RetryPolicy};
pub use rerank::{OnProviderError, PromptLogEntry, RerankOptions, RerankStats, Reranker};

use tracing::warn;

use crate::error::{Error, ProviderError, Result};

/// Replacement for `-inf`/NaN log-probabilities.
pub const DEFAULT_LOGPROB_FLOOR: f64 = -100.0;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LikelihoodRequest {
    context: String,
    continuation: String,
}

impl LikelihoodRequest {
    /// Builds a request for `query` following `context`. A single space is
    /// inserted between them unless the context already ends in whitespace.
    pub fn new(context: impl Into<String>, query: &str) -> Result<Self> {
        if query.trim().is_empty() {
            return Err(Error::invalid("likelihood continuation must be non-empty"));
        }
        let context = context.into();
        let continuation = if context.is_empty() || context.ends_with(char::is_whitespace) {
            query.to_string()
        } else {
            format!(" {query}")
        };
        Ok(Self {
            context,
            continuation,
        })
    }

    pub fn context(&self) -> &str {
        &self.context
    }

    pub fn continuation(&self) -> &str {
        &self.continuation
    }
}

/// Per-token log-probabilities of a continuation.
#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodResult {
    tokens: Vec<String>,
    logprobs: Vec<f64>,
}

impl LikelihoodResult {
    /// Requires equal lengths and finite, non-positive log-probabilities.
    pub fn new(tokens: Vec<String>, logprobs: Vec<f64>) -> Result<Self, ProviderError> {
        if tokens.len() != logprobs.len() {
            return Err(ProviderError::Protocol(format!(
                "{} tokens but {} logprobs",
                tokens.len(),
                logprobs.len()
            )));
        }
        if let Some(bad) = logprobs.iter().find(|lp| !lp.is_finite() || **lp > 0.0) {
            return Err(ProviderError::Protocol(format!("invalid logprob {bad}")));
        }
        Ok(Self { tokens, logprobs })
    }

    /// Like [`LikelihoodResult::new`], but replaces `-inf` and NaN by `floor`
    /// (with a warning) instead of rejecting them.
    pub fn with_floor(
        tokens: Vec<String>,
        mut logprobs: Vec<f64>,
        floor: f64,
    ) -> Result<Self, ProviderError> {
        let mut floored = 0usize;
        for lp in &mut logprobs {
            if lp.is_nan() || *lp == f64::NEG_INFINITY {
                *lp = floor;
                floored += 1;
            }
        }
        if floored > 0 {
            warn!(floored, floor, "non-finite logprobs floored");
        }
        Self::new(tokens, logprobs)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn logprobs(&self) -> &[f64] {
        &self.logprobs
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Mean token log-probability of the query.
///
/// Accumulated relative to the first value, so a constant sequence yields
/// exactly that constant.
pub fn score_query_likelihood(result: &LikelihoodResult) -> Result<f64> {
    let Some(&first) = result.logprobs.first() else {
        return Err(Error::invalid("cannot score an empty likelihood result"));
    };
    let shifted: f64 = result.logprobs.iter().map(|lp| lp - first).sum();
    Ok(first + shifted / result.len() as f64)
}

/// Anything that can report per-token log-probabilities of a continuation.
///
/// Implementations are shared across worker threads.
pub trait LikelihoodProvider: Send + Sync {
    fn loglikelihood(&self, request: &LikelihoodRequest)
        -> Result<LikelihoodResult, ProviderError>;
}

impl<P: LikelihoodProvider + ?Sized> LikelihoodProvider for &P {
    fn loglikelihood(
        &self,
        request: &LikelihoodRequest,
    ) -> Result<LikelihoodResult, ProviderError> {
        (**self).loglikelihood(request)
    }
}

impl<P: LikelihoodProvider + ?Sized> LikelihoodProvider for Box<P> {
    fn loglikelihood(
        &self,
        request: &LikelihoodRequest,
    ) -> Result<LikelihoodResult, ProviderError> {
        (**self).loglikelihood(request)
    }
}

/// Assigns the same log-probability to every whitespace-delimited token.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantProvider {
    logprob: f64,
}

impl ConstantProvider {
    pub fn new(logprob: f64) -> Result<Self> {
        if !(logprob.is_finite() && logprob <= 0.0) {
            return Err(Error::invalid(format!(
                "constant logprob must be finite and <= 0, got {logprob}"
            )));
        }
        Ok(Self { logprob })
    }

    /// Uniform distribution over a vocabulary of `vocab_size` tokens.
    pub fn uniform(vocab_size: usize) -> Result<Self> {
        if vocab_size == 0 {
            return Err(Error::invalid("vocabulary size must be positive"));
        }
        Self::new(-(vocab_size as f64).ln())
    }
}

impl LikelihoodProvider for ConstantProvider {
    fn loglikelihood(
        &self,
        request: &LikelihoodRequest,
    ) -> Result<LikelihoodResult, ProviderError> {
        let tokens: Vec<String> = request
            .continuation()
            .split_whitespace()
            .map(str::to_string)
            .collect();
        if tokens.is_empty() {
            return Err(ProviderError::Request("continuation has no tokens".into()));
        }
        let logprobs = vec![self.logprob; tokens.len()];
        LikelihoodResult::new(tokens, logprobs)
    }
}
