use std::collections::HashMap;

use crate::error::{Error, ProviderError, Result};

use super::{LikelihoodProvider, LikelihoodRequest, LikelihoodResult};

/// Lowercased maximal alphanumeric runs.
pub fn word_tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Add-one smoothed word bigram model.
///
/// `P(v | w) = (c(w, v) + 1) / (c(w) + V + 1)` over the vocabulary plus one
/// shared unknown-word slot. `c(w)` counts every occurrence of `w`; the
/// end of each training text is recorded as a transition into the unknown
/// slot, so each conditional distribution sums to one.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceLm {
    vocab: HashMap<String, u32>,
    unigram: Vec<u64>,
    bigram: HashMap<(u32, u32), u64>,
}

impl ReferenceLm {
    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    fn unk(&self) -> u32 {
        self.vocab.len() as u32
    }

    fn id(&self, word: &str) -> u32 {
        self.vocab.get(word).copied().unwrap_or_else(|| self.unk())
    }

    pub fn count(&self, word: &str) -> u64 {
        self.vocab
            .get(word)
            .map_or(0, |&i| self.unigram[i as usize])
    }

    pub fn bigram_count(&self, prev: &str, next: &str) -> u64 {
        let (Some(&p), Some(&n)) = (self.vocab.get(prev), self.vocab.get(next)) else {
            return 0;
        };
        self.bigram.get(&(p, n)).copied().unwrap_or(0)
    }

    fn prob_ids(&self, prev: u32, next: u32) -> f64 {
        let context = if prev == self.unk() {
            0
        } else {
            self.unigram[prev as usize]
        };
        let pair = if prev == self.unk() {
            0
        } else {
            self.bigram.get(&(prev, next)).copied().unwrap_or(0)
        };
        (pair as f64 + 1.0) / (context as f64 + self.vocab.len() as f64 + 1.0)
    }

    /// `P(next | prev)`; unknown words (or no previous word) use the unknown slot.
    pub fn prob(&self, prev: Option<&str>, next: &str) -> f64 {
        let prev = prev.map_or(self.unk(), |w| self.id(w));
        self.prob_ids(prev, self.id(next))
    }

    /// Probability of the unknown slot after `prev`.
    pub fn prob_unknown(&self, prev: Option<&str>) -> f64 {
        let prev = prev.map_or(self.unk(), |w| self.id(w));
        self.prob_ids(prev, self.unk())
    }

    /// Vocabulary words in arbitrary order.
    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.vocab.keys().map(String::as_str)
    }
}

pub fn bigram_train<T: AsRef<str>>(texts: &[T]) -> Result<ReferenceLm> {
    let mut vocab: HashMap<String, u32> = HashMap::new();
    let mut unigram: Vec<u64> = Vec::new();
    let mut sequences = Vec::with_capacity(texts.len());
    for text in texts {
        let ids: Vec<u32> = word_tokens(text.as_ref())
            .into_iter()
            .map(|w| {
                let next = vocab.len() as u32;
                let id = *vocab.entry(w).or_insert(next);
                if id as usize == unigram.len() {
                    unigram.push(0);
                }
                unigram[id as usize] += 1;
                id
            })
            .collect();
        sequences.push(ids);
    }
    if vocab.is_empty() {
        return Err(Error::invalid(
            "cannot train a bigram model on an empty corpus",
        ));
    }
    let unk = vocab.len() as u32;
    let mut bigram: HashMap<(u32, u32), u64> = HashMap::new();
    for ids in &sequences {
        for pair in ids.windows(2) {
            *bigram.entry((pair[0], pair[1])).or_default() += 1;
        }
        if let Some(&last) = ids.last() {
            *bigram.entry((last, unk)).or_default() += 1;
        }
    }
    Ok(ReferenceLm {
        vocab,
        unigram,
        bigram,
    })
}

/// Chain-rule log-probabilities of the continuation's words; the first word
/// conditions on the last word of the context.
pub fn bigram_loglikelihood(
    lm: &ReferenceLm,
    request: &LikelihoodRequest,
) -> Result<LikelihoodResult, ProviderError> {
    let tokens = word_tokens(request.continuation());
    if tokens.is_empty() {
        return Err(ProviderError::Request(
            "continuation has no word tokens".into(),
        ));
    }
    let context_tokens = word_tokens(request.context());
    let mut prev = context_tokens.last().map_or(lm.unk(), |w| lm.id(w));
    let logprobs = tokens
        .iter()
        .map(|w| {
            let id = lm.id(w);
            let lp = lm.prob_ids(prev, id).ln();
            prev = id;
            lp
        })
        .collect();
    LikelihoodResult::new(tokens, logprobs)
}

impl LikelihoodProvider for ReferenceLm {
    fn loglikelihood(
        &self,
        request: &LikelihoodRequest,
    ) -> Result<LikelihoodResult, ProviderError> {
        bigram_loglikelihood(self, request)
    }
}

/// Trains a fresh [`ReferenceLm`] on each request's context, so the query is
/// scored under a language model of the prompt and its document.
#[derive(Debug, Clone, Copy, Default)]
pub struct ContextBigramProvider;

impl LikelihoodProvider for ContextBigramProvider {
    fn loglikelihood(
        &self,
        request: &LikelihoodRequest,
    ) -> Result<LikelihoodResult, ProviderError> {
        let lm = bigram_train(&[request.context()])
            .map_err(|_| ProviderError::Request("context has no word tokens".into()))?;
        bigram_loglikelihood(&lm, request)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn abab() -> ReferenceLm {
        bigram_train(&["a b a b"]).unwrap()
    }

    #[test]
    fn hand_counts() {
        let lm = abab();
        assert_eq!(lm.vocab_size(), 2);
        assert_eq!(lm.bigram_count("a", "b"), 2);
        assert_eq!(lm.count("a"), 2);
        assert!((lm.prob(Some("a"), "b") - 0.6).abs() < 1e-15);
        assert!((lm.prob_unknown(Some("a")) - 0.2).abs() < 1e-15);
        assert!((lm.prob(Some("b"), "b") - 0.2).abs() < 1e-15);
        let total = lm.prob(Some("a"), "a") + lm.prob(Some("a"), "b") + lm.prob_unknown(Some("a"));
        assert!((total - 1.0).abs() < 1e-15);
    }

    #[test]
    fn chain_rule_scoring() {
        let lm = abab();
        let r = bigram_loglikelihood(&lm, &LikelihoodRequest::new("x y a", "b").unwrap()).unwrap();
        assert_eq!(r.tokens(), &["b"]);
        assert!((r.logprobs()[0] - (-0.510_825_623_765_990_7)).abs() < 1e-12);
        let r =
            bigram_loglikelihood(&lm, &LikelihoodRequest::new("x y a", "b b").unwrap()).unwrap();
        assert!((r.logprobs()[0] - 0.6f64.ln()).abs() < 1e-15);
        assert!((r.logprobs()[1] - (-1.609_437_912_434_100_3)).abs() < 1e-12);
        let r = bigram_loglikelihood(&lm, &LikelihoodRequest::new("a", "zebra").unwrap()).unwrap();
        assert!(r.logprobs()[0].is_finite());
        assert!((r.logprobs()[0] - 0.2f64.ln()).abs() < 1e-15);
        assert!(bigram_loglikelihood(&lm, &LikelihoodRequest::new("a", "?!").unwrap()).is_err());
    }

    #[test]
    fn empty_corpus_rejected() {
        assert!(bigram_train::<&str>(&[]).is_err());
        assert!(bigram_train(&["", "--"]).is_err());
    }

    #[test]
    fn context_provider_depends_on_document() {
        let p = ContextBigramProvider;
        let q = "cats purr";
        let near = p
            .loglikelihood(&LikelihoodRequest::new("cats purr loudly. question:", q).unwrap())
            .unwrap();
        let far = p
            .loglikelihood(&LikelihoodRequest::new("dogs bark loudly. question:", q).unwrap())
            .unwrap();
        assert_ne!(near.logprobs(), far.logprobs());
        assert_eq!(
            near,
            p.loglikelihood(&LikelihoodRequest::new("cats purr loudly. question:", q).unwrap())
                .unwrap()
        );
    }

    proptest! {
        #[test]
        fn conditionals_normalize(texts in proptest::collection::vec("[a-e ]{0,30}", 1..6)) {
            let Ok(lm) = bigram_train(&texts) else { return Ok(()); };
            let words: Vec<String> = lm.words().map(str::to_string).collect();
            let contexts = words.iter().map(|w| Some(w.as_str())).chain(std::iter::once(None));
            for prev in contexts {
                let total: f64 = words.iter().map(|v| lm.prob(prev, v)).sum::<f64>() + lm.prob_unknown(prev);
                prop_assert!((total - 1.0).abs() < 1e-12);
            }
        }
    }
}
