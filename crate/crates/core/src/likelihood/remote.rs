//! HTTP likelihood providers.
//!
//! [`RemoteProvider`] speaks the native protocol:
//!
//! ```text
//! POST /v1/loglikelihood
//! {"context": "...", "continuation": "..."}
//! -> {"tokens": ["..."], "logprobs": [-1.2, ...]}
//! ```
//!
//! [`EchoCompletionsProvider`] adapts OpenAI-style `/v1/completions` servers
//! that support `echo` with `logprobs`, keeping only the tokens that fall
//! inside the continuation.

use std::sync::atomic::{AtomicU64, Ordering};
use std::thread;
use std::time::Duration;

use serde::Deserialize;
use serde_json::{json, Value};
use tracing::{debug, warn};

use crate::error::ProviderError;

use super::{LikelihoodProvider, LikelihoodRequest, LikelihoodResult, DEFAULT_LOGPROB_FLOOR};

pub const LOGLIKELIHOOD_PATH: &str = "/v1/loglikelihood";
pub const COMPLETIONS_PATH: &str = "/v1/completions";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    /// Total attempts, including the first.
    pub max_attempts: u32,
    pub initial_backoff: Duration,
    pub multiplier: f64,
    pub max_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            initial_backoff: Duration::from_millis(250),
            multiplier: 2.0,
            max_backoff: Duration::from_secs(10),
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (1-based).
    pub fn backoff(&self, retry: u32) -> Duration {
        let factor = self.multiplier.powi(retry.saturating_sub(1) as i32);
        self.initial_backoff.mul_f64(factor).min(self.max_backoff)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RemoteConfig {
    /// Base URL (e.g. `http://localhost:8000`) or the full endpoint URL.
    pub endpoint: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
    pub retry: RetryPolicy,
    pub logprob_floor: f64,
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            api_key: None,
            timeout: Duration::from_secs(120),
            retry: RetryPolicy::default(),
            logprob_floor: DEFAULT_LOGPROB_FLOOR,
        }
    }

    fn url_for(&self, path: &str) -> String {
        let base = self.endpoint.trim_end_matches('/');
        if base.ends_with(path) {
            base.to_string()
        } else {
            format!("{base}{path}")
        }
    }
}

/// Blocking JSON-over-HTTP client with retry on transient failures.
#[derive(Debug)]
struct Transport {
    agent: ureq::Agent,
    url: String,
    config: RemoteConfig,
    attempts: AtomicU64,
}

enum Attempt {
    Done(String),
    Transient(String),
    Fatal(ProviderError),
}

impl Transport {
    fn new(config: RemoteConfig, path: &str) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(config.timeout))
            .build()
            .into();
        Self {
            agent,
            url: config.url_for(path),
            config,
            attempts: AtomicU64::new(0),
        }
    }

    fn attempt(&self, body: &str) -> Attempt {
        self.attempts.fetch_add(1, Ordering::Relaxed);
        let mut req = self
            .agent
            .post(&self.url)
            .header("Content-Type", "application/json");
        if let Some(key) = &self.config.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = match req.send(body) {
            Ok(r) => r,
            Err(e) => return Attempt::Transient(e.to_string()),
        };
        let status = resp.status().as_u16();
        let text = match resp.body_mut().read_to_string() {
            Ok(t) => t,
            Err(e) => return Attempt::Transient(format!("reading body: {e}")),
        };
        match status {
            200 => Attempt::Done(text),
            408 | 429 | 500..=599 => {
                Attempt::Transient(format!("HTTP {status}: {}", snippet(&text)))
            }
            _ => Attempt::Fatal(ProviderError::Status {
                status,
                body: snippet(&text),
            }),
        }
    }

    fn post(&self, body: &Value) -> Result<String, ProviderError> {
        let body = body.to_string();
        let policy = self.config.retry;
        let attempts = policy.max_attempts.max(1);
        let mut last = String::new();
        for n in 1..=attempts {
            match self.attempt(&body) {
                Attempt::Done(text) => return Ok(text),
                Attempt::Fatal(e) => return Err(e),
                Attempt::Transient(msg) => {
                    last = msg;
                    if n < attempts {
                        let wait = policy.backoff(n);
                        debug!(attempt = n, ?wait, error = %last, "retrying provider request");
                        thread::sleep(wait);
                    }
                }
            }
        }
        Err(ProviderError::Transport {
            attempts,
            message: last,
        })
    }
}

fn snippet(text: &str) -> String {
    text.chars().take(200).collect()
}

/// Rewrites bare `NaN`, `Infinity` and `-Infinity` literals (as emitted by
/// Python's `json` module) into strings so a strict parser accepts them.
fn quote_nonfinite_literals(body: &str) -> String {
    let mut out = String::with_capacity(body.len());
    let mut in_string = false;
    let mut escaped = false;
    let mut rest = body;
    while let Some(c) = rest.chars().next() {
        if in_string {
            out.push(c);
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_string = false;
            }
            rest = &rest[c.len_utf8()..];
            continue;
        }
        if c == '"' {
            in_string = true;
        }
        let literal = ["-Infinity", "Infinity", "NaN"]
            .into_iter()
            .find(|lit| rest.starts_with(lit));
        if let Some(lit) = literal {
            out.push('"');
            out.push_str(lit);
            out.push('"');
            rest = &rest[lit.len()..];
        } else {
            out.push(c);
            rest = &rest[c.len_utf8()..];
        }
    }
    out
}

#[derive(Deserialize)]
#[serde(untagged)]
enum WireLogprob {
    Number(f64),
    Text(String),
    Null,
}

impl WireLogprob {
    fn value(&self) -> Result<f64, ProviderError> {
        match self {
            WireLogprob::Number(v) => Ok(*v),
            WireLogprob::Null => Ok(f64::NEG_INFINITY),
            WireLogprob::Text(s) => match s.trim().to_ascii_lowercase().as_str() {
                "-inf" | "-infinity" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => other
                    .parse::<f64>()
                    .map_err(|_| ProviderError::Protocol(format!("non-numeric logprob `{s}`"))),
            },
        }
    }
}

fn finish(
    tokens: Vec<String>,
    raw: &[WireLogprob],
    floor: f64,
) -> Result<LikelihoodResult, ProviderError> {
    let logprobs = raw
        .iter()
        .map(WireLogprob::value)
        .collect::<Result<Vec<_>, _>>()?;
    if tokens.is_empty() {
        return Err(ProviderError::Protocol(
            "response contains no tokens".into(),
        ));
    }
    LikelihoodResult::with_floor(tokens, logprobs, floor)
}

#[derive(Deserialize)]
struct LoglikelihoodResponse {
    tokens: Vec<String>,
    logprobs: Vec<WireLogprob>,
}

/// Client for the native `/v1/loglikelihood` endpoint.
#[derive(Debug)]
pub struct RemoteProvider {
    transport: Transport,
}

impl RemoteProvider {
    pub fn new(config: RemoteConfig) -> Self {
        Self {
            transport: Transport::new(config, LOGLIKELIHOOD_PATH),
        }
    }

    pub fn url(&self) -> &str {
        &self.transport.url
    }

    /// HTTP attempts made so far, retries included.
    pub fn attempts(&self) -> u64 {
        self.transport.attempts.load(Ordering::Relaxed)
    }

    pub fn decode(body: &str, floor: f64) -> Result<LikelihoodResult, ProviderError> {
        let resp: LoglikelihoodResponse = serde_json::from_str(&quote_nonfinite_literals(body))
            .map_err(|e| ProviderError::Protocol(format!("malformed response: {e}")))?;
        if resp.tokens.len() != resp.logprobs.len() {
            return Err(ProviderError::Protocol(format!(
                "{} tokens but {} logprobs",
                resp.tokens.len(),
                resp.logprobs.len()
            )));
        }
        finish(resp.tokens, &resp.logprobs, floor)
    }
}

impl LikelihoodProvider for RemoteProvider {
    fn loglikelihood(
        &self,
        request: &LikelihoodRequest,
    ) -> Result<LikelihoodResult, ProviderError> {
        let body = json!({
            "context": request.context(),
            "continuation": request.continuation(),
        });
        let text = self.transport.post(&body)?;
        Self::decode(&text, self.transport.config.logprob_floor)
    }
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<CompletionChoice>,
}

#[derive(Deserialize)]
struct CompletionChoice {
    logprobs: Option<CompletionLogprobs>,
}

#[derive(Deserialize)]
struct CompletionLogprobs {
    tokens: Vec<String>,
    token_logprobs: Vec<WireLogprob>,
    text_offset: Vec<usize>,
}

/// Adapter for completion servers that echo the prompt with per-token logprobs.
///
/// The request scores `context + continuation` with `max_tokens = 0`; tokens
/// that extend past the end of the context (by character offset) form the
/// continuation.
#[derive(Debug)]
pub struct EchoCompletionsProvider {
    transport: Transport,
    model: String,
}

impl EchoCompletionsProvider {
    pub fn new(config: RemoteConfig, model: impl Into<String>) -> Self {
        Self {
            transport: Transport::new(config, COMPLETIONS_PATH),
            model: model.into(),
        }
    }

    pub fn attempts(&self) -> u64 {
        self.transport.attempts.load(Ordering::Relaxed)
    }

    pub fn decode(
        body: &str,
        context_chars: usize,
        floor: f64,
    ) -> Result<LikelihoodResult, ProviderError> {
        let resp: CompletionResponse = serde_json::from_str(&quote_nonfinite_literals(body))
            .map_err(|e| ProviderError::Protocol(format!("malformed response: {e}")))?;
        let lp = resp
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.logprobs)
            .ok_or_else(|| ProviderError::Protocol("response has no logprobs".into()))?;
        let n = lp.tokens.len();
        if lp.token_logprobs.len() != n || lp.text_offset.len() != n {
            return Err(ProviderError::Protocol(format!(
                "{n} tokens, {} logprobs, {} offsets",
                lp.token_logprobs.len(),
                lp.text_offset.len()
            )));
        }
        let start = (0..n)
            .find(|&i| {
                lp.text_offset
                    .get(i + 1)
                    .map_or(true, |&end| end > context_chars)
            })
            .unwrap_or(n);
        if start < n && lp.text_offset[start] < context_chars {
            warn!(token = %lp.tokens[start], "token straddles the context/continuation boundary");
        }
        finish(
            lp.tokens[start..].to_vec(),
            &lp.token_logprobs[start..],
            floor,
        )
    }
}

impl LikelihoodProvider for EchoCompletionsProvider {
    fn loglikelihood(
        &self,
        request: &LikelihoodRequest,
    ) -> Result<LikelihoodResult, ProviderError> {
        let body = json!({
            "model": self.model,
            "prompt": format!("{}{}", request.context(), request.continuation()),
            "max_tokens": 0,
            "echo": true,
            "logprobs": 0,
            "temperature": 0.0,
        });
        let text = self.transport.post(&body)?;
        Self::decode(
            &text,
            request.context().chars().count(),
            self.transport.config.logprob_floor,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decode_success() {
        let r = RemoteProvider::decode(r#"{"tokens":["what","?"],"logprobs":[-2.0,-0.5]}"#, -100.0)
            .unwrap();
        assert_eq!(r.len(), 2);
        assert_eq!(r.logprobs(), &[-2.0, -0.5]);
    }

    #[test]
    fn decode_length_mismatch() {
        let err = RemoteProvider::decode(r#"{"tokens":["a","b"],"logprobs":[-1,-2,-3]}"#, -100.0)
            .unwrap_err();
        assert!(matches!(err, ProviderError::Protocol(_)));
    }

    #[test]
    fn decode_floors_negative_infinity() {
        for body in [
            r#"{"tokens":["a","b"],"logprobs":[-Infinity,-1.0]}"#,
            r#"{"tokens":["a","b"],"logprobs":["-inf",-1.0]}"#,
            r#"{"tokens":["a","b"],"logprobs":[null,-1.0]}"#,
            r#"{"tokens":["a","b"],"logprobs":[NaN,-1.0]}"#,
        ] {
            let r = RemoteProvider::decode(body, -100.0).unwrap();
            assert_eq!(r.logprobs(), &[-100.0, -1.0], "{body}");
        }
        let r = RemoteProvider::decode(r#"{"tokens":["-Infinity"],"logprobs":[-Infinity]}"#, -7.0)
            .unwrap();
        assert_eq!(r.tokens(), &["-Infinity"]);
        assert_eq!(r.logprobs(), &[-7.0]);
    }

    #[test]
    fn decode_rejects_garbage() {
        assert!(RemoteProvider::decode("not json", -100.0).is_err());
        assert!(RemoteProvider::decode(r#"{"tokens":[],"logprobs":[]}"#, -100.0).is_err());
        assert!(RemoteProvider::decode(r#"{"tokens":["a"],"logprobs":["x"]}"#, -100.0).is_err());
        assert!(
            RemoteProvider::decode(r#"{"tokens":["a"],"logprobs":[Infinity]}"#, -100.0).is_err()
        );
    }

    #[test]
    fn echo_decode_keeps_continuation_tokens() {
        // context "Doc: x" (6 chars), continuation " what is"
        let body = r#"{"choices":[{"logprobs":{
            "tokens":["Doc",":"," x"," what"," is"],
            "token_logprobs":[null,-1.0,-2.0,-3.0,-0.5],
            "text_offset":[0,3,4,6,11]}}]}"#;
        let r = EchoCompletionsProvider::decode(body, 6, -100.0).unwrap();
        assert_eq!(r.tokens(), &[" what", " is"]);
        assert_eq!(r.logprobs(), &[-3.0, -0.5]);
    }

    #[test]
    fn url_joining() {
        assert_eq!(
            RemoteConfig::new("http://h:1").url_for(LOGLIKELIHOOD_PATH),
            "http://h:1/v1/loglikelihood"
        );
        assert_eq!(
            RemoteConfig::new("http://h:1/").url_for(LOGLIKELIHOOD_PATH),
            "http://h:1/v1/loglikelihood"
        );
        assert_eq!(
            RemoteConfig::new("http://h:1/v1/loglikelihood").url_for(LOGLIKELIHOOD_PATH),
            "http://h:1/v1/loglikelihood"
        );
    }

    #[test]
    fn backoff_grows_and_caps() {
        let p = RetryPolicy {
            max_attempts: 5,
            initial_backoff: Duration::from_millis(100),
            multiplier: 2.0,
            max_backoff: Duration::from_millis(300),
        };
        assert_eq!(p.backoff(1), Duration::from_millis(100));
        assert_eq!(p.backoff(2), Duration::from_millis(200));
        assert_eq!(p.backoff(3), Duration::from_millis(300));
    }
}
