use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use qlmrank::eval::DEFAULT_CUTOFF;
use qlmrank::fusion::{DEFAULT_HYBRID_ALPHA, DEFAULT_RERANK_ALPHA};
use qlmrank::likelihood::DEFAULT_LOGPROB_FLOOR;
use qlmrank::prompts::DEFAULT_DOC_MAX_CHARS;
use qlmrank::ranking::{Analyzer, Bm25Params, DirichletParams};
use serde::{Deserialize, Serialize};

use crate::args::{PipelineArgs, ProviderArgs, ProviderKind, RetrieverKind};
use crate::UsageError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default)]
    pub vocab_size: Option<usize>,
    #[serde(default)]
    pub max_attempts: Option<u32>,
    #[serde(default)]
    pub timeout_secs: Option<u64>,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            kind: ProviderKind::Remote,
            endpoint: None,
            model: None,
            vocab_size: None,
            max_attempts: None,
            timeout_secs: None,
        }
    }
}

impl ProviderConfig {
    /// Flags win over config values. The API key never comes from a config file.
    pub fn merged(&self, flags: &ProviderArgs) -> ProviderArgs {
        ProviderArgs {
            provider: flags.provider.or(Some(self.kind)),
            endpoint: flags.endpoint.clone().or_else(|| self.endpoint.clone()),
            api_key: flags.api_key.clone(),
            model: flags.model.clone().or_else(|| self.model.clone()),
            vocab_size: flags.vocab_size.or(self.vocab_size),
            max_attempts: flags.max_attempts.or(self.max_attempts),
            timeout_secs: flags.timeout_secs.or(self.timeout_secs),
        }
    }
}

/// Everything `pipeline` needs. Unset fields take the documented defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub corpus: PathBuf,
    pub queries: PathBuf,
    pub qrels: PathBuf,
    #[serde(default)]
    pub analyzer: Analyzer,
    #[serde(default)]
    pub retriever: RetrieverKind,
    #[serde(default)]
    pub bm25: Bm25Params<f64>,
    #[serde(default)]
    pub dirichlet: DirichletParams<f64>,
    #[serde(default)]
    pub provider: ProviderConfig,
    pub model_family: String,
    pub dataset: String,
    #[serde(default)]
    pub catalog: Option<PathBuf>,
    #[serde(default)]
    pub fewshot: bool,
    #[serde(default)]
    pub fewshot_file: Option<PathBuf>,
    /// First-stage depth and re-ranking depth.
    #[serde(default = "default_depth")]
    pub depth: usize,
    #[serde(default = "default_doc_max_chars")]
    pub doc_max_chars: usize,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    #[serde(default)]
    pub skip_failures: bool,
    #[serde(default = "default_floor")]
    pub floor: f64,
    #[serde(default = "default_rerank_alpha")]
    pub rerank_alpha: f64,
    /// External run fused with the lexical first stage before re-ranking.
    #[serde(default)]
    pub hybrid_run: Option<PathBuf>,
    #[serde(default = "default_hybrid_alpha")]
    pub hybrid_alpha: f64,
    #[serde(default = "default_cutoff")]
    pub eval_k: usize,
    #[serde(default = "default_sig_level")]
    pub sig_level: f64,
    #[serde(default = "default_correction")]
    pub correction: String,
    #[serde(default)]
    pub sweep: bool,
    #[serde(default)]
    pub log_prompts: bool,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_depth() -> usize {
    100
}
fn default_doc_max_chars() -> usize {
    DEFAULT_DOC_MAX_CHARS
}
fn default_concurrency() -> usize {
    8
}
fn default_floor() -> f64 {
    DEFAULT_LOGPROB_FLOOR
}
fn default_rerank_alpha() -> f64 {
    DEFAULT_RERANK_ALPHA
}
fn default_hybrid_alpha() -> f64 {
    DEFAULT_HYBRID_ALPHA
}
fn default_cutoff() -> usize {
    DEFAULT_CUTOFF
}
fn default_sig_level() -> f64 {
    0.05
}
fn default_correction() -> String {
    "bonferroni".into()
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("pipeline_out")
}

impl PipelineConfig {
    /// Reads a config and makes its relative paths relative to the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut config: PipelineConfig = serde_json::from_str(&text)
            .map_err(|e| UsageError(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        rebase(&mut config.corpus);
        rebase(&mut config.queries);
        rebase(&mut config.qrels);
        rebase(&mut config.output_dir);
        for p in [
            &mut config.catalog,
            &mut config.fewshot_file,
            &mut config.hybrid_run,
        ]
        .into_iter()
        .flatten()
        {
            rebase(p);
        }
        Ok(config)
    }

    /// Applies command-line overrides; flags win.
    pub fn apply(&mut self, args: &PipelineArgs) {
        if let Some(dir) = &args.output_dir {
            self.output_dir = dir.clone();
        }
        let p = &args.prompt;
        if let Some(v) = &p.catalog {
            self.catalog = Some(v.clone());
        }
        if let Some(v) = &p.model_family {
            self.model_family = v.clone();
        }
        if let Some(v) = &p.dataset {
            self.dataset = v.clone();
        }
        if let Some(v) = &p.fewshot_file {
            self.fewshot_file = Some(v.clone());
        }
        if let Some(v) = p.doc_max_chars {
            self.doc_max_chars = v;
        }
        self.fewshot |= p.fewshot;
        self.sweep |= args.sweep;
        self.log_prompts |= args.log_prompts;
        if let Some(v) = args.depth {
            self.depth = v;
        }
        if let Some(v) = args.rerank_alpha {
            self.rerank_alpha = v;
        }
        if let Some(v) = args.hybrid_alpha {
            self.hybrid_alpha = v;
        }
        if let Some(v) = args.k {
            self.eval_k = v;
        }
        if let Some(v) = args.concurrency {
            self.concurrency = v;
        }
    }

    pub fn validate(&self) -> Result<(), UsageError> {
        let mut paths = vec![
            ("corpus", &self.corpus),
            ("queries", &self.queries),
            ("qrels", &self.qrels),
        ];
        for (name, p) in [
            ("catalog", &self.catalog),
            ("fewshot_file", &self.fewshot_file),
            ("hybrid_run", &self.hybrid_run),
        ] {
            if let Some(p) = p {
                paths.push((name, p));
            }
        }
        for (name, p) in paths {
            if !p.exists() {
                return Err(UsageError(format!(
                    "{name} path {} does not exist",
                    p.display()
                )));
            }
        }
        for (name, a) in [
            ("rerank_alpha", self.rerank_alpha),
            ("hybrid_alpha", self.hybrid_alpha),
        ] {
            if !(0.0..=1.0).contains(&a) {
                return Err(UsageError(format!("{name} must lie in [0, 1], got {a}")));
            }
        }
        if !(0.0..=1.0).contains(&self.sig_level) {
            return Err(UsageError(format!(
                "sig_level must lie in [0, 1], got {}",
                self.sig_level
            )));
        }
        for (name, v) in [
            ("depth", self.depth),
            ("eval_k", self.eval_k),
            ("doc_max_chars", self.doc_max_chars),
        ] {
            if v == 0 {
                return Err(UsageError(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_fill_in() {
        let c: PipelineConfig = serde_json::from_str(
            r#"{"corpus":"c","queries":"q","qrels":"r","model_family":"flan-t5","dataset":"trecc"}"#,
        )
        .unwrap();
        assert_eq!(c.depth, 100);
        assert_eq!(c.rerank_alpha, 0.2);
        assert_eq!(c.hybrid_alpha, 0.5);
        assert_eq!(c.eval_k, 10);
        assert_eq!(c.bm25, Bm25Params::default());
        assert_eq!(c.provider.kind, ProviderKind::Remote);
        assert!(!c.fewshot);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let r: Result<PipelineConfig, _> = serde_json::from_str(
            r#"{"corpus":"c","queries":"q","qrels":"r","model_family":"x","dataset":"y","alhpa":0.3}"#,
        );
        assert!(r.is_err());
    }

    #[test]
    fn flags_override_provider_settings() {
        let config = ProviderConfig {
            kind: ProviderKind::Remote,
            endpoint: Some("http://config".into()),
            ..ProviderConfig::default()
        };
        let flags = ProviderArgs {
            endpoint: Some("http://flag".into()),
            ..ProviderArgs::default()
        };
        let merged = config.merged(&flags);
        assert_eq!(merged.endpoint.as_deref(), Some("http://flag"));
        assert_eq!(merged.provider, Some(ProviderKind::Remote));
        assert_eq!(
            config.merged(&ProviderArgs::default()).endpoint.as_deref(),
            Some("http://config")
        );
    }
}
