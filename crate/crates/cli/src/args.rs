use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub const ENDPOINT_ENV: &str = "QLMRANK_ENDPOINT";
pub const API_KEY_ENV: &str = "QLMRANK_API_KEY";

#[derive(Debug, Parser)]
#[command(
    name = "qlmrank",
    version,
    about = "Zero-shot query-likelihood re-ranking with language models"
)]
pub struct Cli {
    /// Log filter (e.g. `info`, `qlmrank=debug`); overridden by RUST_LOG.
    #[arg(long, global = true, default_value = "warn")]
    pub log_level: String,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build an inverted index from a BEIR corpus.
    Index(IndexArgs),
    /// First-stage retrieval (BM25 or Dirichlet QLM) into a TREC run.
    Search(SearchArgs),
    /// Re-rank a run by query likelihood under a language model.
    Rerank(RerankArgs),
    /// Min-max normalize two runs and interpolate them.
    Fuse(FuseArgs),
    /// Per-query and mean nDCG@k of a run.
    Eval(EvalArgs),
    /// Paired t-tests between runs, as a significance matrix.
    Sigtest(SigtestArgs),
    /// Mean nDCG@k of the fused run for a grid of alphas.
    Sweep(SweepArgs),
    /// Run every stage from a JSON config.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Clone, Args, Default)]
pub struct AnalyzerArgs {
    /// Apply the English Snowball stemmer.
    #[arg(long)]
    pub stem: bool,
    /// Keep the original case of tokens.
    #[arg(long)]
    pub keep_case: bool,
    /// File with one stopword per line.
    #[arg(long)]
    pub stopwords: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct IndexArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, short)]
    pub output: PathBuf,
    #[command(flatten)]
    pub analyzer: AnalyzerArgs,
}

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Serialize, serde::Deserialize, Default,
)]
#[serde(rename_all = "lowercase")]
pub enum RetrieverKind {
    #[default]
    Bm25,
    Dirichlet,
}

impl RetrieverKind {
    pub fn tag(self) -> &'static str {
        match self {
            RetrieverKind::Bm25 => "bm25",
            RetrieverKind::Dirichlet => "dirichlet",
        }
    }
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    /// Index written by `index`.
    #[arg(long, required_unless_present = "corpus", conflicts_with = "corpus")]
    pub index: Option<PathBuf>,
    /// Index this corpus in memory instead of loading an index.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[command(flatten)]
    pub analyzer: AnalyzerArgs,
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long, short)]
    pub output: PathBuf,
    #[arg(long, value_enum, default_value_t = RetrieverKind::Bm25)]
    pub model: RetrieverKind,
    /// Documents retrieved per query.
    #[arg(long, default_value_t = 100)]
    pub k: usize,
    #[arg(long, default_value_t = 0.9)]
    pub k1: f64,
    #[arg(long, default_value_t = 0.4)]
    pub b: f64,
    #[arg(long, default_value_t = 1000.0)]
    pub mu: f64,
    /// Run tag; defaults to the model name.
    #[arg(long)]
    pub tag: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    /// JSON `POST /v1/loglikelihood` endpoint.
    Remote,
    /// OpenAI-style completions endpoint with `echo` and `logprobs`.
    Echo,
    /// Add-one bigram model trained on each prompt (offline, deterministic).
    Bigram,
    /// Every token gets `-ln(vocab_size)`.
    Uniform,
}

#[derive(Debug, Clone, Args, Default)]
pub struct ProviderArgs {
    #[arg(long, value_enum)]
    pub provider: Option<ProviderKind>,
    /// Provider base URL.
    #[arg(long, env = ENDPOINT_ENV)]
    pub endpoint: Option<String>,
    /// Bearer token sent to the provider.
    #[arg(long, env = API_KEY_ENV, hide_env_values = true)]
    pub api_key: Option<String>,
    /// Model name sent to the echo adapter.
    #[arg(long)]
    pub model: Option<String>,
    /// Vocabulary size of the uniform provider.
    #[arg(long)]
    pub vocab_size: Option<usize>,
    /// Total attempts per request, including the first.
    #[arg(long)]
    pub max_attempts: Option<u32>,
    /// Per-request timeout in seconds.
    #[arg(long)]
    pub timeout_secs: Option<u64>,
}

#[derive(Debug, Clone, Args, Default)]
pub struct PromptArgs {
    /// Prompt catalog JSON; the built-in catalog is used otherwise.
    #[arg(long)]
    pub catalog: Option<PathBuf>,
    /// Catalog model family (e.g. `flan-t5`, `llama`).
    #[arg(long)]
    pub model_family: Option<String>,
    /// Catalog dataset key (e.g. `trecc`, `fiqa`).
    #[arg(long)]
    pub dataset: Option<String>,
    /// Prepend the three-example good/bad question block.
    #[arg(long)]
    pub fewshot: bool,
    /// JSON array of three `{document, good_question, bad_question}` triples.
    #[arg(long)]
    pub fewshot_file: Option<PathBuf>,
    /// Documents are cut to this many characters before rendering.
    #[arg(long)]
    pub doc_max_chars: Option<usize>,
}

#[derive(Debug, Args)]
pub struct RerankArgs {
    /// First-stage run to re-rank.
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long, short)]
    pub output: PathBuf,
    #[command(flatten)]
    pub provider: ProviderArgs,
    #[command(flatten)]
    pub prompt: PromptArgs,
    /// Candidates re-ranked per query.
    #[arg(long, default_value_t = 100)]
    pub depth: usize,
    /// Provider requests in flight.
    #[arg(long, default_value_t = 8)]
    pub concurrency: usize,
    /// Score failed documents with the floor instead of aborting.
    #[arg(long)]
    pub skip_failures: bool,
    /// Replacement for -inf/NaN log-probabilities and failed documents.
    #[arg(long, default_value_t = -100.0, allow_hyphen_values = true)]
    pub floor: f64,
    /// Append provider request counts and cache hit rate (JSON lines).
    #[arg(long)]
    pub stats_log: Option<PathBuf>,
    /// Write every rendered prompt (JSON lines).
    #[arg(long)]
    pub prompt_log: Option<PathBuf>,
    #[arg(long, default_value = "qlm")]
    pub tag: String,
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    /// Run weighted by alpha (usually the first stage).
    pub run_a: PathBuf,
    /// Run weighted by 1 - alpha.
    pub run_b: PathBuf,
    #[arg(long, default_value_t = qlmrank::fusion::DEFAULT_RERANK_ALPHA)]
    pub alpha: f64,
    #[arg(long, short)]
    pub output: PathBuf,
    /// Keep only the top k documents per query.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, default_value = "fused")]
    pub tag: String,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub qrels: PathBuf,
    #[arg(long, default_value_t = qlmrank::eval::DEFAULT_CUTOFF)]
    pub k: usize,
    /// Write the report here instead of stdout.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SigtestArgs {
    /// Runs as `NAME=PATH` or `PATH` (named after the file stem).
    #[arg(required = true, num_args = 2..)]
    pub runs: Vec<String>,
    #[arg(long)]
    pub qrels: PathBuf,
    #[arg(long, default_value_t = qlmrank::eval::DEFAULT_CUTOFF)]
    pub k: usize,
    /// Significance level.
    #[arg(long, default_value_t = 0.05)]
    pub alpha_level: f64,
    #[arg(long, default_value = "bonferroni")]
    pub correction: String,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    pub run_a: PathBuf,
    pub run_b: PathBuf,
    #[arg(long)]
    pub qrels: PathBuf,
    #[arg(long, default_value_t = qlmrank::eval::DEFAULT_CUTOFF)]
    pub k: usize,
    /// Comma-separated alphas; defaults to 0, 0.1, ..., 1.
    #[arg(long, value_delimiter = ',')]
    pub alphas: Option<Vec<f64>>,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    /// Pipeline config (JSON). Relative paths inside it resolve against its directory.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[command(flatten)]
    pub provider: ProviderArgs,
    #[command(flatten)]
    pub prompt: PromptArgs,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub rerank_alpha: Option<f64>,
    #[arg(long)]
    pub hybrid_alpha: Option<f64>,
    /// Evaluation cutoff.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub concurrency: Option<usize>,
    /// Also write an alpha sweep of first stage vs. re-ranked.
    #[arg(long)]
    pub sweep: bool,
    /// Record every rendered prompt in prompts.jsonl.
    #[arg(long)]
    pub log_prompts: bool,
}
