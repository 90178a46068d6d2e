use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use qlmrank::corpus::{
    load_corpus, load_qrels, load_queries, read_run, Document, QrelSet, Query, Run,
};
use qlmrank::eval::{ndcg_at_k, significance_matrix, Correction};
use qlmrank::fusion::{alpha_grid, interpolate, sweep_alpha, sweep_tsv, truncate};
use qlmrank::likelihood::{
    ConstantProvider, ContextBigramProvider, EchoCompletionsProvider, LikelihoodProvider,
    OnProviderError, RemoteConfig, RemoteProvider, RerankOptions, Reranker,
};
use qlmrank::prompts::{
    load_fewshot, placeholder_fewshot, Prompt, PromptCatalog, DEFAULT_DOC_MAX_CHARS,
};
use qlmrank::ranking::{Analyzer, Bm25Params, DirichletParams, InvertedIndex, Retriever};
use tracing::{info, warn};

use crate::args::{
    AnalyzerArgs, Command, EvalArgs, FuseArgs, IndexArgs, PipelineArgs, PromptArgs, ProviderArgs,
    ProviderKind, RerankArgs, RetrieverKind, SearchArgs, SigtestArgs, SweepArgs,
};
use crate::config::PipelineConfig;
use crate::output::{append_stats, emit, prompt_log_jsonl, write_atomic};
use crate::UsageError;

const DEFAULT_UNIFORM_VOCAB: usize = 32_000;

pub fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Index(a) => cmd_index(a),
        Command::Search(a) => cmd_search(a),
        Command::Rerank(a) => cmd_rerank(a),
        Command::Fuse(a) => cmd_fuse(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Sigtest(a) => cmd_sigtest(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Pipeline(a) => cmd_pipeline(a),
    }
}

fn analyzer_from(args: &AnalyzerArgs) -> Result<Analyzer> {
    let mut analyzer = Analyzer {
        lowercase: !args.keep_case,
        stem: args.stem,
        ..Analyzer::default()
    };
    if let Some(path) = &args.stopwords {
        let text =
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        analyzer.stopwords = text
            .lines()
            .map(str::trim)
            .filter(|w| !w.is_empty())
            .map(|w| {
                if analyzer.lowercase {
                    w.to_lowercase()
                } else {
                    w.to_string()
                }
            })
            .collect();
    }
    Ok(analyzer)
}

fn write_run_file(run: &Run, path: &Path) -> Result<()> {
    write_atomic(path, run.to_trec_string()?.as_bytes())
}

fn read_run_file(path: &Path) -> Result<Run> {
    Ok(read_run(path)?)
}

fn cmd_index(args: IndexArgs) -> Result<()> {
    let docs = load_corpus(&args.corpus)?;
    let index = InvertedIndex::build(&docs, analyzer_from(&args.analyzer)?)?;
    write_atomic(&args.output, index.to_json()?.as_bytes())?;
    info!(
        docs = index.num_docs(),
        terms = index.terms().count(),
        "index written"
    );
    Ok(())
}

fn retriever(
    kind: RetrieverKind,
    bm25: Bm25Params<f64>,
    dirichlet: DirichletParams<f64>,
) -> Result<Retriever> {
    Ok(match kind {
        RetrieverKind::Bm25 => Retriever::Bm25(Bm25Params::new(bm25.k1, bm25.b)?),
        RetrieverKind::Dirichlet => Retriever::Dirichlet(DirichletParams::new(dirichlet.mu)?),
    })
}

fn cmd_search(args: SearchArgs) -> Result<()> {
    let index = match (&args.index, &args.corpus) {
        (Some(path), _) => InvertedIndex::load(path)?,
        (None, Some(corpus)) => {
            InvertedIndex::build(&load_corpus(corpus)?, analyzer_from(&args.analyzer)?)?
        }
        (None, None) => bail!(UsageError("either --index or --corpus is required".into())),
    };
    let queries = load_queries(&args.queries)?;
    let retriever = retriever(
        args.model,
        Bm25Params {
            k1: args.k1,
            b: args.b,
        },
        DirichletParams { mu: args.mu },
    )?;
    let tag = args.tag.as_deref().unwrap_or(args.model.tag());
    let run = retriever.search_run(&index, &queries, args.k, tag)?;
    write_run_file(&run, &args.output)
}

fn build_provider(args: &ProviderArgs, floor: f64) -> Result<Box<dyn LikelihoodProvider>> {
    let kind = args.provider.unwrap_or(ProviderKind::Remote);
    let remote_config = || -> Result<RemoteConfig> {
        let endpoint = args.endpoint.clone().ok_or_else(|| {
            UsageError(format!(
                "the {kind:?} provider needs --endpoint or {}",
                crate::args::ENDPOINT_ENV
            ))
        })?;
        let mut config = RemoteConfig::new(endpoint);
        config.api_key = args.api_key.clone();
        config.logprob_floor = floor;
        if let Some(n) = args.max_attempts {
            config.retry.max_attempts = n.max(1);
        }
        if let Some(s) = args.timeout_secs {
            config.timeout = Duration::from_secs(s);
        }
        Ok(config)
    };
    Ok(match kind {
        ProviderKind::Remote => Box::new(RemoteProvider::new(remote_config()?)),
        ProviderKind::Echo => {
            let model = args
                .model
                .clone()
                .ok_or_else(|| UsageError("the echo provider needs --model".into()))?;
            Box::new(EchoCompletionsProvider::new(remote_config()?, model))
        }
        ProviderKind::Bigram => Box::new(ContextBigramProvider),
        ProviderKind::Uniform => Box::new(ConstantProvider::uniform(
            args.vocab_size.unwrap_or(DEFAULT_UNIFORM_VOCAB),
        )?),
    })
}

fn resolve_prompt(args: &PromptArgs) -> Result<Prompt> {
    let catalog = match &args.catalog {
        Some(path) => PromptCatalog::load(path)?,
        None => PromptCatalog::builtin(),
    };
    let (Some(family), Some(dataset)) = (&args.model_family, &args.dataset) else {
        bail!(UsageError(
            "--model-family and --dataset select the prompt template".into()
        ));
    };
    let entry = catalog.get(family, dataset).ok_or_else(|| {
        let known: BTreeSet<String> = catalog.keys().map(|(f, d)| format!("{f}/{d}")).collect();
        UsageError(format!(
            "no prompt for model family `{family}` and dataset `{dataset}` (known: {})",
            known.into_iter().collect::<Vec<_>>().join(", ")
        ))
    })?;
    if !args.fewshot {
        return Ok(Prompt::ZeroShot(entry.template.clone()));
    }
    let examples = match (&args.fewshot_file, &entry.fewshot) {
        (Some(path), _) => load_fewshot(path)?,
        (None, Some(examples)) => examples.clone(),
        (None, None) => {
            warn!("no few-shot examples configured; using the bundled placeholder triples");
            placeholder_fewshot()
        }
    };
    Ok(Prompt::few_shot(entry.template.clone(), examples)?)
}

struct RerankJob<'a> {
    first_stage: &'a Run,
    queries: &'a [Query],
    docs: &'a [Document],
    provider: &'a ProviderArgs,
    prompt: &'a PromptArgs,
    depth: usize,
    concurrency: usize,
    skip_failures: bool,
    floor: f64,
    tag: &'a str,
    stats_log: Option<&'a Path>,
    prompt_log: Option<&'a Path>,
}

fn rerank_stage(job: RerankJob<'_>) -> Result<Run> {
    let provider = build_provider(job.provider, job.floor)?;
    let prompt = resolve_prompt(job.prompt)?;
    let options = RerankOptions {
        depth: job.depth,
        doc_max_chars: job.prompt.doc_max_chars.unwrap_or(DEFAULT_DOC_MAX_CHARS),
        concurrency: job.concurrency,
        on_error: if job.skip_failures {
            OnProviderError::SkipWithFloor
        } else {
            OnProviderError::FailQuery
        },
        floor: job.floor,
    };
    let mut reranker = Reranker::new(provider.as_ref(), prompt, options)?;
    if job.prompt_log.is_some() {
        reranker = reranker.with_prompt_log();
    }
    let result = reranker.rerank_run(job.first_stage, job.queries, job.docs, job.tag);
    let stats = reranker.stats();
    info!(
        requests = stats.provider_requests,
        cache_hits = stats.cache_hits,
        hit_rate = stats.cache_hit_rate(),
        failures = stats.provider_failures,
        "re-ranking finished"
    );
    if let Some(path) = job.stats_log {
        append_stats(path, "rerank", &stats, result.is_ok())?;
    }
    if let Some(path) = job.prompt_log {
        write_atomic(path, prompt_log_jsonl(&reranker.prompt_log())?.as_bytes())?;
    }
    Ok(result.context("re-ranking")?)
}

fn cmd_rerank(args: RerankArgs) -> Result<()> {
    let first_stage = read_run_file(&args.run)?;
    let queries = load_queries(&args.queries)?;
    let docs = load_corpus(&args.corpus)?;
    let run = rerank_stage(RerankJob {
        first_stage: &first_stage,
        queries: &queries,
        docs: &docs,
        provider: &args.provider,
        prompt: &args.prompt,
        depth: args.depth,
        concurrency: args.concurrency,
        skip_failures: args.skip_failures,
        floor: args.floor,
        tag: &args.tag,
        stats_log: args.stats_log.as_deref(),
        prompt_log: args.prompt_log.as_deref(),
    })?;
    write_run_file(&run, &args.output)
}

fn fuse_runs(a: &Run, b: &Run, alpha: f64, k: Option<usize>, tag: &str) -> Result<Run> {
    let fused = interpolate(a, b, alpha, tag)?;
    Ok(match k {
        Some(k) => truncate(&fused, k)?,
        None => fused,
    })
}

fn cmd_fuse(args: FuseArgs) -> Result<()> {
    let a = read_run_file(&args.run_a)?;
    let b = read_run_file(&args.run_b)?;
    let fused = fuse_runs(&a, &b, args.alpha, args.k, &args.tag)?;
    write_run_file(&fused, &args.output)
}

fn eval_report(run: &Run, qrels: &QrelSet, k: usize) -> Result<String> {
    Ok(ndcg_at_k(run, qrels, k)?.to_tsv())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let run = read_run_file(&args.run)?;
    let qrels = load_qrels(&args.qrels)?;
    emit(args.output.as_deref(), &eval_report(&run, &qrels, args.k)?)
}

fn run_spec(spec: &str) -> (String, PathBuf) {
    match spec.split_once('=') {
        Some((name, path)) if !name.is_empty() => (name.to_string(), PathBuf::from(path)),
        _ => {
            let path = PathBuf::from(spec);
            let name = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| spec.to_string());
            (name, path)
        }
    }
}

fn significance_report(
    runs: &[(String, Run)],
    qrels: &QrelSet,
    k: usize,
    level: f64,
    correction: &str,
) -> Result<String> {
    let correction: Correction = correction.parse()?;
    Ok(significance_matrix(runs, qrels, k, level, correction)?.render())
}

fn cmd_sigtest(args: SigtestArgs) -> Result<()> {
    let qrels = load_qrels(&args.qrels)?;
    let runs = args
        .runs
        .iter()
        .map(|spec| {
            let (name, path) = run_spec(spec);
            Ok((name, read_run_file(&path)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let report = significance_report(&runs, &qrels, args.k, args.alpha_level, &args.correction)?;
    emit(args.output.as_deref(), &report)
}

fn sweep_report(a: &Run, b: &Run, alphas: &[f64], qrels: &QrelSet, k: usize) -> Result<String> {
    Ok(sweep_tsv(&sweep_alpha(a, b, alphas, qrels, k)?))
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let a = read_run_file(&args.run_a)?;
    let b = read_run_file(&args.run_b)?;
    let qrels = load_qrels(&args.qrels)?;
    let alphas = args.alphas.unwrap_or_else(alpha_grid);
    emit(
        args.output.as_deref(),
        &sweep_report(&a, &b, &alphas, &qrels, args.k)?,
    )
}

/// File names written by `pipeline`.
pub mod files {
    pub const RETRIEVAL: &str = "retrieval.run";
    pub const FIRST_STAGE: &str = "first_stage.run";
    pub const RERANKED: &str = "reranked.run";
    pub const FUSED: &str = "fused.run";
    pub const EVAL: &str = "eval.tsv";
    pub const SIGNIFICANCE: &str = "significance.txt";
    pub const SWEEP: &str = "sweep.tsv";
    pub const PROVIDER_LOG: &str = "provider_log.jsonl";
    pub const PROMPTS: &str = "prompts.jsonl";
}

fn cmd_pipeline(args: PipelineArgs) -> Result<()> {
    let mut config = PipelineConfig::load(&args.config)?;
    config.apply(&args);
    config.validate()?;
    let out = config.output_dir.clone();
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;

    let docs = load_corpus(&config.corpus)?;
    let queries = load_queries(&config.queries)?;
    let qrels = load_qrels(&config.qrels)?;

    // Every stage reads back the file the previous stage wrote, so the
    // outputs match a manual run of the individual commands byte for byte.
    let index = InvertedIndex::build(&docs, config.analyzer.clone())?;
    let retriever = retriever(config.retriever, config.bm25, config.dirichlet)?;
    let first_stage_path = out.join(files::FIRST_STAGE);
    match &config.hybrid_run {
        None => {
            let run =
                retriever.search_run(&index, &queries, config.depth, config.retriever.tag())?;
            write_run_file(&run, &first_stage_path)?;
        }
        Some(external) => {
            let lexical_path = out.join(files::RETRIEVAL);
            let run =
                retriever.search_run(&index, &queries, config.depth, config.retriever.tag())?;
            write_run_file(&run, &lexical_path)?;
            let hybrid = fuse_runs(
                &read_run_file(&lexical_path)?,
                &read_run_file(external)?,
                config.hybrid_alpha,
                Some(config.depth),
                "hybrid",
            )?;
            write_run_file(&hybrid, &first_stage_path)?;
        }
    }
    info!(path = %first_stage_path.display(), "first stage written");
    let first_stage = read_run_file(&first_stage_path)?;

    let prompt_args = PromptArgs {
        catalog: config.catalog.clone(),
        model_family: Some(config.model_family.clone()),
        dataset: Some(config.dataset.clone()),
        fewshot: config.fewshot,
        fewshot_file: config.fewshot_file.clone(),
        doc_max_chars: Some(config.doc_max_chars),
    };
    let provider_args = config.provider.merged(&args.provider);
    let reranked_path = out.join(files::RERANKED);
    let prompts_path = out.join(files::PROMPTS);
    let reranked = rerank_stage(RerankJob {
        first_stage: &first_stage,
        queries: &queries,
        docs: &docs,
        provider: &provider_args,
        prompt: &prompt_args,
        depth: config.depth,
        concurrency: config.concurrency,
        skip_failures: config.skip_failures,
        floor: config.floor,
        tag: "qlm",
        stats_log: Some(&out.join(files::PROVIDER_LOG)),
        prompt_log: config.log_prompts.then_some(prompts_path.as_path()),
    })?;
    write_run_file(&reranked, &reranked_path)?;
    let reranked = read_run_file(&reranked_path)?;

    let fused_path = out.join(files::FUSED);
    write_run_file(
        &fuse_runs(&first_stage, &reranked, config.rerank_alpha, None, "fused")?,
        &fused_path,
    )?;
    let fused = read_run_file(&fused_path)?;

    write_atomic(
        &out.join(files::EVAL),
        eval_report(&fused, &qrels, config.eval_k)?.as_bytes(),
    )?;
    let named = vec![
        ("first_stage".to_string(), first_stage.clone()),
        ("reranked".to_string(), reranked.clone()),
        ("fused".to_string(), fused),
    ];
    let report = significance_report(
        &named,
        &qrels,
        config.eval_k,
        config.sig_level,
        &config.correction,
    )?;
    write_atomic(&out.join(files::SIGNIFICANCE), report.as_bytes())?;
    if config.sweep {
        let tsv = sweep_report(
            &first_stage,
            &reranked,
            &alpha_grid(),
            &qrels,
            config.eval_k,
        )?;
        write_atomic(&out.join(files::SWEEP), tsv.as_bytes())?;
    }
    info!(dir = %out.display(), "pipeline finished");
    Ok(())
}
