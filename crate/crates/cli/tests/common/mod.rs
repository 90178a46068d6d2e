#![allow(dead_code)]

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use serde_json::json;

pub const TOPICS: usize = 10;
const WORDS_PER_TOPIC: usize = 6;
const GENERAL_WORDS: usize = 40;

/// Paths of a synthetic BEIR-style dataset.
pub struct ToyData {
    pub corpus: PathBuf,
    pub queries: PathBuf,
    pub qrels: PathBuf,
}

fn topic_word(topic: usize, i: usize) -> String {
    format!("t{topic}w{i}")
}

/// `docs` documents spread over ten topics, one query per topic, graded
/// judgments for a sample of each topic's documents.
pub fn write_toy_data(dir: &Path, docs: usize, seed: u64) -> ToyData {
    let mut rng = StdRng::seed_from_u64(seed);
    let general: Vec<String> = (0..GENERAL_WORDS).map(|i| format!("g{i}")).collect();
    let mut corpus = String::new();
    let mut qrels = String::from("query-id\tcorpus-id\tscore\n");
    for d in 0..docs {
        let topic = d % TOPICS;
        let len = rng.gen_range(12..40);
        let words: Vec<String> = (0..len)
            .map(|_| {
                if rng.gen_bool(0.45) {
                    topic_word(topic, rng.gen_range(0..WORDS_PER_TOPIC))
                } else {
                    general.choose(&mut rng).unwrap().clone()
                }
            })
            .collect();
        let title = if d % 3 == 0 {
            format!("Title {d}")
        } else {
            String::new()
        };
        writeln!(
            corpus,
            "{}",
            json!({"_id": format!("doc{d:03}"), "title": title, "text": words.join(" ")})
        )
        .unwrap();
        if rng.gen_bool(0.7) && d >= TOPICS {
            let grade = rng.gen_range(0..=2);
            writeln!(qrels, "q{topic}\tdoc{d:03}\t{grade}").unwrap();
        }
    }
    let mut queries = String::new();
    for topic in 0..TOPICS {
        let text: Vec<String> = (0..3).map(|i| topic_word(topic, i)).collect();
        writeln!(
            queries,
            "{}",
            json!({"_id": format!("q{topic}"), "text": text.join(" ")})
        )
        .unwrap();
        // Every query keeps at least one positive judgment.
        writeln!(qrels, "q{topic}\tdoc{topic:03}\t2").unwrap();
    }
    let data = ToyData {
        corpus: dir.join("corpus.jsonl"),
        queries: dir.join("queries.jsonl"),
        qrels: dir.join("qrels.tsv"),
    };
    fs::create_dir_all(dir).unwrap();
    fs::write(&data.corpus, corpus).unwrap();
    fs::write(&data.queries, queries).unwrap();
    fs::write(&data.qrels, qrels).unwrap();
    data
}

pub fn qlmrank(args: &[&str]) -> i32 {
    qlmrank_cli::run(std::iter::once("qlmrank").chain(args.iter().copied()))
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Every file in `dir` (recursively) with its contents, for equality checks.
pub fn snapshot(dir: &Path, skip: &[&str]) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
                continue;
            }
            let name = path
                .strip_prefix(dir)
                .unwrap()
                .to_string_lossy()
                .into_owned();
            if !skip.contains(&name.as_str()) {
                out.push((name, fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

pub struct PipelineSetup {
    pub depth: usize,
    pub alpha: f64,
    pub model_family: &'static str,
    pub dataset: &'static str,
}

impl Default for PipelineSetup {
    fn default() -> Self {
        Self {
            depth: 20,
            alpha: 0.2,
            model_family: "flan-t5",
            dataset: "trecc",
        }
    }
}

/// Writes a pipeline config using the offline bigram provider.
pub fn write_config(path: &Path, data: &ToyData, out: &Path, setup: &PipelineSetup) {
    let config = json!({
        "corpus": data.corpus,
        "queries": data.queries,
        "qrels": data.qrels,
        "provider": {"kind": "bigram"},
        "model_family": setup.model_family,
        "dataset": setup.dataset,
        "depth": setup.depth,
        "rerank_alpha": setup.alpha,
        "eval_k": 10,
        "sweep": true,
        "log_prompts": true,
        "output_dir": out,
    });
    fs::write(path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
}

/// The stage-by-stage command sequence equivalent to `pipeline`.
pub fn manual_sequence(data: &ToyData, out: &Path, setup: &PipelineSetup) {
    fs::create_dir_all(out).unwrap();
    let f = |name: &str| out.join(name);
    let depth = setup.depth.to_string();
    let alpha = setup.alpha.to_string();
    let steps: Vec<Vec<String>> = vec![
        vec![
            "search",
            "--corpus",
            s(&data.corpus),
            "--queries",
            s(&data.queries),
            "--k",
            &depth,
            "-o",
            s(&f("first_stage.run")),
        ]
        .into_iter()
        .map(String::from)
        .collect(),
        vec![
            "rerank",
            "--run",
            s(&f("first_stage.run")),
            "--corpus",
            s(&data.corpus),
            "--queries",
            s(&data.queries),
            "--provider",
            "bigram",
            "--model-family",
            setup.model_family,
            "--dataset",
            setup.dataset,
            "--depth",
            &depth,
            "--stats-log",
            s(&f("provider_log.jsonl")),
            "--prompt-log",
            s(&f("prompts.jsonl")),
            "-o",
            s(&f("reranked.run")),
        ]
        .into_iter()
        .map(String::from)
        .collect(),
        vec![
            "fuse",
            s(&f("first_stage.run")),
            s(&f("reranked.run")),
            "--alpha",
            &alpha,
            "-o",
            s(&f("fused.run")),
        ]
        .into_iter()
        .map(String::from)
        .collect(),
        vec![
            "eval",
            "--run",
            s(&f("fused.run")),
            "--qrels",
            s(&data.qrels),
            "--k",
            "10",
            "-o",
            s(&f("eval.tsv")),
        ]
        .into_iter()
        .map(String::from)
        .collect(),
        vec![
            "sigtest",
            s(&f("first_stage.run")),
            s(&f("reranked.run")),
            s(&f("fused.run")),
            "--qrels",
            s(&data.qrels),
            "--k",
            "10",
            "-o",
            s(&f("significance.txt")),
        ]
        .into_iter()
        .map(String::from)
        .collect(),
        vec![
            "sweep",
            s(&f("first_stage.run")),
            s(&f("reranked.run")),
            "--qrels",
            s(&data.qrels),
            "--k",
            "10",
            "-o",
            s(&f("sweep.tsv")),
        ]
        .into_iter()
        .map(String::from)
        .collect(),
    ];
    for step in steps {
        let args: Vec<&str> = step.iter().map(String::as_str).collect();
        assert_eq!(qlmrank(&args), 0, "step failed: {args:?}");
    }
}
