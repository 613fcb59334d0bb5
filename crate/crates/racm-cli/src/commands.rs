//! Command bodies. Each returns through `CoreError`, which the entry point
//! maps onto the documented exit codes.

use crate::config::RunConfig;
use racm_core::corpus::{
    build_vocab, ingest, split, tokenize, write_jsonl, Corpus, Post, SplitManifest,
    TagVocabulary, TokenVocabulary, TokenizedPost, TokenizerConfig,
};
use racm_core::error::{CoreError, Result};
use racm_core::eval::{evaluate, EvalReport};
use racm_core::model::{predict, recommend, Ablation, ModelConfig, init_params};
use racm_core::retrieval::{load_index, save_index, KnowledgeSource};
use racm_core::train::{load_checkpoint, save_checkpoint, train, CheckpointMeta, TrainOutcome};
use std::io::Read;
use std::path::{Path, PathBuf};

/// Corpus plus everything derived from it.
struct Data {
    corpus: Corpus,
    tokens: TokenVocabulary,
    tags: TagVocabulary,
    tokenized: Vec<TokenizedPost>,
}

fn load_data(cfg: &RunConfig, tok: &TokenizerConfig) -> Result<Data> {
    let corpus = ingest(cfg.corpus_path()?, cfg.format)?;
    let (tokens, tags) = build_vocab(&corpus.posts, cfg.min_freq)?;
    let tokenized =
        corpus.posts.iter().map(|p| tokenize(p, &tokens, &tags, tok)).collect();
    Ok(Data { corpus, tokens, tags, tokenized })
}

fn select<'a>(tokenized: &'a [TokenizedPost], idx: &[usize]) -> Vec<&'a TokenizedPost> {
    idx.iter().map(|&i| &tokenized[i]).collect()
}

fn cloned(posts: &[&TokenizedPost]) -> Vec<TokenizedPost> {
    posts.iter().map(|p| (*p).clone()).collect()
}

fn print_stats(corpus: &Corpus) {
    let s = corpus.stats();
    println!("posts: {}", s.posts);
    println!("distinct tags: {}", s.distinct_tags);
    println!("avg words/post: {:.2}", s.avg_words);
    println!("avg tags/post: {:.2}", s.avg_tags);
}

pub fn cmd_ingest(
    cfg: &RunConfig,
    out: Option<&Path>,
    stats_out: Option<&Path>,
) -> Result<()> {
    let corpus = ingest(cfg.corpus_path()?, cfg.format)?;
    print_stats(&corpus);
    if let Some(path) = out {
        write_jsonl(&corpus, path)?;
        println!("corpus written to {}", path.display());
    }
    if let Some(path) = stats_out {
        let doc = serde_json::json!({ "config": cfg, "stats": corpus.stats() });
        std::fs::write(path, format!("{:#}\n", doc))?;
        println!("stats written to {}", path.display());
    }
    Ok(())
}

pub fn cmd_synth(cfg: &RunConfig, out: &Path, info_out: Option<&Path>) -> Result<()> {
    let (corpus, info) = racm_core::corpus::synthetic_corpus(cfg.seed);
    write_jsonl(&corpus, out)?;
    print_stats(&corpus);
    println!(
        "neighbor-dependent posts: {} (of {} latent-group posts)",
        info.neighbor_dependent.len(),
        info.neighbor_dependent.len() + info.carriers.len()
    );
    println!("corpus written to {}", out.display());
    if let Some(path) = info_out {
        let doc = serde_json::json!({ "config": cfg, "info": info });
        std::fs::write(path, format!("{:#}\n", doc))?;
        println!("roles written to {}", path.display());
    }
    Ok(())
}

pub fn cmd_build_index(
    cfg: &RunConfig,
    checkpoint: Option<&Path>,
    out: Option<&Path>,
) -> Result<()> {
    let out = match (out, cfg.index.as_deref()) {
        (Some(p), _) => p.to_path_buf(),
        (None, Some(p)) => p.to_path_buf(),
        (None, None) => {
            return Err(CoreError::InvalidConfig(
                "no index path: set `index` in the config or pass --out".into(),
            ))
        }
    };
    // A checkpoint supplies trained parameters and their architecture;
    // otherwise the seed initializes untrained ones from the run config.
    let (theta, data) = match checkpoint {
        Some(path) => {
            let (theta, meta) = load_checkpoint(path)?;
            let data = load_data(cfg, &meta.model.tokenizer())?;
            if data.tokens.size() != meta.model.vocab_size {
                return Err(CoreError::InvalidConfig(format!(
                    "vocabulary size {} does not match the checkpoint's {} \
                     (different corpus or min_freq?)",
                    data.tokens.size(),
                    meta.model.vocab_size
                )));
            }
            (theta, data)
        }
        None => {
            let data = load_data(cfg, &cfg.tokenizer())?;
            let mcfg = cfg.model(data.tokens.size(), data.tags.len());
            (init_params(&mcfg, cfg.seed)?, data)
        }
    };
    let ks = KnowledgeSource::build(&data.tokenized, &theta)?;
    save_index(&ks, &out, &cfg.snapshot()?)?;
    println!("indexed {} posts (d={}) -> {}", ks.len(), ks.d(), out.display());
    Ok(())
}

/// Training log: the config snapshot on the first line, one epoch record per
/// following line.
fn write_train_log(path: &Path, cfg: &RunConfig, outcome: &TrainOutcome) -> Result<()> {
    let mut text = format!("{{\"config\":{}}}\n", cfg.snapshot()?);
    for rec in &outcome.log {
        let line = serde_json::to_string(rec)
            .map_err(|e| CoreError::Parse(format!("log record: {e}")))?;
        text.push_str(&line);
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn run_training(cfg: &RunConfig, data: &Data) -> Result<(TrainOutcome, ModelConfig)> {
    let mcfg = cfg.model(data.tokens.size(), data.tags.len());
    let manifest = split(&data.corpus, cfg.seed)?;
    let train_posts = cloned(&select(&data.tokenized, &manifest.train));
    let valid_posts = cloned(&select(&data.tokenized, &manifest.valid));
    let outcome = train(&train_posts, &valid_posts, &mcfg, &cfg.training())?;
    Ok((outcome, mcfg))
}

pub fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let data = load_data(cfg, &cfg.tokenizer())?;
    let (outcome, mcfg) = run_training(cfg, &data)?;
    save_checkpoint(&cfg.checkpoint, &outcome.theta, &mcfg, &cfg.training())?;
    write_train_log(&cfg.log, cfg, &outcome)?;
    let last = outcome.log.last().expect("training ran at least one epoch");
    println!(
        "trained {} epochs ({}); best epoch {} valid_loss {:.6}",
        outcome.log.len(),
        if outcome.stopped_early { "stopped early" } else { "full run" },
        outcome.best_epoch,
        outcome.best_valid_loss,
    );
    println!(
        "last epoch: train_loss {:.6} valid_loss {:.6} F1@1 {:.2}% F1@5 {:.2}%",
        last.train_loss,
        last.valid_loss,
        100.0 * last.f1_at_1,
        100.0 * last.f1_at_5,
    );
    println!("checkpoint written to {}", cfg.checkpoint.display());
    println!("log written to {}", cfg.log.display());
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitChoice {
    Train,
    Valid,
    Test,
}

impl std::str::FromStr for SplitChoice {
    type Err = CoreError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Self::Train),
            "valid" => Ok(Self::Valid),
            "test" => Ok(Self::Test),
            other => Err(CoreError::InvalidConfig(format!("unknown split {other:?}"))),
        }
    }
}

impl SplitChoice {
    fn pick<'a>(self, m: &'a SplitManifest) -> &'a [usize] {
        match self {
            Self::Train => &m.train,
            Self::Valid => &m.valid,
            Self::Test => &m.test,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Self::Train => "train",
            Self::Valid => "valid",
            Self::Test => "test",
        }
    }
}

/// Data, checkpoint, and knowledge source wired for inference. The split is
/// reconstructed from the checkpoint's own seed so evaluation sees exactly
/// the partition the model was trained on.
struct InferenceSetup {
    data: Data,
    theta: racm_core::params::ParamStore,
    meta: CheckpointMeta,
    manifest: SplitManifest,
    ks: Option<KnowledgeSource>,
}

fn load_inference(
    cfg: &RunConfig,
    checkpoint: Option<&Path>,
    index: Option<&Path>,
) -> Result<InferenceSetup> {
    let ckpt_path = checkpoint.unwrap_or(&cfg.checkpoint);
    let (theta, meta) = load_checkpoint(ckpt_path)?;
    let data = load_data(cfg, &meta.model.tokenizer())?;
    if data.tokens.size() != meta.model.vocab_size || data.tags.len() != meta.model.tag_count {
        return Err(CoreError::InvalidConfig(format!(
            "corpus yields vocabulary {}x{} tags but the checkpoint was trained with {}x{} \
             (different corpus or min_freq?)",
            data.tokens.size(),
            data.tags.len(),
            meta.model.vocab_size,
            meta.model.tag_count
        )));
    }
    let manifest = split(&data.corpus, meta.training.seed)?;
    let index = index.or(cfg.index.as_deref());
    let ks = if meta.model.effective_k() == 0 {
        None
    } else if let Some(path) = index {
        Some(load_index(path, Some(meta.model.d))?.0)
    } else {
        let train_posts = cloned(&select(&data.tokenized, &manifest.train));
        Some(KnowledgeSource::build(&train_posts, &theta)?)
    };
    Ok(InferenceSetup { data, theta, meta, manifest, ks })
}

pub fn cmd_evaluate(
    cfg: &RunConfig,
    checkpoint: Option<&Path>,
    index: Option<&Path>,
    which: SplitChoice,
    out: Option<&Path>,
) -> Result<()> {
    let setup = load_inference(cfg, checkpoint, index)?;
    let posts = cloned(&select(&setup.data.tokenized, which.pick(&setup.manifest)));
    let report = evaluate(
        &posts,
        &setup.theta,
        setup.ks.as_ref(),
        &setup.meta.model,
        cfg.precision_denominator,
    )?;
    print!("{}", report.to_text(Some(&setup.data.tags)));
    let out = out.unwrap_or(&cfg.report);
    write_report(out, cfg, which, &report)?;
    println!("report written to {}", out.display());
    Ok(())
}

fn write_report(path: &Path, cfg: &RunConfig, which: SplitChoice, report: &EvalReport) -> Result<()> {
    let doc = serde_json::json!({
        "config": cfg,
        "split": which.name(),
        "report": report,
    });
    std::fs::write(path, format!("{:#}\n", doc))?;
    Ok(())
}

fn read_post_arg(data: &Data, id: Option<&str>, file: Option<&Path>) -> Result<Post> {
    match (id, file) {
        (Some(id), None) => data
            .corpus
            .get(id)
            .cloned()
            .ok_or_else(|| CoreError::InvalidConfig(format!("post {id:?} is not in the corpus"))),
        (None, Some(path)) => {
            let text = if path == Path::new("-") {
                let mut s = String::new();
                std::io::stdin().read_to_string(&mut s)?;
                s
            } else {
                std::fs::read_to_string(path)?
            };
            serde_json::from_str(&text).map_err(|e| CoreError::Parse(format!("post JSON: {e}")))
        }
        _ => Err(CoreError::InvalidConfig(
            "recommend needs exactly one of --id or --post".into(),
        )),
    }
}

pub fn cmd_recommend(
    cfg: &RunConfig,
    checkpoint: Option<&Path>,
    index: Option<&Path>,
    id: Option<&str>,
    post_file: Option<&Path>,
    top: usize,
) -> Result<()> {
    if top == 0 {
        return Err(CoreError::InvalidConfig("--top must be at least 1".into()));
    }
    let setup = load_inference(cfg, checkpoint, index)?;
    let post = read_post_arg(&setup.data, id, post_file)?;
    let tokenized = tokenize(
        &post,
        &setup.data.tokens,
        &setup.data.tags,
        &setup.meta.model.tokenizer(),
    );
    let pred = predict(&tokenized, &setup.theta, setup.ks.as_ref(), &setup.meta.model)?;
    for (rank, t) in recommend(&pred, top).into_iter().enumerate() {
        println!(
            "{:>2}. {}  p={:.4}",
            rank + 1,
            setup.data.tags.name_of(t),
            pred.probs[t]
        );
    }
    Ok(())
}

pub fn cmd_ablate(cfg: &RunConfig, out: Option<&Path>) -> Result<()> {
    let mut rows = Vec::new();
    for ablation in [Ablation::Full, Ablation::NoRa, Ablation::NoCmf] {
        let run_cfg = RunConfig { ablation, ..cfg.clone() };
        let data = load_data(&run_cfg, &run_cfg.tokenizer())?;
        let (outcome, mcfg) = run_training(&run_cfg, &data)?;
        let manifest = split(&data.corpus, run_cfg.seed)?;
        let valid_posts = cloned(&select(&data.tokenized, &manifest.valid));
        let ks = if mcfg.effective_k() == 0 {
            None
        } else {
            let train_posts = cloned(&select(&data.tokenized, &manifest.train));
            Some(KnowledgeSource::build(&train_posts, &outcome.theta)?)
        };
        let report = evaluate(
            &valid_posts,
            &outcome.theta,
            ks.as_ref(),
            &mcfg,
            run_cfg.precision_denominator,
        )?;
        let at1 = report.at(1).expect("cutoff 1 is always present");
        let at5 = report.at(5).expect("cutoff 5 is always present");
        rows.push(serde_json::json!({
            "ablation": ablation.to_string(),
            "best_epoch": outcome.best_epoch,
            "valid_f1_at_1_pct": at1.f1_pct,
            "valid_f1_at_5_pct": at5.f1_pct,
            "valid_recall_at_5_pct": at5.recall_pct,
        }));
    }
    println!("{:<8} {:>8} {:>8} {:>8} {:>11}", "ablation", "F1@1%", "F1@5%", "R@5%", "best epoch");
    for row in &rows {
        println!(
            "{:<8} {:>8.2} {:>8.2} {:>8.2} {:>11}",
            row["ablation"].as_str().unwrap(),
            row["valid_f1_at_1_pct"].as_f64().unwrap(),
            row["valid_f1_at_5_pct"].as_f64().unwrap(),
            row["valid_recall_at_5_pct"].as_f64().unwrap(),
            row["best_epoch"].as_u64().unwrap(),
        );
    }
    if let Some(path) = out {
        let doc = serde_json::json!({ "config": cfg, "rows": rows });
        std::fs::write(path, format!("{:#}\n", doc))?;
        println!("table written to {}", path.display());
    }
    Ok(())
}

// Path plumbing shared by the clap layer.
pub fn override_paths(
    cfg: &mut RunConfig,
    input: Option<PathBuf>,
    format: Option<racm_core::corpus::CorpusFormat>,
) {
    if let Some(p) = input {
        cfg.corpus = Some(p);
    }
    if let Some(f) = format {
        cfg.format = f;
    }
}
