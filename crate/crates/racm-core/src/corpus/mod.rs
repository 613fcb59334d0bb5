//! Corpus ingestion and preparation.
//!
//! Posts are question records with a title, a free-text description, an
//! optional code section and a non-empty tag set. The canonical
//! interchange format is UTF-8 line-delimited JSON with fields
//! `id`/`title`/`description`/`code`/`tags`; XML site dumps are converted
//! into the same schema on ingest.

mod split;
mod synthetic;
mod tokenize;
mod vocab;
mod xml;

pub use split::{split, SplitManifest};
pub use synthetic::{synthetic_corpus, SyntheticInfo};
pub use tokenize::{
    code_tokens, text_tokens, tokenize, ModalityTokens, TokenizedPost, TokenizerConfig,
};
pub use vocab::{build_vocab, TagVocabulary, TokenVocabulary, PAD_ID, UNK_ID};

use crate::error::{CoreError, Result};
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::io::{BufRead, BufReader};
use std::path::Path;

/// One question post.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Post {
    pub id: String,
    pub title: String,
    pub description: String,
    #[serde(default)]
    pub code: String,
    pub tags: Vec<String>,
}

impl Post {
    /// Validate the record invariants; `ordinal` feeds error messages.
    fn validate(&self, ordinal: usize) -> Result<()> {
        if self.id.trim().is_empty() {
            return Err(CoreError::BadRecord { ordinal, reason: "empty id".into() });
        }
        if self.title.trim().is_empty() {
            return Err(CoreError::BadRecord { ordinal, reason: "empty title".into() });
        }
        if self.description.trim().is_empty() {
            return Err(CoreError::BadRecord { ordinal, reason: "empty description".into() });
        }
        if self.tags.is_empty() {
            return Err(CoreError::BadRecord { ordinal, reason: "empty tag set".into() });
        }
        Ok(())
    }

    /// Whitespace-separated word count across all three parts.
    pub fn word_count(&self) -> usize {
        self.title.split_whitespace().count()
            + self.description.split_whitespace().count()
            + self.code.split_whitespace().count()
    }
}

/// Input format accepted by [`ingest`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorpusFormat {
    Jsonl,
    XmlDump,
}

impl std::str::FromStr for CorpusFormat {
    type Err = CoreError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jsonl" => Ok(CorpusFormat::Jsonl),
            "xml-dump" | "xml" => Ok(CorpusFormat::XmlDump),
            other => Err(CoreError::InvalidConfig(format!("unknown corpus format {other:?}"))),
        }
    }
}

/// An ingested corpus. Post order follows the input file.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub posts: Vec<Post>,
}

/// Headline statistics in the usual dataset-table layout.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusStats {
    pub posts: usize,
    pub distinct_tags: usize,
    pub avg_words: f64,
    pub avg_tags: f64,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.posts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.posts.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Post> {
        self.posts.iter().find(|p| p.id == id)
    }

    pub fn stats(&self) -> CorpusStats {
        let posts = self.posts.len();
        let mut tags: HashSet<&str> = HashSet::new();
        let mut words = 0usize;
        let mut tag_total = 0usize;
        for p in &self.posts {
            for t in &p.tags {
                tags.insert(t.as_str());
            }
            words += p.word_count();
            tag_total += p.tags.len();
        }
        let denom = posts.max(1) as f64;
        CorpusStats {
            posts,
            distinct_tags: tags.len(),
            avg_words: words as f64 / denom,
            avg_tags: tag_total as f64 / denom,
        }
    }

    /// Append a post, enforcing id uniqueness and field invariants.
    fn push_checked(&mut self, post: Post, ordinal: usize, seen: &mut HashSet<String>) -> Result<()> {
        post.validate(ordinal)?;
        if !seen.insert(post.id.clone()) {
            return Err(CoreError::DuplicateId { id: post.id, ordinal });
        }
        self.posts.push(post);
        Ok(())
    }
}

/// Read a corpus from disk. Malformed records abort with their ordinal.
pub fn ingest(path: &Path, format: CorpusFormat) -> Result<Corpus> {
    match format {
        CorpusFormat::Jsonl => ingest_jsonl(path),
        CorpusFormat::XmlDump => xml::ingest_xml_dump(path),
    }
}

fn ingest_jsonl(path: &Path) -> Result<Corpus> {
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut corpus = Corpus::default();
    let mut seen = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let ordinal = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let post: Post = serde_json::from_str(&line)
            .map_err(|e| CoreError::BadRecord { ordinal, reason: e.to_string() })?;
        let post = Post { tags: dedup_tags(post.tags), ..post };
        corpus.push_checked(post, ordinal, &mut seen)?;
    }
    Ok(corpus)
}

/// Write a corpus in the canonical line-delimited format.
pub fn write_jsonl(corpus: &Corpus, path: &Path) -> Result<()> {
    use std::io::Write;
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for post in &corpus.posts {
        let line = serde_json::to_string(post).map_err(|e| CoreError::Parse(e.to_string()))?;
        writeln!(out, "{line}")?;
    }
    Ok(())
}

/// Drop repeated tags, keeping first occurrence order.
pub(crate) fn dedup_tags(tags: Vec<String>) -> Vec<String> {
    let mut seen = HashSet::new();
    tags.into_iter().filter(|t| seen.insert(t.clone())).collect()
}
