//! Token and tag vocabularies.
//!
//! Ids 0 and 1 are reserved for padding and out-of-vocabulary tokens.
//! Remaining ids are assigned by descending corpus frequency, breaking
//! ties lexicographically, so a given corpus always produces the same
//! tables regardless of iteration order elsewhere.

use super::tokenize::{code_tokens, text_tokens};
use super::Post;
use crate::error::{CoreError, Result};
use std::collections::HashMap;

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenVocabulary {
    ids: HashMap<String, u32>,
    /// Total table size including the two reserved slots.
    size: usize,
}

impl TokenVocabulary {
    pub fn id_of(&self, token: &str) -> u32 {
        self.ids.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.ids.contains_key(token)
    }

    /// Embedding-table row count: every assigned id plus pad and unk.
    pub fn size(&self) -> usize {
        self.size
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagVocabulary {
    indices: HashMap<String, usize>,
    names: Vec<String>,
}

impl TagVocabulary {
    pub fn index_of(&self, tag: &str) -> Option<usize> {
        self.indices.get(tag).copied()
    }

    pub fn name_of(&self, index: usize) -> &str {
        &self.names[index]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

/// Count-sort entries: frequency descending, then name ascending.
fn ranked(counts: HashMap<String, u64>) -> Vec<String> {
    let mut entries: Vec<(String, u64)> = counts.into_iter().collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    entries.into_iter().map(|(name, _)| name).collect()
}

/// Build both vocabularies from a corpus. Tokens occurring fewer than
/// `min_freq` times fall back to the unknown id; every observed tag is
/// kept since tags are the prediction targets.
pub fn build_vocab(posts: &[Post], min_freq: u64) -> Result<(TokenVocabulary, TagVocabulary)> {
    if posts.is_empty() {
        return Err(CoreError::CorpusTooSmall("cannot build a vocabulary from zero posts".into()));
    }
    let mut token_counts: HashMap<String, u64> = HashMap::new();
    let mut tag_counts: HashMap<String, u64> = HashMap::new();
    for post in posts {
        for tok in text_tokens(&post.title) {
            *token_counts.entry(tok).or_insert(0) += 1;
        }
        for tok in text_tokens(&post.description) {
            *token_counts.entry(tok).or_insert(0) += 1;
        }
        for tok in code_tokens(&post.code) {
            *token_counts.entry(tok).or_insert(0) += 1;
        }
        for tag in &post.tags {
            *tag_counts.entry(tag.clone()).or_insert(0) += 1;
        }
    }
    token_counts.retain(|_, &mut c| c >= min_freq);

    let mut ids = HashMap::new();
    for (offset, token) in ranked(token_counts).into_iter().enumerate() {
        ids.insert(token, (offset + 2) as u32);
    }
    let size = ids.len() + 2;

    let names = ranked(tag_counts);
    let indices = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();

    Ok((TokenVocabulary { ids, size }, TagVocabulary { indices, names }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn post(title: &str, desc: &str, code: &str, tags: &[&str]) -> Post {
        Post {
            id: format!("{title}-{desc}"),
            title: title.to_string(),
            description: desc.to_string(),
            code: code.to_string(),
            tags: tags.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn frequency_then_lexicographic_order() {
        let posts = vec![
            post("b b b", "a a", "", &["zz", "aa"]),
            post("c c", "a", "", &["aa"]),
        ];
        let (tokens, tags) = build_vocab(&posts, 1).unwrap();
        // counts: b=3, a=3, c=2 -> a before b by name, then c
        assert_eq!(tokens.id_of("a"), 2);
        assert_eq!(tokens.id_of("b"), 3);
        assert_eq!(tokens.id_of("c"), 4);
        assert_eq!(tokens.size(), 5);
        // aa seen twice, zz once
        assert_eq!(tags.index_of("aa"), Some(0));
        assert_eq!(tags.index_of("zz"), Some(1));
        assert_eq!(tags.name_of(1), "zz");
    }

    #[test]
    fn min_freq_filters_rare_tokens() {
        let posts = vec![post("rare common", "common", "", &["t"])];
        let (tokens, _) = build_vocab(&posts, 2).unwrap();
        assert_eq!(tokens.id_of("rare"), UNK_ID);
        assert!(tokens.contains("common"));
        assert_eq!(tokens.size(), 3);
    }

    #[test]
    fn tags_ignore_min_freq() {
        let posts = vec![post("w w", "w", "", &["once"])];
        let (_, tags) = build_vocab(&posts, 5).unwrap();
        assert_eq!(tags.index_of("once"), Some(0));
        assert_eq!(tags.len(), 1);
    }

    #[test]
    fn empty_corpus_is_an_error() {
        assert!(build_vocab(&[], 1).is_err());
    }

    #[test]
    fn code_tokens_count_toward_vocabulary() {
        let posts = vec![post("t", "d", "ArrayList ArrayList", &["t"])];
        let (tokens, _) = build_vocab(&posts, 2).unwrap();
        assert!(tokens.contains("ArrayList"));
        // lowercased "arraylist" never occurred
        assert_eq!(tokens.id_of("arraylist"), UNK_ID);
    }
}
