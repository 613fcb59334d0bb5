//! Tokenization into fixed-length id sequences.
//!
//! Natural-language fields (title, description) are lowercased and split at
//! whitespace and punctuation boundaries, keeping each punctuation character
//! as its own token: "How to sort?" becomes `["how", "to", "sort", "?"]`.
//! Code keeps its case and yields only the alphanumeric runs, since
//! punctuation density in source text drowns out identifiers otherwise.

use super::vocab::{TagVocabulary, TokenVocabulary, PAD_ID};
use super::Post;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenizerConfig {
    /// Fixed title length in tokens.
    pub n_title: usize,
    /// Fixed description length in tokens.
    pub n_description: usize,
    /// Fixed code length in tokens.
    pub n_code: usize,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        Self { n_title: 16, n_description: 128, n_code: 128 }
    }
}

/// One modality of a post: ids padded or truncated to the configured
/// length, with `mask[i]` true exactly where `ids[i]` is a real token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModalityTokens {
    pub ids: Vec<u32>,
    pub mask: Vec<bool>,
}

impl ModalityTokens {
    fn from_ids(mut ids: Vec<u32>, len: usize) -> Self {
        ids.truncate(len);
        let live = ids.len();
        ids.resize(len, PAD_ID);
        let mut mask = vec![true; live];
        mask.resize(len, false);
        Self { ids, mask }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn live_count(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedPost {
    pub id: String,
    pub title: ModalityTokens,
    pub description: ModalityTokens,
    pub code: ModalityTokens,
    /// Indices into the tag vocabulary; tags absent from it are dropped.
    pub tag_indices: Vec<usize>,
}

/// Split lowercased text at whitespace and punctuation boundaries.
pub fn text_tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    for c in text.chars() {
        if c.is_alphanumeric() {
            for lc in c.to_lowercase() {
                word.push(lc);
            }
        } else {
            if !word.is_empty() {
                out.push(std::mem::take(&mut word));
            }
            if !c.is_whitespace() {
                out.push(c.to_string());
            }
        }
    }
    if !word.is_empty() {
        out.push(word);
    }
    out
}

/// Split code at non-alphanumeric boundaries, preserving case.
pub fn code_tokens(code: &str) -> Vec<String> {
    code.split(|c: char| !c.is_alphanumeric())
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

/// Map a post to fixed-length id sequences under the given vocabularies.
pub fn tokenize(
    post: &Post,
    tokens: &TokenVocabulary,
    tags: &TagVocabulary,
    cfg: &TokenizerConfig,
) -> TokenizedPost {
    let title_ids: Vec<u32> = text_tokens(&post.title).iter().map(|t| tokens.id_of(t)).collect();
    let desc_ids: Vec<u32> =
        text_tokens(&post.description).iter().map(|t| tokens.id_of(t)).collect();
    let code_ids: Vec<u32> = code_tokens(&post.code).iter().map(|t| tokens.id_of(t)).collect();
    let mut tag_indices: Vec<usize> =
        post.tags.iter().filter_map(|t| tags.index_of(t)).collect();
    tag_indices.sort_unstable();
    tag_indices.dedup();
    TokenizedPost {
        id: post.id.clone(),
        title: ModalityTokens::from_ids(title_ids, cfg.n_title),
        description: ModalityTokens::from_ids(desc_ids, cfg.n_description),
        code: ModalityTokens::from_ids(code_ids, cfg.n_code),
        tag_indices,
    }
}
