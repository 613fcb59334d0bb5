//! Shared fixtures for unit tests: a micro model configuration and a family
//! of tiny tokenized posts small enough for finite-difference checks.

use crate::corpus::{ModalityTokens, TokenizedPost};
use crate::fusion::GateMode;
use crate::model::{Ablation, ModelConfig, Pooling};
use crate::params::ParamStore;
use crate::retrieval::KnowledgeSource;

pub(crate) fn micro_config(ablation: Ablation, k: usize) -> ModelConfig {
    ModelConfig {
        d: 8,
        n_title: 3,
        n_description: 6,
        n_code: 4,
        vocab_size: 12,
        tag_count: 6,
        k,
        heads: 1,
        gate_mode: GateMode::Sigmoid,
        pooling: Pooling::Mean,
        ablation,
    }
}

pub(crate) fn tokens(ids: &[u32], live: usize) -> ModalityTokens {
    ModalityTokens {
        ids: ids.to_vec(),
        mask: (0..ids.len()).map(|i| i < live).collect(),
    }
}

pub(crate) fn micro_post(id: &str, shift: u32) -> TokenizedPost {
    TokenizedPost {
        id: id.into(),
        title: tokens(&[2 + shift % 4, 3, 0], 2),
        description: tokens(&[4 + shift % 5, 5, 6, 0, 0, 0], 3),
        code: tokens(&[7 + shift % 3, 0, 0, 0], 1),
        tag_indices: vec![(shift as usize) % 6],
    }
}

pub(crate) fn micro_source(theta: &ParamStore, n: usize) -> KnowledgeSource {
    let posts: Vec<TokenizedPost> = (0..n)
        .map(|i| micro_post(&format!("n{i}"), i as u32))
        .collect();
    KnowledgeSource::build(&posts, theta).unwrap()
}
