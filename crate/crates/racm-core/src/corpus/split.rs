//! Deterministic train/valid/test partitioning.

use super::Corpus;
use crate::error::{CoreError, Result};
use crate::rng;
use rand::seq::SliceRandom;

/// Index sets into the source corpus. Together the three cover every post
/// exactly once.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitManifest {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

impl SplitManifest {
    pub fn total(&self) -> usize {
        self.train.len() + self.valid.len() + self.test.len()
    }
}

/// Shuffle post indices with the `split` stream of `seed` and cut them
/// 80/10/10: train gets floor(0.8 N), valid floor(0.1 N), test the rest.
pub fn split(corpus: &Corpus, seed: u64) -> Result<SplitManifest> {
    let n = corpus.len();
    if n < 10 {
        return Err(CoreError::CorpusTooSmall(format!(
            "need at least 10 posts to split, got {n}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = rng::stream(seed, "split");
    order.shuffle(&mut rng);
    let n_train = (n as f64 * 0.8).floor() as usize;
    let n_valid = (n as f64 * 0.1).floor() as usize;
    let valid_end = n_train + n_valid;
    Ok(SplitManifest {
        train: order[..n_train].to_vec(),
        valid: order[n_train..valid_end].to_vec(),
        test: order[valid_end..].to_vec(),
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Post;
    use std::collections::HashSet;

    fn corpus(n: usize) -> Corpus {
        Corpus {
            posts: (0..n)
                .map(|i| Post {
                    id: i.to_string(),
                    title: "t".into(),
                    description: "d".into(),
                    code: String::new(),
                    tags: vec!["x".into()],
                })
                .collect(),
        }
    }

    #[test]
    fn sizes_follow_floor_rule() {
        let m = split(&corpus(60393), 7).unwrap();
        assert_eq!(m.train.len(), 48314);
        assert_eq!(m.valid.len(), 6039);
        assert_eq!(m.test.len(), 6040);
    }

    #[test]
    fn partition_covers_every_index_once() {
        let m = split(&corpus(37), 123).unwrap();
        let mut seen = HashSet::new();
        for &i in m.train.iter().chain(&m.valid).chain(&m.test) {
            assert!(seen.insert(i), "index {i} appears twice");
        }
        assert_eq!(seen.len(), 37);
    }

    #[test]
    fn same_seed_same_split_different_seed_differs() {
        let c = corpus(50);
        let a = split(&c, 1).unwrap();
        let b = split(&c, 1).unwrap();
        assert_eq!(a, b);
        let c2 = split(&c, 2).unwrap();
        assert_ne!(a.train, c2.train);
    }

    #[test]
    fn too_small_corpus_is_rejected() {
        assert!(split(&corpus(9), 1).is_err());
        assert!(split(&corpus(10), 1).is_ok());
    }
}
