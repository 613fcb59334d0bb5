//! Deterministic 200-post corpus where every tag is a planted-token
//! function, used by the learnability and ablation checks.
//!
//! Layout: 200 posts.
//!
//! * 2 description families (12 members): `mdesc{i}` in every member's
//!   description decides the tag directly.
//! * 2 code families (13 members): `mcode{i}` lives only in the code
//!   section; descriptions share one confuser word, so the code modality
//!   is what separates them. Families are wide enough that a random 8:1:1
//!   split cannot starve one of training examples.
//! * 30 latent groups of 5 posts, five groups per latent tag. Each group
//!   is keyed by a five-word signature drawn from the filler pool so that
//!   every filler word lands in exactly one group per tag: no single word,
//!   and almost no word pair, says anything about the tag. Only the whole
//!   signature identifies the group, and all five members share the
//!   identical word bags except for the marker slot, so a pooled-mean
//!   lookup keeps siblings closer than any cross-group pair. Four members
//!   (the carriers) write the resolving marker `mlat{t}` into one section:
//!   the first two groups of each tag mark the description, the other
//!   three mark the code. The fifth member carries a neutral word in that
//!   slot. That fifth post is neighbor dependent: nothing in its own text
//!   decides the tag, while its nearest neighbors are the carriers that
//!   spell it out.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;

use super::{Corpus, Post};
use crate::rng;

const FILLERS: [&str; 25] = [
    "error", "value", "function", "loop", "array", "string", "method", "object", "thread",
    "file", "parse", "index", "type", "cache", "query", "stack", "heap", "queue", "merge",
    "sort", "print", "debug", "build", "test", "token",
];

// The easy groups draw from their own pool: sharing words with the latent
// signatures would couple an easy tag to whichever groups drew those words.
const EASY_WORDS: [&str; 8] = [
    "widget", "panel", "dialog", "layout", "cursor", "window", "render", "scroll",
];

const LAT_TAGS: usize = 6;
const GROUPS_PER_TAG: usize = 5;
const SIG_WORDS: usize = 5;
const MEMBERS: usize = 5;
const DESC_FAMILY: usize = 12;
const CODE_FAMILY: usize = 13;

/// Which posts play which role, and the tag families, keyed by id.
#[derive(Debug, Clone, Default, serde::Serialize, serde::Deserialize)]
pub struct SyntheticInfo {
    /// Latent-group posts without their own marker; solvable only through
    /// neighbors.
    pub neighbor_dependent: Vec<String>,
    /// Latent-group posts that carry the marker themselves.
    pub carriers: Vec<String>,
    pub latent_tags: Vec<String>,
    pub desc_tags: Vec<String>,
    pub code_tags: Vec<String>,
}

fn pick<'a, R: Rng>(rng: &mut R, pool: &[&'a str]) -> &'a str {
    pool[rng.gen_range(0..pool.len())]
}

/// Generate the corpus. Same seed, same corpus, byte for byte.
pub fn synthetic_corpus(seed: u64) -> (Corpus, SyntheticInfo) {
    let mut corpus = Corpus::default();
    let mut info = SyntheticInfo {
        latent_tags: (0..LAT_TAGS).map(|b| format!("tag-lat-{b}")).collect(),
        desc_tags: (0..2).map(|i| format!("tag-desc-{i}")).collect(),
        code_tags: (0..2).map(|i| format!("tag-code-{i}")).collect(),
        ..Default::default()
    };

    for i in 0..2 {
        let mut rng = rng::stream(seed, &format!("synth/desc/{i}"));
        for m in 0..DESC_FAMILY {
            let f1 = pick(&mut rng, &EASY_WORDS);
            let f2 = pick(&mut rng, &EASY_WORDS);
            let f3 = pick(&mut rng, &EASY_WORDS);
            corpus.posts.push(Post {
                id: format!("d{i}-{m}"),
                title: format!("how to {f1} a {f2}"),
                description: format!("mdesc{i} mdesc{i} fails with {f3} here"),
                code: "let x = 0".into(),
                tags: vec![format!("tag-desc-{i}")],
            });
        }
    }

    for i in 0..2 {
        let mut rng = rng::stream(seed, &format!("synth/code/{i}"));
        for m in 0..CODE_FAMILY {
            let f1 = pick(&mut rng, &EASY_WORDS);
            let f2 = pick(&mut rng, &EASY_WORDS);
            let f3 = pick(&mut rng, &EASY_WORDS);
            corpus.posts.push(Post {
                id: format!("c{i}-{m}"),
                title: format!("how to {f1} a {f2}"),
                // "snippet" is shared by both code groups: the description
                // flags a code question without telling the groups apart.
                description: format!("snippet below breaks with {f3} here"),
                code: format!("mcode{i} mcode{i} {f2}"),
                tags: vec![format!("tag-code-{i}")],
            });
        }
    }

    // One signature per group, five fillers each. Chunking a fresh shuffle
    // of the full pool per tag puts every filler in exactly one group of
    // every tag, which is what keeps single words tag-neutral.
    let mut seen_signatures = HashSet::new();
    for t in 0..LAT_TAGS {
        let mut deck: Vec<&str> = FILLERS.to_vec();
        deck.shuffle(&mut rng::stream(seed, &format!("synth/sig/{t}")));
        for c in 0..GROUPS_PER_TAG {
            let sig: Vec<&str> = deck[c * SIG_WORDS..(c + 1) * SIG_WORDS].to_vec();
            let mut sorted = sig.clone();
            sorted.sort_unstable();
            assert!(seen_signatures.insert(sorted), "duplicate group signature");

            let mark_desc = c < GROUPS_PER_TAG / 2;
            let mut rng = rng::stream(seed, &format!("synth/lat/{t}/{c}"));
            let bare = rng.gen_range(0..MEMBERS);
            for m in 0..MEMBERS {
                let id = format!("n{t}{c}-{m}");
                let is_carrier = m != bare;
                // Word order is cosmetic: every member keeps the identical
                // word bags except that carriers swap one neutral word for
                // the marker, so within a group the pooled means differ
                // only through that one slot.
                let mut order = sig.clone();
                order.shuffle(&mut rng);
                let desc_slot = if is_carrier && mark_desc {
                    format!("mlat{t}")
                } else {
                    "info".into()
                };
                let code = if is_carrier && !mark_desc {
                    format!("mlat{t} fix below same")
                } else {
                    "fix below same setup".into()
                };
                corpus.posts.push(Post {
                    id: id.clone(),
                    title: format!("{s0} {s0} {s1} {s1}", s0 = sig[0], s1 = sig[1]),
                    description: format!(
                        "{a} {b} {desc_slot} info",
                        a = order.join(" "),
                        b = sig.join(" ")
                    ),
                    code,
                    tags: vec![format!("tag-lat-{t}")],
                });
                if is_carrier {
                    info.carriers.push(id);
                } else {
                    info.neighbor_dependent.push(id);
                }
            }
        }
    }

    // Members were pushed in generation order; restore a stable id order so
    // the corpus itself carries no role information.
    corpus.posts.sort_by(|a, b| a.id.cmp(&b.id));
    info.neighbor_dependent.sort();
    info.carriers.sort();
    (corpus, info)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::build_vocab;
    use std::collections::{HashMap, HashSet};

    #[test]
    fn corpus_has_the_documented_shape() {
        let (corpus, info) = synthetic_corpus(1);
        assert_eq!(corpus.len(), 200);
        let stats = corpus.stats();
        assert_eq!(stats.distinct_tags, 10);
        assert_eq!(stats.avg_tags, 1.0);
        assert_eq!(info.neighbor_dependent.len(), 30);
        assert_eq!(info.carriers.len(), 120);
        let ids: HashSet<&str> = corpus.posts.iter().map(|p| p.id.as_str()).collect();
        assert_eq!(ids.len(), 200);
    }

    #[test]
    fn roles_match_marker_presence() {
        let (corpus, info) = synthetic_corpus(5);
        let mut in_desc = 0;
        let mut in_code = 0;
        for id in &info.carriers {
            let p = corpus.get(id).unwrap();
            match (p.description.contains("mlat"), p.code.contains("mlat")) {
                (true, false) => in_desc += 1,
                (false, true) => in_code += 1,
                other => panic!("{id}: marker in exactly one section, got {other:?}"),
            }
        }
        // Half the groups resolve through the description, half through code.
        assert_eq!(in_desc, 48);
        assert_eq!(in_code, 72);
        for id in &info.neighbor_dependent {
            let p = corpus.get(id).unwrap();
            assert!(!p.code.contains("mlat"), "{id}");
            assert!(!p.description.contains("mlat"), "{id}");
            assert!(p.tags[0].starts_with("tag-lat-"), "{id}");
        }
    }

    #[test]
    fn signature_words_are_individually_balanced_across_latent_tags() {
        // Every filler word must appear in exactly one group per latent tag,
        // hence in exactly five posts per tag: a per-word count carries no
        // tag information.
        let (corpus, _) = synthetic_corpus(9);
        let fillers: HashSet<&str> = FILLERS.iter().copied().collect();
        let mut counts: HashMap<(String, String), usize> = HashMap::new();
        for p in &corpus.posts {
            if !p.tags[0].starts_with("tag-lat-") {
                continue;
            }
            let words: HashSet<&str> = p
                .description
                .split_whitespace()
                .filter(|w| fillers.contains(w))
                .collect();
            assert_eq!(words.len(), SIG_WORDS, "{}", p.id);
            for w in words {
                *counts.entry((w.to_string(), p.tags[0].clone())).or_default() += 1;
            }
        }
        assert_eq!(counts.len(), FILLERS.len() * LAT_TAGS);
        assert!(counts.values().all(|&c| c == MEMBERS));
    }

    #[test]
    fn group_members_share_their_word_bags_exactly() {
        // The retrieval geometry rests on this: within a group, the word
        // bags agree everywhere except the single marker slot, so pooled
        // means can only differ through that one swapped word.
        let (corpus, _) = synthetic_corpus(4);
        let mut groups: HashMap<&str, Vec<&Post>> = HashMap::new();
        for p in &corpus.posts {
            if p.id.starts_with('n') {
                groups.entry(p.id.split('-').next().unwrap()).or_default().push(p);
            }
        }
        assert_eq!(groups.len(), LAT_TAGS * GROUPS_PER_TAG);
        // Collapse the marker slot: markers and the neutral word it
        // replaces are interchangeable for the bag comparison.
        let bag = |s: &str| {
            let mut v: Vec<&str> = s
                .split_whitespace()
                .map(|w| {
                    if w.starts_with("mlat") || w == "info" || w == "setup" {
                        "_"
                    } else {
                        w
                    }
                })
                .collect();
            v.sort_unstable();
            v.join(" ")
        };
        for members in groups.values() {
            assert_eq!(members.len(), MEMBERS);
            let first = members[0];
            for p in members {
                assert_eq!(p.title, first.title, "{}", p.id);
                assert_eq!(bag(&p.description), bag(&first.description), "{}", p.id);
                assert_eq!(bag(&p.code), bag(&first.code), "{}", p.id);
                assert_eq!(p.title.split_whitespace().count(), 4, "{}", p.id);
                assert_eq!(p.description.split_whitespace().count(), 12, "{}", p.id);
                assert_eq!(p.code.split_whitespace().count(), 4, "{}", p.id);
            }
        }
    }

    #[test]
    fn generation_is_seed_deterministic() {
        let (a, _) = synthetic_corpus(7);
        let (b, _) = synthetic_corpus(7);
        let (c, _) = synthetic_corpus(8);
        let ser = |corpus: &Corpus| {
            corpus
                .posts
                .iter()
                .map(|p| serde_json::to_string(p).unwrap())
                .collect::<Vec<_>>()
                .join("\n")
        };
        assert_eq!(ser(&a), ser(&b));
        assert_ne!(ser(&a), ser(&c));
    }

    #[test]
    fn planted_tokens_survive_vocabulary_pruning() {
        let (corpus, _) = synthetic_corpus(3);
        let (tokens, tags) = build_vocab(&corpus.posts, 2).unwrap();
        for t in [
            "mdesc0", "mdesc1", "mcode0", "mcode1", "mlat0", "mlat5", "info", "setup",
            "snippet", "error", "token",
        ] {
            assert!(tokens.contains(t), "{t} pruned");
        }
        assert_eq!(tags.len(), 10);
    }
}
