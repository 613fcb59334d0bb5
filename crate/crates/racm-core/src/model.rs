//! End-to-end tag prediction pipeline: encode, retrieval-augment, run the
//! cross-modal stack, fuse, pool, and map to per-tag probabilities.
//!
//! Forward passes build on a [`Tape`] so training and inference share one
//! code path; inference just never calls backward.

use crate::corpus::TokenizedPost;
use crate::crossmodal::{blend, blend_names, cross_attend, project_qkv, Submodality};
use crate::crossmodal::{ATTN_WK, ATTN_WQ, ATTN_WV};
use crate::encoder::{encode_on_tape, POS_CODE, POS_DESC, POS_TITLE, TOKEN_TABLE};
use crate::error::{CoreError, Result};
use crate::fusion::{fuse, fusion_names, gate, GateMode};
use crate::matrix::{Mask, Matrix};
use crate::params::ParamStore;
use crate::retrieval::{knn, KnowledgeSource, KsEntry};
use crate::rng;
use crate::tape::{NodeId, Tape};
use serde::{Deserialize, Serialize};

pub const HEAD_W: &str = "head/w_out";
pub const HEAD_B: &str = "head/b_out";

/// Which part of the architecture a run disables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    /// Everything on.
    Full,
    /// No retrieval augmentation: sequences stay at their base lengths.
    NoRa,
    /// No cross-modal stack: modalities are summed after length alignment.
    NoCmf,
}

impl std::str::FromStr for Ablation {
    type Err = CoreError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Ablation::Full),
            "no-ra" | "no_ra" => Ok(Ablation::NoRa),
            "no-cmf" | "no_cmf" => Ok(Ablation::NoCmf),
            other => Err(CoreError::InvalidConfig(format!("unknown ablation {other:?}"))),
        }
    }
}

impl std::fmt::Display for Ablation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Ablation::Full => "full",
            Ablation::NoRa => "no-ra",
            Ablation::NoCmf => "no-cmf",
        })
    }
}

/// Sequence-to-vector reduction before the classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pooling {
    Mean,
    Max,
}

impl std::str::FromStr for Pooling {
    type Err = CoreError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Pooling::Mean),
            "max" => Ok(Pooling::Max),
            other => Err(CoreError::InvalidConfig(format!("unknown pooling {other:?}"))),
        }
    }
}

/// Architecture description; fixed for the lifetime of a parameter set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Feature width.
    pub d: usize,
    pub n_title: usize,
    pub n_description: usize,
    pub n_code: usize,
    /// Token table rows (pad and unk included).
    pub vocab_size: usize,
    /// Number of candidate tags l.
    pub tag_count: usize,
    /// Neighbors per query.
    pub k: usize,
    pub heads: usize,
    pub gate_mode: GateMode,
    pub pooling: Pooling,
    pub ablation: Ablation,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.n_title == 0 || self.n_description == 0 || self.n_code == 0 {
            return Err(CoreError::InvalidConfig("widths and lengths must be positive".into()));
        }
        if self.heads == 0 || self.d % self.heads != 0 {
            return Err(CoreError::InvalidConfig(format!(
                "width {} does not divide into {} heads",
                self.d, self.heads
            )));
        }
        if self.vocab_size < 2 {
            return Err(CoreError::InvalidConfig(
                "vocabulary needs at least the pad and unk entries".into(),
            ));
        }
        if self.tag_count == 0 {
            return Err(CoreError::InvalidConfig("tag vocabulary is empty".into()));
        }
        Ok(())
    }

    /// Neighbors actually retrieved: zero under the no-RA ablation.
    pub fn effective_k(&self) -> usize {
        match self.ablation {
            Ablation::NoRa => 0,
            _ => self.k,
        }
    }

    /// Augmented length of a base-n modality.
    pub fn augmented_len(&self, n: usize) -> usize {
        (self.effective_k() + 1) * n
    }

    pub fn tokenizer(&self) -> crate::corpus::TokenizerConfig {
        crate::corpus::TokenizerConfig {
            n_title: self.n_title,
            n_description: self.n_description,
            n_code: self.n_code,
        }
    }
}

/// Every (name, shape, zero-initialized) parameter of a configuration, in
/// the order they are created.
pub(crate) fn param_layout(cfg: &ModelConfig) -> Vec<(String, usize, usize, bool)> {
    let d = cfg.d;
    let l_b = cfg.augmented_len(cfg.n_description);
    let mut out: Vec<(String, usize, usize, bool)> = vec![
        (TOKEN_TABLE.into(), cfg.vocab_size, d, false),
        (POS_TITLE.into(), cfg.n_title, d, false),
        (POS_DESC.into(), cfg.n_description, d, false),
        (POS_CODE.into(), cfg.n_code, d, false),
        (ATTN_WQ.into(), d, d, false),
        (ATTN_WK.into(), d, d, false),
        (ATTN_WV.into(), d, d, false),
    ];
    for m in [Submodality::Title, Submodality::Code] {
        let b = blend_names(m);
        out.push((b.u_k, d, d, false));
        out.push((b.u_v, d, d, false));
        out.push((b.w_k1, d, 1, false));
        out.push((b.w_v1, d, 1, false));
        out.push((b.w_k2, d, 1, false));
        out.push((b.w_v2, d, 1, false));
        let f = fusion_names(m);
        out.push((f.w, 2 * d, d, false));
        out.push((f.b, l_b, d, true));
    }
    out.push((HEAD_W.into(), d, cfg.tag_count, false));
    out.push((HEAD_B.into(), 1, cfg.tag_count, true));
    out
}

/// Fresh parameters: weights uniform in (-0.1, 0.1) from a per-name
/// substream of `seed`, biases zero. Values depend only on (seed, name,
/// shape), never on creation order.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> Result<ParamStore> {
    cfg.validate()?;
    let mut store = ParamStore::default();
    for (name, rows, cols, zero) in param_layout(cfg) {
        let value = if zero {
            Matrix::zeros(rows, cols)
        } else {
            let mut r = rng::stream(seed, &format!("init/{name}"));
            Matrix::uniform(rows, cols, 0.1, &mut r)
        };
        store.insert(&name, value)?;
    }
    Ok(store)
}

/// Neighbor payloads chosen for one query post, ascending by distance.
#[derive(Debug, Clone, Default)]
pub struct NeighborSet {
    pub entries: Vec<KsEntry>,
    /// (id, distance) per entry.
    pub provenance: Vec<(String, f64)>,
}

/// Pick the query's neighbors under the current parameters. Retrieval
/// never differentiates, so this runs off-tape; the query's own id is
/// excluded. Returns an empty set when the config retrieves nothing.
pub fn select_neighbors(
    post: &TokenizedPost,
    theta: &ParamStore,
    ks: Option<&KnowledgeSource>,
    cfg: &ModelConfig,
) -> Result<NeighborSet> {
    let k = cfg.effective_k();
    if k == 0 {
        return Ok(NeighborSet::default());
    }
    let Some(ks) = ks else {
        return Err(CoreError::MissingIndex);
    };
    let enc = crate::encoder::encode(post, theta)?;
    let q = crate::encoder::pool(&enc)?;
    let hits = knn(ks, &q, k, Some(&post.id))?;
    let entries = hits
        .iter()
        .map(|(id, _)| ks.get(id).expect("knn returns stored ids").clone())
        .collect();
    Ok(NeighborSet { entries, provenance: hits })
}

/// Handles into a finished forward pass.
pub struct Forward {
    /// 1 x l probability row.
    pub probs: NodeId,
    /// 1 x d pooled global representation.
    pub pooled: NodeId,
    pub provenance: Vec<(String, f64)>,
}

struct AugmentedNode {
    node: NodeId,
    mask: Mask,
}

/// Self block (on tape) followed by each neighbor's stored payload (a
/// constant: retrieval gradients stop at the snapshot).
fn augment_on_tape(
    tape: &mut Tape,
    self_node: NodeId,
    self_mask: &Mask,
    neighbors: &[KsEntry],
    pick: impl Fn(&KsEntry) -> (&Matrix, &Mask),
) -> Result<AugmentedNode> {
    let mut parts = vec![self_node];
    let mut masks: Vec<&Mask> = vec![self_mask];
    let mut neighbor_masks: Vec<&Mask> = Vec::new();
    for e in neighbors {
        let (m, mask) = pick(e);
        parts.push(tape.constant(m.clone()));
        neighbor_masks.push(mask);
    }
    masks.extend(neighbor_masks);
    Ok(AugmentedNode { node: tape.concat_rows(&parts)?, mask: Mask::concat(&masks) })
}

/// Zero-pad or truncate a sequence to `target` rows; padded rows are dead.
fn align_rows(tape: &mut Tape, a: AugmentedNode, target: usize, d: usize) -> Result<AugmentedNode> {
    let rows = tape.value(a.node).rows();
    if rows == target {
        return Ok(a);
    }
    if rows > target {
        let node = tape.slice_rows(a.node, 0, target);
        return Ok(AugmentedNode { node, mask: a.mask.slice_rows(0, target) });
    }
    let pad = tape.constant(Matrix::zeros(target - rows, d));
    let node = tape.concat_rows(&[a.node, pad])?;
    let pad_mask = Mask::rows_from(vec![false; target - rows]);
    Ok(AugmentedNode { node, mask: Mask::concat(&[&a.mask, &pad_mask]) })
}

/// Build the whole differentiable pipeline for one post on `tape`, using a
/// fixed neighbor set (see [`select_neighbors`]).
pub fn forward_on_tape(
    tape: &mut Tape,
    theta: &ParamStore,
    post: &TokenizedPost,
    neighbors: &NeighborSet,
    cfg: &ModelConfig,
) -> Result<Forward> {
    let k = cfg.effective_k();
    if neighbors.entries.len() != k {
        return Err(CoreError::InvalidConfig(format!(
            "forward wants {k} neighbors, got {}",
            neighbors.entries.len()
        )));
    }
    for e in &neighbors.entries {
        let p = &e.payload;
        if p.d() != cfg.d
            || p.title.rows() != cfg.n_title
            || p.description.rows() != cfg.n_description
            || p.code.rows() != cfg.n_code
        {
            return Err(CoreError::ShapeMismatch {
                op: "forward",
                detail: format!("neighbor {:?} payload does not fit the model shape", e.id()),
            });
        }
    }
    let enc = encode_on_tape(tape, theta, post)?;
    let ns = &neighbors.entries;
    let title = augment_on_tape(tape, enc.title, &enc.title_mask, ns, |e| {
        (&e.payload.title, &e.payload.title_mask)
    })?;
    let desc = augment_on_tape(tape, enc.description, &enc.description_mask, ns, |e| {
        (&e.payload.description, &e.payload.description_mask)
    })?;
    let code = augment_on_tape(tape, enc.code, &enc.code_mask, ns, |e| {
        (&e.payload.code, &e.payload.code_mask)
    })?;

    let (h, pool_mask) = match cfg.ablation {
        Ablation::NoCmf => {
            // modality sum at the shortest common length
            let l_min = [&title, &desc, &code]
                .iter()
                .map(|a| tape.value(a.node).rows())
                .min()
                .unwrap();
            let t = align_rows(tape, title, l_min, cfg.d)?;
            let b = align_rows(tape, desc, l_min, cfg.d)?;
            let c = align_rows(tape, code, l_min, cfg.d)?;
            let tb = tape.add(b.node, t.node)?;
            let h = tape.add(tb, c.node)?;
            (h, b.mask.or(&t.mask).or(&c.mask))
        }
        Ablation::Full | Ablation::NoRa => {
            let l_b = tape.value(desc.node).rows();
            let title = align_rows(tape, title, l_b, cfg.d)?;
            let code = align_rows(tape, code, l_b, cfg.d)?;
            let (q, k_n, v_n) = project_qkv(tape, theta, desc.node)?;
            let key_mask_t = desc.mask.or(&title.mask);
            let key_mask_c = desc.mask.or(&code.mask);
            let bt = blend(tape, theta, Submodality::Title, k_n, v_n, title.node, None)?;
            let at = cross_attend(tape, q, bt.k_m, bt.v_m, &key_mask_t, cfg.heads)?;
            let bc = blend(tape, theta, Submodality::Code, k_n, v_n, code.node, None)?;
            let ac = cross_attend(tape, q, bc.k_m, bc.v_m, &key_mask_c, cfg.heads)?;
            let g_t =
                gate(tape, theta, Submodality::Title, desc.node, at.h_m_prime, cfg.gate_mode)?;
            let g_c = gate(tape, theta, Submodality::Code, desc.node, ac.h_m_prime, cfg.gate_mode)?;
            let h = fuse(tape, desc.node, at.h_m_prime, ac.h_m_prime, g_t, g_c)?;
            (h, desc.mask)
        }
    };

    let pooled = match cfg.pooling {
        Pooling::Mean => tape.masked_mean_rows(h, &pool_mask)?,
        Pooling::Max => tape.masked_max_rows(h, &pool_mask)?,
    };
    let w_out = tape.param(theta, HEAD_W);
    let b_out = tape.param(theta, HEAD_B);
    let logits_raw = tape.matmul(pooled, w_out)?;
    let logits = tape.add(logits_raw, b_out)?;
    let probs = tape.sigmoid(logits);
    Ok(Forward { probs, pooled, provenance: neighbors.provenance.clone() })
}

/// Tag probabilities plus the full ranking (descending probability, ties
/// by ascending tag index).
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub post_id: String,
    pub probs: Vec<f64>,
    pub ranking: Vec<usize>,
    pub provenance: Vec<(String, f64)>,
}

/// Rank all tag indices by probability, descending; equal probabilities
/// keep ascending index order.
pub fn rank_tags(probs: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..probs.len()).collect();
    idx.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then_with(|| a.cmp(&b)));
    idx
}

/// Full inference for one post.
pub fn predict(
    post: &TokenizedPost,
    theta: &ParamStore,
    ks: Option<&KnowledgeSource>,
    cfg: &ModelConfig,
) -> Result<Prediction> {
    let neighbors = select_neighbors(post, theta, ks, cfg)?;
    let mut tape = Tape::new();
    let fwd = forward_on_tape(&mut tape, theta, post, &neighbors, cfg)?;
    let probs = tape.value(fwd.probs).row(0).to_vec();
    let ranking = rank_tags(&probs);
    Ok(Prediction { post_id: post.id.clone(), probs, ranking, provenance: fwd.provenance })
}

/// Top-k tag indices of a prediction; all of them when k exceeds l.
pub fn recommend(pred: &Prediction, k: usize) -> Vec<usize> {
    pred.ranking[..k.min(pred.ranking.len())].to_vec()
}

/// 1 x l one-hot row over the tag vocabulary.
pub fn target_row(tag_indices: &[usize], l: usize) -> Matrix {
    let mut m = Matrix::zeros(1, l);
    for &t in tag_indices {
        m.set(0, t, 1.0);
    }
    m
}

/// Mean bitwise binary cross entropy over a batch of probability rows:
/// -(1/M) sum_i sum_j [y log p + (1-y) log(1-p)], probabilities clamped
/// to [1e-7, 1-1e-7].
pub fn bce_loss_on_tape(tape: &mut Tape, probs: &[NodeId], targets: &Matrix) -> Result<NodeId> {
    if probs.is_empty() {
        return Err(CoreError::InvalidConfig("empty batch".into()));
    }
    let stacked = tape.concat_rows(probs)?;
    let (m_rows, l) = tape.value(stacked).shape();
    if targets.shape() != (m_rows, l) {
        return Err(CoreError::ShapeMismatch {
            op: "bce_loss",
            detail: format!("{m_rows} prob rows vs targets {:?}", targets.shape()),
        });
    }
    let p = tape.clamp(stacked, 1e-7, 1.0 - 1e-7);
    let ones = tape.constant(Matrix::from_fn(m_rows, l, |_, _| 1.0));
    let q = tape.sub(ones, p)?;
    let ln_p = tape.ln(p);
    let ln_q = tape.ln(q);
    let y = tape.constant(targets.clone());
    let y_neg = tape.constant(targets.map(|v| 1.0 - v));
    let pos = tape.hadamard(y, ln_p)?;
    let neg = tape.hadamard(y_neg, ln_q)?;
    let both = tape.add(pos, neg)?;
    let total = tape.sum_all(both);
    Ok(tape.scale(total, -1.0 / m_rows as f64))
}

/// Plain-value BCE for validation reporting; same formula as the tape op.
pub fn bce_scalar(prob_rows: &[Vec<f64>], targets: &Matrix) -> Result<f64> {
    if prob_rows.len() != targets.rows()
        || prob_rows.iter().any(|r| r.len() != targets.cols())
    {
        return Err(CoreError::ShapeMismatch {
            op: "bce_scalar",
            detail: format!("{} prob rows vs targets {:?}", prob_rows.len(), targets.shape()),
        });
    }
    let mut acc = 0.0;
    for (i, row) in prob_rows.iter().enumerate() {
        for (j, &p) in row.iter().enumerate() {
            let p = p.clamp(1e-7, 1.0 - 1e-7);
            let y = targets.get(i, j);
            acc += y * p.ln() + (1.0 - y) * (1.0 - p).ln();
        }
    }
    Ok(-acc / prob_rows.len() as f64)
}
