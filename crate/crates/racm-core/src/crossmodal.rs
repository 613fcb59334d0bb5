//! Context-aware cross-modal attention. The description sequence supplies
//! queries, keys and values; per submodality (title, code) a learned row
//! gate lambda decides how much of the key/value space is replaced by the
//! submodality's projected representation before attention runs.
//!
//! All shapes are L x d where L is the retrieval-augmented length.

use crate::error::{CoreError, Result};
use crate::matrix::{Mask, Matrix};
use crate::params::ParamStore;
use crate::tape::{NodeId, Tape};

pub const ATTN_WQ: &str = "attn/w_q";
pub const ATTN_WK: &str = "attn/w_k";
pub const ATTN_WV: &str = "attn/w_v";

/// The two modalities that attend into the description.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Submodality {
    Title,
    Code,
}

impl Submodality {
    pub fn key(self) -> &'static str {
        match self {
            Submodality::Title => "title",
            Submodality::Code => "code",
        }
    }
}

/// Parameter names of one submodality's blend gate.
pub struct BlendNames {
    pub u_k: String,
    pub u_v: String,
    pub w_k1: String,
    pub w_v1: String,
    pub w_k2: String,
    pub w_v2: String,
}

pub fn blend_names(m: Submodality) -> BlendNames {
    let k = m.key();
    BlendNames {
        u_k: format!("blend/{k}/u_k"),
        u_v: format!("blend/{k}/u_v"),
        w_k1: format!("blend/{k}/w_k1"),
        w_v1: format!("blend/{k}/w_v1"),
        w_k2: format!("blend/{k}/w_k2"),
        w_v2: format!("blend/{k}/w_v2"),
    }
}

/// Q = H_b W_Q, K = H_b W_K, V = H_b W_V.
pub fn project_qkv(
    tape: &mut Tape,
    store: &ParamStore,
    h_b: NodeId,
) -> Result<(NodeId, NodeId, NodeId)> {
    let w_q = tape.param(store, ATTN_WQ);
    let w_k = tape.param(store, ATTN_WK);
    let w_v = tape.param(store, ATTN_WV);
    Ok((tape.matmul(h_b, w_q)?, tape.matmul(h_b, w_k)?, tape.matmul(h_b, w_v)?))
}

/// Blended keys/values plus the gate activations that produced them.
pub struct BlendOutput {
    pub k_m: NodeId,
    pub v_m: NodeId,
    /// L x 1 row gates, strictly inside (0,1) unless overridden.
    pub lambda_k: NodeId,
    pub lambda_v: NodeId,
}

/// lambda_k = sigmoid(K w_k1 + (H_m U_k) w_k2), broadcast across columns:
/// K_m = (1-lambda_k) (.) K + lambda_k (.) (H_m U_k); values analogous.
///
/// `lambda_override` pins both gates to a constant, bypassing the sigmoid
/// path; 0.0 reduces the output to plain (K, V).
pub fn blend(
    tape: &mut Tape,
    store: &ParamStore,
    modality: Submodality,
    k: NodeId,
    v: NodeId,
    h_m: NodeId,
    lambda_override: Option<f64>,
) -> Result<BlendOutput> {
    let names = blend_names(modality);
    let rows = tape.value(k).rows();
    if tape.value(v).shape() != tape.value(k).shape()
        || tape.value(h_m).shape() != tape.value(k).shape()
    {
        return Err(CoreError::ShapeMismatch {
            op: "blend",
            detail: format!(
                "K {:?}, V {:?}, H_m {:?} must agree",
                tape.value(k).shape(),
                tape.value(v).shape(),
                tape.value(h_m).shape()
            ),
        });
    }
    let u_k = tape.param(store, &names.u_k);
    let u_v = tape.param(store, &names.u_v);
    let proj_k = tape.matmul(h_m, u_k)?;
    let proj_v = tape.matmul(h_m, u_v)?;
    let (lambda_k, lambda_v) = match lambda_override {
        Some(c) => {
            let pinned = Matrix::from_fn(rows, 1, |_, _| c);
            (tape.constant(pinned.clone()), tape.constant(pinned))
        }
        None => {
            let w_k1 = tape.param(store, &names.w_k1);
            let w_k2 = tape.param(store, &names.w_k2);
            let w_v1 = tape.param(store, &names.w_v1);
            let w_v2 = tape.param(store, &names.w_v2);
            let from_k = tape.matmul(k, w_k1)?;
            let from_mk = tape.matmul(proj_k, w_k2)?;
            let pre_k = tape.add(from_k, from_mk)?;
            let from_v = tape.matmul(v, w_v1)?;
            let from_mv = tape.matmul(proj_v, w_v2)?;
            let pre_v = tape.add(from_v, from_mv)?;
            (tape.sigmoid(pre_k), tape.sigmoid(pre_v))
        }
    };
    let ones = tape.constant(Matrix::from_fn(rows, 1, |_, _| 1.0));
    let keep_k = tape.sub(ones, lambda_k)?;
    let keep_v = tape.sub(ones, lambda_v)?;
    let kept_k = tape.scale_rows(k, keep_k)?;
    let mixed_k = tape.scale_rows(proj_k, lambda_k)?;
    let k_m = tape.add(kept_k, mixed_k)?;
    let kept_v = tape.scale_rows(v, keep_v)?;
    let mixed_v = tape.scale_rows(proj_v, lambda_v)?;
    let v_m = tape.add(kept_v, mixed_v)?;
    Ok(BlendOutput { k_m, v_m, lambda_k, lambda_v })
}

/// Attention output plus per-head weight matrices for inspection.
pub struct AttendOutput {
    pub h_m_prime: NodeId,
    pub weights: Vec<NodeId>,
}

/// Scaled dot-product attention over blended keys/values. `key_mask` flags
/// live key rows (L x 1); masked keys get exactly zero weight. With
/// `heads` > 1 the feature axis is split evenly and heads are re-joined
/// by column concatenation.
pub fn cross_attend(
    tape: &mut Tape,
    q: NodeId,
    k_m: NodeId,
    v_m: NodeId,
    key_mask: &Mask,
    heads: usize,
) -> Result<AttendOutput> {
    let d = tape.value(q).cols();
    let l_q = tape.value(q).rows();
    if heads == 0 || d % heads != 0 {
        return Err(CoreError::InvalidConfig(format!(
            "attention width {d} is not divisible into {heads} heads"
        )));
    }
    if tape.value(k_m).cols() != d || tape.value(v_m).cols() != d {
        return Err(CoreError::ShapeMismatch {
            op: "cross_attend",
            detail: format!(
                "Q width {d} vs K {} and V {}",
                tape.value(k_m).cols(),
                tape.value(v_m).cols()
            ),
        });
    }
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mask = Mask::key_mask(key_mask, l_q);
    let mut weights = Vec::with_capacity(heads);
    let mut joined: Option<NodeId> = None;
    for h in 0..heads {
        let qh = tape.slice_cols(q, h * dh, dh);
        let kh = tape.slice_cols(k_m, h * dh, dh);
        let vh = tape.slice_cols(v_m, h * dh, dh);
        let scores = tape.matmul_nt(qh, kh)?;
        let scaled = tape.scale(scores, scale);
        let w = tape.row_softmax(scaled, &mask)?;
        let out = tape.matmul(w, vh)?;
        weights.push(w);
        joined = Some(match joined {
            None => out,
            Some(prev) => tape.concat_cols(prev, out)?,
        });
    }
    Ok(AttendOutput { h_m_prime: joined.unwrap(), weights })
}
