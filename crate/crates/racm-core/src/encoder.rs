//! Token and positional embedding lookup per modality, plus the pooled
//! query vector used for retrieval.
//!
//! Row i of a modality is token_table[id_i] + pos_table[i], zeroed where
//! the mask is dead, so padding never leaks into attention or pooling.

use crate::corpus::{ModalityTokens, TokenizedPost};
use crate::error::{CoreError, Result};
use crate::matrix::{Mask, Matrix};
use crate::params::ParamStore;
use crate::tape::{NodeId, Tape};

pub const TOKEN_TABLE: &str = "embed/token";
pub const POS_TITLE: &str = "embed/pos/title";
pub const POS_DESC: &str = "embed/pos/desc";
pub const POS_CODE: &str = "embed/pos/code";

/// Per-modality representation matrices for one post.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalityEncoding {
    pub post_id: String,
    pub title: Matrix,
    pub title_mask: Mask,
    pub description: Matrix,
    pub description_mask: Mask,
    pub code: Matrix,
    pub code_mask: Mask,
}

impl ModalityEncoding {
    pub fn d(&self) -> usize {
        self.title.cols()
    }

    pub fn live_rows(&self) -> usize {
        self.title_mask.count_live()
            + self.description_mask.count_live()
            + self.code_mask.count_live()
    }
}

/// Width-d summary of a whole post, the retrieval query and key.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledVector {
    /// 1 x d row vector.
    pub v: Matrix,
    pub post_id: String,
}

impl PooledVector {
    pub fn d(&self) -> usize {
        self.v.cols()
    }
}

fn embed_modality(tokens: &ModalityTokens, table: &Matrix, pos: &Matrix) -> Result<(Matrix, Mask)> {
    debug_assert_eq!(pos.rows(), tokens.len(), "positional table length");
    debug_assert_eq!(pos.cols(), table.cols(), "positional table width");
    let d = table.cols();
    let mut out = Matrix::zeros(tokens.len(), d);
    for (i, (&id, &live)) in tokens.ids.iter().zip(&tokens.mask).enumerate() {
        if !live {
            continue;
        }
        if id as usize >= table.rows() {
            return Err(CoreError::TokenOutOfRange { id, vocab: table.rows() });
        }
        let row = out.row_mut(i);
        for j in 0..d {
            row[j] = table.get(id as usize, j) + pos.get(i, j);
        }
    }
    Ok((out, Mask::rows_from(tokens.mask.clone())))
}

/// Look up all three modalities of a post under the current parameters.
pub fn encode(post: &TokenizedPost, theta: &ParamStore) -> Result<ModalityEncoding> {
    let table = theta.value(TOKEN_TABLE);
    let (title, title_mask) = embed_modality(&post.title, table, theta.value(POS_TITLE))?;
    let (description, description_mask) =
        embed_modality(&post.description, table, theta.value(POS_DESC))?;
    let (code, code_mask) = embed_modality(&post.code, table, theta.value(POS_CODE))?;
    Ok(ModalityEncoding {
        post_id: post.id.clone(),
        title,
        title_mask,
        description,
        description_mask,
        code,
        code_mask,
    })
}

/// Mean of every unmasked row across the three modalities.
pub fn pool(enc: &ModalityEncoding) -> Result<PooledVector> {
    let d = enc.d();
    let mut sum = vec![0.0; d];
    let mut count = 0usize;
    for (m, mask) in [
        (&enc.title, &enc.title_mask),
        (&enc.description, &enc.description_mask),
        (&enc.code, &enc.code_mask),
    ] {
        for i in 0..m.rows() {
            if !mask.get(i, 0) {
                continue;
            }
            count += 1;
            let row = m.row(i);
            for j in 0..d {
                sum[j] += row[j];
            }
        }
    }
    if count == 0 {
        return Err(CoreError::EmptyPost { id: enc.post_id.clone() });
    }
    let inv = 1.0 / count as f64;
    for s in &mut sum {
        *s *= inv;
    }
    Ok(PooledVector { v: Matrix::from_vec(1, d, sum), post_id: enc.post_id.clone() })
}

/// Tape node handles for one encoded post; masks stay plain data.
#[derive(Debug, Clone)]
pub struct TapedEncoding {
    pub post_id: String,
    pub title: NodeId,
    pub title_mask: Mask,
    pub description: NodeId,
    pub description_mask: Mask,
    pub code: NodeId,
    pub code_mask: Mask,
}

fn embed_modality_on_tape(
    tape: &mut Tape,
    store: &ParamStore,
    tokens: &ModalityTokens,
    pos_name: &str,
) -> Result<(NodeId, Mask)> {
    let table = tape.param(store, TOKEN_TABLE);
    let mask = Mask::rows_from(tokens.mask.clone());
    let looked_up = tape.embed(table, &tokens.ids, &mask)?;
    let pos = tape.param(store, pos_name);
    // Keep pad rows at zero: the positional table is gated by the same
    // 0/1 pattern before the add, which also confines its gradient to
    // live positions.
    let d = tape.value(pos).cols();
    let gate = Matrix::from_fn(tokens.len(), d, |i, _| if tokens.mask[i] { 1.0 } else { 0.0 });
    let gate = tape.constant(gate);
    let pos_live = tape.hadamard(pos, gate)?;
    let out = tape.add(looked_up, pos_live)?;
    Ok((out, mask))
}

/// Differentiable twin of [`encode`]: identical values, with gradients
/// flowing into the token and positional tables.
pub fn encode_on_tape(
    tape: &mut Tape,
    store: &ParamStore,
    post: &TokenizedPost,
) -> Result<TapedEncoding> {
    let (title, title_mask) = embed_modality_on_tape(tape, store, &post.title, POS_TITLE)?;
    let (description, description_mask) =
        embed_modality_on_tape(tape, store, &post.description, POS_DESC)?;
    let (code, code_mask) = embed_modality_on_tape(tape, store, &post.code, POS_CODE)?;
    Ok(TapedEncoding {
        post_id: post.id.clone(),
        title,
        title_mask,
        description,
        description_mask,
        code,
        code_mask,
    })
}
