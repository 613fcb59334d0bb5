//! Gated fusion of the attended submodalities into the global
//! representation H = H_b + G_t (.) H_t' + G_c (.) H_c'.

use crate::crossmodal::Submodality;
use crate::error::{CoreError, Result};
use crate::params::ParamStore;
use crate::tape::{NodeId, Tape};
use serde::{Deserialize, Serialize};

/// The printed gate equations are affine; `Sigmoid` bounds them to (0,1)
/// and is the default, `Linear` reproduces the equations verbatim.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GateMode {
    Sigmoid,
    Linear,
}

impl std::str::FromStr for GateMode {
    type Err = CoreError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sigmoid" => Ok(GateMode::Sigmoid),
            "linear" => Ok(GateMode::Linear),
            other => Err(CoreError::InvalidConfig(format!("unknown gate mode {other:?}"))),
        }
    }
}

/// Parameter names of one submodality's fusion gate.
pub struct FusionNames {
    /// 2d x d mixing weight.
    pub w: String,
    /// L x d bias, one entry per sequence position and feature.
    pub b: String,
}

pub fn fusion_names(m: Submodality) -> FusionNames {
    let k = m.key();
    FusionNames { w: format!("fusion/{k}/w"), b: format!("fusion/{k}/b") }
}

/// G_m = mode([H_b concat H_m'] W_m + B_m), an L x d gate matrix.
pub fn gate(
    tape: &mut Tape,
    store: &ParamStore,
    modality: Submodality,
    h_b: NodeId,
    h_m_prime: NodeId,
    mode: GateMode,
) -> Result<NodeId> {
    if tape.value(h_b).shape() != tape.value(h_m_prime).shape() {
        return Err(CoreError::ShapeMismatch {
            op: "gate",
            detail: format!(
                "H_b {:?} vs attended {:?}",
                tape.value(h_b).shape(),
                tape.value(h_m_prime).shape()
            ),
        });
    }
    let names = fusion_names(modality);
    let w = tape.param(store, &names.w);
    let b = tape.param(store, &names.b);
    let joined = tape.concat_cols(h_b, h_m_prime)?;
    let mixed = tape.matmul(joined, w)?;
    let affine = tape.add(mixed, b)?;
    Ok(match mode {
        GateMode::Sigmoid => tape.sigmoid(affine),
        GateMode::Linear => affine,
    })
}

/// H = H_b + G_t (.) H_t' + G_c (.) H_c', associated left to right.
pub fn fuse(
    tape: &mut Tape,
    h_b: NodeId,
    h_t_prime: NodeId,
    h_c_prime: NodeId,
    g_t: NodeId,
    g_c: NodeId,
) -> Result<NodeId> {
    let t_term = tape.hadamard(g_t, h_t_prime)?;
    let c_term = tape.hadamard(g_c, h_c_prime)?;
    let partial = tape.add(h_b, t_term)?;
    tape.add(partial, c_term)
}
