//! Attention mask construction. Causal is the usual lower triangle; the
//! position-aware variant lets every anchor row see all history plus
//! itself and nothing else, which keeps anchors from contaminating each
//! other during multi-patch optimization.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionMaskSpec {
    Causal { len: usize },
    PositionAware { n_history: usize, n_anchors: usize },
}

impl AttentionMaskSpec {
    pub fn len(&self) -> usize {
        match self {
            AttentionMaskSpec::Causal { len } => *len,
            AttentionMaskSpec::PositionAware { n_history, n_anchors } => n_history + n_anchors,
        }
    }
}

/// Additive logit penalty for disallowed pairs. Large enough that exp
/// underflows to exactly zero after the softmax shift.
pub const MASK_BIAS: f64 = -1e30;

#[derive(Debug, Clone)]
pub struct AttentionMask {
    pub len: usize,
    /// Row-major `len x len`; `allowed[i * len + j]` means row i may attend to j.
    pub allowed: Vec<bool>,
    /// 0.0 where allowed, [`MASK_BIAS`] where not.
    pub bias: Vec<f64>,
}

impl AttentionMask {
    /// Fully bidirectional mask, used by masked-patch pretraining.
    pub fn all_allowed(len: usize) -> Self {
        AttentionMask {
            len,
            allowed: vec![true; len * len],
            bias: vec![0.0; len * len],
        }
    }
}

pub fn build_mask(spec: AttentionMaskSpec) -> Result<AttentionMask> {
    let len = spec.len();
    if len == 0 {
        return Err(Error::shape("attention mask must have positive size"));
    }
    let mut allowed = vec![false; len * len];
    match spec {
        AttentionMaskSpec::Causal { .. } => {
            for i in 0..len {
                for j in 0..=i {
                    allowed[i * len + j] = true;
                }
            }
        }
        AttentionMaskSpec::PositionAware { n_history, .. } => {
            for i in 0..len {
                if i < n_history {
                    for j in 0..=i {
                        allowed[i * len + j] = true;
                    }
                } else {
                    for j in 0..n_history {
                        allowed[i * len + j] = true;
                    }
                    allowed[i * len + i] = true;
                }
            }
        }
    }
    let bias = allowed
        .iter()
        .map(|&a| if a { 0.0 } else { MASK_BIAS })
        .collect();
    Ok(AttentionMask { len, allowed, bias })
}
