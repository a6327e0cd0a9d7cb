use std::collections::BTreeMap;

use super::model::{BlockParams, Head, ModelSpec, TaskId};
use super::tensor::Tensor;

/// Addresses a single parameter tensor of a (possibly expanded) model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ParamId {
    TokenEmb,
    PosEmb,
    /// Base block index (0-based) and tensor slot in [`BlockParams::tensors`].
    Block(usize, usize),
    /// Expansion position (1-based) and tensor slot.
    Expanded(usize, usize),
    HeadWeight(TaskId),
    HeadBias(TaskId),
}

/// Gradients shaped like the parameters they were computed from. Groups
/// that were not requested stay zero (base blocks, embeddings) or absent
/// (expanded blocks, heads).
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub token_emb: Tensor,
    pub pos_emb: Tensor,
    pub blocks: Vec<BlockParams>,
    pub expanded: BTreeMap<usize, BlockParams>,
    pub heads: BTreeMap<TaskId, Head>,
}

impl GradientSet {
    pub fn zeros(spec: &ModelSpec) -> Self {
        Self {
            token_emb: Tensor::zeros(&[spec.vocab_size, spec.d_model]),
            pos_emb: Tensor::zeros(&[spec.max_seq_len, spec.d_model]),
            blocks: (0..spec.layers).map(|_| BlockParams::zeros(spec)).collect(),
            expanded: BTreeMap::new(),
            heads: BTreeMap::new(),
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        match id {
            ParamId::TokenEmb => Some(&self.token_emb),
            ParamId::PosEmb => Some(&self.pos_emb),
            ParamId::Block(l, slot) => self.blocks.get(l).map(|b| b.tensors()[slot]),
            ParamId::Expanded(pos, slot) => self.expanded.get(&pos).map(|b| b.tensors()[slot]),
            ParamId::HeadWeight(t) => self.heads.get(&t).map(|h| &h.weight),
            ParamId::HeadBias(t) => self.heads.get(&t).map(|h| &h.bias),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.token_emb.is_finite()
            && self.pos_emb.is_finite()
            && self.blocks.iter().chain(self.expanded.values()).all(|b| b.tensors().iter().all(|t| t.is_finite()))
            && self.heads.values().all(|h| h.weight.is_finite() && h.bias.is_finite())
    }
}

/// L2 norm of every base block's gradient (attention, feed-forward and
/// layer-norm tensors together), in block order.
pub fn block_grad_norms(grads: &GradientSet) -> Vec<f64> {
    grads.blocks.iter().map(|b| b.sum_sq().sqrt()).collect()
}
