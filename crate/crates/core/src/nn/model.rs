use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{config_err, Result};
use crate::rng::{rng_from_seed, Rng};

/// Identifies a classification task and therefore a classifier head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TaskId(pub u32);

impl std::fmt::Display for TaskId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "task{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    /// Number of transformer blocks.
    pub layers: usize,
    pub d_model: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub num_classes: usize,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.layers < 1 {
            return Err(config_err!("model needs at least one block"));
        }
        if self.heads < 1 || self.d_model < self.heads {
            return Err(config_err!("need d_model >= heads >= 1 (d_model={}, heads={})", self.d_model, self.heads));
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return Err(config_err!("d_model {} not divisible by heads {}", self.d_model, self.heads));
        }
        if self.d_ff < 1 {
            return Err(config_err!("d_ff must be positive"));
        }
        if self.vocab_size < 2 {
            return Err(config_err!("vocab_size must be at least 2"));
        }
        if self.num_classes < 2 {
            return Err(config_err!("num_classes must be at least 2"));
        }
        if self.max_seq_len < 1 {
            return Err(config_err!("max_seq_len must be positive"));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    /// Exact parameter count of one [`BlockParams`].
    pub fn block_param_count(&self) -> usize {
        let d = self.d_model;
        let f = self.d_ff;
        4 * (d * d + d) + (d * f + f) + (f * d + d) + 2 * (d + d)
    }

    pub fn head_param_count(&self) -> usize {
        self.d_model * self.num_classes + self.num_classes
    }

    pub fn embedding_param_count(&self) -> usize {
        (self.vocab_size + self.max_seq_len) * self.d_model
    }
}

/// Parameters of one pre-layer-norm transformer block. Linear weights are
/// stored input-major (`in x out`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockParams {
    pub wq: Tensor,
    pub bq: Tensor,
    pub wk: Tensor,
    pub bk: Tensor,
    pub wv: Tensor,
    pub bv: Tensor,
    pub wo: Tensor,
    pub bo: Tensor,
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
    pub ln1_gain: Tensor,
    pub ln1_shift: Tensor,
    pub ln2_gain: Tensor,
    pub ln2_shift: Tensor,
}

pub const BLOCK_TENSOR_NAMES: [&str; 16] = [
    "wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo", "w1", "b1", "w2", "b2", "ln1_gain", "ln1_shift", "ln2_gain",
    "ln2_shift",
];

impl BlockParams {
    pub fn zeros(spec: &ModelSpec) -> Self {
        let d = spec.d_model;
        let f = spec.d_ff;
        Self {
            wq: Tensor::zeros(&[d, d]),
            bq: Tensor::zeros(&[d]),
            wk: Tensor::zeros(&[d, d]),
            bk: Tensor::zeros(&[d]),
            wv: Tensor::zeros(&[d, d]),
            bv: Tensor::zeros(&[d]),
            wo: Tensor::zeros(&[d, d]),
            bo: Tensor::zeros(&[d]),
            w1: Tensor::zeros(&[d, f]),
            b1: Tensor::zeros(&[f]),
            w2: Tensor::zeros(&[f, d]),
            b2: Tensor::zeros(&[d]),
            ln1_gain: Tensor::zeros(&[d]),
            ln1_shift: Tensor::zeros(&[d]),
            ln2_gain: Tensor::zeros(&[d]),
            ln2_shift: Tensor::zeros(&[d]),
        }
    }

    fn init(spec: &ModelSpec, rng: &mut Rng) -> Self {
        let d = spec.d_model;
        let f = spec.d_ff;
        let s = 1.0 / (d as f64).sqrt();
        let mut block = Self::zeros(spec);
        block.wq = Tensor::uniform(&[d, d], s, rng);
        block.wk = Tensor::uniform(&[d, d], s, rng);
        block.wv = Tensor::uniform(&[d, d], s, rng);
        block.wo = Tensor::uniform(&[d, d], s, rng);
        block.w1 = Tensor::uniform(&[d, f], s, rng);
        block.w2 = Tensor::uniform(&[f, d], s, rng);
        block.ln1_gain.fill(1.0);
        block.ln2_gain.fill(1.0);
        block
    }

    /// Tensors in the fixed order of [`BLOCK_TENSOR_NAMES`].
    pub fn tensors(&self) -> [&Tensor; 16] {
        [
            &self.wq, &self.bq, &self.wk, &self.bk, &self.wv, &self.bv, &self.wo, &self.bo, &self.w1, &self.b1,
            &self.w2, &self.b2, &self.ln1_gain, &self.ln1_shift, &self.ln2_gain, &self.ln2_shift,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 16] {
        [
            &mut self.wq,
            &mut self.bq,
            &mut self.wk,
            &mut self.bk,
            &mut self.wv,
            &mut self.bv,
            &mut self.wo,
            &mut self.bo,
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.ln1_gain,
            &mut self.ln1_shift,
            &mut self.ln2_gain,
            &mut self.ln2_shift,
        ]
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn sum_sq(&self) -> f64 {
        self.tensors().iter().map(|t| t.sum_sq()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for t in self.tensors() {
            out.extend_from_slice(t.data());
        }
        out
    }

    /// Overwrite every tensor from a flat slice produced by [`flatten`](Self::flatten).
    pub fn load_flat(&mut self, flat: &[f64]) {
        let mut offset = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        debug_assert_eq!(offset, flat.len());
    }

    pub fn bitwise_eq(&self, other: &BlockParams) -> bool {
        self.tensors().iter().zip(other.tensors()).all(|(a, b)| a.bitwise_eq(b))
    }
}

/// Linear classifier over the mean-pooled representation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Head {
    /// `d_model x num_classes`
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Head {
    pub fn zeros(spec: &ModelSpec) -> Self {
        Self { weight: Tensor::zeros(&[spec.d_model, spec.num_classes]), bias: Tensor::zeros(&[spec.num_classes]) }
    }

    pub fn init(spec: &ModelSpec, seed: u64) -> Self {
        let mut rng = rng_from_seed(seed);
        let s = 1.0 / (spec.d_model as f64).sqrt();
        Self {
            weight: Tensor::uniform(&[spec.d_model, spec.num_classes], s, &mut rng),
            bias: Tensor::zeros(&[spec.num_classes]),
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = self.weight.data().to_vec();
        out.extend_from_slice(self.bias.data());
        out
    }

    pub fn load_flat(&mut self, flat: &[f64]) {
        let n = self.weight.len();
        self.weight.data_mut().copy_from_slice(&flat[..n]);
        self.bias.data_mut().copy_from_slice(&flat[n..]);
    }

    pub fn bitwise_eq(&self, other: &Head) -> bool {
        self.weight.bitwise_eq(&other.weight) && self.bias.bitwise_eq(&other.bias)
    }
}

/// The pre-trained backbone plus per-task classifier heads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseModel {
    pub spec: ModelSpec,
    /// `vocab_size x d_model`
    pub token_emb: Tensor,
    /// `max_seq_len x d_model`
    pub pos_emb: Tensor,
    pub blocks: Vec<BlockParams>,
    pub heads: BTreeMap<TaskId, Head>,
}

/// Build a fresh model. Weights and embeddings are uniform in
/// `[-1/sqrt(d), 1/sqrt(d)]`, biases zero, layer-norm gains one.
/// No heads are attached; see [`BaseModel::add_head`].
pub fn init_model(spec: ModelSpec, seed: u64) -> Result<BaseModel> {
    spec.validate()?;
    let mut rng = rng_from_seed(seed);
    let s = 1.0 / (spec.d_model as f64).sqrt();
    let token_emb = Tensor::uniform(&[spec.vocab_size, spec.d_model], s, &mut rng);
    let pos_emb = Tensor::uniform(&[spec.max_seq_len, spec.d_model], s, &mut rng);
    let blocks = (0..spec.layers).map(|_| BlockParams::init(&spec, &mut rng)).collect();
    Ok(BaseModel { spec, token_emb, pos_emb, blocks, heads: BTreeMap::new() })
}

impl BaseModel {
    pub fn add_head(&mut self, task: TaskId, seed: u64) {
        self.heads.insert(task, Head::init(&self.spec, seed));
    }

    pub fn head(&self, task: TaskId) -> Result<&Head> {
        self.heads.get(&task).ok_or_else(|| config_err!("no classifier head for {task}"))
    }

    /// Backbone parameters (embeddings and blocks) in a fixed order.
    pub fn backbone_tensors(&self) -> Vec<&Tensor> {
        let mut out = vec![&self.token_emb, &self.pos_emb];
        for b in &self.blocks {
            out.extend(b.tensors());
        }
        out
    }

    pub fn backbone_tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.token_emb, &mut self.pos_emb];
        for b in &mut self.blocks {
            out.extend(b.tensors_mut());
        }
        out
    }

    pub fn backbone_param_count(&self) -> usize {
        self.backbone_tensors().iter().map(|t| t.len()).sum()
    }

    pub fn param_count(&self) -> usize {
        self.backbone_param_count() + self.heads.values().map(|h| h.weight.len() + h.bias.len()).sum::<usize>()
    }

    pub fn flatten_backbone(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.backbone_param_count());
        for t in self.backbone_tensors() {
            out.extend_from_slice(t.data());
        }
        out
    }

    pub fn load_backbone(&mut self, flat: &[f64]) {
        let mut offset = 0;
        for t in self.backbone_tensors_mut() {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        debug_assert_eq!(offset, flat.len());
    }

    pub fn backbone_bitwise_eq(&self, other: &BaseModel) -> bool {
        self.spec == other.spec
            && self.backbone_tensors().iter().zip(other.backbone_tensors()).all(|(a, b)| a.bitwise_eq(b))
    }

    pub fn bitwise_eq(&self, other: &BaseModel) -> bool {
        self.backbone_bitwise_eq(other)
            && self.heads.len() == other.heads.len()
            && self.heads.iter().zip(&other.heads).all(|((ta, a), (tb, b))| ta == tb && a.bitwise_eq(b))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn small_spec() -> ModelSpec {
        ModelSpec { layers: 2, d_model: 8, heads: 2, d_ff: 16, vocab_size: 12, max_seq_len: 6, num_classes: 3 }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let a = init_model(small_spec(), 7).unwrap();
        let b = init_model(small_spec(), 7).unwrap();
        assert!(a.bitwise_eq(&b));
    }

    #[test]
    fn different_seed_differs() {
        let a = init_model(small_spec(), 7).unwrap();
        let b = init_model(small_spec(), 8).unwrap();
        assert!(!a.backbone_bitwise_eq(&b));
    }

    #[test]
    fn heads_must_divide_width() {
        let spec = ModelSpec { d_model: 32, heads: 5, ..small_spec() };
        assert!(matches!(init_model(spec, 1), Err(crate::Error::Config(_))));
    }

    #[test]
    fn init_ranges() {
        let m = init_model(small_spec(), 3).unwrap();
        let s = 1.0 / 8f64.sqrt();
        assert!(m.token_emb.data().iter().all(|v| v.abs() <= s));
        assert!(m.blocks[0].ln1_gain.data().iter().all(|&v| v == 1.0));
        assert!(m.blocks[1].ln2_shift.data().iter().all(|&v| v == 0.0));
        assert_eq!(m.blocks.len(), 2);
    }

    #[test]
    fn block_param_count_matches_layout() {
        let spec = ModelSpec { d_model: 32, heads: 4, d_ff: 128, ..small_spec() };
        assert_eq!(spec.block_param_count(), 12_704);
        assert_eq!(BlockParams::zeros(&spec).param_count(), 12_704);
    }

    #[test]
    fn flatten_load_roundtrip() {
        let m = init_model(small_spec(), 11).unwrap();
        let mut z = BlockParams::zeros(&m.spec);
        z.load_flat(&m.blocks[1].flatten());
        assert!(z.bitwise_eq(&m.blocks[1]));
    }
}
