//! A small deterministic transformer classifier with exact reverse-mode
//! gradients.

mod engine;
mod gradcheck;
mod grads;
mod mask;
mod model;
mod tensor;

use rand::seq::SliceRandom;

pub use engine::NetView;
pub use gradcheck::{finite_diff_oracle, GRADCHECK_MIN_SAMPLES};
pub use grads::{block_grad_norms, GradientSet, ParamId};
pub use mask::TrainableMask;
pub use model::{init_model, BaseModel, BlockParams, Head, ModelSpec, TaskId, BLOCK_TENSOR_NAMES};
pub use tensor::{argmax, softmax, Tensor};

use crate::datagen::LabeledDataset;
use crate::error::{input_err, Result};
use crate::rng::Rng;

/// Anything that can produce class logits for a task.
pub trait Classifier {
    fn spec(&self) -> &ModelSpec;

    #[doc(hidden)]
    fn net(&self, task: TaskId) -> Result<NetView<'_>>;
}

/// A classifier whose parameter tensors can be enumerated and updated.
pub trait Trainable: Classifier {
    fn params(&self) -> Vec<(ParamId, &Tensor)>;
    fn params_mut(&mut self) -> Vec<(ParamId, &mut Tensor)>;
}

impl Classifier for BaseModel {
    fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    fn net(&self, task: TaskId) -> Result<NetView<'_>> {
        Ok(base_net(self, self.head(task)?, task))
    }
}

pub(crate) fn base_net<'a>(base: &'a BaseModel, head: &'a Head, task: TaskId) -> NetView<'a> {
    NetView {
        spec: &base.spec,
        token_emb: &base.token_emb,
        pos_emb: &base.pos_emb,
        blocks: &base.blocks,
        expansions: vec![None; base.blocks.len()],
        expand_input: crate::expansion::ExpandInput::Branch,
        task,
        head,
    }
}

impl Trainable for BaseModel {
    fn params(&self) -> Vec<(ParamId, &Tensor)> {
        let mut out = vec![(ParamId::TokenEmb, &self.token_emb), (ParamId::PosEmb, &self.pos_emb)];
        for (l, b) in self.blocks.iter().enumerate() {
            out.extend(b.tensors().into_iter().enumerate().map(|(s, t)| (ParamId::Block(l, s), t)));
        }
        for (&task, h) in &self.heads {
            out.push((ParamId::HeadWeight(task), &h.weight));
            out.push((ParamId::HeadBias(task), &h.bias));
        }
        out
    }

    fn params_mut(&mut self) -> Vec<(ParamId, &mut Tensor)> {
        let mut out = vec![(ParamId::TokenEmb, &mut self.token_emb), (ParamId::PosEmb, &mut self.pos_emb)];
        for (l, b) in self.blocks.iter_mut().enumerate() {
            out.extend(b.tensors_mut().into_iter().enumerate().map(|(s, t)| (ParamId::Block(l, s), t)));
        }
        for (&task, h) in self.heads.iter_mut() {
            out.push((ParamId::HeadWeight(task), &mut h.weight));
            out.push((ParamId::HeadBias(task), &mut h.bias));
        }
        out
    }
}

/// Logits of a forward pass, one row per sequence.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub logits: Tensor,
}

impl ForwardPass {
    pub fn probabilities(&self) -> Vec<Vec<f64>> {
        let k = self.logits.shape()[1];
        self.logits.data().chunks_exact(k).map(softmax).collect()
    }
}

fn check_batch(net: &NetView<'_>, batch: &[&[u32]]) -> Result<()> {
    if batch.is_empty() {
        return Err(input_err!("empty batch"));
    }
    batch.iter().try_for_each(|s| net.check_tokens(s))
}

pub fn forward<M: Classifier + ?Sized>(model: &M, batch: &[&[u32]], task: TaskId) -> Result<ForwardPass> {
    let net = model.net(task)?;
    check_batch(&net, batch)?;
    let k = model.spec().num_classes;
    let mut logits = Vec::with_capacity(batch.len() * k);
    for seq in batch {
        logits.extend(net.forward_seq(seq).0);
    }
    Ok(ForwardPass { logits: Tensor::from_vec(&[batch.len(), k], logits)? })
}

fn check_labels(labels: &[usize], batch_len: usize, k: usize) -> Result<()> {
    if labels.len() != batch_len {
        return Err(input_err!("{} labels for {} sequences", labels.len(), batch_len));
    }
    if let Some(&y) = labels.iter().find(|&&y| y >= k) {
        return Err(input_err!("label {y} out of range for {k} classes"));
    }
    Ok(())
}

fn log_softmax_at(logits: &[f64], y: usize) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    logits[y] - lse
}

/// Mean cross-entropy without gradients.
pub fn loss<M: Classifier + ?Sized>(model: &M, batch: &[&[u32]], labels: &[usize], task: TaskId) -> Result<f64> {
    let net = model.net(task)?;
    check_batch(&net, batch)?;
    check_labels(labels, batch.len(), model.spec().num_classes)?;
    let total: f64 = batch.iter().zip(labels).map(|(s, &y)| -log_softmax_at(&net.forward_seq(s).0, y)).sum();
    Ok(total / batch.len() as f64)
}

/// Mean cross-entropy and its gradient with respect to the groups `mask`
/// marks trainable.
pub fn loss_and_backward_masked<M: Classifier + ?Sized>(
    model: &M,
    batch: &[&[u32]],
    labels: &[usize],
    task: TaskId,
    mask: &TrainableMask,
) -> Result<(f64, GradientSet)> {
    let net = model.net(task)?;
    check_batch(&net, batch)?;
    let k = model.spec().num_classes;
    check_labels(labels, batch.len(), k)?;
    let mut grads = GradientSet::zeros(model.spec());
    let n = batch.len() as f64;
    let mut total = 0.0;
    for (seq, &y) in batch.iter().zip(labels) {
        let (logits, cache) = net.forward_seq(seq);
        total -= log_softmax_at(&logits, y);
        let mut d_logits = softmax(&logits);
        d_logits[y] -= 1.0;
        d_logits.iter_mut().for_each(|v| *v /= n);
        net.backward_seq(&cache, &d_logits, &mut grads, mask);
    }
    Ok((total / n, grads))
}

/// Mean cross-entropy and the exact gradient for every parameter the
/// forward pass touches.
pub fn loss_and_backward<M: Classifier + ?Sized>(
    model: &M,
    batch: &[&[u32]],
    labels: &[usize],
    task: TaskId,
) -> Result<(f64, GradientSet)> {
    let net = model.net(task)?;
    let mask = TrainableMask {
        embeddings: true,
        blocks: (0..net.blocks.len()).collect(),
        expanded: net.expansion_positions().into_keys().collect(),
        heads: [task].into(),
    };
    loss_and_backward_masked(model, batch, labels, task, &mask)
}

/// `p <- p - lr * g` for every tensor the mask allows; everything else is
/// left bitwise unchanged.
pub fn apply_sgd<M: Trainable + ?Sized>(model: &mut M, grads: &GradientSet, lr: f64, mask: &TrainableMask) {
    for (id, t) in model.params_mut() {
        if !mask.allows(id) {
            continue;
        }
        if let Some(g) = grads.get(id) {
            t.sgd_step(g, lr);
        }
    }
}

/// Fraction of examples whose argmax logit equals the label.
pub fn evaluate<M: Classifier + ?Sized>(model: &M, data: &LabeledDataset, task: TaskId) -> Result<f64> {
    if data.is_empty() {
        return Err(input_err!("cannot evaluate on an empty dataset"));
    }
    let net = model.net(task)?;
    let mut correct = 0usize;
    for ex in data.examples() {
        net.check_tokens(&ex.tokens)?;
        let (logits, _) = net.forward_seq(&ex.tokens);
        if argmax(&logits) == ex.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Shuffled minibatch index lists covering `0..n` once.
pub fn batch_order(n: usize, batch_size: usize, rng: &mut Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(batch_size.max(1)).map(|c| c.to_vec()).collect()
}

/// One SGD step on the examples at `indices`; returns the batch loss.
pub fn sgd_step_on<M: Trainable + ?Sized>(
    model: &mut M,
    data: &LabeledDataset,
    indices: &[usize],
    task: TaskId,
    lr: f64,
    mask: &TrainableMask,
) -> Result<(f64, GradientSet)> {
    let batch: Vec<&[u32]> = indices.iter().map(|&i| data.examples()[i].tokens.as_slice()).collect();
    let labels: Vec<usize> = indices.iter().map(|&i| data.examples()[i].label).collect();
    let (loss, grads) = loss_and_backward_masked(&*model, &batch, &labels, task, mask)?;
    apply_sgd(model, &grads, lr, mask);
    Ok((loss, grads))
}
