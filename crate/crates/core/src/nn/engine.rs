//! Forward and reverse-mode backward passes for the pre-layer-norm
//! transformer classifier, optionally with expanded blocks attached to some
//! positions.
//!
//! Per block `l` with input `x`:
//!
//! ```text
//! a  = Attn(LN1(x))          x1 = x + a
//! f  = FF(LN2(x1))           x2 = x1 + f        branch = a + f
//! ```
//!
//! An expanded block at `l` computes `e = a' + f'` (the same two sub-layers
//! without the outer residual) on either `branch` or `x2`, and the block's
//! output becomes `x2 + e`.

use std::collections::BTreeMap;

use super::grads::GradientSet;
use super::mask::TrainableMask;
use super::model::{BlockParams, Head, ModelSpec, TaskId};
use super::tensor::{add_into, dot, linear, linear_backward, softmax, Tensor};
use crate::expansion::ExpandInput;

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

/// Borrowed view of everything a forward pass touches for one task.
#[doc(hidden)]
#[derive(Debug, Clone)]
pub struct NetView<'a> {
    pub(crate) spec: &'a ModelSpec,
    pub(crate) token_emb: &'a Tensor,
    pub(crate) pos_emb: &'a Tensor,
    pub(crate) blocks: &'a [BlockParams],
    /// Indexed by block index; `(position, params)` of the active expansion.
    pub(crate) expansions: Vec<Option<(usize, &'a BlockParams)>>,
    pub(crate) expand_input: ExpandInput,
    pub(crate) task: TaskId,
    pub(crate) head: &'a Head,
}

struct LnCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
}

struct BlockCache {
    ln1: LnCache,
    h1: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    probs: Vec<f64>,
    ctx: Vec<f64>,
    ln2: LnCache,
    h2: Vec<f64>,
    z: Vec<f64>,
    act: Vec<f64>,
}

struct LayerCache {
    base: BlockCache,
    expansion: Option<BlockCache>,
}

pub(crate) struct SeqCache {
    tokens: Vec<u32>,
    layers: Vec<LayerCache>,
    pooled: Vec<f64>,
}

fn layer_norm(x: &[f64], gain: &[f64], shift: &[f64], rows: usize, d: usize) -> (Vec<f64>, LnCache) {
    let mut y = vec![0.0; rows * d];
    let mut xhat = vec![0.0; rows * d];
    let mut inv_std = vec![0.0; rows];
    for r in 0..rows {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let is = 1.0 / (var + LN_EPS).sqrt();
        inv_std[r] = is;
        for c in 0..d {
            let xh = (row[c] - mean) * is;
            xhat[r * d + c] = xh;
            y[r * d + c] = gain[c] * xh + shift[c];
        }
    }
    (y, LnCache { xhat, inv_std })
}

fn layer_norm_backward(
    cache: &LnCache,
    gain: &[f64],
    dy: &[f64],
    rows: usize,
    d: usize,
    param_grads: Option<(&mut [f64], &mut [f64])>,
) -> Vec<f64> {
    if let Some((dg, db)) = param_grads {
        for r in 0..rows {
            for c in 0..d {
                dg[c] += dy[r * d + c] * cache.xhat[r * d + c];
                db[c] += dy[r * d + c];
            }
        }
    }
    let mut dx = vec![0.0; rows * d];
    let mut dxhat = vec![0.0; d];
    for r in 0..rows {
        let xh = &cache.xhat[r * d..(r + 1) * d];
        for c in 0..d {
            dxhat[c] = dy[r * d + c] * gain[c];
        }
        let mean_d = dxhat.iter().sum::<f64>() / d as f64;
        let mean_dx = dot(&dxhat, xh) / d as f64;
        for c in 0..d {
            dx[r * d + c] = cache.inv_std[r] * (dxhat[c] - mean_d - xh[c] * mean_dx);
        }
    }
    dx
}

#[inline]
fn gelu(z: f64) -> f64 {
    0.5 * z * (1.0 + (GELU_C * (z + GELU_K * z * z * z)).tanh())
}

#[inline]
fn gelu_grad(z: f64) -> f64 {
    let t = (GELU_C * (z + GELU_K * z * z * z)).tanh();
    0.5 * (1.0 + t) + 0.5 * z * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * z * z)
}

/// Runs both sub-layers on `u` (`seq x d`). Returns the cache, the attention
/// output `a`, the feed-forward output `f` and `u + a`.
fn block_forward(p: &BlockParams, u: &[f64], spec: &ModelSpec, seq: usize) -> (BlockCache, Vec<f64>, Vec<f64>, Vec<f64>) {
    let d = spec.d_model;
    let ff = spec.d_ff;
    let heads = spec.heads;
    let dh = spec.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();

    let (h1, ln1) = layer_norm(u, p.ln1_gain.data(), p.ln1_shift.data(), seq, d);
    let q = linear(&h1, p.wq.data(), p.bq.data(), seq, d, d);
    let k = linear(&h1, p.wk.data(), p.bk.data(), seq, d, d);
    let v = linear(&h1, p.wv.data(), p.bv.data(), seq, d, d);

    let mut probs = vec![0.0; heads * seq * seq];
    let mut ctx = vec![0.0; seq * d];
    let mut scores = vec![0.0; seq];
    for h in 0..heads {
        let off = h * dh;
        for i in 0..seq {
            let qi = &q[i * d + off..i * d + off + dh];
            for (j, s) in scores.iter_mut().enumerate() {
                *s = dot(qi, &k[j * d + off..j * d + off + dh]) * scale;
            }
            let pr = softmax(&scores);
            let ctx_row = &mut ctx[i * d + off..i * d + off + dh];
            for (j, &pij) in pr.iter().enumerate() {
                for (c, &vv) in ctx_row.iter_mut().zip(&v[j * d + off..j * d + off + dh]) {
                    *c += pij * vv;
                }
            }
            probs[(h * seq + i) * seq..(h * seq + i + 1) * seq].copy_from_slice(&pr);
        }
    }
    let a = linear(&ctx, p.wo.data(), p.bo.data(), seq, d, d);

    let mut u1 = u.to_vec();
    add_into(&mut u1, &a);
    let (h2, ln2) = layer_norm(&u1, p.ln2_gain.data(), p.ln2_shift.data(), seq, d);
    let z = linear(&h2, p.w1.data(), p.b1.data(), seq, d, ff);
    let act: Vec<f64> = z.iter().map(|&v| gelu(v)).collect();
    let f = linear(&act, p.w2.data(), p.b2.data(), seq, ff, d);

    (BlockCache { ln1, h1, q, k, v, probs, ctx, ln2, h2, z, act }, a, f, u1)
}

/// Backward through one block.
///
/// `d_branch` is the gradient reaching `a` and `f` through the block's
/// additive output; `residual` is the gradient reaching the block input
/// directly through the outer skip connection (absent for expanded blocks).
/// Returns the gradient with respect to the block input.
fn block_backward(
    p: &BlockParams,
    cache: &BlockCache,
    d_branch: &[f64],
    residual: Option<&[f64]>,
    spec: &ModelSpec,
    seq: usize,
    grads: Option<&mut BlockParams>,
) -> Vec<f64> {
    let d = spec.d_model;
    let ff = spec.d_ff;
    let heads = spec.heads;
    let dh = spec.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();

    let mut grads = grads;
    macro_rules! pg {
        ($w:ident, $b:ident) => {
            grads.as_deref_mut().map(|g| {
                let BlockParams { $w, $b, .. } = g;
                ($w.data_mut(), $b.data_mut())
            })
        };
    }

    // feed-forward
    let d_act = linear_backward(&cache.act, p.w2.data(), d_branch, seq, ff, d, pg!(w2, b2));
    let d_z: Vec<f64> = d_act.iter().zip(&cache.z).map(|(g, &z)| g * gelu_grad(z)).collect();
    let d_h2 = linear_backward(&cache.h2, p.w1.data(), &d_z, seq, d, ff, pg!(w1, b1));
    let d_u1_ff = layer_norm_backward(&cache.ln2, p.ln2_gain.data(), &d_h2, seq, d, pg!(ln2_gain, ln2_shift));

    // attention output
    let mut d_a = d_branch.to_vec();
    add_into(&mut d_a, &d_u1_ff);
    let d_ctx = linear_backward(&cache.ctx, p.wo.data(), &d_a, seq, d, d, pg!(wo, bo));

    let mut d_q = vec![0.0; seq * d];
    let mut d_k = vec![0.0; seq * d];
    let mut d_v = vec![0.0; seq * d];
    let mut d_p = vec![0.0; seq];
    for h in 0..heads {
        let off = h * dh;
        for i in 0..seq {
            let pr = &cache.probs[(h * seq + i) * seq..(h * seq + i + 1) * seq];
            let dctx_i = &d_ctx[i * d + off..i * d + off + dh];
            for j in 0..seq {
                d_p[j] = dot(dctx_i, &cache.v[j * d + off..j * d + off + dh]);
                let pij = pr[j];
                for (dv, &dc) in d_v[j * d + off..j * d + off + dh].iter_mut().zip(dctx_i) {
                    *dv += pij * dc;
                }
            }
            let inner = dot(pr, &d_p);
            for j in 0..seq {
                let ds = pr[j] * (d_p[j] - inner) * scale;
                if ds == 0.0 {
                    continue;
                }
                for c in 0..dh {
                    d_q[i * d + off + c] += ds * cache.k[j * d + off + c];
                    d_k[j * d + off + c] += ds * cache.q[i * d + off + c];
                }
            }
        }
    }
    let mut d_h1 = linear_backward(&cache.h1, p.wq.data(), &d_q, seq, d, d, pg!(wq, bq));
    add_into(&mut d_h1, &linear_backward(&cache.h1, p.wk.data(), &d_k, seq, d, d, pg!(wk, bk)));
    add_into(&mut d_h1, &linear_backward(&cache.h1, p.wv.data(), &d_v, seq, d, d, pg!(wv, bv)));
    let mut d_u = layer_norm_backward(&cache.ln1, p.ln1_gain.data(), &d_h1, seq, d, pg!(ln1_gain, ln1_shift));

    add_into(&mut d_u, &d_u1_ff);
    if let Some(r) = residual {
        add_into(&mut d_u, r);
    }
    d_u
}

impl NetView<'_> {
    pub(crate) fn check_tokens(&self, tokens: &[u32]) -> crate::Result<()> {
        if tokens.is_empty() || tokens.len() > self.spec.max_seq_len {
            return Err(crate::error::input_err!(
                "sequence length {} outside [1, {}]",
                tokens.len(),
                self.spec.max_seq_len
            ));
        }
        if let Some(&t) = tokens.iter().find(|&&t| t as usize >= self.spec.vocab_size) {
            return Err(crate::error::input_err!("token id {t} out of range for vocab {}", self.spec.vocab_size));
        }
        Ok(())
    }

    /// Logits for one (pre-validated) sequence, plus the cache for backward.
    pub(crate) fn forward_seq(&self, tokens: &[u32]) -> (Vec<f64>, SeqCache) {
        let spec = self.spec;
        let d = spec.d_model;
        let seq = tokens.len();
        let mut x = vec![0.0; seq * d];
        for (t, &tok) in tokens.iter().enumerate() {
            let row = &mut x[t * d..(t + 1) * d];
            let te = &self.token_emb.data()[tok as usize * d..(tok as usize + 1) * d];
            let pe = &self.pos_emb.data()[t * d..(t + 1) * d];
            for c in 0..d {
                row[c] = te[c] + pe[c];
            }
        }

        let mut layers = Vec::with_capacity(self.blocks.len());
        for (l, block) in self.blocks.iter().enumerate() {
            let (base, a, f, mut x2) = block_forward(block, &x, spec, seq);
            add_into(&mut x2, &f);
            let expansion = match self.expansions[l] {
                Some((_, eparams)) => {
                    let input = match self.expand_input {
                        ExpandInput::Branch => a.iter().zip(&f).map(|(p, q)| p + q).collect::<Vec<_>>(),
                        ExpandInput::PostResidual => x2.clone(),
                    };
                    let (ec, ea, ef, _) = block_forward(eparams, &input, spec, seq);
                    for ((o, p), q) in x2.iter_mut().zip(&ea).zip(&ef) {
                        *o += p + q;
                    }
                    Some(ec)
                }
                None => None,
            };
            layers.push(LayerCache { base, expansion });
            x = x2;
        }

        let mut pooled = vec![0.0; d];
        for row in x.chunks_exact(d) {
            add_into(&mut pooled, row);
        }
        pooled.iter_mut().for_each(|v| *v /= seq as f64);
        let k = spec.num_classes;
        let logits = linear(&pooled, self.head.weight.data(), self.head.bias.data(), 1, d, k);
        (logits, SeqCache { tokens: tokens.to_vec(), layers, pooled })
    }

    /// Accumulates gradients of `d_logits . logits` into `grads` for every
    /// group the mask marks trainable.
    pub(crate) fn backward_seq(&self, cache: &SeqCache, d_logits: &[f64], grads: &mut GradientSet, mask: &TrainableMask) {
        let spec = self.spec;
        let d = spec.d_model;
        let k = spec.num_classes;
        let seq = cache.tokens.len();

        let head_grads = if mask.heads.contains(&self.task) {
            let hg = grads.heads.entry(self.task).or_insert_with(|| Head::zeros(spec));
            let Head { weight, bias } = hg;
            Some((weight.data_mut(), bias.data_mut()))
        } else {
            None
        };
        let d_pooled = linear_backward(&cache.pooled, self.head.weight.data(), d_logits, 1, d, k, head_grads);

        // lowest block whose parameters (or expansion parameters) need gradients
        let lowest = if mask.embeddings {
            Some(0)
        } else {
            (0..self.blocks.len()).find(|&l| {
                mask.blocks.contains(&l) || self.expansions[l].is_some_and(|(pos, _)| mask.expanded.contains(&pos))
            })
        };
        let Some(lowest) = lowest else { return };

        let mut d_x = vec![0.0; seq * d];
        for row in d_x.chunks_exact_mut(d) {
            for (o, g) in row.iter_mut().zip(&d_pooled) {
                *o = g / seq as f64;
            }
        }

        for l in (lowest..self.blocks.len()).rev() {
            let lc = &cache.layers[l];
            let need_base = mask.blocks.contains(&l) || l > lowest || mask.embeddings;
            let (d_res, d_br) = match (self.expansions[l], &lc.expansion) {
                (Some((pos, eparams)), Some(ec)) => {
                    let eg = if mask.expanded.contains(&pos) {
                        Some(grads.expanded.entry(pos).or_insert_with(|| BlockParams::zeros(spec)))
                    } else {
                        None
                    };
                    let d_ue = block_backward(eparams, ec, &d_x, None, spec, seq, eg);
                    match self.expand_input {
                        ExpandInput::Branch => (d_x, Some(d_ue)),
                        ExpandInput::PostResidual => {
                            let mut r = d_x;
                            add_into(&mut r, &d_ue);
                            (r, None)
                        }
                    }
                }
                _ => (d_x, None),
            };
            if !need_base {
                return;
            }
            let mut d_total = d_res.clone();
            if let Some(br) = &d_br {
                add_into(&mut d_total, br);
            }
            let bg = if mask.blocks.contains(&l) { Some(&mut grads.blocks[l]) } else { None };
            d_x = block_backward(&self.blocks[l], &lc.base, &d_total, Some(&d_res), spec, seq, bg);
        }

        if mask.embeddings {
            for (t, &tok) in cache.tokens.iter().enumerate() {
                let row = &d_x[t * d..(t + 1) * d];
                add_into(&mut grads.token_emb.data_mut()[tok as usize * d..(tok as usize + 1) * d], row);
                add_into(&mut grads.pos_emb.data_mut()[t * d..(t + 1) * d], row);
            }
        }
    }

    pub(crate) fn expansion_positions(&self) -> BTreeMap<usize, usize> {
        self.expansions
            .iter()
            .enumerate()
            .filter_map(|(l, e)| e.map(|(pos, _)| (pos, l)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gelu_derivative_matches_central_difference() {
        for &z in &[-3.0, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let num = (gelu(z + h) - gelu(z - h)) / (2.0 * h);
            assert!((num - gelu_grad(z)).abs() < 1e-8, "z={z}");
        }
    }

    #[test]
    fn layer_norm_rows_are_standardised() {
        let x = [1.0, 2.0, 3.0, 4.0, -1.0, 0.0, 1.0, 2.0];
        let (y, _) = layer_norm(&x, &[1.0; 4], &[0.0; 4], 2, 4);
        for row in y.chunks(4) {
            let mean: f64 = row.iter().sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-12);
        }
    }
}
