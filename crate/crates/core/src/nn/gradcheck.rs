//! Central finite-difference check of the analytic gradients.

use rand::Rng as _;

use super::{loss, loss_and_backward, ParamId, TaskId, Trainable};
use crate::error::{input_err, Result};
use crate::rng::rng_from_seed;

pub const GRADCHECK_MIN_SAMPLES: usize = 200;

/// Denominator floor for the relative error. Gradient entries smaller than
/// this are compared in absolute terms.
const REL_FLOOR: f64 = 1e-4;

const SAMPLE_SEED: u64 = 0x0067_7261_6463_686b;

/// Maximum relative error between analytic gradients and central
/// differences `(loss(p + eps) - loss(p - eps)) / 2eps` over a deterministic
/// sample of at least [`GRADCHECK_MIN_SAMPLES`] scalars drawn from every
/// parameter tensor the task's forward pass uses.
pub fn finite_diff_oracle<M: Trainable + Clone>(
    model: &M,
    batch: &[&[u32]],
    labels: &[usize],
    task: TaskId,
    eps: f64,
) -> Result<f64> {
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(input_err!("finite-difference step {eps} outside (0, 1e-2]"));
    }
    let (_, grads) = loss_and_backward(model, batch, labels, task)?;

    let ids: Vec<ParamId> = model
        .params()
        .into_iter()
        .map(|(id, _)| id)
        .filter(|id| match id {
            ParamId::HeadWeight(t) | ParamId::HeadBias(t) => *t == task,
            _ => true,
        })
        .collect();
    let per_tensor = GRADCHECK_MIN_SAMPLES.div_ceil(ids.len()) + 1;

    let mut rng = rng_from_seed(SAMPLE_SEED);
    let mut work = model.clone();
    let mut worst: f64 = 0.0;
    for id in ids {
        let analytic = grads.get(id).ok_or_else(|| input_err!("no gradient for {id:?}"))?.clone();
        for _ in 0..per_tensor {
            let i = rng.random_range(0..analytic.len());
            let original = param_value(&mut work, id, i);
            set_param(&mut work, id, i, original + eps);
            let plus = loss(&work, batch, labels, task)?;
            set_param(&mut work, id, i, original - eps);
            let minus = loss(&work, batch, labels, task)?;
            set_param(&mut work, id, i, original);

            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.data()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

fn param_value<M: Trainable>(model: &mut M, id: ParamId, i: usize) -> f64 {
    model.params().into_iter().find(|(pid, _)| *pid == id).map(|(_, t)| t.data()[i]).expect("known parameter")
}

fn set_param<M: Trainable>(model: &mut M, id: ParamId, i: usize, value: f64) {
    if let Some((_, t)) = model.params_mut().into_iter().find(|(pid, _)| *pid == id) {
        t.data_mut()[i] = value;
    }
}
