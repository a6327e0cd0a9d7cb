use crate::datagen::LabeledDataset;
use crate::error::{input_err, Error, Result};
use crate::nn::{batch_order, block_grad_norms, sgd_step_on, BaseModel, TaskId, TrainableMask};
use crate::rng::rng_from_seed;

/// Greedy expansion-position selection.
///
/// Gradient norms are normalised by their maximum; each round scores every
/// unselected layer as `s_grad(l) + lambda * min_{l' in E} |l - l'| / L`
/// (the distance term is zero while `E` is empty) and adds the best one,
/// lowest index on ties. Positions are 1-based and returned in pick order.
pub fn select_expansion_layers(grad_norms: &[f64], k: usize, lambda: f64) -> Result<Vec<usize>> {
    let layers = grad_norms.len();
    if k == 0 || k > layers {
        return Err(input_err!("k = {k} outside [1, {layers}]"));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(input_err!("lambda {lambda} outside [0, 1]"));
    }
    if grad_norms.iter().any(|g| !g.is_finite() || *g < 0.0) {
        return Err(input_err!("gradient norms must be finite and non-negative"));
    }
    let max = grad_norms.iter().cloned().fold(0.0, f64::max);
    if max == 0.0 {
        return Err(Error::DegenerateProfile("all gradient norms are zero".into()));
    }
    let s_grad: Vec<f64> = grad_norms.iter().map(|g| g / max).collect();

    let mut selected: Vec<usize> = Vec::with_capacity(k);
    for _ in 0..k {
        let mut best: Option<(usize, f64)> = None;
        for pos in 1..=layers {
            if selected.contains(&pos) {
                continue;
            }
            let penalty = selected
                .iter()
                .map(|&p| pos.abs_diff(p) as f64 / layers as f64)
                .fold(None, |acc: Option<f64>, d| Some(acc.map_or(d, |a| a.min(d))))
                .unwrap_or(0.0);
            let score = s_grad[pos - 1] + lambda * penalty;
            if best.is_none_or(|(_, s)| score > s) {
                best = Some((pos, score));
            }
        }
        selected.push(best.expect("k <= layers leaves a candidate").0);
    }
    Ok(selected)
}

/// Evenly spaced positions: one expansion after every `layers / k` blocks.
pub fn uniform_positions(layers: usize, k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > layers {
        return Err(input_err!("k = {k} outside [1, {layers}]"));
    }
    Ok((1..=k).map(|i| (i * layers).div_ceil(k)).collect())
}

/// Average per-block gradient norm over `steps` SGD steps of a working copy
/// trained on the proxy set. A fresh head for `task` is attached to the
/// copy when the model has none. The input model is not modified.
pub fn proxy_gradient_profile(
    model: &BaseModel,
    proxy: &LabeledDataset,
    task: TaskId,
    steps: usize,
    lr: f64,
    batch_size: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if proxy.is_empty() {
        return Err(input_err!("proxy dataset is empty"));
    }
    if steps == 0 {
        return Err(input_err!("profiling needs at least one step"));
    }
    let mut work = model.clone();
    if !work.heads.contains_key(&task) {
        work.add_head(task, crate::rng::derive_seed(seed, "proxy_head", 0));
    }
    let mask = TrainableMask::full(work.spec.layers, [task]);
    let mut rng = rng_from_seed(seed);
    let mut sums = vec![0.0; work.spec.layers];
    let mut batches = Vec::new();
    for _ in 0..steps {
        if batches.is_empty() {
            batches = batch_order(proxy.len(), batch_size, &mut rng);
            batches.reverse();
        }
        let idx = batches.pop().expect("refilled above");
        let (_, grads) = sgd_step_on(&mut work, proxy, &idx, task, lr, &mask)?;
        for (s, g) in sums.iter_mut().zip(block_grad_norms(&grads)) {
            *s += g;
        }
    }
    Ok(sums.into_iter().map(|s| s / steps as f64).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_trace() {
        let e = select_expansion_layers(&[0.5, 1.0, 0.25, 0.75], 2, 0.5).unwrap();
        assert_eq!(e, vec![2, 4]);
    }

    #[test]
    fn lambda_zero_is_top_k() {
        let e = select_expansion_layers(&[0.3, 0.9, 0.1, 0.5, 0.7], 3, 0.0).unwrap();
        assert_eq!(e, vec![2, 5, 4]);
    }

    #[test]
    fn k_equals_depth_selects_everything() {
        let mut e = select_expansion_layers(&[0.2, 0.1, 0.4], 3, 1.0).unwrap();
        e.sort();
        assert_eq!(e, vec![1, 2, 3]);
    }

    #[test]
    fn constant_profile_spreads() {
        assert_eq!(select_expansion_layers(&[1.0; 6], 2, 0.25).unwrap(), vec![1, 6]);
    }

    #[test]
    fn errors() {
        assert!(matches!(select_expansion_layers(&[0.0, 0.0], 1, 0.5), Err(Error::DegenerateProfile(_))));
        assert!(matches!(select_expansion_layers(&[1.0, 0.0], 3, 0.5), Err(Error::Input(_))));
        assert!(select_expansion_layers(&[1.0, 0.0], 1, 1.5).is_err());
    }

    #[test]
    fn uniform_spacing() {
        assert_eq!(uniform_positions(4, 2).unwrap(), vec![2, 4]);
        assert_eq!(uniform_positions(4, 4).unwrap(), vec![1, 2, 3, 4]);
        assert_eq!(uniform_positions(12, 3).unwrap(), vec![4, 8, 12]);
        assert_eq!(uniform_positions(4, 3).unwrap(), vec![2, 3, 4]);
    }
}
