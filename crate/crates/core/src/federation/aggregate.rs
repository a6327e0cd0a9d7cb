use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{input_err, Result};
use crate::expansion::ExpandedModel;
use crate::nn::TaskId;

/// A unit of upload and aggregation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ParamKey {
    /// Embeddings and every base block, as one flat vector.
    Backbone,
    /// The expanded block at this 1-based position.
    Expanded(usize),
    Head(TaskId),
}

/// Flat parameter vectors of one client's update, keyed by what they cover.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpload {
    pub client_id: usize,
    pub samples: usize,
    pub delta: BTreeMap<ParamKey, Vec<f64>>,
}

impl ClientUpload {
    pub fn param_count(&self) -> usize {
        self.delta.values().map(Vec::len).sum()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AggregationReport {
    /// Participant weights per key, by ascending client id.
    pub weights: BTreeMap<ParamKey, Vec<(usize, f64)>>,
}

impl AggregationReport {
    pub fn updated(&self) -> BTreeSet<ParamKey> {
        self.weights.keys().copied().collect()
    }
}

/// Sample-weighted averaging per key over the clients that uploaded it:
///
/// ```text
/// theta_b <- sum_{m in P_b} n_m / (sum_{m' in P_b} n_m') * (theta_b + delta_{m,b})
/// ```
///
/// Keys nobody uploaded are left untouched. Uploads are combined in
/// ascending client id order regardless of the order they arrive in.
pub fn aggregate(global: &mut BTreeMap<ParamKey, Vec<f64>>, uploads: &[ClientUpload]) -> Result<AggregationReport> {
    let mut ordered: Vec<&ClientUpload> = uploads.iter().collect();
    ordered.sort_by_key(|u| u.client_id);

    for u in &ordered {
        for (key, delta) in &u.delta {
            let theta = global.get(key).ok_or_else(|| input_err!("client {} uploaded unknown {key:?}", u.client_id))?;
            if theta.len() != delta.len() {
                return Err(input_err!("client {} {key:?}: {} values, expected {}", u.client_id, delta.len(), theta.len()));
            }
        }
    }

    let mut report = AggregationReport::default();
    for (key, theta) in global.iter_mut() {
        let participants: Vec<&ClientUpload> =
            ordered.iter().copied().filter(|u| u.delta.contains_key(key) && u.samples > 0).collect();
        let total: usize = participants.iter().map(|u| u.samples).sum();
        if total == 0 {
            continue;
        }
        let mut next = vec![0.0; theta.len()];
        let mut weights = Vec::with_capacity(participants.len());
        for u in participants {
            let w = u.samples as f64 / total as f64;
            for ((n, t), d) in next.iter_mut().zip(theta.iter()).zip(&u.delta[key]) {
                *n += w * (t + d);
            }
            weights.push((u.client_id, w));
        }
        *theta = next;
        report.weights.insert(*key, weights);
    }
    if report.weights.is_empty() && !uploads.is_empty() {
        log::warn!("aggregation: no key had a participant; global state unchanged");
    }
    Ok(report)
}

/// Current values of `key` in `model`.
pub fn gather(model: &ExpandedModel, key: ParamKey) -> Result<Vec<f64>> {
    match key {
        ParamKey::Backbone => Ok(model.base.flatten_backbone()),
        ParamKey::Expanded(pos) => {
            model.expanded.get(&pos).map(|b| b.flatten()).ok_or_else(|| input_err!("no expanded block at {pos}"))
        }
        ParamKey::Head(task) => Ok(model.head(task)?.flatten()),
    }
}

/// Overwrite `key` in `model` with `values`.
pub fn scatter(model: &mut ExpandedModel, key: ParamKey, values: &[f64]) -> Result<()> {
    match key {
        ParamKey::Backbone => model.base.load_backbone(values),
        ParamKey::Expanded(pos) => {
            model.expanded.get_mut(&pos).ok_or_else(|| input_err!("no expanded block at {pos}"))?.load_flat(values)
        }
        ParamKey::Head(task) => model.head_mut(task)?.load_flat(values),
    }
    Ok(())
}
