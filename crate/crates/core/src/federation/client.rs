use std::collections::{BTreeMap, BTreeSet};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::aggregate::{gather, ClientUpload, ParamKey};
use crate::datagen::LabeledDataset;
use crate::error::{input_err, Result};
use crate::expansion::{flops_estimate, ExpandedModel};
use crate::nn::{batch_order, sgd_step_on, TaskId, TrainableMask};
use crate::rng::{derive_seed, rng_from_seed};

/// Training FLOPs per forward FLOP (forward plus a backward costing two forwards).
pub const TRAIN_FLOPS_MULTIPLIER: u64 = 3;
pub const BYTES_PER_PARAM: u64 = 8;
/// Devices redraw their running mode on rounds that are multiples of this.
pub const MODE_SWITCH_PERIOD: usize = 20;

/// A class of simulated device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceProfile {
    /// Compute rate of every running mode, in FLOPs per second.
    pub modes: Vec<f64>,
    /// Upload bandwidth in bytes per second.
    pub bandwidth: f64,
    /// Abstract capability score used for block allocation.
    pub resource_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientProfile {
    pub id: usize,
    pub alpha: f64,
    pub resource_score: f64,
    pub modes: Vec<f64>,
    pub n_samples: usize,
    pub bandwidth: f64,
}

impl ClientProfile {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) {
            return Err(input_err!("client {}: alpha must be positive", self.id));
        }
        if self.modes.is_empty() || self.modes.iter().any(|r| !(*r > 0.0)) {
            return Err(input_err!("client {}: needs at least one positive compute rate", self.id));
        }
        if !(self.bandwidth > 0.0) || !(self.resource_score > 0.0) {
            return Err(input_err!("client {}: bandwidth and resource score must be positive", self.id));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientState {
    pub train_counts: BTreeMap<usize, u64>,
    /// Compute seconds measured in the previous round it trained.
    pub last_time: Option<f64>,
    pub current_mode: usize,
    pub assigned: BTreeSet<usize>,
    pub shard: LabeledDataset,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Client {
    pub profile: ClientProfile,
    pub state: ClientState,
}

impl Client {
    pub fn new(profile: ClientProfile, shard: LabeledDataset) -> Result<Self> {
        profile.validate()?;
        Ok(Self {
            profile,
            state: ClientState {
                train_counts: BTreeMap::new(),
                last_time: None,
                current_mode: 0,
                assigned: BTreeSet::new(),
                shard,
            },
        })
    }

    pub fn rate(&self) -> f64 {
        self.profile.modes[self.state.current_mode]
    }
}

/// On rounds `20, 40, ...` every client redraws its running mode uniformly
/// from a stream keyed by (seed, client id, round). Other rounds leave
/// modes unchanged.
pub fn mode_switch(round: usize, clients: &mut [Client], seed: u64) {
    if round == 0 || !round.is_multiple_of(MODE_SWITCH_PERIOD) {
        return;
    }
    for c in clients {
        let n = c.profile.modes.len();
        if n < 2 {
            continue;
        }
        let mut rng = rng_from_seed(derive_seed(seed, "mode_switch", ((c.profile.id as u64) << 32) | round as u64));
        c.state.current_mode = rng.random_range(0..n);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
}

/// Simulated seconds to train on `sequences` inputs whose forward pass costs
/// `forward_flops` each.
pub fn training_seconds(forward_flops: u64, sequences: u64, rate: f64) -> f64 {
    (TRAIN_FLOPS_MULTIPLIER * forward_flops * sequences) as f64 / rate
}

/// What a client sends back, with its simulated cost.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalUpdate {
    pub upload: ClientUpload,
    pub compute_seconds: f64,
    pub bytes: u64,
}

/// What a client trains and uploads in one round.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalPlan {
    pub mask: TrainableMask,
    /// Expansions trained and uploaded. Every expansion of the model stays
    /// in the forward pass; the rest are frozen.
    pub assigned: BTreeSet<usize>,
    pub upload: Vec<ParamKey>,
}

impl LocalPlan {
    /// Train and upload exactly the assigned expansions plus the task head.
    pub fn expanded(assigned: &BTreeSet<usize>, task: TaskId) -> Self {
        Self {
            mask: TrainableMask { expanded: assigned.clone(), heads: [task].into(), ..TrainableMask::default() },
            assigned: assigned.clone(),
            upload: assigned.iter().map(|&p| ParamKey::Expanded(p)).chain([ParamKey::Head(task)]).collect(),
        }
    }

    pub fn full_model(layers: usize, task: TaskId) -> Self {
        Self {
            mask: TrainableMask::full(layers, [task]),
            assigned: BTreeSet::new(),
            upload: vec![ParamKey::Backbone, ParamKey::Head(task)],
        }
    }

    pub fn head_only(task: TaskId) -> Self {
        Self { mask: TrainableMask::head_only(task), assigned: BTreeSet::new(), upload: vec![ParamKey::Head(task)] }
    }
}

/// Trains a private copy of `model` on the client's shard and reports the
/// parameter deltas named by `plan.upload`.
///
/// Compute time is `3 * forward FLOPs(base + assigned expansions) * sequences / rate`;
/// upload size is 8 bytes per uploaded parameter. Returns `None` for an
/// empty shard.
pub fn local_train(
    model: &ExpandedModel,
    client: &Client,
    plan: &LocalPlan,
    task: TaskId,
    cfg: &LocalTrainConfig,
    seed: u64,
) -> Result<Option<LocalUpdate>> {
    let shard = &client.state.shard;
    if shard.is_empty() {
        return Ok(None);
    }
    if let Some(p) = plan.assigned.iter().find(|p| !model.expanded.contains_key(p)) {
        return Err(input_err!("client {}: assigned position {p} has no expanded block", client.profile.id));
    }
    let mut work = model.clone();

    let mut rng = rng_from_seed(seed);
    let mut sequences = 0u64;
    for _ in 0..cfg.epochs {
        for idx in batch_order(shard.len(), cfg.batch_size, &mut rng) {
            sgd_step_on(&mut work, shard, &idx, task, cfg.lr, &plan.mask)?;
            sequences += idx.len() as u64;
        }
    }
    let tokens_per_seq = shard.examples()[0].tokens.len();

    let mut delta = BTreeMap::new();
    for &key in &plan.upload {
        let trained = gather(&work, key)?;
        let global = gather(model, key)?;
        delta.insert(key, trained.iter().zip(&global).map(|(t, g)| t - g).collect::<Vec<f64>>());
    }
    let upload = ClientUpload { client_id: client.profile.id, samples: shard.len(), delta };

    let spec = model.spec();
    let blocks = spec.layers + plan.assigned.len();
    let compute_seconds = training_seconds(flops_estimate(spec, blocks, tokens_per_seq), sequences, client.rate());
    let bytes = BYTES_PER_PARAM * upload.param_count() as u64;
    Ok(Some(LocalUpdate { upload, compute_seconds, bytes }))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::datagen::{gen_task, SyntheticTaskSpec};
    use crate::expansion::{expand, ExpandInput, ZeroInitPolicy};
    use crate::nn::{init_model, ModelSpec};

    pub(crate) fn tiny_spec() -> ModelSpec {
        ModelSpec { layers: 3, d_model: 8, heads: 2, d_ff: 16, vocab_size: 32, max_seq_len: 6, num_classes: 2 }
    }

    pub(crate) fn tiny_data(n: usize) -> crate::datagen::TaskData {
        let spec = SyntheticTaskSpec::contiguous(TaskId(1), 32, 6, 2, 2, 0.4, 0, 8..32, 5);
        gen_task(&spec, n, 3).unwrap()
    }

    pub(crate) fn tiny_model() -> ExpandedModel {
        let mut base = init_model(tiny_spec(), 1).unwrap();
        base.add_head(TaskId(0), 2);
        let mut m = expand(&base, &[1, 3], ZeroInitPolicy::OutputProj, ExpandInput::Branch).unwrap();
        m.add_head(TaskId(1), 4);
        m
    }

    pub(crate) fn client(id: usize, modes: Vec<f64>, shard: LabeledDataset) -> Client {
        let profile =
            ClientProfile { id, alpha: 0.5, resource_score: 1.0, modes, n_samples: shard.len(), bandwidth: 1e6 };
        Client::new(profile, shard).unwrap()
    }

    const CFG: LocalTrainConfig = LocalTrainConfig { epochs: 1, lr: 0.1, batch_size: 4 };

    #[test]
    fn timing_arithmetic() {
        assert_eq!(training_seconds(4_000_000_000, 1, 2e8), 60.0);
        assert_eq!(training_seconds(1000, 0, 1.0), 0.0);
    }

    #[test]
    fn uploads_exactly_assigned_and_head() {
        let model = tiny_model();
        let c = client(0, vec![1e6], tiny_data(40).train);
        let plan = LocalPlan::expanded(&[3].into(), TaskId(1));
        let u = local_train(&model, &c, &plan, TaskId(1), &CFG, 9).unwrap().unwrap();
        let keys: Vec<ParamKey> = u.upload.delta.keys().copied().collect();
        assert_eq!(keys, vec![ParamKey::Expanded(3), ParamKey::Head(TaskId(1))]);
        assert!(u.upload.delta[&ParamKey::Expanded(3)].iter().any(|d| *d != 0.0));
        assert_eq!(u.bytes, 8 * u.upload.param_count() as u64);
        let expected = training_seconds(flops_estimate(model.spec(), 4, 6), c.state.shard.len() as u64, 1e6);
        assert_eq!(u.compute_seconds, expected);
        assert_eq!(model, tiny_model());
    }

    #[test]
    fn zero_epochs_is_free() {
        let model = tiny_model();
        let c = client(0, vec![1e6], tiny_data(40).train);
        let cfg = LocalTrainConfig { epochs: 0, ..CFG };
        let u = local_train(&model, &c, &LocalPlan::expanded(&[1, 3].into(), TaskId(1)), TaskId(1), &cfg, 9)
            .unwrap()
            .unwrap();
        assert_eq!(u.compute_seconds, 0.0);
        assert!(u.upload.delta.values().flatten().all(|d| *d == 0.0));
    }

    #[test]
    fn unknown_assignment_rejected() {
        let c = client(0, vec![1e6], tiny_data(40).train);
        let plan = LocalPlan::expanded(&[2].into(), TaskId(1));
        assert!(local_train(&tiny_model(), &c, &plan, TaskId(1), &CFG, 9).is_err());
    }

    #[test]
    fn empty_shard_skipped() {
        let c = client(0, vec![1e6], LabeledDataset::empty(2));
        let plan = LocalPlan::head_only(TaskId(1));
        assert!(local_train(&tiny_model(), &c, &plan, TaskId(1), &CFG, 1).unwrap().is_none());
    }

    #[test]
    fn modes_switch_only_on_period() {
        let data = tiny_data(20).train;
        let mut cs: Vec<Client> = (0..6).map(|i| client(i, vec![1.0, 2.0, 3.0, 4.0], data.clone())).collect();
        cs.push(client(6, vec![5.0], data));
        for round in 0..MODE_SWITCH_PERIOD {
            mode_switch(round, &mut cs, 7);
            assert!(cs.iter().all(|c| c.state.current_mode == 0), "round {round}");
        }
        let mut again = cs.clone();
        mode_switch(20, &mut cs, 7);
        mode_switch(20, &mut again, 7);
        assert_eq!(cs, again);
        assert!(cs.iter().any(|c| c.state.current_mode != 0));
        assert_eq!(cs[6].state.current_mode, 0);
    }

    #[test]
    fn profile_validation() {
        let bad = ClientProfile { id: 0, alpha: 0.0, resource_score: 1.0, modes: vec![1.0], n_samples: 0, bandwidth: 1.0 };
        assert!(bad.validate().is_err());
        assert!(ClientProfile { alpha: 1.0, modes: vec![], ..bad.clone() }.validate().is_err());
        assert!(ClientProfile { alpha: 1.0, ..bad }.validate().is_ok());
    }
}
