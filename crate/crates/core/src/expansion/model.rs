use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{ExpandInput, ZeroInitPolicy};
use crate::error::{config_err, input_err, Result};
use crate::nn::{
    forward, BaseModel, BlockParams, Classifier, ForwardPass, Head, ModelSpec, NetView, ParamId, TaskId,
    Tensor, Trainable, TrainableMask,
};

/// A frozen base model plus zero-initialised expanded blocks attached after
/// selected positions, and trainable downstream heads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpandedModel {
    pub base: BaseModel,
    /// Keyed by 1-based block position.
    pub expanded: BTreeMap<usize, BlockParams>,
    /// Heads owned by the expanded model; they shadow base heads of the same task.
    pub heads: BTreeMap<TaskId, Head>,
    pub zero_init_policy: ZeroInitPolicy,
    pub expand_input: ExpandInput,
}

/// Copies block `l` for every selected position and zeroes it according to
/// `policy`, so every expansion contributes exactly zero at construction.
pub fn expand(
    base: &BaseModel,
    positions: &[usize],
    policy: ZeroInitPolicy,
    expand_input: ExpandInput,
) -> Result<ExpandedModel> {
    let layers = base.spec.layers;
    let mut expanded = BTreeMap::new();
    for &pos in positions {
        if pos == 0 || pos > layers {
            return Err(input_err!("expansion position {pos} outside [1, {layers}]"));
        }
        let mut block = base.blocks[pos - 1].clone();
        let zeroed: Vec<&mut Tensor> = match policy {
            ZeroInitPolicy::OutputProj => vec![&mut block.wo, &mut block.bo, &mut block.w2, &mut block.b2],
            ZeroInitPolicy::AllLinear => {
                let b = &mut block;
                vec![
                    &mut b.wq, &mut b.bq, &mut b.wk, &mut b.bk, &mut b.wv, &mut b.bv, &mut b.wo, &mut b.bo, &mut b.w1,
                    &mut b.b1, &mut b.w2, &mut b.b2,
                ]
            }
        };
        zeroed.into_iter().for_each(|t| t.fill(0.0));
        if expanded.insert(pos, block).is_some() {
            return Err(input_err!("expansion position {pos} listed twice"));
        }
    }
    Ok(ExpandedModel { base: base.clone(), expanded, heads: BTreeMap::new(), zero_init_policy: policy, expand_input })
}

impl ExpandedModel {
    /// A base model wrapped without any expansion.
    pub fn from_base(base: BaseModel) -> Self {
        Self {
            base,
            expanded: BTreeMap::new(),
            heads: BTreeMap::new(),
            zero_init_policy: ZeroInitPolicy::OutputProj,
            expand_input: ExpandInput::Branch,
        }
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.base.spec
    }

    pub fn positions(&self) -> BTreeSet<usize> {
        self.expanded.keys().copied().collect()
    }

    pub fn add_head(&mut self, task: TaskId, seed: u64) {
        self.heads.insert(task, Head::init(&self.base.spec, seed));
    }

    pub fn head(&self, task: TaskId) -> Result<&Head> {
        self.heads.get(&task).or_else(|| self.base.heads.get(&task)).ok_or_else(|| config_err!("no classifier head for {task}"))
    }

    pub fn head_mut(&mut self, task: TaskId) -> Result<&mut Head> {
        if self.heads.contains_key(&task) {
            return Ok(self.heads.get_mut(&task).expect("checked"));
        }
        self.base.heads.get_mut(&task).ok_or_else(|| config_err!("no classifier head for {task}"))
    }

    pub fn param_count(&self) -> usize {
        self.base.param_count()
            + self.expanded.values().map(|b| b.param_count()).sum::<usize>()
            + self.heads.values().map(|h| h.weight.len() + h.bias.len()).sum::<usize>()
    }

    /// View with only `active` expansions switched on.
    pub fn with_active(&self, active: &BTreeSet<usize>) -> Result<ActiveExpanded<'_>> {
        if let Some(p) = active.iter().find(|p| !self.expanded.contains_key(p)) {
            return Err(input_err!("position {p} has no expanded block"));
        }
        Ok(ActiveExpanded { model: self, active: active.clone() })
    }

    /// The frozen backbone path: every expansion inactive.
    pub fn base_path(&self) -> ActiveExpanded<'_> {
        ActiveExpanded { model: self, active: BTreeSet::new() }
    }

    fn view(&self, task: TaskId, active: Option<&BTreeSet<usize>>) -> Result<NetView<'_>> {
        let mut net = crate::nn::base_net(&self.base, self.head(task)?, task);
        net.expand_input = self.expand_input;
        for (&pos, block) in &self.expanded {
            if active.is_none_or(|a| a.contains(&pos)) {
                net.expansions[pos - 1] = Some((pos, block));
            }
        }
        Ok(net)
    }
}

impl Classifier for ExpandedModel {
    fn spec(&self) -> &ModelSpec {
        &self.base.spec
    }

    /// All expansions active.
    fn net(&self, task: TaskId) -> Result<NetView<'_>> {
        self.view(task, None)
    }
}

impl Trainable for ExpandedModel {
    fn params(&self) -> Vec<(ParamId, &Tensor)> {
        let mut out: Vec<(ParamId, &Tensor)> = self
            .base
            .params()
            .into_iter()
            .filter(|(id, _)| match id {
                ParamId::HeadWeight(t) | ParamId::HeadBias(t) => !self.heads.contains_key(t),
                _ => true,
            })
            .collect();
        for (&pos, b) in &self.expanded {
            out.extend(b.tensors().into_iter().enumerate().map(|(s, t)| (ParamId::Expanded(pos, s), t)));
        }
        for (&task, h) in &self.heads {
            out.push((ParamId::HeadWeight(task), &h.weight));
            out.push((ParamId::HeadBias(task), &h.bias));
        }
        out
    }

    fn params_mut(&mut self) -> Vec<(ParamId, &mut Tensor)> {
        let own = &self.heads;
        let mut out: Vec<(ParamId, &mut Tensor)> = self
            .base
            .params_mut()
            .into_iter()
            .filter(|(id, _)| match id {
                ParamId::HeadWeight(t) | ParamId::HeadBias(t) => !own.contains_key(t),
                _ => true,
            })
            .collect();
        for (&pos, b) in self.expanded.iter_mut() {
            out.extend(b.tensors_mut().into_iter().enumerate().map(|(s, t)| (ParamId::Expanded(pos, s), t)));
        }
        for (&task, h) in self.heads.iter_mut() {
            out.push((ParamId::HeadWeight(task), &mut h.weight));
            out.push((ParamId::HeadBias(task), &mut h.bias));
        }
        out
    }
}

/// An [`ExpandedModel`] with a chosen subset of expansions active.
#[derive(Debug, Clone)]
pub struct ActiveExpanded<'a> {
    model: &'a ExpandedModel,
    active: BTreeSet<usize>,
}

impl Classifier for ActiveExpanded<'_> {
    fn spec(&self) -> &ModelSpec {
        &self.model.base.spec
    }

    fn net(&self, task: TaskId) -> Result<NetView<'_>> {
        self.model.view(task, Some(&self.active))
    }
}

pub fn forward_expanded(
    model: &ExpandedModel,
    batch: &[&[u32]],
    task: TaskId,
    active: &BTreeSet<usize>,
) -> Result<ForwardPass> {
    forward(&model.with_active(active)?, batch, task)
}

/// Trainable exactly: the expanded blocks in `assigned` and the head of `task`.
pub fn trainable_mask(model: &ExpandedModel, assigned: &BTreeSet<usize>, task: TaskId) -> Result<TrainableMask> {
    if let Some(p) = assigned.iter().find(|p| !model.expanded.contains_key(p)) {
        return Err(input_err!("position {p} has no expanded block"));
    }
    Ok(TrainableMask { expanded: assigned.clone(), heads: [task].into(), ..TrainableMask::default() })
}
