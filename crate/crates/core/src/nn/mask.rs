use std::collections::BTreeSet;

use super::grads::ParamId;
use super::model::TaskId;

/// Which parameter groups an SGD step may modify (and which gradients the
/// backward pass needs to produce).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TrainableMask {
    pub embeddings: bool,
    /// Base block indices (0-based).
    pub blocks: BTreeSet<usize>,
    /// Expansion positions (1-based).
    pub expanded: BTreeSet<usize>,
    pub heads: BTreeSet<TaskId>,
}

impl TrainableMask {
    pub fn frozen() -> Self {
        Self::default()
    }

    /// Everything in a base model with `layers` blocks plus the given heads.
    pub fn full(layers: usize, heads: impl IntoIterator<Item = TaskId>) -> Self {
        Self {
            embeddings: true,
            blocks: (0..layers).collect(),
            expanded: BTreeSet::new(),
            heads: heads.into_iter().collect(),
        }
    }

    pub fn head_only(task: TaskId) -> Self {
        Self { heads: [task].into(), ..Self::default() }
    }

    pub fn allows(&self, id: ParamId) -> bool {
        match id {
            ParamId::TokenEmb | ParamId::PosEmb => self.embeddings,
            ParamId::Block(l, _) => self.blocks.contains(&l),
            ParamId::Expanded(pos, _) => self.expanded.contains(&pos),
            ParamId::HeadWeight(t) | ParamId::HeadBias(t) => self.heads.contains(&t),
        }
    }
}
