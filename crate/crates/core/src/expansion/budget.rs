use serde::{Deserialize, Serialize};

use crate::nn::ModelSpec;

/// Resource limits on what the expanded blocks may add to the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetSpec {
    /// Maximum additional parameter count.
    pub delta_p_max: u64,
    /// Maximum additional forward FLOPs per token.
    pub delta_flops_max: u64,
}

impl BudgetSpec {
    pub fn unlimited() -> Self {
        Self { delta_p_max: u64::MAX, delta_flops_max: u64::MAX }
    }
}

/// Forward FLOPs of `n_blocks` blocks over one sequence of `seq_len` tokens:
///
/// ```text
/// (8 d^2 + 4 d T + 4 d d_ff) * T * n_blocks
/// ```
///
/// i.e. per token the four attention projections, score and value mixing,
/// and the two feed-forward matrices, each counted as 2 FLOPs per
/// multiply-add.
pub fn flops_estimate(spec: &ModelSpec, n_blocks: usize, seq_len: usize) -> u64 {
    let d = spec.d_model as u64;
    let t = seq_len as u64;
    let per_token = 8 * d * d + 4 * d * t + 4 * d * spec.d_ff as u64;
    per_token * t * n_blocks as u64
}

/// Largest `k <= layers` whose added parameters and per-token FLOPs (at the
/// model's maximum sequence length) both fit the budget.
pub fn choose_k(spec: &ModelSpec, budget: &BudgetSpec) -> usize {
    let p_block = spec.block_param_count() as u64;
    let f_block = flops_estimate(spec, 1, spec.max_seq_len) / spec.max_seq_len as u64;
    let by_params = budget.delta_p_max / p_block;
    let by_flops = budget.delta_flops_max / f_block;
    by_params.min(by_flops).min(spec.layers as u64) as usize
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> ModelSpec {
        ModelSpec { layers: 4, d_model: 32, heads: 4, d_ff: 128, vocab_size: 64, max_seq_len: 16, num_classes: 4 }
    }

    #[test]
    fn zero_budget_gives_zero() {
        assert_eq!(choose_k(&spec(), &BudgetSpec { delta_p_max: 0, delta_flops_max: u64::MAX }), 0);
    }

    #[test]
    fn parameter_budget_example() {
        let k = choose_k(&spec(), &BudgetSpec { delta_p_max: 40_000, delta_flops_max: u64::MAX });
        assert_eq!(k, 3);
    }

    #[test]
    fn capped_at_depth() {
        assert_eq!(choose_k(&spec(), &BudgetSpec::unlimited()), 4);
    }

    #[test]
    fn flops_closed_form() {
        assert_eq!(flops_estimate(&spec(), 0, 16), 0);
        assert_eq!(flops_estimate(&spec(), 1, 16), 16 * (8 * 1024 + 4 * 32 * 16 + 4 * 32 * 128));
        assert_eq!(flops_estimate(&spec(), 6, 16), 2 * flops_estimate(&spec(), 3, 16));
    }

    #[test]
    fn flops_budget_binds() {
        let per_token = flops_estimate(&spec(), 1, 16) / 16;
        let b = BudgetSpec { delta_p_max: u64::MAX, delta_flops_max: 2 * per_token + 1 };
        assert_eq!(choose_k(&spec(), &b), 2);
    }
}
