//! Server-side block expansion: how many blocks to add, where to put them,
//! and the expanded model they produce.

mod budget;
mod model;
mod select;

use serde::{Deserialize, Serialize};

pub use budget::{choose_k, flops_estimate, BudgetSpec};
pub use model::{expand, forward_expanded, trainable_mask, ActiveExpanded, ExpandedModel};
pub use select::{proxy_gradient_profile, select_expansion_layers, uniform_positions};

/// Which tensors of a copied block are zeroed when it becomes an expansion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ZeroInitPolicy {
    /// Only the attention output projection and the second feed-forward
    /// matrix (with their biases); interior weights keep the copied values.
    #[default]
    OutputProj,
    /// Every weight matrix and bias.
    AllLinear,
}

/// What an expanded block reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExpandInput {
    /// The residual branch output of the block it follows.
    #[default]
    Branch,
    /// The block's post-residual output.
    PostResidual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpansionPlan {
    pub k: usize,
    /// 1-based positions in selection order.
    pub positions: Vec<usize>,
    pub lambda: f64,
}

/// Scalar form of the expanded residual update for one block:
/// `x + branch + expand(input)` where the input is `branch` or `x + branch`.
pub fn expanded_residual(x: f64, branch: f64, input: ExpandInput, expand: impl Fn(f64) -> f64) -> f64 {
    let post = x + branch;
    let u = match input {
        ExpandInput::Branch => branch,
        ExpandInput::PostResidual => post,
    };
    post + expand(u)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_residual_composition() {
        let phi_expand = |u: f64| if u == 2.0 { 0.5 } else { f64::NAN };
        assert_eq!(expanded_residual(1.0, 2.0, ExpandInput::Branch, phi_expand), 3.5);
        assert_eq!(expanded_residual(1.0, 2.0, ExpandInput::PostResidual, |u| u / 6.0), 3.5);
    }

    #[test]
    fn plan_json_shape() {
        let plan = ExpansionPlan { k: 2, positions: vec![2, 4], lambda: 0.5 };
        assert_eq!(serde_json::to_string(&plan).unwrap(), r#"{"k":2,"positions":[2,4],"lambda":0.5}"#);
    }
}
