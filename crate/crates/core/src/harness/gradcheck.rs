use rand::Rng as _;

use crate::datagen::{gen_task, SyntheticTaskSpec};
use crate::error::Result;
use crate::expansion::{expand, ExpandInput, ZeroInitPolicy};
use crate::nn::{finite_diff_oracle, init_model, ModelSpec, TaskId};
use crate::rng::SeedStreams;

/// The model the `gradcheck` command checks: two blocks of width 16.
pub fn gradcheck_spec() -> ModelSpec {
    ModelSpec { layers: 2, d_model: 16, heads: 2, d_ff: 32, vocab_size: 32, max_seq_len: 8, num_classes: 4 }
}

/// Finite-difference check of the base model and of an expanded model in
/// both input modes. Expanded blocks are perturbed away from zero first so
/// every gradient path carries signal. Returns `(case, max relative error)`.
pub fn gradcheck_suite(eps: f64, seed: u64) -> Result<Vec<(String, f64)>> {
    let spec = gradcheck_spec();
    let seeds = SeedStreams::new(seed);
    let task = TaskId(0);
    let data = gen_task(&SyntheticTaskSpec::contiguous(task, 32, 8, 4, 2, 0.3, 0, 8..32, 1), 40, seeds.seed("data"))?;
    let batch: Vec<&[u32]> = data.train.examples()[..4].iter().map(|e| e.tokens.as_slice()).collect();
    let labels: Vec<usize> = data.train.examples()[..4].iter().map(|e| e.label).collect();

    let mut base = init_model(spec, seeds.seed("init"))?;
    base.add_head(task, seeds.seed("head"));
    let mut out = vec![("base".to_string(), finite_diff_oracle(&base, &batch, &labels, task, eps)?)];

    let mut rng = seeds.rng("perturb");
    for input in [ExpandInput::Branch, ExpandInput::PostResidual] {
        let mut m = expand(&base, &[1, 2], ZeroInitPolicy::OutputProj, input)?;
        for block in m.expanded.values_mut() {
            for t in block.tensors_mut() {
                t.data_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.1..0.1));
            }
        }
        let name = format!("expanded/{}", serde_json::to_value(input)?.as_str().unwrap_or("?"));
        out.push((name, finite_diff_oracle(&m, &batch, &labels, task, eps)?));
    }
    Ok(out)
}
