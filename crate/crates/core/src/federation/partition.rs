use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand_distr::Gamma;

use crate::datagen::{label_histogram, LabeledDataset};
use crate::error::{input_err, Result};
use crate::rng::{derive_seed, rng_from_seed};

/// Non-IID split: every client draws class proportions `p_m ~ Dir(alpha)`,
/// then each sample of class `c` goes to client `m` with probability
/// proportional to `p_{m,c}`. Every sample lands in exactly one shard.
pub fn partition_dirichlet(data: &LabeledDataset, clients: usize, alpha: f64, seed: u64) -> Result<Vec<LabeledDataset>> {
    partition_dirichlet_per_client(data, &vec![alpha; clients], seed)
}

/// Like [`partition_dirichlet`] with one concentration per client.
pub fn partition_dirichlet_per_client(data: &LabeledDataset, alphas: &[f64], seed: u64) -> Result<Vec<LabeledDataset>> {
    let clients = alphas.len();
    if clients == 0 {
        return Err(input_err!("need at least one client"));
    }
    if clients > data.len() {
        return Err(input_err!("{clients} clients for {} samples", data.len()));
    }
    if let Some(a) = alphas.iter().find(|a| !(a.is_finite() && **a > 0.0)) {
        return Err(input_err!("Dirichlet concentration must be positive, got {a}"));
    }
    let k = data.num_classes();

    let mut proportions = Vec::with_capacity(clients);
    for (m, &alpha) in alphas.iter().enumerate() {
        let mut rng = rng_from_seed(derive_seed(seed, "dirichlet", m as u64));
        let gamma = Gamma::new(alpha, 1.0).map_err(|e| input_err!("gamma({alpha}): {e}"))?;
        let draws: Vec<f64> = (0..k).map(|_| gamma.sample(&mut rng)).collect();
        let total: f64 = draws.iter().sum();
        proportions.push(if total > 0.0 { draws.iter().map(|g| g / total).collect() } else { vec![1.0 / k as f64; k] });
    }

    let mut assignment: Vec<Vec<usize>> = vec![Vec::new(); clients];
    for c in 0..k {
        let mut members: Vec<usize> =
            data.examples().iter().enumerate().filter(|(_, e)| e.label == c).map(|(i, _)| i).collect();
        if members.is_empty() {
            continue;
        }
        let mut rng = rng_from_seed(derive_seed(seed, "assign", c as u64));
        members.shuffle(&mut rng);
        let weights: Vec<f64> = proportions.iter().map(|p: &Vec<f64>| p[c]).collect();
        let dist = WeightedIndex::new(&weights)
            .or_else(|_| WeightedIndex::new(vec![1.0; clients]))
            .map_err(|e| input_err!("class weights: {e}"))?;
        for i in members {
            assignment[dist.sample(&mut rng)].push(i);
        }
    }

    Ok(assignment
        .into_iter()
        .map(|mut idx| {
            idx.sort_unstable();
            data.subset(&idx)
        })
        .collect())
}

/// Share of the most common class in a shard (0 for an empty shard).
pub fn max_class_share(shard: &LabeledDataset) -> f64 {
    if shard.is_empty() {
        return 0.0;
    }
    *label_histogram(shard).iter().max().expect("at least two classes") as f64 / shard.len() as f64
}

/// Mean of [`max_class_share`] over non-empty shards.
pub fn mean_max_class_share(shards: &[LabeledDataset]) -> f64 {
    let shares: Vec<f64> = shards.iter().filter(|s| !s.is_empty()).map(max_class_share).collect();
    if shares.is_empty() {
        return 0.0;
    }
    shares.iter().sum::<f64>() / shares.len() as f64
}
