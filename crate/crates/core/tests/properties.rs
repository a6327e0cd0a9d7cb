use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;

mod common;
use common::greedy_oracle;

use fedbe::datagen::{gen_task, label_histogram, SyntheticTaskSpec};
use fedbe::expansion::select_expansion_layers;
use fedbe::federation::{
    adjust_task_size, aggregate, assign_blocks, heterogeneity, partition_dirichlet, ClientUpload, ParamKey,
};
use fedbe::nn::{softmax, TaskId};

/// Global block values, then per client a sample count and an optional delta per block.
type Instance = (Vec<Vec<f64>>, Vec<(usize, Vec<Option<Vec<f64>>>)>);

fn upload_strategy() -> impl Strategy<Value = Instance> {
    (1usize..=3, 1usize..=5).prop_flat_map(|(blocks, width)| {
        let globals = prop::collection::vec(prop::collection::vec(-5.0..5.0f64, width), blocks);
        let client = (
            1usize..50,
            prop::collection::vec(prop::option::of(prop::collection::vec(-1.0..1.0f64, width)), blocks),
        );
        (globals, prop::collection::vec(client, 1..=4))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn greedy_matches_oracle(g in prop::collection::vec(0.0..10.0f64, 1..=8), k_frac in 0.0..1.0f64, li in 0usize..4) {
        prop_assume!(g.iter().any(|v| *v > 0.0));
        let k = 1 + ((g.len() as f64 * k_frac) as usize).min(g.len() - 1);
        let lambda = [0.0, 0.25, 0.5, 1.0][li];
        let got = select_expansion_layers(&g, k, lambda).unwrap();
        prop_assert_eq!(&got, &greedy_oracle(&g, k, lambda));
        let distinct: BTreeSet<usize> = got.iter().copied().collect();
        prop_assert_eq!(distinct.len(), k);
    }

    #[test]
    fn aggregation_is_brute_force_mean((globals, clients) in upload_strategy()) {
        let mut global: BTreeMap<ParamKey, Vec<f64>> =
            globals.iter().enumerate().map(|(b, v)| (ParamKey::Expanded(b + 1), v.clone())).collect();
        let uploads: Vec<ClientUpload> = clients
            .iter()
            .enumerate()
            .map(|(id, (n, deltas))| ClientUpload {
                client_id: id,
                samples: *n,
                delta: deltas
                    .iter()
                    .enumerate()
                    .filter_map(|(b, d)| d.clone().map(|d| (ParamKey::Expanded(b + 1), d)))
                    .collect(),
            })
            .collect();
        let mut reversed = global.clone();
        let report = aggregate(&mut global, &uploads).unwrap();
        let mut rev_uploads = uploads.clone();
        rev_uploads.reverse();
        aggregate(&mut reversed, &rev_uploads).unwrap();
        prop_assert_eq!(&global, &reversed);

        for (b, theta) in globals.iter().enumerate() {
            let parts: Vec<(usize, &Vec<f64>)> =
                clients.iter().filter_map(|(n, d)| d[b].as_ref().map(|d| (*n, d))).collect();
            let total: usize = parts.iter().map(|p| p.0).sum();
            for (i, t) in theta.iter().enumerate() {
                let expected = if parts.is_empty() {
                    *t
                } else {
                    parts.iter().map(|(n, d)| *n as f64 * (t + d[i])).sum::<f64>() / total as f64
                };
                prop_assert!((global[&ParamKey::Expanded(b + 1)][i] - expected).abs() < 1e-12);
            }
            if let Some(w) = report.weights.get(&ParamKey::Expanded(b + 1)) {
                prop_assert!((w.iter().map(|x| x.1).sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn assignment_top_scores(scores in prop::collection::btree_map(1usize..12, 0.0..1.0f64, 1..8), frac in 0.0..1.0f64) {
        let size = 1 + ((scores.len() as f64 * frac) as usize).min(scores.len() - 1);
        let set = assign_blocks(&scores, size).unwrap();
        prop_assert_eq!(set.len(), size);
        let worst_in = set.iter().map(|p| scores[p]).fold(f64::INFINITY, f64::min);
        for (p, s) in &scores {
            if !set.contains(p) {
                prop_assert!(*s <= worst_in);
            }
        }
    }

    #[test]
    fn task_size_in_range(tau in 0.01..100.0f64, prev in prop::option::of(0.0..1000.0f64), k in 1usize..12) {
        let s = adjust_task_size(tau, prev, k).unwrap();
        prop_assert!((1..=k).contains(&s));
    }

    #[test]
    fn heterogeneity_decreasing(a in 1e-3..100.0f64, b in 1e-3..100.0f64) {
        prop_assume!(a < b);
        prop_assert!(heterogeneity(a).unwrap() > heterogeneity(b).unwrap());
    }

    #[test]
    fn softmax_rows_are_distributions(row in prop::collection::vec(-50.0..50.0f64, 1..10)) {
        let p = softmax(&row);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|v| *v >= 0.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn partition_conserves_samples(clients in 1usize..12, alpha in 0.01..100.0f64, seed in any::<u64>()) {
        let spec = SyntheticTaskSpec::contiguous(TaskId(0), 64, 16, 4, 4, 0.3, 0, 32..64, 1);
        let data = gen_task(&spec, 400, 5).unwrap().train;
        let shards = partition_dirichlet(&data, clients, alpha, seed).unwrap();
        prop_assert_eq!(shards.len(), clients);
        prop_assert_eq!(shards.iter().map(|s| s.len()).sum::<usize>(), data.len());

        let mut pooled: Vec<_> = shards.iter().flat_map(|s| s.examples().to_vec()).collect();
        let mut all = data.examples().to_vec();
        pooled.sort_by(|a, b| (&a.tokens, a.label).cmp(&(&b.tokens, b.label)));
        all.sort_by(|a, b| (&a.tokens, a.label).cmp(&(&b.tokens, b.label)));
        prop_assert_eq!(pooled, all);

        let mut hist = vec![0; 4];
        for s in &shards {
            for (h, c) in hist.iter_mut().zip(label_histogram(s)) {
                *h += c;
            }
        }
        prop_assert_eq!(hist, label_histogram(&data));
    }
}
