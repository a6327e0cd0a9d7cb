//! Seeded synthetic marker-token classification tasks.
//!
//! Each class owns a small set of marker tokens. A sequence of class `c`
//! emits, independently at every position, one of `c`'s markers with
//! probability `p` and a token from the shared noise pool otherwise. Counting
//! markers per class is therefore a near-optimal decision rule, which gives
//! every task a learnability certificate before any model is trained.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, input_err, Result};
use crate::nn::TaskId;
use crate::rng::{derive_seed, rng_from_seed};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTaskSpec {
    pub task_id: TaskId,
    pub vocab_size: usize,
    pub seq_len: usize,
    pub num_classes: usize,
    /// One disjoint marker set per class.
    pub markers: Vec<Vec<u32>>,
    pub marker_density: f64,
    pub noise_pool: Vec<u32>,
    pub seed: u64,
}

impl SyntheticTaskSpec {
    /// Markers for class `c` are `marker_start + c*m .. marker_start + (c+1)*m`;
    /// the noise pool is the half-open token range `noise`.
    #[allow(clippy::too_many_arguments)]
    pub fn contiguous(
        task_id: TaskId,
        vocab_size: usize,
        seq_len: usize,
        num_classes: usize,
        markers_per_class: usize,
        marker_density: f64,
        marker_start: u32,
        noise: std::ops::Range<u32>,
        seed: u64,
    ) -> Self {
        let m = markers_per_class as u32;
        let markers = (0..num_classes as u32)
            .map(|c| (marker_start + c * m..marker_start + (c + 1) * m).collect())
            .collect();
        Self {
            task_id,
            vocab_size,
            seq_len,
            num_classes,
            markers,
            marker_density,
            noise_pool: noise.collect(),
            seed,
        }
    }

    pub fn marker_tokens(&self) -> BTreeSet<u32> {
        self.markers.iter().flatten().copied().collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(config_err!("{}: need at least two classes", self.task_id));
        }
        if self.seq_len < 1 {
            return Err(config_err!("{}: sequence length must be positive", self.task_id));
        }
        if self.markers.len() != self.num_classes {
            return Err(config_err!("{}: {} marker sets for {} classes", self.task_id, self.markers.len(), self.num_classes));
        }
        if self.markers.iter().any(|m| m.is_empty()) {
            return Err(config_err!("{}: empty marker set", self.task_id));
        }
        let total: usize = self.markers.iter().map(|m| m.len()).sum();
        let markers = self.marker_tokens();
        if markers.len() != total {
            return Err(config_err!("{}: marker sets overlap", self.task_id));
        }
        if self.noise_pool.is_empty() {
            return Err(config_err!("{}: empty noise pool", self.task_id));
        }
        if self.noise_pool.iter().any(|t| markers.contains(t)) {
            return Err(config_err!("{}: noise pool contains marker tokens", self.task_id));
        }
        let noise: BTreeSet<u32> = self.noise_pool.iter().copied().collect();
        if total + noise.len() > self.vocab_size {
            return Err(config_err!("{}: markers plus noise exceed vocabulary", self.task_id));
        }
        if markers.iter().chain(&noise).any(|&t| t as usize >= self.vocab_size) {
            return Err(config_err!("{}: token id outside vocabulary", self.task_id));
        }
        if !(0.0..1.0).contains(&self.marker_density) {
            return Err(config_err!("{}: marker density {} outside [0, 1)", self.task_id, self.marker_density));
        }
        Ok(())
    }
}

/// Two tasks sharing a vocabulary must not share marker tokens.
pub fn validate_disjoint(a: &SyntheticTaskSpec, b: &SyntheticTaskSpec) -> Result<()> {
    if a.task_id == b.task_id {
        return Err(config_err!("tasks share id {}", a.task_id));
    }
    if !a.marker_tokens().is_disjoint(&b.marker_tokens()) {
        return Err(config_err!("{} and {} share marker tokens", a.task_id, b.task_id));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub tokens: Vec<u32>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub task_id: TaskId,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledDataset {
    examples: Vec<Example>,
    num_classes: usize,
    pub provenance: Option<Provenance>,
}

impl LabeledDataset {
    pub fn new(examples: Vec<Example>, num_classes: usize) -> Result<Self> {
        if let Some(e) = examples.iter().find(|e| e.label >= num_classes) {
            return Err(input_err!("label {} out of range for {} classes", e.label, num_classes));
        }
        Ok(Self { examples, num_classes, provenance: None })
    }

    pub fn empty(num_classes: usize) -> Self {
        Self { examples: Vec::new(), num_classes, provenance: None }
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labels(&self) -> Vec<usize> {
        self.examples.iter().map(|e| e.label).collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            examples: indices.iter().map(|&i| self.examples[i].clone()).collect(),
            num_classes: self.num_classes,
            provenance: self.provenance.clone(),
        }
    }

    pub fn take(&self, n: usize) -> Self {
        self.subset(&(0..n.min(self.len())).collect::<Vec<_>>())
    }

    /// One JSON object per line with fields `tokens` and `label`.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        for e in &self.examples {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_jsonl(path: &Path, num_classes: usize) -> Result<Self> {
        let r = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut examples = Vec::new();
        for line in r.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            examples.push(serde_json::from_str(&line)?);
        }
        Self::new(examples, num_classes)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskData {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
}

/// Generates `n` examples and splits them 80/20 into train and test.
pub fn gen_task(spec: &SyntheticTaskSpec, n: usize, seed: u64) -> Result<TaskData> {
    spec.validate()?;
    if n < spec.num_classes * 10 {
        return Err(input_err!("need at least {} examples, got {n}", spec.num_classes * 10));
    }
    let mut rng = rng_from_seed(derive_seed(seed, "gen_task", spec.seed ^ ((spec.task_id.0 as u64) << 32)));
    let mut examples = Vec::with_capacity(n);
    for _ in 0..n {
        let label = rng.random_range(0..spec.num_classes);
        let markers = &spec.markers[label];
        let tokens = (0..spec.seq_len)
            .map(|_| {
                if rng.random::<f64>() < spec.marker_density {
                    markers[rng.random_range(0..markers.len())]
                } else {
                    spec.noise_pool[rng.random_range(0..spec.noise_pool.len())]
                }
            })
            .collect();
        examples.push(Example { tokens, label });
    }
    let n_train = n * 4 / 5;
    let test = examples.split_off(n_train);
    let provenance = Some(Provenance { task_id: spec.task_id, seed });
    Ok(TaskData {
        train: LabeledDataset { examples, num_classes: spec.num_classes, provenance: provenance.clone() },
        test: LabeledDataset { examples: test, num_classes: spec.num_classes, provenance },
    })
}

/// Accuracy of the marker-counting rule (ties go to the lowest class).
pub fn bayes_oracle(data: &LabeledDataset, spec: &SyntheticTaskSpec) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    let correct = data
        .examples()
        .iter()
        .filter(|e| {
            let counts: Vec<f64> =
                spec.markers.iter().map(|m| e.tokens.iter().filter(|t| m.contains(t)).count() as f64).collect();
            crate::nn::argmax(&counts) == e.label
        })
        .count();
    correct as f64 / data.len() as f64
}

pub fn label_histogram(shard: &LabeledDataset) -> Vec<usize> {
    let mut h = vec![0; shard.num_classes()];
    for e in shard.examples() {
        h[e.label] += 1;
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(p: f64) -> SyntheticTaskSpec {
        SyntheticTaskSpec::contiguous(TaskId(0), 64, 16, 4, 4, p, 0, 32..64, 3)
    }

    #[test]
    fn generation_is_deterministic() {
        let a = gen_task(&spec(0.3), 200, 9).unwrap();
        let b = gen_task(&spec(0.3), 200, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.train.len(), 160);
        assert_eq!(a.test.len(), 40);
    }

    #[test]
    fn tokens_in_range_and_classes_balanced() {
        let d = gen_task(&spec(0.3), 10_000, 1).unwrap();
        let mut h = label_histogram(&d.train);
        for (a, b) in h.iter_mut().zip(label_histogram(&d.test)) {
            *a += b;
        }
        for c in h {
            assert!((c as f64 - 2500.0).abs() <= 0.05 * 2500.0, "class count {c}");
        }
        assert!(d.train.examples().iter().all(|e| e.tokens.iter().all(|&t| t < 64)));
    }

    #[test]
    fn oracle_certifies_learnability() {
        let s = spec(0.3);
        let d = gen_task(&s, 4000, 2).unwrap();
        assert!(bayes_oracle(&d.train, &s) >= 0.99);
        assert!(bayes_oracle(&d.test, &s) >= 0.99);
    }

    #[test]
    fn no_signal_is_chance() {
        let s = spec(0.0);
        let d = gen_task(&s, 10_000, 2).unwrap();
        let acc = bayes_oracle(&d.train, &s);
        assert!((acc - 0.25).abs() < 0.03, "acc {acc}");
    }

    #[test]
    fn single_class_with_markers_is_perfect() {
        let s = spec(0.3);
        let ex = Example { tokens: vec![5, 40, 41, 6], label: 1 };
        let d = LabeledDataset::new(vec![ex; 5], 4).unwrap();
        assert_eq!(bayes_oracle(&d, &s), 1.0);
    }

    #[test]
    fn too_few_examples_rejected() {
        assert!(gen_task(&spec(0.3), 39, 1).is_err());
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut s = spec(0.3);
        s.noise_pool.push(2);
        assert!(s.validate().is_err());
        let mut s = spec(0.3);
        s.markers[1][0] = 0;
        assert!(s.validate().is_err());
        let s = SyntheticTaskSpec::contiguous(TaskId(0), 40, 16, 4, 4, 0.3, 0, 16..48, 3);
        assert!(s.validate().is_err());
    }

    #[test]
    fn histogram_basics() {
        let empty = LabeledDataset::empty(4);
        assert_eq!(label_histogram(&empty), vec![0; 4]);
        let d = gen_task(&spec(0.3), 100, 4).unwrap();
        assert_eq!(label_histogram(&d.train).iter().sum::<usize>(), d.train.len());
    }

    #[test]
    fn jsonl_roundtrip() {
        let d = gen_task(&spec(0.3), 50, 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        d.train.write_jsonl(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.lines().next().unwrap().starts_with("{\"tokens\":["));
        let back = LabeledDataset::read_jsonl(&path, 4).unwrap();
        assert_eq!(back.examples(), d.train.examples());
    }
}
