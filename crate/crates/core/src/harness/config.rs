use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::datagen::{validate_disjoint, SyntheticTaskSpec};
use crate::error::{config_err, Result};
use crate::expansion::{choose_k, BudgetSpec, ExpandInput, ZeroInitPolicy};
use crate::federation::{DeviceProfile, Method, ScoringConfig};
use crate::nn::{ModelSpec, TaskId};

/// One concentration for every client, or one per client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Alpha {
    Global(f64),
    PerClient(Vec<f64>),
}

impl Alpha {
    pub fn per_client(&self, clients: usize) -> Result<Vec<f64>> {
        let v = match self {
            Alpha::Global(a) => vec![*a; clients],
            Alpha::PerClient(v) if v.len() == clients => v.clone(),
            Alpha::PerClient(v) => return Err(config_err!("{} alphas for {clients} clients", v.len())),
        };
        if v.iter().any(|a| !(*a > 0.0) || !a.is_finite()) {
            return Err(config_err!("every alpha must be positive and finite"));
        }
        Ok(v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpansionConfig {
    /// Explicit number of expanded blocks; takes precedence over `budget`.
    pub k: Option<usize>,
    pub budget: Option<BudgetSpec>,
    pub lambda: f64,
    pub zero_init_policy: ZeroInitPolicy,
    pub expand_input: ExpandInput,
    /// Profiling steps on the proxy set.
    pub proxy_steps: usize,
    pub proxy_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainConfig {
    pub target_accuracy: f64,
    pub max_epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    pub general_task: SyntheticTaskSpec,
    pub downstream_task: SyntheticTaskSpec,
    pub general_samples: usize,
    pub downstream_samples: usize,
    pub clients: usize,
    pub alpha: Alpha,
    pub rounds: usize,
    pub method: Method,
    pub expansion: ExpansionConfig,
    pub scoring: ScoringConfig,
    /// Target per-round training seconds for dynamic sizing.
    pub tau: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub selection_fraction: f64,
    /// Cycled over clients by id.
    pub devices: Vec<DeviceProfile>,
    pub pretrain: PretrainConfig,
    /// Downstream accuracy used for time-to-target in reports.
    pub target_accuracy: f64,
    pub seed: u64,
}

const PRESETS: [&str; 2] = ["reference", "toy"];

impl ExperimentConfig {
    /// Defaults from the original setting: a RoBERTa-base sized backbone,
    /// lambda 0.5, weights 0.5/0.3/0.2 and 50 rounds.
    pub fn reference() -> Self {
        let model = ModelSpec {
            layers: 12,
            d_model: 768,
            heads: 12,
            d_ff: 3072,
            vocab_size: 50265,
            max_seq_len: 256,
            num_classes: 4,
        };
        Self {
            model,
            general_task: SyntheticTaskSpec::contiguous(TaskId(0), 50265, 256, 4, 16, 0.1, 0, 1000..50265, 11),
            downstream_task: SyntheticTaskSpec::contiguous(TaskId(1), 50265, 256, 4, 16, 0.1, 64, 1000..50265, 12),
            general_samples: 20_000,
            downstream_samples: 20_000,
            clients: 10,
            alpha: Alpha::Global(0.5),
            rounds: 50,
            method: Method::Fedbe,
            expansion: ExpansionConfig {
                k: Some(2),
                budget: None,
                lambda: 0.5,
                zero_init_policy: ZeroInitPolicy::OutputProj,
                expand_input: ExpandInput::Branch,
                proxy_steps: 20,
                proxy_samples: 1000,
            },
            scoring: ScoringConfig::default(),
            tau: 600.0,
            lr: 2e-5,
            epochs: 1,
            batch_size: 32,
            selection_fraction: 1.0,
            devices: vec![
                DeviceProfile { modes: vec![1e12, 5e11], bandwidth: 1e7, resource_score: 10.0 },
                DeviceProfile { modes: vec![1e11, 5e10], bandwidth: 1e6, resource_score: 1.0 },
            ],
            pretrain: PretrainConfig { target_accuracy: 0.9, max_epochs: 3, lr: 2e-5, batch_size: 32 },
            target_accuracy: 0.8,
            seed: 0,
        }
    }

    /// Desk-scale setting: a 4-block, width-32 model on 16-token sequences.
    pub fn toy() -> Self {
        let model =
            ModelSpec { layers: 4, d_model: 32, heads: 4, d_ff: 64, vocab_size: 64, max_seq_len: 16, num_classes: 4 };
        Self {
            model,
            general_task: SyntheticTaskSpec::contiguous(TaskId(0), 64, 16, 4, 4, 0.3, 0, 32..64, 11),
            downstream_task: SyntheticTaskSpec::contiguous(TaskId(1), 64, 16, 4, 4, 0.3, 16, 32..64, 12),
            general_samples: 2000,
            downstream_samples: 1500,
            clients: 8,
            alpha: Alpha::Global(0.1),
            rounds: 30,
            method: Method::Fedbe,
            expansion: ExpansionConfig {
                k: Some(2),
                budget: None,
                lambda: 0.5,
                zero_init_policy: ZeroInitPolicy::OutputProj,
                expand_input: ExpandInput::Branch,
                proxy_steps: 20,
                proxy_samples: 200,
            },
            scoring: ScoringConfig::default(),
            tau: 4.0,
            lr: 0.1,
            epochs: 1,
            batch_size: 16,
            selection_fraction: 1.0,
            devices: vec![
                DeviceProfile { modes: vec![1e9, 8e8], bandwidth: 1e6, resource_score: 10.0 },
                DeviceProfile { modes: vec![1e8, 8e7], bandwidth: 1e6, resource_score: 1.0 },
            ],
            pretrain: PretrainConfig { target_accuracy: 0.95, max_epochs: 20, lr: 0.05, batch_size: 16 },
            target_accuracy: 0.8,
            seed: 0,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "reference" => Ok(Self::reference()),
            "toy" => Ok(Self::toy()),
            _ => Err(config_err!("unknown preset '{name}' (expected one of {PRESETS:?})")),
        }
    }

    /// Parses JSON. An optional `"preset"` field names the base settings
    /// (`reference` when absent); the remaining fields are merged over it,
    /// recursing into nested objects.
    pub fn from_json(text: &str) -> Result<Self> {
        let mut value: Value = serde_json::from_str(text)?;
        let Value::Object(map) = &mut value else {
            return Err(config_err!("config must be a JSON object"));
        };
        let preset = match map.remove("preset") {
            None => "reference".to_string(),
            Some(Value::String(s)) => s,
            Some(other) => return Err(config_err!("preset must be a string, got {other}")),
        };
        let mut base = serde_json::to_value(Self::preset(&preset)?)?;
        merge(&mut base, value);
        let cfg: Self = serde_json::from_value(base)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err!("cannot read config {}: {e}", path.display()))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config is always serialisable")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json() + "\n")?;
        Ok(())
    }

    /// Number of expanded blocks: explicit `k`, else derived from the budget.
    pub fn k(&self) -> Result<usize> {
        match (self.expansion.k, &self.expansion.budget) {
            (Some(k), _) => Ok(k),
            (None, Some(b)) => Ok(choose_k(&self.model, b)),
            (None, None) => Err(config_err!("expansion needs either k or budget")),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate().map_err(|e| config_err!("model: {e}"))?;
        for (name, t) in [("general_task", &self.general_task), ("downstream_task", &self.downstream_task)] {
            t.validate().map_err(|e| config_err!("{name}: {e}"))?;
            if t.vocab_size > self.model.vocab_size || t.seq_len > self.model.max_seq_len {
                return Err(config_err!("{name} does not fit the model vocabulary or context"));
            }
            if t.num_classes != self.model.num_classes {
                return Err(config_err!("{name} has {} classes, model has {}", t.num_classes, self.model.num_classes));
            }
        }
        if self.general_task.task_id == self.downstream_task.task_id {
            return Err(config_err!("general and downstream tasks need distinct ids"));
        }
        validate_disjoint(&self.general_task, &self.downstream_task).map_err(|e| config_err!("{e}"))?;
        if self.rounds == 0 {
            return Err(config_err!("rounds must be at least 1"));
        }
        if self.clients == 0 {
            return Err(config_err!("need at least one client"));
        }
        self.alpha.per_client(self.clients)?;
        self.scoring.validate()?;
        let k = self.k()?;
        if self.method.expands() && (k == 0 || k > self.model.layers) {
            return Err(config_err!("k = {k} outside [1, {}]", self.model.layers));
        }
        if !(0.0..=1.0).contains(&self.expansion.lambda) {
            return Err(config_err!("lambda must lie in [0, 1]"));
        }
        if !(self.tau > 0.0) || !(self.lr > 0.0) || !(self.pretrain.lr > 0.0) {
            return Err(config_err!("tau and learning rates must be positive"));
        }
        if self.batch_size == 0 || self.pretrain.batch_size == 0 {
            return Err(config_err!("batch sizes must be positive"));
        }
        if !(self.selection_fraction > 0.0 && self.selection_fraction <= 1.0) {
            return Err(config_err!("selection_fraction must be in (0, 1]"));
        }
        if self.devices.is_empty() {
            return Err(config_err!("need at least one device profile"));
        }
        for d in &self.devices {
            if d.modes.is_empty() || d.modes.iter().any(|r| !(*r > 0.0)) || !(d.bandwidth > 0.0) || !(d.resource_score > 0.0) {
                return Err(config_err!("device rates, bandwidth and resource score must be positive"));
            }
        }
        if self.expansion.proxy_steps == 0 || self.expansion.proxy_samples == 0 {
            return Err(config_err!("proxy profiling needs samples and steps"));
        }
        Ok(())
    }
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_defaults() {
        let c = ExperimentConfig::reference();
        assert_eq!(c.expansion.lambda, 0.5);
        assert_eq!((c.scoring.w_d, c.scoring.w_t, c.scoring.w_r), (0.5, 0.3, 0.2));
        assert_eq!(c.rounds, 50);
        c.validate().unwrap();
        ExperimentConfig::toy().validate().unwrap();
    }

    #[test]
    fn round_trip() {
        let c = ExperimentConfig::toy();
        let back: ExperimentConfig = serde_json::from_str(&c.to_json()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn merges_over_preset() {
        let c = ExperimentConfig::from_json(r#"{"preset":"toy","rounds":3,"expansion":{"lambda":0.25},"alpha":[1,2,3,4,5,6,7,8]}"#)
            .unwrap();
        assert_eq!(c.rounds, 3);
        assert_eq!(c.expansion.lambda, 0.25);
        assert_eq!(c.expansion.k, Some(2));
        assert_eq!(c.alpha, Alpha::PerClient(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]));
    }

    #[test]
    fn bad_configs() {
        for text in [
            r#"{"preset":"huge"}"#,
            r#"{"preset":"toy","rounds":0}"#,
            r#"{"preset":"toy","method":"fedavg"}"#,
            r#"{"preset":"toy","scoring":{"w_d":0.6}}"#,
            r#"{"preset":"toy","typo_field":1}"#,
            r#"{"preset":"toy","alpha":[1,2]}"#,
            "not json",
        ] {
            assert!(ExperimentConfig::from_json(text).unwrap_err().is_config(), "{text}");
        }
    }
}
