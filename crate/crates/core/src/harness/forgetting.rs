use super::config::ExperimentConfig;
use super::metrics::MetricsSeries;
use crate::datagen::{gen_task, LabeledDataset};
use crate::error::{Error, Result};
use crate::federation::{federate, Method};
use crate::nn::{batch_order, evaluate, init_model, sgd_step_on, BaseModel, TrainableMask};
use crate::rng::SeedStreams;

/// A backbone trained centrally on the general task, with its head.
#[derive(Debug, Clone)]
pub struct Pretrained {
    pub base: BaseModel,
    pub acc_before: f64,
    pub general_test: LabeledDataset,
    pub epochs: usize,
}

/// Trains a fresh model on the general task until its test accuracy reaches
/// the configured target. Fails with the accuracy trajectory when the epoch
/// budget runs out first.
pub fn pretrain(cfg: &ExperimentConfig) -> Result<Pretrained> {
    let seeds = SeedStreams::new(cfg.seed);
    let data = gen_task(&cfg.general_task, cfg.general_samples, cfg.seed)?;
    let task = cfg.general_task.task_id;
    let mut base = init_model(cfg.model, seeds.seed("init"))?;
    base.add_head(task, seeds.seed("general_head"));
    let mask = TrainableMask::full(cfg.model.layers, [task]);
    let mut rng = seeds.rng("pretrain");
    let pc = &cfg.pretrain;

    let mut history = Vec::new();
    for epoch in 1..=pc.max_epochs {
        for idx in batch_order(data.train.len(), pc.batch_size, &mut rng) {
            sgd_step_on(&mut base, &data.train, &idx, task, pc.lr, &mask)?;
        }
        let acc = evaluate(&base, &data.test, task)?;
        log::info!("pretrain epoch {epoch}: general accuracy {acc:.4}");
        history.push(acc);
        if acc >= pc.target_accuracy {
            return Ok(Pretrained { base, acc_before: acc, general_test: data.test, epochs: epoch });
        }
    }
    Err(Error::Runtime(format!(
        "pretraining stayed below {} after {} epochs (accuracy by epoch: {history:?})",
        pc.target_accuracy, pc.max_epochs
    )))
}

/// Pretrains once, then federates the downstream task with every method
/// in `methods` from the same starting point.
pub fn forgetting_experiment(cfg: &ExperimentConfig, methods: &[Method]) -> Result<Vec<MetricsSeries>> {
    cfg.validate()?;
    let pretrained = pretrain(cfg)?;
    methods.iter().map(|&m| Ok(federate(cfg, &pretrained, m)?.series)).collect()
}
