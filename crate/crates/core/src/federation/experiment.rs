use super::client::{Client, ClientProfile, LocalTrainConfig};
use super::partition::partition_dirichlet_per_client;
use super::round::{run_round, Method, RoundContext, RoundRecord, ServerState};
use super::scoring::heterogeneity;
use crate::datagen::{gen_task, LabeledDataset, TaskData};
use crate::error::Result;
use crate::expansion::{
    expand, proxy_gradient_profile, select_expansion_layers, uniform_positions, ExpandedModel, ExpansionPlan,
};
use crate::harness::{pretrain, ExperimentConfig, Forgetting, MetricsSeries, Pretrained};
use crate::nn::evaluate;
use crate::rng::SeedStreams;

/// Everything a single federated run leaves behind.
#[derive(Debug, Clone)]
pub struct FederationRun {
    pub series: MetricsSeries,
    pub records: Vec<RoundRecord>,
    pub model: ExpandedModel,
}

/// Downstream train/test data of a config.
pub fn downstream_data(cfg: &ExperimentConfig) -> Result<TaskData> {
    gen_task(&cfg.downstream_task, cfg.downstream_samples, cfg.seed)
}

/// Expansion positions for `method`: none, the greedy profile-driven
/// selection, or evenly spaced.
pub fn plan_expansion(cfg: &ExperimentConfig, pretrained: &Pretrained, method: Method) -> Result<Option<ExpansionPlan>> {
    if !method.expands() {
        return Ok(None);
    }
    let k = cfg.k()?;
    let positions = if method == Method::FedbeUniformPos {
        uniform_positions(cfg.model.layers, k)?
    } else {
        let seeds = SeedStreams::new(cfg.seed);
        let proxy = gen_task(&cfg.downstream_task, cfg.expansion.proxy_samples, seeds.seed("proxy"))?.train;
        let profile = proxy_gradient_profile(
            &pretrained.base,
            &proxy,
            cfg.downstream_task.task_id,
            cfg.expansion.proxy_steps,
            cfg.lr,
            cfg.batch_size,
            seeds.seed("profile"),
        )?;
        log::debug!("block gradient profile: {profile:?}");
        select_expansion_layers(&profile, k, cfg.expansion.lambda)?
    };
    Ok(Some(ExpansionPlan { k, positions, lambda: cfg.expansion.lambda }))
}

fn build_clients(cfg: &ExperimentConfig, train: &LabeledDataset) -> Result<Vec<Client>> {
    let seeds = SeedStreams::new(cfg.seed);
    let alphas = cfg.alpha.per_client(cfg.clients)?;
    let shards = partition_dirichlet_per_client(train, &alphas, seeds.seed("partition"))?;
    shards
        .into_iter()
        .enumerate()
        .map(|(i, shard)| {
            let device = &cfg.devices[i % cfg.devices.len()];
            let profile = ClientProfile {
                id: i,
                alpha: alphas[i],
                resource_score: device.resource_score,
                modes: device.modes.clone(),
                n_samples: shard.len(),
                bandwidth: device.bandwidth,
            };
            Client::new(profile, shard)
        })
        .collect()
}

/// Federates the downstream task starting from `pretrained` with `method`,
/// then measures general-task forgetting.
pub fn federate(cfg: &ExperimentConfig, pretrained: &Pretrained, method: Method) -> Result<FederationRun> {
    let seeds = SeedStreams::new(cfg.seed);
    let data = downstream_data(cfg)?;
    let mut clients = build_clients(cfg, &data.train)?;
    let plan = plan_expansion(cfg, pretrained, method)?;

    let mut model = match &plan {
        Some(p) => expand(&pretrained.base, &p.positions, cfg.expansion.zero_init_policy, cfg.expansion.expand_input)?,
        None => ExpandedModel::from_base(pretrained.base.clone()),
    };
    let task = cfg.downstream_task.task_id;
    model.add_head(task, seeds.seed("downstream_head"));

    let all_d = clients.iter().map(|c| heterogeneity(c.profile.alpha)).collect::<Result<Vec<_>>>()?;
    let all_r = clients.iter().map(|c| c.profile.resource_score).collect();
    let ctx = RoundContext {
        method,
        local: LocalTrainConfig { epochs: cfg.epochs, lr: cfg.lr, batch_size: cfg.batch_size },
        selection_fraction: cfg.selection_fraction,
        seed: seeds.seed("rounds"),
        test: &data.test,
        all_d,
        all_r,
    };
    let mut server =
        ServerState { model, round: 0, plan: plan.clone(), scoring: cfg.scoring, tau: cfg.tau, task };

    let mut records = Vec::with_capacity(cfg.rounds);
    for _ in 0..cfg.rounds {
        let rec = run_round(&mut server, &mut clients, &ctx)?;
        log::info!("{method} round {}: accuracy {:.4}, wall-clock {:.3}s", rec.round, rec.accuracy, rec.wall_clock);
        records.push(rec);
    }

    let general = cfg.general_task.task_id;
    let model = server.model;
    let forgetting = if method.expands() {
        let base_path = evaluate(&model.base_path(), &pretrained.general_test, general)?;
        let active = evaluate(&model, &pretrained.general_test, general)?;
        Forgetting::new(pretrained.acc_before, base_path, Some(active))
    } else {
        Forgetting::new(pretrained.acc_before, evaluate(&model, &pretrained.general_test, general)?, None)
    };

    let positions = plan.map(|p| p.positions).unwrap_or_default();
    let mut series = MetricsSeries::from_records(method, cfg.seed, positions, &records);
    series.forgetting = Some(forgetting);
    Ok(FederationRun { series, records, model })
}

/// Pretrains on the general task, then federates with the configured method.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<MetricsSeries> {
    cfg.validate()?;
    let pretrained = pretrain(cfg)?;
    Ok(federate(cfg, &pretrained, cfg.method)?.series)
}
