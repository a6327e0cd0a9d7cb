use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::aggregate::{aggregate, gather, scatter, ClientUpload, ParamKey};
use super::client::{local_train, mode_switch, Client, LocalPlan, LocalTrainConfig};
use super::scoring::{adjust_task_size, assign_blocks, priority_scores, ClientScoreInput, ScoringConfig};
use crate::datagen::LabeledDataset;
use crate::error::{config_err, Error, Result};
use crate::expansion::{ExpandedModel, ExpansionPlan};
use crate::nn::{evaluate, TaskId};
use crate::rng::{derive_seed, rng_from_seed};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Expanded blocks allocated per client by score and dynamic size.
    #[default]
    Fedbe,
    /// No expansion; the whole model is trained and aggregated.
    FullFt,
    /// Frozen backbone; only the downstream head is trained.
    HeadOnly,
    /// Every expanded block goes to every client every round.
    FedbeStatic,
    /// Like `fedbe` but with evenly spaced expansion positions.
    FedbeUniformPos,
}

impl Method {
    pub const ALL: [Method; 5] =
        [Method::Fedbe, Method::FullFt, Method::HeadOnly, Method::FedbeStatic, Method::FedbeUniformPos];

    pub fn name(self) -> &'static str {
        match self {
            Method::Fedbe => "fedbe",
            Method::FullFt => "full_ft",
            Method::HeadOnly => "head_only",
            Method::FedbeStatic => "fedbe_static",
            Method::FedbeUniformPos => "fedbe_uniform_pos",
        }
    }

    pub fn expands(self) -> bool {
        matches!(self, Method::Fedbe | Method::FedbeStatic | Method::FedbeUniformPos)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| config_err!("unknown method '{s}'"))
    }
}

/// Global model and allocation settings held by the server.
#[derive(Debug, Clone, PartialEq)]
pub struct ServerState {
    pub model: ExpandedModel,
    pub round: usize,
    /// Absent for methods without expansion.
    pub plan: Option<ExpansionPlan>,
    pub scoring: ScoringConfig,
    /// Target per-round training seconds.
    pub tau: f64,
    pub task: TaskId,
}

/// Per-run constants of the round loop.
#[derive(Debug, Clone)]
pub struct RoundContext<'a> {
    pub method: Method,
    pub local: LocalTrainConfig,
    pub selection_fraction: f64,
    pub seed: u64,
    pub test: &'a LabeledDataset,
    /// Heterogeneity of every client, by client index.
    pub all_d: Vec<f64>,
    pub all_r: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientRoundRecord {
    pub id: usize,
    pub assigned: Vec<usize>,
    pub compute_seconds: f64,
    pub upload_seconds: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub clients: Vec<ClientRoundRecord>,
    /// Slowest selected client, compute plus upload.
    pub wall_clock: f64,
    pub accuracy: f64,
}

/// Ascending ids of the clients taking part in `round`.
pub fn select_clients(n: usize, fraction: f64, round: usize, seed: u64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(config_err!("selection fraction must be in (0, 1], got {fraction}"));
    }
    let take = ((fraction * n as f64).ceil() as usize).clamp(1.min(n), n);
    let mut ids: Vec<usize> = (0..n).collect();
    if take < n {
        ids.shuffle(&mut rng_from_seed(derive_seed(seed, "select", round as u64)));
        ids.truncate(take);
        ids.sort_unstable();
    }
    Ok(ids)
}

fn plan_for(server: &ServerState, ctx: &RoundContext<'_>, client: &Client, index: usize) -> Result<LocalPlan> {
    let task = server.task;
    let layers = server.model.spec().layers;
    Ok(match ctx.method {
        Method::FullFt => LocalPlan::full_model(layers, task),
        Method::HeadOnly => LocalPlan::head_only(task),
        Method::FedbeStatic => LocalPlan::expanded(&server.model.positions(), task),
        Method::Fedbe | Method::FedbeUniformPos => {
            let positions = server.model.positions();
            let size = adjust_task_size(server.tau, client.state.last_time, positions.len())?;
            let input = ClientScoreInput {
                heterogeneity: ctx.all_d[index],
                resource: client.profile.resource_score,
                counts: &client.state.train_counts,
            };
            let scores = priority_scores(&server.scoring, input, &positions, layers, &ctx.all_d, &ctx.all_r)?;
            LocalPlan::expanded(&assign_blocks(&scores, size)?, task)
        }
    })
}

/// One federated round: mode switch, allocation, local training, aggregation,
/// bookkeeping and downstream evaluation.
pub fn run_round(server: &mut ServerState, clients: &mut [Client], ctx: &RoundContext<'_>) -> Result<RoundRecord> {
    let round = server.round;
    mode_switch(round, clients, ctx.seed);
    let selected = select_clients(clients.len(), ctx.selection_fraction, round, ctx.seed)?;

    let mut uploads: Vec<ClientUpload> = Vec::with_capacity(selected.len());
    let mut records = Vec::with_capacity(selected.len());
    for &i in &selected {
        let plan = plan_for(server, ctx, &clients[i], i)?;
        let client = &mut clients[i];
        client.state.assigned = plan.assigned.clone();
        let seed = derive_seed(ctx.seed, "local", ((client.profile.id as u64) << 32) | round as u64);
        let Some(update) = local_train(&server.model, client, &plan, server.task, &ctx.local, seed)? else {
            log::info!("round {round}: client {} has no data, skipped", client.profile.id);
            continue;
        };
        for &p in &plan.assigned {
            *client.state.train_counts.entry(p).or_insert(0) += 1;
        }
        client.state.last_time = Some(update.compute_seconds);
        records.push(ClientRoundRecord {
            id: client.profile.id,
            assigned: plan.assigned.iter().copied().collect(),
            compute_seconds: update.compute_seconds,
            upload_seconds: update.bytes as f64 / client.profile.bandwidth,
            samples: update.upload.samples,
        });
        uploads.push(update.upload);
    }

    let keys: BTreeSet<ParamKey> = uploads.iter().flat_map(|u| u.delta.keys().copied()).collect();
    let mut global = keys.iter().map(|&k| Ok((k, gather(&server.model, k)?))).collect::<Result<_>>()?;
    aggregate(&mut global, &uploads)?;
    for (k, v) in &global {
        scatter(&mut server.model, *k, v)?;
    }

    let accuracy = evaluate(&server.model, ctx.test, server.task)?;
    let wall_clock = records.iter().map(|r| r.compute_seconds + r.upload_seconds).fold(0.0, f64::max);
    server.round += 1;
    Ok(RoundRecord { round, clients: records, wall_clock, accuracy })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{}\"", m.name()));
        }
        assert!("fedavg".parse::<Method>().unwrap_err().is_config());
    }

    use crate::federation::client::tests::{client, tiny_data, tiny_model};
    use crate::federation::scoring::heterogeneity;

    fn setup(method: Method) -> (ServerState, Vec<Client>, crate::datagen::TaskData) {
        let data = tiny_data(120);
        let shards: Vec<LabeledDataset> = (0..3)
            .map(|i| data.train.subset(&(0..data.train.len()).filter(|j| j % 3 == i).collect::<Vec<_>>()))
            .collect();
        let clients = shards
            .into_iter()
            .enumerate()
            .map(|(i, s)| client(i, vec![if i == 0 { 1e9 } else { 1e6 }], s))
            .collect();
        let mut model = tiny_model();
        if !method.expands() {
            model.expanded.clear();
        }
        let server =
            ServerState { model, round: 0, plan: None, scoring: ScoringConfig::default(), tau: 1.0, task: TaskId(1) };
        (server, clients, data)
    }

    fn ctx<'a>(method: Method, test: &'a LabeledDataset, clients: &[Client]) -> RoundContext<'a> {
        RoundContext {
            method,
            local: LocalTrainConfig { epochs: 1, lr: 0.1, batch_size: 8 },
            selection_fraction: 1.0,
            seed: 5,
            test,
            all_d: clients.iter().map(|c| heterogeneity(c.profile.alpha).unwrap()).collect(),
            all_r: clients.iter().map(|c| c.profile.resource_score).collect(),
        }
    }

    #[test]
    fn rounds_allocate_and_count() {
        let (mut server, mut clients, data) = setup(Method::Fedbe);
        let ctx = ctx(Method::Fedbe, &data.test, &clients);
        let r0 = run_round(&mut server, &mut clients, &ctx).unwrap();
        assert!(r0.clients.iter().all(|c| c.assigned == vec![1, 3]));
        for c in &r0.clients {
            assert!(r0.wall_clock >= c.compute_seconds + c.upload_seconds);
        }
        let before = clients.iter().map(|c| c.state.train_counts.clone()).collect::<Vec<_>>();
        let r1 = run_round(&mut server, &mut clients, &ctx).unwrap();
        for ((c, rec), counts) in clients.iter().zip(&r1.clients).zip(&before) {
            assert!((1..=2).contains(&rec.assigned.len()));
            for p in [1, 3] {
                let grew = c.state.train_counts[&p] - counts[&p];
                assert_eq!(grew, u64::from(rec.assigned.contains(&p)));
            }
        }
        // the slow clients overshoot tau and drop to a single block
        assert_eq!(r1.clients[0].assigned.len(), 2);
        assert_eq!(r1.clients[1].assigned.len(), 1);
    }

    #[test]
    fn rounds_are_deterministic_and_freeze_the_base() {
        let run = || {
            let (mut server, mut clients, data) = setup(Method::Fedbe);
            let ctx = ctx(Method::Fedbe, &data.test, &clients);
            let recs: Vec<RoundRecord> = (0..3).map(|_| run_round(&mut server, &mut clients, &ctx).unwrap()).collect();
            (recs, server.model)
        };
        let (a, model) = run();
        let (b, _) = run();
        assert_eq!(a, b);
        assert!(model.base.bitwise_eq(&tiny_model().base));
    }

    #[test]
    fn full_ft_moves_backbone_and_head_only_does_not() {
        for (method, moves) in [(Method::FullFt, true), (Method::HeadOnly, false)] {
            let (mut server, mut clients, data) = setup(method);
            let ctx = ctx(method, &data.test, &clients);
            let rec = run_round(&mut server, &mut clients, &ctx).unwrap();
            assert!(rec.clients.iter().all(|c| c.assigned.is_empty()));
            assert_eq!(!server.model.base.backbone_bitwise_eq(&tiny_model().base), moves, "{method}");
        }
    }

    #[test]
    fn full_selection_is_everyone() {
        assert_eq!(select_clients(4, 1.0, 3, 9).unwrap(), vec![0, 1, 2, 3]);
        let half = select_clients(8, 0.5, 3, 9).unwrap();
        assert_eq!(half.len(), 4);
        assert!(half.windows(2).all(|w| w[0] < w[1]));
        assert!(select_clients(8, 0.0, 0, 9).is_err());
    }
}
