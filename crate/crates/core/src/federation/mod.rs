//! Federated fine-tuning: non-IID partitioning, per-client block allocation,
//! simulated local training and aggregation.

mod aggregate;
mod client;
mod experiment;
mod partition;
mod round;
mod scoring;

pub use aggregate::{aggregate, gather, scatter, AggregationReport, ClientUpload, ParamKey};
pub use client::{
    local_train, mode_switch, Client, ClientProfile, ClientState, DeviceProfile, LocalPlan, LocalTrainConfig,
    LocalUpdate, BYTES_PER_PARAM, MODE_SWITCH_PERIOD, TRAIN_FLOPS_MULTIPLIER,
};
pub use experiment::{downstream_data, federate, plan_expansion, run_experiment, FederationRun};
pub use partition::{max_class_share, mean_max_class_share, partition_dirichlet, partition_dirichlet_per_client};
pub use round::{run_round, select_clients, ClientRoundRecord, Method, RoundContext, RoundRecord, ServerState};
pub use scoring::{
    adjust_task_size, assign_blocks, heterogeneity, priority_scores, ClientScoreInput, DNormMode, ScoreMode,
    ScoringConfig, HETEROGENEITY_EPS,
};
