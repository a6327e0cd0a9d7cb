//! Experiment configuration, pretraining and forgetting measurement, and
//! report files.

mod config;
mod forgetting;
mod gradcheck;
mod metrics;
mod report;

pub use config::{Alpha, ExpansionConfig, ExperimentConfig, PretrainConfig};
pub use forgetting::{forgetting_experiment, pretrain, Pretrained};
pub use gradcheck::{gradcheck_spec, gradcheck_suite};
pub use metrics::{time_to_target, Forgetting, MetricsSeries, RoundMetrics};
pub use report::{emit_report, metrics_csv, read_metrics_csv, render_charts, CsvRow, Summary, TargetHit};
