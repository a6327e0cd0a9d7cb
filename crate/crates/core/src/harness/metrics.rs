use serde::{Deserialize, Serialize};

use crate::federation::{Method, RoundRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: usize,
    pub accuracy: f64,
    pub cum_seconds: f64,
    /// Expanded blocks trained by each participating client, by client id.
    pub assignment_sizes: Vec<usize>,
}

impl RoundMetrics {
    pub fn mean_assignment_size(&self) -> f64 {
        if self.assignment_sizes.is_empty() {
            return 0.0;
        }
        self.assignment_sizes.iter().sum::<usize>() as f64 / self.assignment_sizes.len() as f64
    }
}

/// General-task accuracy of the starting backbone and of the federated model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Forgetting {
    pub acc_before: f64,
    /// Backbone path: expansions inactive for expanded methods.
    pub acc_after: f64,
    pub degree: f64,
    /// Expanded methods only: evaluation with every expansion active.
    pub acc_after_active: Option<f64>,
    pub degree_active: Option<f64>,
}

impl Forgetting {
    pub fn new(acc_before: f64, acc_after: f64, acc_after_active: Option<f64>) -> Self {
        Self {
            acc_before,
            acc_after,
            degree: acc_before - acc_after,
            acc_after_active,
            degree_active: acc_after_active.map(|a| acc_before - a),
        }
    }

    /// Degree of the model as it would be deployed: expansions active when present.
    pub fn deployed_degree(&self) -> f64 {
        self.degree_active.unwrap_or(self.degree)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSeries {
    pub method: Method,
    pub seed: u64,
    /// 1-based expansion positions; empty without expansion.
    pub positions: Vec<usize>,
    pub rounds: Vec<RoundMetrics>,
    pub forgetting: Option<Forgetting>,
}

impl MetricsSeries {
    pub fn from_records(method: Method, seed: u64, positions: Vec<usize>, records: &[RoundRecord]) -> Self {
        let mut cum = 0.0;
        let rounds = records
            .iter()
            .map(|r| {
                cum += r.wall_clock;
                RoundMetrics {
                    round: r.round,
                    accuracy: r.accuracy,
                    cum_seconds: cum,
                    assignment_sizes: r.clients.iter().map(|c| c.assigned.len()).collect(),
                }
            })
            .collect();
        Self { method, seed, positions, rounds, forgetting: None }
    }

    pub fn final_accuracy(&self) -> Option<f64> {
        self.rounds.last().map(|r| r.accuracy)
    }

    pub fn total_seconds(&self) -> f64 {
        self.rounds.last().map_or(0.0, |r| r.cum_seconds)
    }

    /// First round reaching `target`, with the cumulative seconds at that round.
    pub fn time_to_target(&self, target: f64) -> Option<(usize, f64)> {
        time_to_target(&self.rounds, target)
    }
}

pub fn time_to_target(rounds: &[RoundMetrics], target: f64) -> Option<(usize, f64)> {
    rounds.iter().find(|r| r.accuracy >= target).map(|r| (r.round, r.cum_seconds))
}
