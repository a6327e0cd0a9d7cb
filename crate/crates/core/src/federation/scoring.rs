//! Client-aware block allocation: heterogeneity metric, per-layer priority
//! scores, top-k assignment and dynamic task sizing.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{config_err, input_err, Result};

pub const HETEROGENEITY_EPS: f64 = 1e-6;
const MINMAX_EPS: f64 = 1e-12;

/// `D = -ln(alpha + 1e-6)`; larger for more skewed clients.
pub fn heterogeneity(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(input_err!("alpha must be positive, got {alpha}"));
    }
    Ok(-(alpha + HETEROGENEITY_EPS).ln())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreMode {
    /// Heterogeneity, history and resource terms exactly as weighted sums.
    #[default]
    Verbatim,
    /// The heterogeneity term prefers input-side positions for near-IID
    /// clients and output-side positions for skewed ones.
    ProseAffinity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DNormMode {
    /// `D_i / max_j D_j`.
    Verbatim,
    /// `(D_i - min D) / (max D - min D + 1e-12)`.
    #[default]
    Minmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoringConfig {
    pub w_d: f64,
    pub w_t: f64,
    pub w_r: f64,
    pub score_mode: ScoreMode,
    pub d_norm_mode: DNormMode,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self { w_d: 0.5, w_t: 0.3, w_r: 0.2, score_mode: ScoreMode::Verbatim, d_norm_mode: DNormMode::Minmax }
    }
}

impl ScoringConfig {
    pub fn validate(&self) -> Result<()> {
        if [self.w_d, self.w_t, self.w_r].iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(config_err!("scoring weights must be finite and non-negative"));
        }
        if (self.w_d + self.w_t + self.w_r - 1.0).abs() > 1e-12 {
            return Err(config_err!("scoring weights sum to {}, not 1", self.w_d + self.w_t + self.w_r));
        }
        Ok(())
    }
}

fn minmax(value: f64, all: &[f64]) -> f64 {
    let min = all.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = all.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (value - min) / (max - min + MINMAX_EPS)
}

/// Everything the priority score needs to know about one client.
#[derive(Debug, Clone, Copy)]
pub struct ClientScoreInput<'a> {
    pub heterogeneity: f64,
    pub resource: f64,
    /// Training count per expansion position.
    pub counts: &'a BTreeMap<usize, u64>,
}

/// Priority score of every expansion position for one client.
///
/// `all_d` and `all_r` hold the heterogeneity and resource scores of every
/// client and are only used through their extrema. `layers` is the base
/// model depth used to normalise positions.
pub fn priority_scores(
    cfg: &ScoringConfig,
    client: ClientScoreInput<'_>,
    positions: &BTreeSet<usize>,
    layers: usize,
    all_d: &[f64],
    all_r: &[f64],
) -> Result<BTreeMap<usize, f64>> {
    let max_r = all_r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(max_r > 0.0) {
        return Err(input_err!("resource scores need a positive maximum"));
    }
    let r_term = cfg.w_r * client.resource / max_r;
    let total_count: u64 = client.counts.values().sum();

    let d_term_flat = match cfg.d_norm_mode {
        DNormMode::Verbatim => {
            let max_d = all_d.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            // every client sits at alpha = 1 - eps: no heterogeneity signal at all
            if max_d == 0.0 {
                0.0
            } else {
                client.heterogeneity / max_d
            }
        }
        DNormMode::Minmax => minmax(client.heterogeneity, all_d),
    };
    let h = minmax(client.heterogeneity, all_d);

    Ok(positions
        .iter()
        .map(|&pos| {
            let count = client.counts.get(&pos).copied().unwrap_or(0);
            let t_term = cfg.w_t * count as f64 / (1.0 + total_count as f64);
            let d_term = match cfg.score_mode {
                ScoreMode::Verbatim => cfg.w_d * d_term_flat,
                ScoreMode::ProseAffinity => {
                    let depth = pos as f64 / layers as f64;
                    cfg.w_d * ((1.0 - h) * (1.0 - depth) + h * depth)
                }
            };
            (pos, d_term + t_term + r_term)
        })
        .collect())
}

/// The `size` highest-scoring positions, lowest position first on ties.
pub fn assign_blocks(scores: &BTreeMap<usize, f64>, size: usize) -> Result<BTreeSet<usize>> {
    if size == 0 || size > scores.len() {
        return Err(input_err!("task size {size} outside [1, {}]", scores.len()));
    }
    let mut ranked: Vec<(usize, f64)> = scores.iter().map(|(&p, &s)| (p, s)).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(ranked.into_iter().take(size).map(|(p, _)| p).collect())
}

/// Number of expansions for the next round: `k` before any measurement,
/// otherwise `clamp(floor(tau / T_prev), 1, k)`. A zero previous time
/// counts as the fastest possible client.
pub fn adjust_task_size(tau: f64, prev_time: Option<f64>, k: usize) -> Result<usize> {
    if !(tau > 0.0) {
        return Err(input_err!("target time must be positive"));
    }
    if k == 0 {
        return Err(input_err!("k must be at least 1"));
    }
    Ok(match prev_time {
        None => k,
        Some(t) if t <= 0.0 => k,
        Some(t) => ((tau / t).floor().min(k as f64).max(1.0)) as usize,
    })
}
