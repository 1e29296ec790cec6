use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::trajectory::Trajectory;
use crate::blackboard::Verdict;
use crate::incentive::InstitutionParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub best_true_score_by_round: Vec<f64>,
    pub redundancy_rate: f64,
    pub reproduction_coverage: f64,
    pub total_compute: u64,
    pub reward_gini: f64,
    pub total_outlay: f64,
    pub agent_count: usize,
    pub round_count: u32,
}

pub const CSV_HEADER: &str = "scenario,seed,vary_key,vary_value,best_true_score,redundancy_rate,\
reproduction_coverage,total_compute,reward_gini,total_outlay";

impl Metrics {
    pub fn best_true_score(&self) -> f64 {
        self.best_true_score_by_round.last().copied().unwrap_or(0.0)
    }

    /// Compute units per agent-round.
    pub fn normalized_compute(&self) -> f64 {
        let denom = self.agent_count as f64 * self.round_count as f64;
        if denom == 0.0 {
            0.0
        } else {
            self.total_compute as f64 / denom
        }
    }

    pub fn csv_row(&self, scenario: &str, seed: u64, vary_key: &str, vary_value: &str) -> String {
        format!(
            "{scenario},{seed},{vary_key},{vary_value},{},{},{},{},{},{}",
            self.best_true_score(),
            self.redundancy_rate,
            self.reproduction_coverage,
            self.total_compute,
            self.reward_gini,
            self.total_outlay
        )
    }
}

/// Gini coefficient with negative values clamped to 0; 0 for an all-zero or
/// empty population.
pub fn gini(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.iter().map(|x| x.max(0.0)).collect();
    let n = v.len();
    let sum: f64 = v.iter().sum();
    if n == 0 || sum <= 0.0 {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    // Σ_i Σ_j |x_i − x_j| = 2 Σ_i (2i − n + 1) x_(i) over the sorted order.
    let weighted: f64 = v.iter().enumerate().map(|(i, x)| (2.0 * i as f64 - n as f64 + 1.0) * x).sum();
    (weighted / (n as f64 * sum)).clamp(0.0, 1.0)
}

pub fn compute_metrics(traj: &Trajectory, params: &InstitutionParams) -> Metrics {
    let mut evals = traj.evaluations.clone();
    evals.sort_by_key(|e| e.submission);

    let mut seen = HashSet::new();
    let mut duplicates = 0usize;
    let mut by_round = vec![f64::NEG_INFINITY; traj.rounds as usize];
    for e in &evals {
        if !seen.insert(e.config_hash) {
            duplicates += 1;
        }
        if let Some(slot) = by_round.get_mut(e.round as usize) {
            *slot = slot.max(e.true_score);
        }
    }
    let mut best = 0.0f64;
    for slot in &mut by_round {
        best = best.max(*slot);
        *slot = best;
    }
    let redundancy_rate = if evals.is_empty() { 0.0 } else { duplicates as f64 / evals.len() as f64 };

    let confirmed: HashSet<_> =
        traj.verdicts.iter().filter(|v| v.verdict == Verdict::Confirmed).map(|v| v.original).collect();
    let mut news: Vec<_> = traj.submissions.iter().filter(|s| s.kind.is_new()).collect();
    news.sort_by(|a, b| b.reported_score.total_cmp(&a.reported_score).then(a.id.cmp(&b.id)));
    news.truncate(params.top_k);
    let reproduction_coverage = if news.is_empty() {
        0.0
    } else {
        news.iter().filter(|s| confirmed.contains(&s.id)).count() as f64 / news.len() as f64
    };

    let totals: Vec<f64> = traj.reward_totals().into_values().collect();
    Metrics {
        best_true_score_by_round: by_round,
        redundancy_rate,
        reproduction_coverage,
        total_compute: evals.iter().map(|e| e.cost as u64).sum(),
        reward_gini: gini(&totals),
        total_outlay: traj.rewards.iter().map(|r| r.entry.amount).sum(),
        agent_count: traj.agents.len(),
        round_count: traj.rounds,
    }
}
