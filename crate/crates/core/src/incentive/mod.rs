//! Reward allocation over one round of blackboard records.
//!
//! The performance pool (`perf_budget`) is split over the round's New
//! submissions by the selected mechanism. Sharing bonuses, reproduction
//! bounties, confirmation bonuses and refutation penalties are paid from a
//! separate, unbounded pool.

mod neural;

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::agents::AgentId;
use crate::blackboard::{Blackboard, ReproductionVerdict, RoundSnapshot, Submission, SubmissionId, Verdict};
use crate::canonical::Hash256;
use crate::error::{Error, Result};

pub use neural::{softmax, Features, MechanismTheta, HIDDEN, INPUTS, THETA_LEN};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Mechanism {
    WinnerTakeAll,
    RankTopK,
    Neural(MechanismTheta),
}

impl Mechanism {
    pub fn name(&self) -> &'static str {
        match self {
            Mechanism::WinnerTakeAll => "winner_take_all",
            Mechanism::RankTopK => "rank_top_k",
            Mechanism::Neural(_) => "neural",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstitutionParams {
    pub perf_budget: f64,
    pub top_k: usize,
    pub repro_bounty: f64,
    pub confirm_bonus: f64,
    pub refute_penalty: f64,
    pub sharing_bonus: f64,
    pub epsilon: f64,
    pub mechanism: Mechanism,
}

impl Default for InstitutionParams {
    fn default() -> Self {
        InstitutionParams {
            perf_budget: 10.0,
            top_k: 3,
            repro_bounty: 2.0,
            confirm_bonus: 1.0,
            refute_penalty: 3.0,
            sharing_bonus: 0.0,
            epsilon: 0.05,
            mechanism: Mechanism::RankTopK,
        }
    }
}

impl InstitutionParams {
    pub fn validate(&self) -> Result<()> {
        let money = [
            ("perf_budget", self.perf_budget),
            ("repro_bounty", self.repro_bounty),
            ("confirm_bonus", self.confirm_bonus),
            ("refute_penalty", self.refute_penalty),
            ("sharing_bonus", self.sharing_bonus),
            ("epsilon", self.epsilon),
        ];
        for (name, v) in money {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidParams(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if self.top_k == 0 {
            return Err(Error::InvalidParams("top_k must be >= 1".into()));
        }
        if let Mechanism::Neural(theta) = &self.mechanism {
            MechanismTheta::new(theta.as_slice().to_vec())?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RewardReason {
    Performance,
    SharingBonus,
    ReproBounty,
    ConfirmBonus,
    RefutePenalty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardEntry {
    pub submission: SubmissionId,
    pub agent: AgentId,
    pub amount: f64,
    pub reason: RewardReason,
}

/// Board state as of the end of one round, as seen by the neural features.
#[derive(Debug, Clone, Default)]
pub struct RoundContext {
    pub round: u32,
    pub total_rounds: u32,
    /// Config hashes of every submission from earlier rounds.
    pub seen_before: HashSet<Hash256>,
    /// Originals holding a Confirmed verdict recorded up to this round.
    pub confirmed: HashSet<SubmissionId>,
}

impl RoundContext {
    /// Derives the context from a board that may already hold later rounds.
    pub fn as_of(board: &Blackboard, round: u32, total_rounds: u32) -> Self {
        let seen_before = board.submissions().iter().filter(|s| s.round < round).map(|s| s.config_hash).collect();
        let confirmed = board
            .verdicts()
            .iter()
            .filter(|v| v.verdict == Verdict::Confirmed)
            .filter(|v| board.get(v.reproduction).is_some_and(|s| s.round <= round))
            .map(|v| v.original)
            .collect();
        RoundContext { round, total_rounds, seen_before, confirmed }
    }

    pub fn round_fraction(&self) -> f64 {
        if self.total_rounds == 0 {
            0.0
        } else {
            (self.round as f64 / self.total_rounds as f64).min(1.0)
        }
    }
}

/// Best-first order: reported score descending, earlier id on ties.
fn ranked<'a>(news: &[&'a Submission]) -> Vec<&'a Submission> {
    let mut v = news.to_vec();
    v.sort_by(|a, b| b.reported_score.total_cmp(&a.reported_score).then(a.id.cmp(&b.id)));
    v
}

fn performance(sub: &Submission, amount: f64) -> RewardEntry {
    RewardEntry { submission: sub.id, agent: sub.agent, amount, reason: RewardReason::Performance }
}

/// Whole budget to the best reported score; everyone else gets an explicit 0.
pub fn winner_take_all(news: &[&Submission], budget: f64) -> Vec<RewardEntry> {
    let Some(winner) = ranked(news).first().map(|s| s.id) else { return Vec::new() };
    news.iter().map(|s| performance(s, if s.id == winner { budget } else { 0.0 })).collect()
}

/// Rank `r` (1-based) among the top `k` earns weight `k - r + 1`.
pub fn rank_top_k(news: &[&Submission], k: usize, budget: f64) -> Vec<RewardEntry> {
    let order = ranked(news);
    let weights: HashMap<SubmissionId, f64> =
        order.iter().take(k).enumerate().map(|(r, s)| (s.id, (k - r) as f64)).collect();
    let total: f64 = weights.values().sum();
    news.iter()
        .map(|s| performance(s, weights.get(&s.id).map_or(0.0, |w| budget * (w / total))))
        .collect()
}

/// Features of one New submission: `[rank_normalized, novelty, disclosed,
/// confirmed_ever, round_fraction]`; rank 0 is the round's best score.
pub fn neural_features(sub: &Submission, news: &[&Submission], ctx: &RoundContext) -> Features {
    let order = ranked(news);
    let pos = order.iter().position(|s| s.id == sub.id).unwrap_or(0);
    let rank = if order.len() > 1 { pos as f64 / (order.len() - 1) as f64 } else { 0.0 };
    let flag = |b: bool| if b { 1.0 } else { 0.0 };
    [
        rank,
        flag(!ctx.seen_before.contains(&sub.config_hash)),
        flag(sub.disclosed),
        flag(ctx.confirmed.contains(&sub.id)),
        ctx.round_fraction(),
    ]
}

/// `budget · softmax(MLP(features))` over the round's New submissions.
pub fn neural_allocate(news: &[&Submission], features: &[Features], theta: &MechanismTheta, budget: f64) -> Vec<RewardEntry> {
    let logits: Vec<f64> = features.iter().map(|f| theta.score(f)).collect();
    let shares = softmax(&logits);
    news.iter().zip(shares).map(|(s, p)| performance(s, budget * p)).collect()
}

/// Rewards for one round. `round.submissions` must share one round number;
/// originals named by verdicts are looked up on `board`.
pub fn allocate_round(
    round: &RoundSnapshot,
    board: &Blackboard,
    params: &InstitutionParams,
    ctx: &RoundContext,
) -> Result<Vec<RewardEntry>> {
    params.validate()?;
    if let Some(first) = round.submissions.first() {
        if round.submissions.iter().any(|s| s.round != first.round) {
            return Err(Error::InvalidArgument("round records span several rounds".into()));
        }
    }
    let news: Vec<&Submission> = round.submissions.iter().filter(|s| s.kind.is_new()).collect();
    let mut out = match &params.mechanism {
        _ if news.is_empty() => Vec::new(),
        Mechanism::WinnerTakeAll => winner_take_all(&news, params.perf_budget),
        Mechanism::RankTopK => rank_top_k(&news, params.top_k, params.perf_budget),
        Mechanism::Neural(theta) => {
            let feats: Vec<Features> = news.iter().map(|s| neural_features(s, &news, ctx)).collect();
            neural_allocate(&news, &feats, theta, params.perf_budget)
        }
    };
    if params.sharing_bonus > 0.0 {
        out.extend(news.iter().filter(|s| s.disclosed).map(|s| RewardEntry {
            submission: s.id,
            agent: s.agent,
            amount: params.sharing_bonus,
            reason: RewardReason::SharingBonus,
        }));
    }
    for v in &round.verdicts {
        out.extend(verdict_entries(v, board, params)?);
    }
    Ok(out)
}

fn verdict_entries(v: &ReproductionVerdict, board: &Blackboard, params: &InstitutionParams) -> Result<Vec<RewardEntry>> {
    let repro = board.get(v.reproduction).ok_or(Error::UnknownTarget(v.reproduction))?;
    let orig = board.get(v.original).ok_or(Error::UnknownTarget(v.original))?;
    let mut out = Vec::with_capacity(2);
    if params.repro_bounty > 0.0 {
        out.push(RewardEntry {
            submission: repro.id,
            agent: repro.agent,
            amount: params.repro_bounty,
            reason: RewardReason::ReproBounty,
        });
    }
    match v.verdict {
        Verdict::Confirmed if params.confirm_bonus > 0.0 => out.push(RewardEntry {
            submission: orig.id,
            agent: orig.agent,
            amount: params.confirm_bonus,
            reason: RewardReason::ConfirmBonus,
        }),
        Verdict::Refuted if params.refute_penalty > 0.0 => out.push(RewardEntry {
            submission: orig.id,
            agent: orig.agent,
            amount: -params.refute_penalty,
            reason: RewardReason::RefutePenalty,
        }),
        _ => {}
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
