//! Seeded, synchronous round-based simulation.
//!
//! Each round: agents decide against the round-start board; their actions
//! are turned into submission items and applied in (agent id, action index)
//! order; new reproductions are judged; rewards are allocated.
//!
//! Seed derivation (see [`crate::rng`]):
//! * agent stream for round `t`: `stream([agent_base, t])` with
//!   `agent_base = derive([AGENT, master_seed, policy_seed, agent_id])`;
//! * evaluation seed: `derive([eval_base, t, agent_id, action_index])` with
//!   `eval_base = derive([EVAL, master_seed])`.

mod metrics;
mod trajectory;

use std::collections::HashSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::agents::{decide_actions, Action, AgentId, AgentSpec, BoardView, Grid, Policy};
use crate::blackboard::{Blackboard, Draft, SubmissionId, SubmissionKind};
use crate::error::{Error, Result};
use crate::incentive::{allocate_round, InstitutionParams, RoundContext};
use crate::rng;
use crate::task::{generate_task, Config, TaskSpec};

pub use metrics::{compute_metrics, gini, Metrics, CSV_HEADER};
pub use trajectory::{replay_rewards, EvaluationRecord, LedgerEntry, Trajectory};

/// Whether submitted scores are recomputed by the institution (`Refereed`)
/// or recorded as claimed (`Open`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Open,
    Refereed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskInputs {
    pub seed: u64,
    pub dims: Vec<u32>,
    pub bumps: usize,
    pub noise_std: f64,
}

impl TaskInputs {
    pub fn generate(&self) -> Result<TaskSpec> {
        generate_task(self.seed, &self.dims, self.bumps, self.noise_std)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub task: TaskInputs,
    pub agents: Vec<AgentSpec>,
    pub params: InstitutionParams,
    pub rounds: u32,
    pub master_seed: u64,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidScenario(m));
        if self.agents.is_empty() {
            return bad("at least one agent is required".into());
        }
        if self.rounds == 0 {
            return bad("rounds must be >= 1".into());
        }
        self.task.generate().map_err(|e| Error::InvalidScenario(format!("task: {e}")))?;
        self.params.validate().map_err(|e| Error::InvalidScenario(format!("institution: {e}")))?;
        let mut ids = HashSet::new();
        for a in &self.agents {
            if !ids.insert(a.id) {
                return bad(format!("duplicate agent id {}", a.id));
            }
            if a.evals_per_round == 0 {
                return bad(format!("agent {}: evals_per_round must be >= 1", a.id));
            }
        }
        for a in &self.agents {
            match &a.policy {
                Policy::BlackboardExplorer { exploit_prob } if !(0.0..=1.0).contains(exploit_prob) => {
                    return bad(format!("agent {}: exploit_prob must lie in [0, 1]", a.id));
                }
                Policy::Fabricator { inflate } if !(inflate.is_finite() && *inflate > 0.0) => {
                    return bad(format!("agent {}: inflate must be a positive real", a.id));
                }
                Policy::Colluder { partner } => {
                    let back = self.agents.iter().find(|b| b.id == *partner);
                    match back.map(|b| &b.policy) {
                        Some(Policy::Colluder { partner: p }) if *p == a.id && *partner != a.id => {}
                        _ => return bad(format!("agent {}: partner {partner} must be a Colluder naming it back", a.id)),
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }
}

pub fn agent_base(master_seed: u64, spec: &AgentSpec) -> u64 {
    rng::derive_seed(&[rng::tag::AGENT, master_seed, spec.policy_seed, spec.id.0])
}

pub fn agent_stream(agent_base: u64, round: u32) -> rng::Rng {
    rng::stream(&[agent_base, round as u64])
}

pub fn eval_base(master_seed: u64) -> u64 {
    rng::derive_seed(&[rng::tag::EVAL, master_seed])
}

pub fn eval_seed(eval_base: u64, round: u32, agent: AgentId, index: u32) -> u64 {
    rng::derive_seed(&[eval_base, round as u64, agent.0, index as u64])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemKind {
    Evaluate,
    Reproduce,
    Fabricate,
}

/// One submission as handed to the institution. `kind` is bookkeeping for
/// compute accounting; recording and rewards depend only on the other fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmitItem {
    pub index: u32,
    pub kind: ItemKind,
    pub config: Config,
    pub target: Option<SubmissionId>,
    pub reported_score: f64,
    pub disclosed: bool,
}

/// Turns a decided action into a submission item, evaluating locally when
/// `task` is known (the agent's own compute). Without a task the reported
/// score of an honest evaluation is 0; a referee replaces it.
pub fn realize(action: &Action, index: u32, board: &Blackboard, task: Option<&TaskSpec>, seed: u64) -> Result<Option<SubmitItem>> {
    let observe = |c: &Config| -> Result<f64> {
        match task {
            Some(t) => Ok(t.evaluate(c, seed)?.observed_score),
            None => Ok(0.0),
        }
    };
    Ok(match action {
        Action::Idle => None,
        Action::Evaluate { config, disclose } => Some(SubmitItem {
            index,
            kind: ItemKind::Evaluate,
            reported_score: observe(config)?,
            config: config.clone(),
            target: None,
            disclosed: *disclose,
        }),
        Action::Fabricate { config, claimed_score, disclose } => Some(SubmitItem {
            index,
            kind: ItemKind::Fabricate,
            config: config.clone(),
            target: None,
            reported_score: *claimed_score,
            disclosed: *disclose,
        }),
        Action::Reproduce { target, reported } => {
            let Some(config) = board.get(*target).and_then(|s| s.config.clone()) else {
                return Ok(None);
            };
            let reported_score = match reported {
                Some(s) => *s,
                None => observe(&config)?,
            };
            Some(SubmitItem { index, kind: ItemKind::Reproduce, config, target: Some(*target), reported_score, disclosed: true })
        }
    })
}

/// Records one item on the board. In refereed mode the institution evaluates
/// the config itself (with the item's evaluation seed) and ignores the claim.
pub fn apply_item(
    board: &mut Blackboard,
    task: &TaskSpec,
    mode: Mode,
    eval_base: u64,
    agent: AgentId,
    round: u32,
    item: &SubmitItem,
) -> Result<(SubmissionId, Option<EvaluationRecord>)> {
    task.check(&item.config)?;
    let seed = eval_seed(eval_base, round, agent, item.index);
    let (reported_score, true_score) = match (mode, item.kind) {
        (Mode::Refereed, _) => {
            let r = task.evaluate(&item.config, seed)?;
            (r.observed_score, Some(r.true_score))
        }
        (Mode::Open, ItemKind::Fabricate) => (item.reported_score, None),
        (Mode::Open, _) => (item.reported_score, Some(task.true_score(&item.config)?)),
    };
    let kind = match (item.kind, item.target) {
        (ItemKind::Reproduce, Some(target)) => SubmissionKind::Reproduction { target },
        (ItemKind::Reproduce, None) => return Err(Error::InvalidArgument("reproduction without target".into())),
        (_, None) => SubmissionKind::New,
        (_, Some(_)) => return Err(Error::InvalidArgument("target given for a New submission".into())),
    };
    let id = board.append(Draft {
        agent,
        round,
        kind,
        config: item.config.clone(),
        reported_score,
        disclosed: item.disclosed,
    })?;
    let eval = true_score.map(|true_score| EvaluationRecord {
        submission: id,
        round,
        agent,
        config_hash: item.config.hash(),
        true_score,
        cost: 1,
    });
    Ok((id, eval))
}

/// Round close: judge this round's new reproductions (id order) and
/// allocate rewards.
pub fn close_round(
    board: &mut Blackboard,
    params: &InstitutionParams,
    round: u32,
    total_rounds: u32,
    new_reproductions: &[SubmissionId],
) -> Result<Vec<LedgerEntry>> {
    for &id in new_reproductions {
        board.match_reproduction(id, params.epsilon)?;
    }
    let ctx = RoundContext::as_of(board, round, total_rounds);
    let entries = allocate_round(&board.snapshot_round(round), board, params, &ctx)?;
    board.sync()?;
    Ok(entries.into_iter().map(|entry| LedgerEntry { round, entry }).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub trajectory: Trajectory,
    pub metrics: Metrics,
}

/// A validated scenario with its task and grid built once, reusable across
/// seeds and institution variants.
#[derive(Debug, Clone)]
pub struct Simulation {
    scenario: Scenario,
    task: TaskSpec,
    grid: Arc<Grid>,
}

impl Simulation {
    pub fn new(scenario: Scenario) -> Result<Self> {
        scenario.validate()?;
        let task = scenario.task.generate()?;
        let grid = Grid::new(&task.dims);
        let mut scenario = scenario;
        scenario.agents.sort_by_key(|a| a.id);
        Ok(Simulation { scenario, task, grid })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn task(&self) -> &TaskSpec {
        &self.task
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn run(&self) -> Result<RunOutput> {
        self.run_with(&self.scenario.params, self.scenario.master_seed, Mode::Open, Blackboard::new())
    }

    /// Runs with overridden institution parameters, seed and mode on the
    /// given (normally empty, possibly log-attached) board.
    pub fn run_with(&self, params: &InstitutionParams, master_seed: u64, mode: Mode, mut board: Blackboard) -> Result<RunOutput> {
        params.validate()?;
        let t_total = self.scenario.rounds;
        let ebase = eval_base(master_seed);
        let bases: Vec<u64> = self.scenario.agents.iter().map(|a| agent_base(master_seed, a)).collect();
        let mut evaluations = Vec::new();
        let mut rewards = Vec::new();
        for round in 0..t_total {
            let view = BoardView { board: &board, grid: &self.grid, params, total_rounds: t_total };
            let mut items = Vec::new();
            for (spec, &base) in self.scenario.agents.iter().zip(&bases) {
                let mut r = agent_stream(base, round);
                for (i, action) in decide_actions(spec, &view, round, &mut r).iter().enumerate() {
                    let i = i as u32;
                    let seed = eval_seed(ebase, round, spec.id, i);
                    if let Some(item) = realize(action, i, &board, Some(&self.task), seed)? {
                        items.push((spec.id, item));
                    }
                }
            }
            let mut reproductions = Vec::new();
            for (agent, item) in &items {
                let (id, eval) = apply_item(&mut board, &self.task, mode, ebase, *agent, round, item)?;
                if item.kind == ItemKind::Reproduce {
                    reproductions.push(id);
                }
                evaluations.extend(eval);
            }
            rewards.extend(close_round(&mut board, params, round, t_total, &reproductions)?);
        }
        let trajectory = Trajectory {
            agents: self.scenario.agents.iter().map(|a| a.id).collect(),
            rounds: t_total,
            submissions: board.submissions().to_vec(),
            verdicts: board.verdicts().to_vec(),
            evaluations,
            rewards,
        };
        let metrics = compute_metrics(&trajectory, params);
        Ok(RunOutput { trajectory, metrics })
    }
}

pub fn run(scenario: &Scenario) -> Result<RunOutput> {
    Simulation::new(scenario.clone())?.run()
}

#[cfg(test)]
mod tests;
