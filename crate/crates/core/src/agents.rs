//! Parametric simulated agents.
//!
//! Policies read a round-start [`BoardView`] and an agent-and-round specific
//! random stream; they never mutate shared state. Two rules react to the
//! public institution parameters:
//!
//! * a `Reproducer` idles while `repro_bounty` is zero, since the bounty is
//!   its only source of reward;
//! * an agent with `disclose = true` discloses unless the neural mechanism
//!   (with no sharing bonus) scores a disclosed submission below an
//!   otherwise identical undisclosed one. Its rank is unknown before it
//!   submits, so the comparison uses a rank drawn uniformly from `[0, 1)`
//!   and assumes the config is novel.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::blackboard::{Blackboard, Submission, SubmissionId};
use crate::canonical::Hash256;
use crate::incentive::{InstitutionParams, Mechanism};
use crate::rng::Rng;
use crate::task::{self, Config};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AgentId(pub u64);

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Policy {
    BlindExplorer,
    BlackboardExplorer { exploit_prob: f64 },
    Reproducer,
    FreeRider,
    Fabricator { inflate: f64 },
    Colluder { partner: AgentId },
}

impl Policy {
    pub fn name(&self) -> &'static str {
        match self {
            Policy::BlindExplorer => "BlindExplorer",
            Policy::BlackboardExplorer { .. } => "BlackboardExplorer",
            Policy::Reproducer => "Reproducer",
            Policy::FreeRider => "FreeRider",
            Policy::Fabricator { .. } => "Fabricator",
            Policy::Colluder { .. } => "Colluder",
        }
    }
}

/// Policy names without parameters, as they appear in files and flags.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyKind {
    BlindExplorer,
    BlackboardExplorer,
    Reproducer,
    FreeRider,
    Fabricator,
    Colluder,
}

impl FromStr for PolicyKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "BlindExplorer" => PolicyKind::BlindExplorer,
            "BlackboardExplorer" => PolicyKind::BlackboardExplorer,
            "Reproducer" => PolicyKind::Reproducer,
            "FreeRider" => PolicyKind::FreeRider,
            "Fabricator" => PolicyKind::Fabricator,
            "Colluder" => PolicyKind::Colluder,
            other => return Err(format!("unknown policy {other:?}")),
        })
    }
}

impl From<&Policy> for PolicyKind {
    fn from(p: &Policy) -> Self {
        p.name().parse().expect("canonical names parse")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub id: AgentId,
    pub name: String,
    pub policy: Policy,
    pub evals_per_round: u32,
    pub disclose: bool,
    pub policy_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Action {
    Evaluate { config: Config, disclose: bool },
    /// `reported: Some(s)` reports `s` instead of the fresh evaluation.
    Reproduce { target: SubmissionId, reported: Option<f64> },
    Fabricate { config: Config, claimed_score: f64, disclose: bool },
    Idle,
}

/// All grid points with their config hashes, in row-major order.
#[derive(Debug)]
pub struct Grid {
    pub dims: Vec<u32>,
    pub configs: Vec<Config>,
    pub hashes: Vec<Hash256>,
}

impl Grid {
    pub fn new(dims: &[u32]) -> Arc<Self> {
        let configs: Vec<Config> = task::grid_points(dims).collect();
        let hashes = configs.iter().map(Config::hash).collect();
        Arc::new(Grid { dims: dims.to_vec(), configs, hashes })
    }

    pub fn random_config(&self, rng: &mut Rng) -> Config {
        Config(self.dims.iter().map(|&n| rng.gen_range(0..n)).collect())
    }

    /// ±1 in one uniformly chosen coordinate, clamped to the grid.
    pub fn random_neighbor(&self, c: &Config, rng: &mut Rng) -> Config {
        let mut v = c.0.clone();
        let i = rng.gen_range(0..v.len());
        let up: bool = rng.gen();
        v[i] = if up { (v[i] + 1).min(self.dims[i] - 1) } else { v[i].saturating_sub(1) };
        Config(v)
    }
}

/// What an agent may read at the start of a round.
#[derive(Clone, Copy)]
pub struct BoardView<'a> {
    pub board: &'a Blackboard,
    pub grid: &'a Grid,
    pub params: &'a InstitutionParams,
    pub total_rounds: u32,
}

impl<'a> BoardView<'a> {
    fn best(&self) -> Option<&'a Submission> {
        self.board.ranking().next()
    }

    /// Config of the frontier's top entry, if that entry is disclosed.
    fn best_disclosed_config(&self) -> Option<&'a Config> {
        self.best().and_then(|s| s.config.as_ref())
    }

    fn reproduced_by(&self, agent: AgentId, target: SubmissionId) -> bool {
        self.board
            .submissions()
            .iter()
            .any(|s| s.agent == agent && s.kind.target() == Some(target))
    }
}

fn disclosure(spec: &AgentSpec, view: &BoardView<'_>, round: u32, rng: &mut Rng) -> bool {
    if !spec.disclose {
        return false;
    }
    match &view.params.mechanism {
        Mechanism::Neural(theta) if view.params.sharing_bonus <= 0.0 => {
            let rank: f64 = rng.gen();
            let frac = if view.total_rounds == 0 { 0.0 } else { round as f64 / view.total_rounds as f64 };
            theta.score(&[rank, 1.0, 1.0, 0.0, frac]) >= theta.score(&[rank, 1.0, 0.0, 0.0, frac])
        }
        _ => true,
    }
}

pub fn decide_actions(spec: &AgentSpec, view: &BoardView<'_>, round: u32, rng: &mut Rng) -> Vec<Action> {
    let n = spec.evals_per_round as usize;
    let actions = match &spec.policy {
        Policy::BlindExplorer => (0..n)
            .map(|_| {
                let config = view.grid.random_config(rng);
                Action::Evaluate { config, disclose: disclosure(spec, view, round, rng) }
            })
            .collect(),
        Policy::BlackboardExplorer { exploit_prob } => blackboard_explorer(spec, view, round, *exploit_prob, rng),
        Policy::Reproducer => reproducer(spec, view),
        Policy::FreeRider => match view.best_disclosed_config() {
            Some(best) => (0..n)
                .map(|_| {
                    let config = view.grid.random_neighbor(best, rng);
                    Action::Evaluate { config, disclose: disclosure(spec, view, round, rng) }
                })
                .collect(),
            None => Vec::new(),
        },
        Policy::Fabricator { inflate } => {
            let claimed_score = view.best().map_or(0.0, |s| s.reported_score) + inflate;
            (0..n)
                .map(|_| {
                    let config = view.grid.random_config(rng);
                    Action::Fabricate { config, claimed_score, disclose: disclosure(spec, view, round, rng) }
                })
                .collect()
        }
        Policy::Colluder { partner } => colluder(spec, *partner, view, round, rng),
    };
    if actions.is_empty() {
        vec![Action::Idle]
    } else {
        actions
    }
}

fn blackboard_explorer(spec: &AgentSpec, view: &BoardView<'_>, round: u32, p: f64, rng: &mut Rng) -> Vec<Action> {
    let mut unvisited: Vec<usize> =
        (0..view.grid.configs.len()).filter(|&i| !view.board.visited(&view.grid.hashes[i])).collect();
    let mut out = Vec::new();
    for _ in 0..spec.evals_per_round {
        let exploit = rng.gen::<f64>() < p;
        let best = view.best_disclosed_config();
        let config = match (exploit, best) {
            (true, Some(best)) => Some(view.grid.random_neighbor(best, rng)),
            _ if !unvisited.is_empty() => {
                let k = rng.gen_range(0..unvisited.len());
                Some(view.grid.configs[unvisited.swap_remove(k)].clone())
            }
            (_, Some(best)) => Some(view.grid.random_neighbor(best, rng)),
            (_, None) => None,
        };
        if let Some(config) = config {
            out.push(Action::Evaluate { config, disclose: disclosure(spec, view, round, rng) });
        }
    }
    out
}

fn reproducer(spec: &AgentSpec, view: &BoardView<'_>) -> Vec<Action> {
    if view.params.repro_bounty <= 0.0 {
        return Vec::new();
    }
    view.board
        .ranking()
        .filter(|s| s.disclosed && s.agent != spec.id && !view.board.is_confirmed(s.id))
        .filter(|s| !view.reproduced_by(spec.id, s.id))
        .take(spec.evals_per_round as usize)
        .map(|s| Action::Reproduce { target: s.id, reported: None })
        .collect()
}

fn colluder(spec: &AgentSpec, partner: AgentId, view: &BoardView<'_>, round: u32, rng: &mut Rng) -> Vec<Action> {
    if round % 2 == 0 {
        return (0..spec.evals_per_round)
            .map(|_| {
                let config = view.grid.random_config(rng);
                Action::Evaluate { config, disclose: disclosure(spec, view, round, rng) }
            })
            .collect();
    }
    let mut targets: Vec<&Submission> = view
        .board
        .submissions()
        .iter()
        .filter(|s| s.agent == partner && s.kind.is_new() && s.disclosed && !view.board.is_confirmed(s.id))
        .filter(|s| !view.reproduced_by(spec.id, s.id))
        .collect();
    targets.reverse();
    targets
        .into_iter()
        .take(spec.evals_per_round as usize)
        .map(|s| Action::Reproduce { target: s.id, reported: Some(s.reported_score) })
        .collect()
}
