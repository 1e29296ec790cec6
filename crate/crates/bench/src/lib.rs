//! Fixtures shared by the benchmarks.

use macc_core::agents::{AgentId, AgentSpec, Policy};
use macc_core::blackboard::{Blackboard, Draft, SubmissionKind};
use macc_core::incentive::InstitutionParams;
use macc_core::sim::{Scenario, TaskInputs};
use macc_core::task::Config;

pub fn draft(i: u64, round: u32) -> Draft {
    Draft {
        agent: AgentId(i % 16),
        round,
        kind: SubmissionKind::New,
        config: Config(vec![(i % 100) as u32, (i / 100 % 100) as u32]),
        reported_score: ((i * 2654435761) % 10_007) as f64 / 10_007.0,
        disclosed: i % 5 != 0,
    }
}

/// Board with `n` New submissions spread over ten rounds.
pub fn filled_board(n: u64) -> Blackboard {
    let mut b = Blackboard::new();
    for i in 0..n {
        b.append(draft(i, (i * 10 / n.max(1)) as u32)).unwrap();
    }
    b
}

pub fn mixed_scenario(side: u32, agents: u64, rounds: u32) -> Scenario {
    let agents = (1..=agents)
        .map(|id| {
            let policy = match id % 4 {
                0 => Policy::Reproducer,
                1 => Policy::BlindExplorer,
                2 => Policy::BlackboardExplorer { exploit_prob: 0.3 },
                _ => Policy::FreeRider,
            };
            AgentSpec { id: AgentId(id), name: format!("a{id}"), policy, evals_per_round: 2, disclose: true, policy_seed: id }
        })
        .collect();
    Scenario {
        task: TaskInputs { seed: 3, dims: vec![side, side], bumps: 4, noise_std: 0.02 },
        agents,
        params: InstitutionParams::default(),
        rounds,
        master_seed: 1,
    }
}
