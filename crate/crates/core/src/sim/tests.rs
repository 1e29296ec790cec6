use super::*;
use crate::blackboard::Verdict;
use crate::incentive::{Mechanism, MechanismTheta, RewardReason};
use crate::rng;
use proptest::prelude::*;
use rand::Rng as _;

fn agent(id: u64, policy: Policy, evals: u32) -> AgentSpec {
    AgentSpec { id: AgentId(id), name: format!("agent-{id}"), policy, evals_per_round: evals, disclose: true, policy_seed: id }
}

fn scenario(dims: &[u32], agents: Vec<AgentSpec>, rounds: u32, master_seed: u64) -> Scenario {
    Scenario {
        task: TaskInputs { seed: 7, dims: dims.to_vec(), bumps: 3, noise_std: 0.02 },
        agents,
        params: InstitutionParams::default(),
        rounds,
        master_seed,
    }
}

fn mixed(master_seed: u64) -> Scenario {
    scenario(
        &[6, 6],
        vec![
            agent(1, Policy::BlindExplorer, 2),
            agent(2, Policy::BlackboardExplorer { exploit_prob: 0.3 }, 2),
            agent(3, Policy::Reproducer, 1),
            agent(4, Policy::FreeRider, 1),
            agent(5, Policy::Fabricator { inflate: 0.2 }, 1),
            agent(6, Policy::Colluder { partner: AgentId(7) }, 1),
            agent(7, Policy::Colluder { partner: AgentId(6) }, 1),
        ],
        8,
        master_seed,
    )
}

#[test]
fn degenerate_grid() {
    let s = scenario(&[1], vec![agent(1, Policy::BlindExplorer, 3)], 1, 0);
    let out = run(&s).unwrap();
    let task = s.task.generate().unwrap();
    assert_eq!(out.metrics.total_compute, 3);
    assert!((out.metrics.redundancy_rate - 2.0 / 3.0).abs() < 1e-15);
    assert_eq!(out.metrics.best_true_score(), task.true_score(&Config(vec![0])).unwrap());
}

#[test]
fn invalid_scenarios_rejected() {
    let mut s = mixed(1);
    s.rounds = 0;
    assert!(matches!(run(&s), Err(Error::InvalidScenario(_))));
    let mut s = mixed(1);
    s.agents.clear();
    assert!(run(&s).is_err());
    let mut s = mixed(1);
    s.agents[6].policy = Policy::Colluder { partner: AgentId(1) };
    assert!(run(&s).is_err());
    let mut s = mixed(1);
    s.agents[1].id = AgentId(1);
    assert!(run(&s).is_err());
    let mut s = mixed(1);
    s.params.perf_budget = -1.0;
    assert!(run(&s).is_err());
}

#[test]
fn runs_are_bit_identical() {
    let s = mixed(42);
    let a = run(&s).unwrap();
    let b = run(&s).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.trajectory.to_log_string(), b.trajectory.to_log_string());
    assert_ne!(a.trajectory.to_log_string(), run(&mixed(43)).unwrap().trajectory.to_log_string());
}

#[test]
fn agent_order_in_scenario_does_not_matter() {
    let s = mixed(5);
    let mut shuffled = s.clone();
    shuffled.agents.reverse();
    assert_eq!(run(&s).unwrap(), run(&shuffled).unwrap());
}

#[test]
fn blind_birthday_collisions() {
    let sim = Simulation::new(scenario(&[10, 10], vec![agent(1, Policy::BlindExplorer, 1), agent(2, Policy::BlindExplorer, 1)], 1, 0))
        .unwrap();
    let n = 2000u64;
    let mut hits = 0u64;
    for seed in 0..n {
        let out = sim.run_with(&sim.scenario().params, seed, Mode::Open, Blackboard::new()).unwrap();
        if out.metrics.redundancy_rate > 0.0 {
            hits += 1;
        }
    }
    let p = 0.01;
    let freq = hits as f64 / n as f64;
    let se = (p * (1.0 - p) / n as f64).sqrt();
    assert!((freq - p).abs() < 3.0 * se, "frequency {freq}");
}

#[test]
fn blackboard_explorers_never_repeat_across_rounds() {
    for seed in 0..10 {
        let agents = (1..=4).map(|i| agent(i, Policy::BlackboardExplorer { exploit_prob: 0.0 }, 2)).collect();
        let out = run(&scenario(&[10, 10], agents, 10, seed)).unwrap();
        let traj = &out.trajectory;
        for e in &traj.evaluations {
            let earlier = traj.evaluations.iter().any(|o| o.round < e.round && o.config_hash == e.config_hash);
            assert!(!earlier, "seed {seed}: cross-round duplicate");
        }
    }
}

#[test]
fn compute_counts_evaluations_and_reproductions_only() {
    for seed in 0..5 {
        let out = run(&mixed(seed)).unwrap();
        let traj = &out.trajectory;
        let fabricated: Vec<_> = traj.submissions.iter().filter(|s| s.agent == AgentId(5)).map(|s| s.id).collect();
        assert!(!fabricated.is_empty());
        assert!(traj.evaluations.iter().all(|e| !fabricated.contains(&e.submission)));
        assert_eq!(out.metrics.total_compute as usize, traj.submissions.len() - fabricated.len());
    }
}

#[test]
fn colluders_always_confirm_each_other() {
    for seed in 0..5 {
        let out = run(&mixed(seed)).unwrap();
        let traj = &out.trajectory;
        let mut judged = 0;
        for v in &traj.verdicts {
            let r = traj.submissions.iter().find(|s| s.id == v.reproduction).unwrap();
            if r.agent == AgentId(6) || r.agent == AgentId(7) {
                assert_eq!((v.verdict, v.delta), (Verdict::Confirmed, 0.0));
                judged += 1;
            }
        }
        assert!(judged > 0);
    }
}

#[test]
fn refereed_mode_catches_fabrication() {
    let s = mixed(3);
    let sim = Simulation::new(s.clone()).unwrap();
    let out = sim.run_with(&s.params, s.master_seed, Mode::Refereed, Blackboard::new()).unwrap();
    for sub in out.trajectory.submissions.iter().filter(|x| x.agent == AgentId(5)) {
        let e = out.trajectory.evaluations.iter().find(|e| e.submission == sub.id).unwrap();
        assert!((sub.reported_score - e.true_score).abs() < 0.2);
    }
}

#[test]
fn replay_reproduces_rewards() {
    for seed in 0..6 {
        let s = mixed(seed);
        let out = run(&s).unwrap();
        assert_eq!(replay_rewards(&out.trajectory, &s.params).unwrap(), out.trajectory.rewards);
        let text = out.trajectory.to_log_string();
        let back = Trajectory::read_log(text.as_bytes()).unwrap();
        assert_eq!(back, out.trajectory);
        assert_eq!(compute_metrics(&back, &s.params), out.metrics);
    }
}

#[test]
fn neural_runs_replay_too() {
    let mut s = mixed(9);
    s.params.mechanism = Mechanism::Neural(MechanismTheta::seeded(4));
    let out = run(&s).unwrap();
    assert_eq!(replay_rewards(&out.trajectory, &s.params).unwrap(), out.trajectory.rewards);
}

#[test]
fn metric_examples() {
    assert_eq!(gini(&[3.0, 3.0, 3.0]), 0.0);
    assert_eq!(gini(&[]), 0.0);
    assert_eq!(gini(&[-1.0, -2.0]), 0.0);
    assert!((gini(&[0.0, 0.0, 0.0, 4.0]) - 0.75).abs() < 1e-15);

    let agents = (1..=2).map(|i| agent(i, Policy::BlackboardExplorer { exploit_prob: 0.0 }, 1)).collect();
    let out = run(&scenario(&[20, 20], agents, 1, 1)).unwrap();
    assert_eq!(out.metrics.redundancy_rate, 0.0);
}

#[test]
fn coverage_is_one_when_top_k_all_confirmed() {
    // Two colluders confirm everything the other one discloses.
    let mut s = scenario(
        &[5, 5],
        vec![agent(1, Policy::Colluder { partner: AgentId(2) }, 1), agent(2, Policy::Colluder { partner: AgentId(1) }, 1)],
        2,
        0,
    );
    s.params.top_k = 2;
    let out = run(&s).unwrap();
    assert_eq!(out.metrics.reproduction_coverage, 1.0);
    assert!(out.trajectory.rewards.iter().any(|e| e.entry.reason == RewardReason::ConfirmBonus));
}

fn pairwise_gini(values: &[f64]) -> f64 {
    let v: Vec<f64> = values.iter().map(|x| x.max(0.0)).collect();
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if mean == 0.0 {
        return 0.0;
    }
    let mut acc = 0.0;
    for a in &v {
        for b in &v {
            acc += (a - b).abs();
        }
    }
    acc / (2.0 * n * n * mean)
}

#[test]
fn gini_matches_pairwise_definition_on_runs() {
    for seed in 0..10 {
        let out = run(&mixed(seed)).unwrap();
        let totals: Vec<f64> = out.trajectory.reward_totals().into_values().collect();
        assert!((out.metrics.reward_gini - pairwise_gini(&totals)).abs() < 1e-12);
    }
}

#[test]
fn metrics_invariant_under_relabeling() {
    let s = mixed(11);
    let out = run(&s).unwrap();
    let map = |a: AgentId| AgentId(1000 - a.0);
    let mut t = out.trajectory.clone();
    t.agents = t.agents.iter().map(|&a| map(a)).collect();
    for x in &mut t.submissions {
        x.agent = map(x.agent);
    }
    for x in &mut t.evaluations {
        x.agent = map(x.agent);
    }
    for x in &mut t.rewards {
        x.entry.agent = map(x.entry.agent);
    }
    assert_eq!(compute_metrics(&t, &s.params), out.metrics);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gini_matches_pairwise(values in proptest::collection::vec(-5.0f64..50.0, 1..40)) {
        prop_assert!((gini(&values) - pairwise_gini(&values)).abs() < 1e-12);
    }

    #[test]
    fn metric_ranges(seed in any::<u64>()) {
        let out = run(&mixed(seed)).unwrap();
        let m = &out.metrics;
        prop_assert!((0.0..=1.0).contains(&m.redundancy_rate));
        prop_assert!((0.0..=1.0).contains(&m.reproduction_coverage));
        prop_assert!((0.0..=1.0).contains(&m.reward_gini));
        prop_assert!(m.best_true_score_by_round.windows(2).all(|w| w[0] <= w[1]));
        prop_assert_eq!(m.best_true_score_by_round.len(), 8);
        let ids: Vec<u64> = out.trajectory.submissions.iter().map(|s| s.id.0).collect();
        prop_assert_eq!(ids, (1..=out.trajectory.submissions.len() as u64).collect::<Vec<_>>());
    }

    #[test]
    fn eval_seeds_distinct(base in any::<u64>()) {
        let mut r = rng::stream(&[base]);
        let a = (r.gen_range(0..50u32), AgentId(r.gen_range(0..50)), r.gen_range(0..5u32));
        let b = (a.0 + 1, a.1, a.2);
        prop_assert_ne!(eval_seed(base, a.0, a.1, a.2), eval_seed(base, b.0, b.1, b.2));
    }
}
