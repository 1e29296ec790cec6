use super::*;
use crate::agents::{AgentId, AgentSpec, Policy};
use crate::incentive::InstitutionParams;
use crate::sim::TaskInputs;
use proptest::prelude::*;
use rand::Rng as _;

fn es(population: usize, sigma_es: f64, seed: u64) -> EsConfig {
    EsConfig { population, sigma_es, step_size: 0.1, iterations: 1, base_seed: seed }
}

fn metrics(best: f64, redundancy: f64, coverage: f64, compute: u64, agents: usize, rounds: u32) -> Metrics {
    Metrics {
        best_true_score_by_round: vec![best],
        redundancy_rate: redundancy,
        reproduction_coverage: coverage,
        total_compute: compute,
        reward_gini: 0.0,
        total_outlay: 0.0,
        agent_count: agents,
        round_count: rounds,
    }
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den
}

#[test]
fn welfare_examples() {
    let w = WelfareWeights::default();
    assert!((welfare(&metrics(1.0, 0.0, 1.0, 6, 2, 3), &w) - 1.9).abs() < 1e-15);
    assert_eq!(welfare(&metrics(0.0, 0.0, 0.0, 0, 0, 0), &w), 0.0);
}

#[test]
fn welfare_matches_recomputation() {
    let mut r = rng::stream(&[123]);
    for _ in 0..20 {
        let (b, red, cov) = (r.gen::<f64>(), r.gen::<f64>(), r.gen::<f64>());
        let (agents, rounds) = (r.gen_range(1..10usize), r.gen_range(1..20u32));
        let compute = r.gen_range(0..200u64);
        let w = WelfareWeights { w_best: r.gen(), w_redund: r.gen(), w_repro: r.gen(), w_cost: r.gen() };
        let cost = compute as f64 / (agents as f64 * rounds as f64);
        let want = w.w_best * b - w.w_redund * red + w.w_repro * cov - w.w_cost * cost;
        assert!((welfare(&metrics(b, red, cov, compute, agents, rounds), &w) - want).abs() < 1e-12);
    }
}

#[test]
fn odd_population_is_invalid() {
    let f = |_: &[f64]| 0.0;
    assert!(matches!(es_gradient(&f, &[0.0; 3], &es(7, 0.1, 0)), Err(Error::InvalidConfig(_))));
    assert!(es_gradient(&f, &[0.0; 3], &es(0, 0.1, 0)).is_err());
}

#[test]
fn linear_objective_is_exact() {
    let c: Vec<f64> = (0..10).map(|i| (i as f64 - 4.5) * 0.3).collect();
    let f = |t: &[f64]| t.iter().zip(&c).map(|(a, b)| a * b).sum::<f64>();
    for (pop, sigma) in [(20, 0.01), (64, 0.5), (256, 2.0)] {
        for seed in 0..5 {
            let g = es_gradient(&f, &[0.3; 10], &es(pop, sigma, seed)).unwrap();
            assert!(rel_err(&g, &c) < 1e-9, "pop {pop} sigma {sigma}");
        }
    }
}

#[test]
fn constant_objective_gives_zero() {
    let f = |_: &[f64]| 3.25;
    assert_eq!(es_gradient(&f, &[1.0; 7], &es(16, 0.1, 4)).unwrap(), vec![0.0; 7]);
}

#[test]
fn quadratic_within_ten_percent() {
    let mut r = rng::stream(&[5]);
    for seed in 0..20 {
        let star: Vec<f64> = (0..10).map(|_| r.gen_range(-1.0..1.0)).collect();
        let theta: Vec<f64> = (0..10).map(|_| r.gen_range(-1.0..1.0)).collect();
        let f = |t: &[f64]| -t.iter().zip(&star).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        let analytic: Vec<f64> = theta.iter().zip(&star).map(|(t, s)| -2.0 * (t - s)).collect();
        let g = es_gradient(&f, &theta, &es(256, 0.01, seed)).unwrap();
        assert!(rel_err(&g, &analytic) < 0.10, "seed {seed}: {}", rel_err(&g, &analytic));
    }
}

#[test]
fn perturbations_form_a_tight_frame() {
    for (pairs, dim) in [(10, 10), (32, 10), (128, 113)] {
        let eps = perturbations(pairs, dim, 9);
        for a in 0..dim {
            for b in 0..dim {
                let s: f64 = eps.iter().map(|e| e[a] * e[b]).sum();
                let want = if a == b { pairs as f64 } else { 0.0 };
                assert!((s - want).abs() < 1e-8 * pairs as f64);
            }
        }
    }
    // Fewer pairs than dimensions: orthogonal rows of norm sqrt(dim).
    let eps = perturbations(4, 30, 1);
    for (i, e) in eps.iter().enumerate() {
        for (j, f) in eps.iter().enumerate() {
            let s: f64 = e.iter().zip(f).map(|(a, b)| a * b).sum();
            assert!((s - if i == j { 30.0 } else { 0.0 }).abs() < 1e-9);
        }
    }
}

#[test]
fn gradient_independent_of_thread_count() {
    let f = |t: &[f64]| t.iter().map(|x| x.sin()).sum::<f64>();
    let theta: Vec<f64> = (0..12).map(|i| i as f64 * 0.1).collect();
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let many = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let a = one.install(|| es_gradient(&f, &theta, &es(40, 0.05, 3)).unwrap());
    let b = many.install(|| es_gradient(&f, &theta, &es(40, 0.05, 3)).unwrap());
    assert_eq!(a, b);
}

fn small_scenario(mechanism: Mechanism) -> Scenario {
    let agent = |id: u64, policy: Policy| AgentSpec {
        id: AgentId(id),
        name: format!("a{id}"),
        policy,
        evals_per_round: 1,
        disclose: true,
        policy_seed: id,
    };
    Scenario {
        task: TaskInputs { seed: 3, dims: vec![5, 5], bumps: 2, noise_std: 0.02 },
        agents: vec![
            agent(1, Policy::BlackboardExplorer { exploit_prob: 0.2 }),
            agent(2, Policy::FreeRider),
            agent(3, Policy::Reproducer),
        ],
        params: InstitutionParams { mechanism, ..InstitutionParams::default() },
        rounds: 4,
        master_seed: 8,
    }
}

#[test]
fn zero_iterations_returns_initial_theta() {
    let init = MechanismTheta::seeded(2);
    let s = small_scenario(Mechanism::Neural(init.clone()));
    let cfg = EsConfig { iterations: 0, ..es(4, 0.1, 0) };
    let out = train_mechanism(&s, WelfareWeights::default(), &cfg, training_seeds(1, 2)).unwrap();
    assert_eq!(out.theta, init);
    assert_eq!(out.curve.len(), 1);
}

#[test]
fn training_is_deterministic_and_keeps_seeds() {
    let s = small_scenario(Mechanism::Neural(MechanismTheta::seeded(2)));
    let cfg = EsConfig { iterations: 2, ..es(4, 0.1, 5) };
    let seeds = training_seeds(1, 3);
    let a = train_mechanism(&s, WelfareWeights::default(), &cfg, seeds.clone()).unwrap();
    let b = train_mechanism(&s, WelfareWeights::default(), &cfg, seeds.clone()).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.sim_seeds, seeds);
    assert_eq!(a.curve.len(), 3);
    assert!(a.curve_csv().starts_with("iteration,mean_welfare,grad_norm\n"));
}

#[test]
fn objective_uses_common_random_numbers() {
    let s = small_scenario(Mechanism::Neural(MechanismTheta::zeros()));
    let obj = WelfareObjective::new(&s, WelfareWeights::default(), training_seeds(4, 3)).unwrap();
    let before = obj.seeds().to_vec();
    let t = MechanismTheta::seeded(6);
    let w1 = obj.mean_welfare(&t).unwrap();
    let w2 = obj.mean_welfare(&t).unwrap();
    assert_eq!(w1, w2);
    assert_eq!(obj.seeds(), &before[..]);
}

#[test]
fn non_neural_scenario_rejected() {
    let s = small_scenario(Mechanism::RankTopK);
    let r = train_mechanism(&s, WelfareWeights::default(), &es(4, 0.1, 0), vec![1]);
    assert!(matches!(r, Err(Error::InvalidScenario(_))));
}

proptest! {
    #[test]
    fn linear_exact_any_seed(seed in any::<u64>(), sigma in 0.001f64..5.0, c in proptest::collection::vec(-3.0f64..3.0, 6)) {
        let f = |t: &[f64]| t.iter().zip(&c).map(|(a, b)| a * b).sum::<f64>();
        let g = es_gradient(&f, &[0.0; 6], &es(12, sigma, seed)).unwrap();
        for (gi, ci) in g.iter().zip(&c) {
            prop_assert!((gi - ci).abs() < 1e-9 * (1.0 + ci.abs()));
        }
    }
}
