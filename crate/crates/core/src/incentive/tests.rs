use super::*;
use crate::blackboard::{Draft, SubmissionKind};
use crate::rng;
use crate::task::Config;
use proptest::prelude::*;
use rand::Rng as _;

fn board_with(scores: &[(u64, f64)]) -> Blackboard {
    let mut b = Blackboard::new();
    for (i, (agent, score)) in scores.iter().enumerate() {
        b.append(Draft {
            agent: AgentId(*agent),
            round: 0,
            kind: SubmissionKind::New,
            config: Config(vec![i as u32]),
            reported_score: *score,
            disclosed: true,
        })
        .unwrap();
    }
    b
}

fn params(mechanism: Mechanism, budget: f64) -> InstitutionParams {
    InstitutionParams { perf_budget: budget, mechanism, ..InstitutionParams::default() }
}

fn perf(entries: &[RewardEntry]) -> Vec<f64> {
    entries.iter().filter(|e| e.reason == RewardReason::Performance).map(|e| e.amount).collect()
}

fn allocate(b: &Blackboard, p: &InstitutionParams, round: u32) -> Vec<RewardEntry> {
    allocate_round(&b.snapshot_round(round), b, p, &RoundContext::as_of(b, round, 10)).unwrap()
}

#[test]
fn winner_take_all_example() {
    let b = board_with(&[(1, 0.2), (2, 0.9), (3, 0.5)]);
    let out = allocate(&b, &params(Mechanism::WinnerTakeAll, 10.0), 0);
    assert_eq!(perf(&out), vec![0.0, 10.0, 0.0]);
    assert_eq!(out[1].agent, AgentId(2));
}

#[test]
fn winner_tie_goes_to_earlier_id() {
    let b = board_with(&[(9, 0.1), (9, 0.1), (1, 0.7), (9, 0.1), (2, 0.7)]);
    let out = allocate(&b, &params(Mechanism::WinnerTakeAll, 10.0), 0);
    let winner = out.iter().find(|e| e.amount > 0.0).unwrap();
    assert_eq!((winner.submission, winner.agent), (SubmissionId(3), AgentId(1)));
}

#[test]
fn rank_top_k_example() {
    let b = board_with(&[(1, 0.9), (2, 0.5), (3, 0.2)]);
    let p = InstitutionParams { top_k: 2, ..params(Mechanism::RankTopK, 10.0) };
    let got = perf(&allocate(&b, &p, 0));
    assert!((got[0] - 20.0 / 3.0).abs() < 1e-12);
    assert!((got[1] - 10.0 / 3.0).abs() < 1e-12);
    assert_eq!(got[2], 0.0);
}

#[test]
fn confirmed_verdict_pays_both_sides() {
    let mut b = board_with(&[(1, 0.5)]);
    let r = b
        .append(Draft {
            agent: AgentId(2),
            round: 0,
            kind: SubmissionKind::Reproduction { target: SubmissionId(1) },
            config: Config(vec![0]),
            reported_score: 0.51,
            disclosed: true,
        })
        .unwrap();
    b.match_reproduction(r, 0.05).unwrap();
    let p = InstitutionParams { repro_bounty: 2.0, confirm_bonus: 1.0, ..InstitutionParams::default() };
    let out = allocate(&b, &p, 0);
    assert!(out.contains(&RewardEntry { submission: r, agent: AgentId(2), amount: 2.0, reason: RewardReason::ReproBounty }));
    assert!(out.contains(&RewardEntry {
        submission: SubmissionId(1),
        agent: AgentId(1),
        amount: 1.0,
        reason: RewardReason::ConfirmBonus
    }));
}

#[test]
fn refuted_verdict_pays_reproducer_and_penalizes_original() {
    let mut b = board_with(&[(1, 0.9)]);
    let r = b
        .append(Draft {
            agent: AgentId(2),
            round: 0,
            kind: SubmissionKind::Reproduction { target: SubmissionId(1) },
            config: Config(vec![0]),
            reported_score: 0.3,
            disclosed: true,
        })
        .unwrap();
    b.match_reproduction(r, 0.05).unwrap();
    let out = allocate(&b, &InstitutionParams::default(), 0);
    let pen = out.iter().find(|e| e.reason == RewardReason::RefutePenalty).unwrap();
    assert_eq!((pen.agent, pen.amount), (AgentId(1), -3.0));
    assert!(out.iter().any(|e| e.reason == RewardReason::ReproBounty && e.agent == AgentId(2)));
}

#[test]
fn sharing_bonus_and_empty_round() {
    let b = board_with(&[(1, 0.5), (2, 0.4)]);
    let p = InstitutionParams { sharing_bonus: 0.5, ..InstitutionParams::default() };
    assert_eq!(allocate(&b, &p, 0).iter().filter(|e| e.reason == RewardReason::SharingBonus).count(), 2);
    assert!(allocate(&b, &p, 1).is_empty());
}

#[test]
fn negative_budget_is_invalid() {
    let b = board_with(&[(1, 0.5)]);
    let p = params(Mechanism::WinnerTakeAll, -1.0);
    let r = allocate_round(&b.snapshot_round(0), &b, &p, &RoundContext::default());
    assert!(matches!(r, Err(Error::InvalidParams(_))));
}

#[test]
fn features_of_sole_first_submission() {
    let b = board_with(&[(1, 0.5)]);
    let news: Vec<&Submission> = b.submissions().iter().collect();
    let f = neural_features(news[0], &news, &RoundContext::as_of(&b, 0, 10));
    assert_eq!(f, [0.0, 1.0, 1.0, 0.0, 0.0]);
}

#[test]
fn duplicate_config_is_not_novel() {
    let mut b = board_with(&[(1, 0.5)]);
    b.append(Draft {
        agent: AgentId(2),
        round: 1,
        kind: SubmissionKind::New,
        config: Config(vec![0]),
        reported_score: 0.4,
        disclosed: false,
    })
    .unwrap();
    let snap = b.snapshot_round(1);
    let news: Vec<&Submission> = snap.submissions.iter().collect();
    let f = neural_features(news[0], &news, &RoundContext::as_of(&b, 1, 10));
    assert_eq!(f, [0.0, 0.0, 0.0, 0.0, 0.1]);
}

#[test]
fn zero_theta_is_uniform() {
    let b = board_with(&[(1, 0.1), (2, 0.7), (3, 0.3), (4, 0.3)]);
    let got = perf(&allocate(&b, &params(Mechanism::Neural(MechanismTheta::zeros()), 10.0), 0));
    assert_eq!(got, vec![2.5; 4]);
}

/// Straight-line forward pass: h = tanh(W1 x + b1), y = w2 . h + b2.
fn reference_forward(theta: &[f64], x: &[f64; 5]) -> f64 {
    let mut w1 = [[0.0; 5]; 16];
    for (h, row) in w1.iter_mut().enumerate() {
        row.copy_from_slice(&theta[h * 5..h * 5 + 5]);
    }
    let b1 = &theta[80..96];
    let w2 = &theta[96..112];
    let b2 = theta[112];
    let mut y = b2;
    for h in 0..16 {
        let mut z = b1[h];
        for i in 0..5 {
            z += w1[h][i] * x[i];
        }
        y += w2[h] * z.tanh();
    }
    y
}

#[test]
fn forward_pass_matches_matrix_oracle() {
    let theta = MechanismTheta::seeded(1);
    let b = board_with(&[(1, 0.8), (2, 0.2), (3, 0.5)]);
    let snap = b.snapshot_round(0);
    let news: Vec<&Submission> = snap.submissions.iter().collect();
    let ctx = RoundContext::as_of(&b, 0, 4);
    let feats: Vec<Features> = news.iter().map(|s| neural_features(s, &news, &ctx)).collect();
    let logits: Vec<f64> = feats.iter().map(|f| reference_forward(theta.as_slice(), f)).collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|l| (l - max).exp()).sum();
    let got = neural_allocate(&news, &feats, &theta, 6.0);
    for (e, l) in got.iter().zip(&logits) {
        assert!((e.amount - 6.0 * (l - max).exp() / z).abs() < 1e-12);
    }
}

/// Board of several rounds with repeats, reproductions and verdicts.
fn random_rounds(seed: u64, rounds: u32) -> Blackboard {
    let mut r = rng::stream(&[seed, 17]);
    let mut b = Blackboard::new();
    for round in 0..rounds {
        let n = r.gen_range(0..=20);
        for _ in 0..n {
            let agent = AgentId(r.gen_range(0..8));
            let eligible: Vec<SubmissionId> = b
                .submissions()
                .iter()
                .filter(|s| s.kind.is_new() && s.agent != agent && s.config.is_some())
                .map(|s| s.id)
                .collect();
            if !eligible.is_empty() && r.gen_bool(0.3) {
                let target = eligible[r.gen_range(0..eligible.len())];
                let config = b.get(target).unwrap().config.clone().unwrap();
                let base = b.get(target).unwrap().reported_score;
                let kind = SubmissionKind::Reproduction { target };
                let score = base + r.gen_range(-0.1..0.1);
                let id = b.append(Draft { agent, round, kind, config, reported_score: score, disclosed: true }).unwrap();
                b.match_reproduction(id, 0.05).unwrap();
            } else {
                let config = Config(vec![r.gen_range(0..4), r.gen_range(0..4)]);
                let score = f64::from(r.gen_range(0..20u32)) / 20.0;
                let disclosed = r.gen_bool(0.6);
                b.append(Draft { agent, round, kind: SubmissionKind::New, config, reported_score: score, disclosed }).unwrap();
            }
        }
    }
    b
}

/// Independent allocator: sorts indices and hands out weights by rank.
fn reference_performance(scores: &[(u64, f64)], mech: &str, k: usize, budget: f64) -> Vec<f64> {
    let n = scores.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| {
        let (ia, sa) = scores[a];
        let (ib, sb) = scores[b];
        sb.partial_cmp(&sa).unwrap().then(ia.cmp(&ib))
    });
    let mut out = vec![0.0; n];
    if n == 0 {
        return out;
    }
    if mech == "wta" {
        out[idx[0]] = budget;
        return out;
    }
    let m = k.min(n);
    let mut wsum = 0.0;
    for r in 1..=m {
        wsum += (k - r + 1) as f64;
    }
    for r in 1..=m {
        out[idx[r - 1]] = budget * (k - r + 1) as f64 / wsum;
    }
    out
}

#[test]
fn performance_matches_reference_allocator() {
    for seed in 0..200 {
        let b = random_rounds(seed, 3);
        for round in 0..3 {
            let snap = b.snapshot_round(round);
            let scores: Vec<(u64, f64)> =
                snap.submissions.iter().filter(|s| s.kind.is_new()).map(|s| (s.id.0, s.reported_score)).collect();
            for k in 1..5 {
                let p = InstitutionParams { top_k: k, ..params(Mechanism::RankTopK, 7.0) };
                let got = perf(&allocate(&b, &p, round));
                let want = reference_performance(&scores, "topk", k, 7.0);
                assert_eq!(got.len(), want.len());
                for (g, w) in got.iter().zip(&want) {
                    assert!((g - w).abs() <= 1e-12 * 7.0, "seed {seed} round {round} k {k}");
                }
            }
            let got = perf(&allocate(&b, &params(Mechanism::WinnerTakeAll, 7.0), round));
            assert_eq!(got, reference_performance(&scores, "wta", 1, 7.0));
        }
    }
}

#[test]
fn features_match_naive_recomputation() {
    for seed in 0..100 {
        let b = random_rounds(seed, 4);
        for round in 0..4 {
            let snap = b.snapshot_round(round);
            let news: Vec<&Submission> = snap.submissions.iter().filter(|s| s.kind.is_new()).collect();
            let ctx = RoundContext::as_of(&b, round, 4);
            for s in &news {
                let better = news
                    .iter()
                    .filter(|o| o.reported_score > s.reported_score || (o.reported_score == s.reported_score && o.id < s.id))
                    .count();
                let rank = if news.len() > 1 { better as f64 / (news.len() - 1) as f64 } else { 0.0 };
                let novel = !b.submissions().iter().any(|o| o.round < round && o.config_hash == s.config_hash);
                let confirmed = b.verdicts().iter().any(|v| {
                    v.original == s.id && v.verdict == Verdict::Confirmed && b.get(v.reproduction).unwrap().round <= round
                });
                let want = [
                    rank,
                    if novel { 1.0 } else { 0.0 },
                    if s.disclosed { 1.0 } else { 0.0 },
                    if confirmed { 1.0 } else { 0.0 },
                    f64::from(round) / 4.0,
                ];
                assert_eq!(neural_features(s, &news, &ctx), want);
            }
        }
    }
}

proptest! {
    #[test]
    fn conservation_all_mechanisms(seed in any::<u64>(), budget in 0.0f64..1e6, theta_seed in any::<u64>(), k in 1usize..6) {
        let b = random_rounds(seed, 2);
        for mech in [Mechanism::WinnerTakeAll, Mechanism::RankTopK, Mechanism::Neural(MechanismTheta::seeded(theta_seed))] {
            let exact = matches!(mech, Mechanism::WinnerTakeAll);
            let p = InstitutionParams { top_k: k, ..params(mech, budget) };
            for round in 0..2 {
                let has_new = b.snapshot_round(round).submissions.iter().any(|s| s.kind.is_new());
                let sum: f64 = perf(&allocate(&b, &p, round)).iter().sum();
                let want = if has_new { budget } else { 0.0 };
                if exact {
                    prop_assert_eq!(sum, want);
                } else {
                    prop_assert!((sum - want).abs() <= 1e-9 * want.max(1e-300));
                }
            }
        }
    }

    #[test]
    fn entries_signs_and_dual_reward(seed in any::<u64>(), beta in 0.01f64..5.0, gamma in 0.01f64..5.0) {
        let b = random_rounds(seed, 3);
        let p = InstitutionParams { repro_bounty: beta, confirm_bonus: gamma, ..InstitutionParams::default() };
        for round in 0..3 {
            let out = allocate(&b, &p, round);
            for e in &out {
                prop_assert!(e.amount >= 0.0 || e.reason == RewardReason::RefutePenalty);
            }
            for v in b.snapshot_round(round).verdicts.iter().filter(|v| v.verdict == Verdict::Confirmed) {
                let pair = verdict_entries(v, &b, &p).unwrap();
                prop_assert_eq!(pair.len(), 2);
                prop_assert!(pair.iter().all(|e| e.amount > 0.0 && out.contains(e)));
                prop_assert_ne!(pair[0].agent, pair[1].agent);
            }
        }
    }

    #[test]
    fn monotone_in_own_score(scores in proptest::collection::vec(0.0f64..1.0, 1..12), who in any::<prop::sample::Index>(), bump in 0.0f64..1.0, k in 1usize..5) {
        let i = who.index(scores.len());
        let base: Vec<(u64, f64)> = scores.iter().enumerate().map(|(j, s)| (j as u64, *s)).collect();
        let mut raised = base.clone();
        raised[i].1 += bump;
        for mech in [Mechanism::WinnerTakeAll, Mechanism::RankTopK] {
            let p = InstitutionParams { top_k: k, ..params(mech, 10.0) };
            let before = perf(&allocate(&board_with(&base), &p, 0))[i];
            let after = perf(&allocate(&board_with(&raised), &p, 0))[i];
            prop_assert!(after >= before - 1e-12);
        }
    }

    #[test]
    fn neural_budget_scale_covariant(seed in any::<u64>(), theta_seed in any::<u64>(), budget in 0.001f64..1e4) {
        let b = random_rounds(seed, 1);
        let theta = MechanismTheta::seeded(theta_seed);
        let one = perf(&allocate(&b, &params(Mechanism::Neural(theta.clone()), budget), 0));
        let two = perf(&allocate(&b, &params(Mechanism::Neural(theta), 2.0 * budget), 0));
        for (a, c) in one.iter().zip(&two) {
            prop_assert_eq!(2.0 * a, *c);
        }
    }

    #[test]
    fn anonymity_under_agent_relabeling(seed in any::<u64>(), shift in 1u64..50) {
        let b = random_rounds(seed, 1);
        let mut relabeled = Blackboard::new();
        for s in b.submissions().iter().filter(|s| s.kind.is_new()) {
            relabeled.append(Draft {
                agent: AgentId(s.agent.0 + shift),
                round: s.round,
                kind: SubmissionKind::New,
                config: s.config.clone().unwrap_or_else(|| Config(vec![9, 9])),
                reported_score: s.reported_score,
                disclosed: s.disclosed,
            }).unwrap();
        }
        let only_new = |board: &Blackboard| -> Vec<f64> {
            let snap = board.snapshot_round(0);
            let news: Vec<&Submission> = snap.submissions.iter().filter(|s| s.kind.is_new()).collect();
            rank_top_k(&news, 3, 10.0).iter().map(|e| e.amount).collect()
        };
        prop_assert_eq!(only_new(&b), only_new(&relabeled));
    }
}
