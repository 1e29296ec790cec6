//! Scenario files: TOML documents with `rounds`, `master_seed` and the
//! `[task]`, `[institution]` and `[[agents]]` sections. Unknown keys are
//! rejected. See `scenarios/example.toml` at the repository root for a
//! commented example.

use serde::Deserialize;

use crate::agents::{AgentId, AgentSpec, Policy, PolicyKind};
use crate::error::{Error, Result};
use crate::incentive::{InstitutionParams, Mechanism, MechanismTheta};
use crate::sim::{Scenario, TaskInputs};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    rounds: u32,
    master_seed: u64,
    task: TaskSection,
    institution: InstitutionSection,
    agents: Vec<AgentSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TaskSection {
    seed: u64,
    dims: Vec<u32>,
    bumps: usize,
    noise_std: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstitutionSection {
    perf_budget: f64,
    top_k: usize,
    repro_bounty: f64,
    confirm_bonus: f64,
    refute_penalty: f64,
    #[serde(default)]
    sharing_bonus: f64,
    epsilon: f64,
    mechanism: String,
    theta: Option<Vec<f64>>,
    theta_seed: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AgentSection {
    id: u64,
    name: Option<String>,
    policy: String,
    exploit_prob: Option<f64>,
    inflate: Option<f64>,
    partner: Option<u64>,
    evals_per_round: u32,
    disclose: bool,
    policy_seed: Option<u64>,
}

fn field_err(field: &str, msg: impl std::fmt::Display) -> Error {
    Error::InvalidScenario(format!("{field}: {msg}"))
}

fn money(field: &str, v: f64) -> Result<f64> {
    if v.is_finite() && v >= 0.0 {
        Ok(v)
    } else {
        Err(field_err(field, format!("must be a finite value >= 0, got {v}")))
    }
}

pub fn parse_mechanism(name: &str, theta: Option<Vec<f64>>, theta_seed: Option<u64>) -> Result<Mechanism> {
    let field = "institution.mechanism";
    match name {
        "winner_take_all" | "rank_top_k" if theta.is_some() || theta_seed.is_some() => {
            Err(field_err(field, "theta/theta_seed only apply to the neural mechanism"))
        }
        "winner_take_all" => Ok(Mechanism::WinnerTakeAll),
        "rank_top_k" => Ok(Mechanism::RankTopK),
        "neural" => match (theta, theta_seed) {
            (Some(_), Some(_)) => Err(field_err(field, "give either theta or theta_seed, not both")),
            (Some(t), None) => MechanismTheta::new(t).map(Mechanism::Neural).map_err(|e| field_err("institution.theta", e)),
            (None, seed) => Ok(Mechanism::Neural(MechanismTheta::seeded(seed.unwrap_or(0)))),
        },
        other => Err(field_err(field, format!("unknown mechanism {other:?} (winner_take_all, rank_top_k, neural)"))),
    }
}

fn build_policy(i: usize, a: &AgentSection) -> Result<Policy> {
    let field = |f: &str| format!("agents[{i}].{f}");
    let kind: PolicyKind = a.policy.parse().map_err(|e| field_err(&field("policy"), e))?;
    let unexpected = |name: &str, present: bool| -> Result<()> {
        if present {
            Err(field_err(&field(name), format!("not a parameter of {}", a.policy)))
        } else {
            Ok(())
        }
    };
    let need = |name: &str, v: Option<f64>| v.ok_or_else(|| field_err(&field(name), format!("required by {}", a.policy)));
    let policy = match kind {
        PolicyKind::BlackboardExplorer => {
            let p = need("exploit_prob", a.exploit_prob)?;
            if !(0.0..=1.0).contains(&p) {
                return Err(field_err(&field("exploit_prob"), "must lie in [0, 1]"));
            }
            Policy::BlackboardExplorer { exploit_prob: p }
        }
        PolicyKind::Fabricator => {
            let inflate = need("inflate", a.inflate)?;
            if !(inflate.is_finite() && inflate > 0.0) {
                return Err(field_err(&field("inflate"), "must be a positive real"));
            }
            Policy::Fabricator { inflate }
        }
        PolicyKind::Colluder => Policy::Colluder {
            partner: AgentId(a.partner.ok_or_else(|| field_err(&field("partner"), "required by Colluder"))?),
        },
        PolicyKind::BlindExplorer => Policy::BlindExplorer,
        PolicyKind::Reproducer => Policy::Reproducer,
        PolicyKind::FreeRider => Policy::FreeRider,
    };
    unexpected("exploit_prob", a.exploit_prob.is_some() && kind != PolicyKind::BlackboardExplorer)?;
    unexpected("inflate", a.inflate.is_some() && kind != PolicyKind::Fabricator)?;
    unexpected("partner", a.partner.is_some() && kind != PolicyKind::Colluder)?;
    Ok(policy)
}

/// Parses and validates a scenario document.
pub fn parse_scenario(text: &str) -> Result<Scenario> {
    let file: ScenarioFile = toml::from_str(text).map_err(|e| Error::InvalidScenario(e.to_string().trim_end().to_string()))?;
    let inst = &file.institution;
    let params = InstitutionParams {
        perf_budget: money("institution.perf_budget", inst.perf_budget)?,
        top_k: inst.top_k,
        repro_bounty: money("institution.repro_bounty", inst.repro_bounty)?,
        confirm_bonus: money("institution.confirm_bonus", inst.confirm_bonus)?,
        refute_penalty: money("institution.refute_penalty", inst.refute_penalty)?,
        sharing_bonus: money("institution.sharing_bonus", inst.sharing_bonus)?,
        epsilon: money("institution.epsilon", inst.epsilon)?,
        mechanism: parse_mechanism(&inst.mechanism, inst.theta.clone(), inst.theta_seed)?,
    };
    if params.top_k == 0 {
        return Err(field_err("institution.top_k", "must be >= 1"));
    }
    let mut agents = Vec::with_capacity(file.agents.len());
    for (i, a) in file.agents.iter().enumerate() {
        if a.evals_per_round == 0 {
            return Err(field_err(&format!("agents[{i}].evals_per_round"), "must be >= 1"));
        }
        agents.push(AgentSpec {
            id: AgentId(a.id),
            name: a.name.clone().unwrap_or_else(|| format!("agent-{}", a.id)),
            policy: build_policy(i, a)?,
            evals_per_round: a.evals_per_round,
            disclose: a.disclose,
            policy_seed: a.policy_seed.unwrap_or(a.id),
        });
    }
    let t = &file.task;
    let scenario = Scenario {
        task: TaskInputs { seed: t.seed, dims: t.dims.clone(), bumps: t.bumps, noise_std: t.noise_std },
        agents,
        params,
        rounds: file.rounds,
        master_seed: file.master_seed,
    };
    scenario.validate()?;
    Ok(scenario)
}

pub fn load_scenario(path: &std::path::Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_scenario(&text)
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| field_err(key, format!("cannot parse {value:?}")))
}

/// Applies one `--vary` assignment. Institution keys may be bare or carry an
/// `institution.` prefix; agent keys are `agents.<field>` (every agent that
/// has the field) or `agents.<id>.<field>`.
pub fn apply_override(scenario: &mut Scenario, key: &str, value: &str) -> Result<()> {
    let inst_key = key.strip_prefix("institution.").unwrap_or(key);
    let p = &mut scenario.params;
    match inst_key {
        "perf_budget" => p.perf_budget = parse_num(key, value)?,
        "top_k" => p.top_k = parse_num(key, value)?,
        "repro_bounty" => p.repro_bounty = parse_num(key, value)?,
        "confirm_bonus" => p.confirm_bonus = parse_num(key, value)?,
        "refute_penalty" => p.refute_penalty = parse_num(key, value)?,
        "sharing_bonus" => p.sharing_bonus = parse_num(key, value)?,
        "epsilon" => p.epsilon = parse_num(key, value)?,
        "mechanism" => p.mechanism = parse_mechanism(value, None, None)?,
        _ => {
            let rest = key.strip_prefix("agents.").ok_or_else(|| field_err(key, "unknown vary key"))?;
            let (only, field) = match rest.split_once('.') {
                Some((id, f)) => (Some(AgentId(parse_num(key, id)?)), f),
                None => (None, rest),
            };
            let mut hit = false;
            for a in scenario.agents.iter_mut().filter(|a| only.map_or(true, |id| a.id == id)) {
                hit |= set_agent_field(a, key, field, value)?;
            }
            if !hit {
                return Err(field_err(key, "unknown vary key"));
            }
        }
    }
    scenario.validate()
}

fn set_agent_field(a: &mut AgentSpec, key: &str, field: &str, value: &str) -> Result<bool> {
    match (field, &mut a.policy) {
        ("evals_per_round", _) => a.evals_per_round = parse_num(key, value)?,
        ("disclose", _) => a.disclose = parse_num(key, value)?,
        ("policy_seed", _) => a.policy_seed = parse_num(key, value)?,
        ("exploit_prob", Policy::BlackboardExplorer { exploit_prob }) => *exploit_prob = parse_num(key, value)?,
        ("inflate", Policy::Fabricator { inflate }) => *inflate = parse_num(key, value)?,
        ("exploit_prob" | "inflate", _) => return Ok(false),
        _ => return Err(field_err(key, "unknown vary key")),
    }
    Ok(true)
}
