use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use macc_core::agents::{AgentId, Policy, PolicyKind};
use macc_core::blackboard::Blackboard;
use macc_core::canonical;
use macc_core::mechanism_opt::{train_mechanism, training_seeds, EsConfig, WelfareWeights};
use macc_core::net::{self, ClientError, ClientOptions, Server, ServerConfig};
use macc_core::scenario::{apply_override, load_scenario};
use macc_core::sim::{Metrics, Mode, RunOutput, Scenario, Simulation, CSV_HEADER};
use macc_core::Error;

#[derive(Parser)]
#[command(name = "macc", version, about = "Multi-agent exploration testbed with an incentive-driven blackboard")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation and write its metrics row.
    Sim {
        scenario: PathBuf,
        /// Overrides the scenario's master_seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Metrics CSV path (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Trajectory log path.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Run seeds x values and write runs.csv and summary.csv.
    Sweep {
        scenario: PathBuf,
        /// Inclusive seed range `a..b`, or a single seed.
        #[arg(long)]
        seeds: String,
        /// `key=v1,v2,...`; see the README for keys.
        #[arg(long)]
        vary: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Host a networked session and write the same outputs as `sim`.
    Serve {
        scenario: PathBuf,
        #[arg(long, default_value_t = net::DEFAULT_PORT)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        bind: String,
        #[arg(long, value_enum, default_value_t = ModeArg::Refereed)]
        mode: ModeArg,
        /// One token per line; line i admits the agent with the i-th smallest id.
        #[arg(long)]
        tokens: PathBuf,
        #[arg(long, default_value_t = 2000)]
        round_timeout_ms: u64,
        #[arg(long, default_value_t = 30000)]
        join_timeout_ms: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Join a server and play one agent.
    Agent {
        /// host:port
        #[arg(long)]
        connect: String,
        /// Policy to play instead of the assigned one: `Name` or `Name:param`.
        #[arg(long)]
        policy: Option<String>,
        /// Falls back to the MACC_TOKEN environment variable.
        #[arg(long, env = "MACC_TOKEN", hide_env_values = true)]
        token: String,
        #[arg(long, default_value = "agent")]
        name: String,
    },
    /// Train the neural mechanism; writes theta.json and curve.csv.
    TrainMech {
        scenario: PathBuf,
        /// w_best,w_redund,w_repro,w_cost
        #[arg(long, default_value = "1,1,1,0.1")]
        weights: String,
        /// population,sigma,step,iterations
        #[arg(long, default_value = "64,0.5,2,30")]
        es: String,
        /// Number of simulation seeds in the objective.
        #[arg(long, default_value_t = 8)]
        sim_seeds: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Refereed,
    Open,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::Refereed => Mode::Refereed,
            ModeArg::Open => Mode::Open,
        }
    }
}

enum Failure {
    Validation(String),
    Runtime(String),
    Auth(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidArgument(_) | Error::InvalidParams(_) | Error::InvalidConfig(_) | Error::InvalidScenario(_) => {
                Failure::Validation(e.to_string())
            }
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Sim { scenario, seed, out, log } => cmd_sim(&scenario, seed, out.as_deref(), log.as_deref()),
        Command::Sweep { scenario, seeds, vary, out } => cmd_sweep(&scenario, &seeds, vary.as_deref(), &out),
        Command::Serve { scenario, port, bind, mode, tokens, round_timeout_ms, join_timeout_ms, out, log } => {
            let cfg = ServerConfig {
                mode: mode.into(),
                tokens: Vec::new(),
                round_timeout: Duration::from_millis(round_timeout_ms),
                join_timeout: Duration::from_millis(join_timeout_ms),
                ..ServerConfig::default()
            };
            cmd_serve(&scenario, &format!("{bind}:{port}"), &tokens, cfg, out.as_deref(), log.as_deref())
        }
        Command::Agent { connect, policy, token, name } => cmd_agent(&connect, policy.as_deref(), token, name),
        Command::TrainMech { scenario, weights, es, sim_seeds, out } => cmd_train(&scenario, &weights, &es, sim_seeds, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(3)
        }
        Err(Failure::Auth(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(4)
        }
    }
}

fn scenario_name(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "scenario".into())
}

fn write_file(path: &Path, contents: &str) -> CmdResult {
    fs::write(path, contents).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

/// Metrics CSV to a file, or stdout when no path is given.
fn emit_metrics(out: Option<&Path>, row: &str) -> CmdResult {
    let text = format!("{CSV_HEADER}\n{row}\n");
    match out {
        Some(p) => write_file(p, &text),
        None => Ok(io::stdout().write_all(text.as_bytes())?),
    }
}

fn emit_log(log: Option<&Path>, run: &RunOutput) -> CmdResult {
    let Some(path) = log else { return Ok(()) };
    let file = fs::File::create(path).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;
    let mut w = BufWriter::new(file);
    run.trajectory.write_log(&mut w)?;
    w.flush()?;
    Ok(())
}

fn cmd_sim(path: &Path, seed: Option<u64>, out: Option<&Path>, log: Option<&Path>) -> CmdResult {
    let mut scenario = load_scenario(path)?;
    if let Some(s) = seed {
        scenario.master_seed = s;
    }
    let run = Simulation::new(scenario.clone())?.run()?;
    emit_log(log, &run)?;
    emit_metrics(out, &run.metrics.csv_row(&scenario_name(path), scenario.master_seed, "", ""))
}

fn parse_seeds(text: &str) -> Result<Vec<u64>, Failure> {
    let bad = || Failure::Validation(format!("--seeds: expected a..b or a single seed, got {text:?}"));
    let (a, b) = match text.split_once("..") {
        Some((a, b)) => (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?),
        None => {
            let s: u64 = text.trim().parse().map_err(|_| bad())?;
            (s, s)
        }
    };
    if a > b {
        return Err(bad());
    }
    Ok((a..=b).collect())
}

fn parse_vary(text: Option<&str>) -> Result<(String, Vec<String>), Failure> {
    let Some(text) = text else { return Ok((String::new(), vec![String::new()])) };
    let (key, values) = text
        .split_once('=')
        .ok_or_else(|| Failure::Validation(format!("--vary: expected key=v1,v2,..., got {text:?}")))?;
    let values: Vec<String> = values.split(',').map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect();
    if key.trim().is_empty() || values.is_empty() {
        return Err(Failure::Validation(format!("--vary: expected key=v1,v2,..., got {text:?}")));
    }
    Ok((key.trim().to_string(), values))
}

fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

const METRIC_NAMES: [&str; 6] =
    ["best_true_score", "redundancy_rate", "reproduction_coverage", "total_compute", "reward_gini", "total_outlay"];

fn metric_values(m: &Metrics) -> [f64; 6] {
    [m.best_true_score(), m.redundancy_rate, m.reproduction_coverage, m.total_compute as f64, m.reward_gini, m.total_outlay]
}

fn cmd_sweep(path: &Path, seeds: &str, vary: Option<&str>, out: &Path) -> CmdResult {
    let base = load_scenario(path)?;
    let seeds = parse_seeds(seeds)?;
    let (key, values) = parse_vary(vary)?;
    let mut sims = Vec::with_capacity(values.len());
    for v in &values {
        let mut s = base.clone();
        if !key.is_empty() {
            apply_override(&mut s, &key, v)?;
        }
        sims.push(Simulation::new(s)?);
    }
    let jobs: Vec<(usize, u64)> = (0..values.len()).flat_map(|i| seeds.iter().map(move |&s| (i, s))).collect();
    let results: Vec<Result<Metrics, Error>> = jobs
        .par_iter()
        .map(|&(i, seed)| {
            let sim = &sims[i];
            let s: &Scenario = sim.scenario();
            sim.run_with(&s.params, seed, Mode::Open, Blackboard::new()).map(|r| r.metrics)
        })
        .collect();

    fs::create_dir_all(out).map_err(|e| Failure::Runtime(format!("{}: {e}", out.display())))?;
    let name = scenario_name(path);
    let mut runs = format!("{CSV_HEADER}\n");
    let mut per_value: Vec<Vec<[f64; 6]>> = vec![Vec::new(); values.len()];
    for (&(i, seed), r) in jobs.iter().zip(results) {
        let m = r?;
        runs.push_str(&m.csv_row(&name, seed, &key, &values[i]));
        runs.push('\n');
        per_value[i].push(metric_values(&m));
    }
    let mut summary = String::from("scenario,vary_key,vary_value,runs");
    for m in METRIC_NAMES {
        summary.push_str(&format!(",{m}_mean,{m}_stderr"));
    }
    summary.push('\n');
    for (v, rows) in values.iter().zip(&per_value) {
        summary.push_str(&format!("{name},{key},{v},{}", rows.len()));
        for j in 0..METRIC_NAMES.len() {
            let col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
            let (mean, se) = mean_stderr(&col);
            summary.push_str(&format!(",{mean},{se}"));
        }
        summary.push('\n');
    }
    write_file(&out.join("runs.csv"), &runs)?;
    write_file(&out.join("summary.csv"), &summary)
}

fn cmd_serve(path: &Path, addr: &str, tokens: &Path, mut cfg: ServerConfig, out: Option<&Path>, log: Option<&Path>) -> CmdResult {
    let scenario = load_scenario(path)?;
    cfg.tokens = net::read_token_file(tokens).map_err(|e| Failure::Runtime(e.to_string()))?;
    if cfg.tokens.is_empty() {
        return Err(Failure::Validation(format!("{}: no tokens", tokens.display())));
    }
    let seed = scenario.master_seed;
    let server = Server::bind(addr, Simulation::new(scenario)?, cfg).map_err(|e| Failure::Runtime(format!("{addr}: {e}")))?;
    eprintln!("listening on {}", server.local_addr()?);
    let run = server.run()?;
    emit_log(log, &run)?;
    emit_metrics(out, &run.metrics.csv_row(&scenario_name(path), seed, "", ""))
}

fn parse_policy(text: &str) -> Result<Policy, Failure> {
    let (name, param) = match text.split_once(':') {
        Some((n, p)) => (n, Some(p)),
        None => (text, None),
    };
    let kind: PolicyKind = name.parse().map_err(Failure::Validation)?;
    let num = |default: f64| -> Result<f64, Failure> {
        param.map_or(Ok(default), |p| p.parse().map_err(|_| Failure::Validation(format!("--policy: bad parameter {p:?}"))))
    };
    Ok(match kind {
        PolicyKind::BlindExplorer => Policy::BlindExplorer,
        PolicyKind::BlackboardExplorer => Policy::BlackboardExplorer { exploit_prob: num(0.0)? },
        PolicyKind::Reproducer => Policy::Reproducer,
        PolicyKind::FreeRider => Policy::FreeRider,
        PolicyKind::Fabricator => Policy::Fabricator { inflate: num(0.1)? },
        PolicyKind::Colluder => {
            let p = param.ok_or_else(|| Failure::Validation("--policy Colluder:<partner id> needs a partner".into()))?;
            Policy::Colluder { partner: AgentId(p.parse().map_err(|_| Failure::Validation(format!("--policy: bad partner {p:?}")))?) }
        }
    })
}

fn cmd_agent(connect: &str, policy: Option<&str>, token: String, name: String) -> CmdResult {
    let policy = policy.map(parse_policy).transpose()?;
    let outcome = net::run_agent(connect, &ClientOptions { name, token, policy }).map_err(|e| match e {
        ClientError::AuthFailed(m) => Failure::Auth(m),
        other => Failure::Runtime(other.to_string()),
    })?;
    println!(
        "agent {} submissions {} rejected {} reward {}",
        outcome.agent,
        outcome.acked.len(),
        outcome.rejected,
        outcome.total_reward()
    );
    Ok(())
}

fn parse_floats<const N: usize>(flag: &str, text: &str) -> Result<[f64; N], Failure> {
    let bad = || Failure::Validation(format!("--{flag}: expected {N} comma-separated numbers, got {text:?}"));
    let v: Vec<f64> = text.split(',').map(|x| x.trim().parse::<f64>()).collect::<Result<_, _>>().map_err(|_| bad())?;
    v.try_into().map_err(|_| bad())
}

fn cmd_train(path: &Path, weights: &str, es: &str, sim_seeds: usize, out: &Path) -> CmdResult {
    let scenario = load_scenario(path)?;
    let [w_best, w_redund, w_repro, w_cost] = parse_floats::<4>("weights", weights)?;
    let weights = WelfareWeights { w_best, w_redund, w_repro, w_cost };
    if ![w_best, w_redund, w_repro, w_cost].iter().all(|w| w.is_finite()) {
        return Err(Failure::Validation("--weights: values must be finite".into()));
    }
    let [pop, sigma, step, iters] = parse_floats::<4>("es", es)?;
    let whole = |x: f64, what: &str| -> Result<usize, Failure> {
        if x >= 0.0 && x.fract() == 0.0 {
            Ok(x as usize)
        } else {
            Err(Failure::Validation(format!("--es: {what} must be a nonnegative integer")))
        }
    };
    let es = EsConfig {
        population: whole(pop, "population")?,
        sigma_es: sigma,
        step_size: step,
        iterations: whole(iters, "iterations")?,
        base_seed: scenario.master_seed,
    };
    if sim_seeds == 0 {
        return Err(Failure::Validation("--sim-seeds must be >= 1".into()));
    }
    let seeds = training_seeds(scenario.master_seed, sim_seeds);
    let outcome = train_mechanism(&scenario, weights, &es, seeds)?;
    fs::create_dir_all(out).map_err(|e| Failure::Runtime(format!("{}: {e}", out.display())))?;
    let theta = canonical::to_string(&outcome.theta).map_err(|e| Failure::Runtime(e.to_string()))?;
    write_file(&out.join("theta.json"), &format!("{theta}\n"))?;
    write_file(&out.join("curve.csv"), &outcome.curve_csv())?;
    println!("initial_welfare {} final_welfare {}", outcome.initial_welfare(), outcome.final_welfare());
    Ok(())
}
