//! Blocking TCP server: one reader thread per connection, a single round
//! clock on the caller's thread, and every board write under one lock.
//!
//! Submissions are buffered while a round is open and recorded at its close
//! in (agent id, item index) order, the same order as the in-process
//! harness, so the ledger does not depend on arrival timing. Acks are sent
//! at round close.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread;
use std::time::{Duration, Instant};

use super::codec::{encode, FrameDecoder, Message, MessageType};
use super::messages::{code, Ack, ErrorReply, Hello, Query, QueryResult, Rejected, RoundResult, RoundStart, Submit, Welcome};
use crate::agents::AgentId;
use crate::blackboard::Blackboard;
use crate::error::{Error, Result};
use crate::sim::{
    agent_base, apply_item, close_round, compute_metrics, eval_base, ItemKind, LedgerEntry, Mode, RunOutput,
    Simulation, SubmitItem, Trajectory,
};

pub const DEFAULT_PORT: u16 = 7717;

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub mode: Mode,
    /// Token `i` admits the agent with the `i`-th smallest id.
    pub tokens: Vec<String>,
    pub round_timeout: Duration,
    pub join_timeout: Duration,
    /// Messages per connection per round before `rate-limited` replies.
    pub rate_limit: u32,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            mode: Mode::Refereed,
            tokens: Vec::new(),
            round_timeout: Duration::from_secs(2),
            join_timeout: Duration::from_secs(30),
            rate_limit: 100,
        }
    }
}

/// One token per line; blank lines ignored.
pub fn read_token_file(path: &std::path::Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
}

struct Conn {
    id: u64,
    out: Mutex<TcpStream>,
}

impl Conn {
    fn send(&self, msg: &Message) {
        let mut s = self.out.lock().expect("writer lock");
        // A vanished client only loses its own replies.
        let _ = s.write_all(&encode(msg)).and_then(|_| s.flush());
    }

    fn error(&self, code: &str, message: impl Into<String>, offset: Option<usize>) {
        let reply = ErrorReply { code: code.into(), message: message.into(), offset };
        self.send(&Message::new(MessageType::Error, None, &reply));
    }
}

struct Pending {
    nonce: String,
    items: Vec<SubmitItem>,
    conn: Arc<Conn>,
}

#[derive(Default)]
struct State {
    board: Blackboard,
    open_round: Option<u32>,
    pending: BTreeMap<AgentId, Pending>,
    duplicates: Vec<(AgentId, String, Arc<Conn>)>,
    acked: HashMap<(AgentId, String), Ack>,
    sessions: HashMap<String, AgentId>,
    live: HashMap<AgentId, Arc<Conn>>,
    joined: HashSet<AgentId>,
    session_counter: u64,
    evaluations: Vec<crate::sim::EvaluationRecord>,
    rewards: Vec<LedgerEntry>,
}

struct Shared {
    state: Mutex<State>,
    cv: Condvar,
    sim: Simulation,
    cfg: ServerConfig,
    token_agents: HashMap<String, usize>,
    ebase: u64,
    epoch: AtomicU64,
    done: AtomicBool,
}

impl Shared {
    fn lock(&self) -> MutexGuard<'_, State> {
        self.state.lock().expect("server state lock")
    }
}

pub struct Server {
    listener: TcpListener,
    shared: Arc<Shared>,
}

impl Server {
    pub fn bind(addr: impl ToSocketAddrs, sim: Simulation, cfg: ServerConfig) -> Result<Self> {
        let listener = TcpListener::bind(addr)?;
        let token_agents = cfg.tokens.iter().enumerate().take(sim.scenario().agents.len()).map(|(i, t)| (t.clone(), i)).collect();
        let ebase = eval_base(sim.scenario().master_seed);
        let shared = Shared {
            state: Mutex::new(State::default()),
            cv: Condvar::new(),
            sim,
            cfg,
            token_agents,
            ebase,
            epoch: AtomicU64::new(0),
            done: AtomicBool::new(false),
        };
        Ok(Server { listener, shared: Arc::new(shared) })
    }

    pub fn local_addr(&self) -> Result<SocketAddr> {
        Ok(self.listener.local_addr()?)
    }

    /// Plays every round, then returns the trajectory and metrics.
    pub fn run(self) -> Result<RunOutput> {
        let addr = self.local_addr()?;
        let listener = self.listener.try_clone()?;
        let acceptor = {
            let shared = Arc::clone(&self.shared);
            thread::spawn(move || accept_loop(listener, shared))
        };
        let result = play(&self.shared);
        self.shared.done.store(true, Ordering::SeqCst);
        // Wake the acceptor so it observes `done`.
        let _ = TcpStream::connect(addr);
        let _ = acceptor.join();
        let mut st = self.shared.lock();
        for conn in st.live.values() {
            let _ = conn.out.lock().expect("writer lock").shutdown(Shutdown::Both);
        }
        st.live.clear();
        result
    }
}

fn accept_loop(listener: TcpListener, shared: Arc<Shared>) {
    let mut next_id = 0u64;
    for stream in listener.incoming() {
        if shared.done.load(Ordering::SeqCst) {
            break;
        }
        let Ok(stream) = stream else { continue };
        next_id += 1;
        let shared = Arc::clone(&shared);
        let id = next_id;
        thread::spawn(move || serve_connection(shared, stream, id));
    }
}

fn play(shared: &Shared) -> Result<RunOutput> {
    let scenario = shared.sim.scenario();
    let expected = shared.token_agents.len();
    let t_total = scenario.rounds;
    {
        let deadline = Instant::now() + shared.cfg.join_timeout;
        let mut st = shared.lock();
        while st.joined.len() < expected {
            let now = Instant::now();
            if now >= deadline {
                break;
            }
            st = shared.cv.wait_timeout(st, deadline - now).expect("server state lock").0;
        }
    }
    for round in 0..t_total {
        let mut st = shared.lock();
        st.open_round = Some(round);
        shared.epoch.fetch_add(1, Ordering::SeqCst);
        let start = Message::new(MessageType::RoundStart, None, &RoundStart { round });
        for conn in st.live.values() {
            conn.send(&start);
        }
        let deadline = Instant::now() + shared.cfg.round_timeout;
        loop {
            let ready = !st.live.is_empty() && st.live.keys().all(|a| st.pending.contains_key(a));
            let now = Instant::now();
            if ready || now >= deadline {
                break;
            }
            st = shared.cv.wait_timeout(st, deadline - now).expect("server state lock").0;
        }
        close(shared, &mut st, round, t_total)?;
    }
    let st = shared.lock();
    let trajectory = Trajectory {
        agents: scenario.agents.iter().map(|a| a.id).collect(),
        rounds: t_total,
        submissions: st.board.submissions().to_vec(),
        verdicts: st.board.verdicts().to_vec(),
        evaluations: st.evaluations.clone(),
        rewards: st.rewards.clone(),
    };
    let metrics = compute_metrics(&trajectory, &scenario.params);
    Ok(RunOutput { trajectory, metrics })
}

fn close(shared: &Shared, st: &mut State, round: u32, t_total: u32) -> Result<()> {
    let params = &shared.sim.scenario().params;
    st.open_round = None;
    let pending = std::mem::take(&mut st.pending);
    let mut acks = Vec::with_capacity(pending.len());
    let mut reproductions = Vec::new();
    for (agent, p) in pending {
        let mut ack = Ack { nonce: p.nonce.clone(), round, ids: Vec::new(), rejected: Vec::new() };
        for item in &p.items {
            match apply_item(&mut st.board, shared.sim.task(), shared.cfg.mode, shared.ebase, agent, round, item) {
                Ok((id, eval)) => {
                    ack.ids.push(id);
                    if item.kind == ItemKind::Reproduce {
                        reproductions.push(id);
                    }
                    st.evaluations.extend(eval);
                }
                Err(e) => ack.rejected.push(Rejected {
                    index: item.index,
                    code: code::INVALID_SUBMISSION.into(),
                    message: e.to_string(),
                }),
            }
        }
        acks.push((agent, ack, p.conn));
    }
    let entries = close_round(&mut st.board, params, round, t_total, &reproductions)?;
    st.rewards.extend(entries.iter().cloned());
    let duplicates = std::mem::take(&mut st.duplicates);
    for (agent, ack, conn) in acks {
        let msg = Message::new(MessageType::Ack, None, &ack);
        conn.send(&msg);
        for (_, _, dup) in duplicates.iter().filter(|(a, n, _)| *a == agent && *n == ack.nonce) {
            dup.send(&msg);
        }
        st.acked.insert((agent, ack.nonce.clone()), ack);
    }
    let snap = st.board.snapshot_round(round);
    for (agent, conn) in &st.live {
        let result = RoundResult {
            round,
            submissions: snap.submissions.clone(),
            verdicts: snap.verdicts.clone(),
            rewards: entries.iter().filter(|e| e.entry.agent == *agent).map(|e| e.entry.clone()).collect(),
        };
        conn.send(&Message::new(MessageType::RoundResult, None, &result));
    }
    Ok(())
}

fn serve_connection(shared: Arc<Shared>, stream: TcpStream, id: u64) {
    let Ok(out) = stream.try_clone() else { return };
    let conn = Arc::new(Conn { id, out: Mutex::new(out) });
    let mut reader = stream;
    let mut decoder = FrameDecoder::new();
    let mut buf = [0u8; 8192];
    let mut session: Option<(String, AgentId)> = None;
    let (mut epoch, mut count) = (u64::MAX, 0u32);
    'outer: loop {
        let n = match reader.read(&mut buf) {
            Ok(0) | Err(_) => break,
            Ok(n) => n,
        };
        decoder.push(&buf[..n]);
        while let Some(frame) = decoder.next_frame() {
            let now = shared.epoch.load(Ordering::SeqCst);
            if now != epoch {
                (epoch, count) = (now, 0);
            }
            count += 1;
            if count > shared.cfg.rate_limit {
                conn.error(code::RATE_LIMITED, format!("more than {} messages this round", shared.cfg.rate_limit), None);
                continue;
            }
            let msg = match frame {
                Ok(m) => m,
                Err(e) => {
                    let offset = match &e {
                        super::codec::CodecError::Protocol { offset, .. } => Some(*offset),
                        _ => None,
                    };
                    conn.error(e.code(), e.to_string(), offset);
                    continue;
                }
            };
            if !handle_message(&shared, &conn, &mut session, msg) {
                let _ = reader.shutdown(Shutdown::Both);
                break 'outer;
            }
        }
    }
    if let Some((_, agent)) = session {
        let mut st = shared.lock();
        if st.live.get(&agent).is_some_and(|c| c.id == conn.id) {
            st.live.remove(&agent);
        }
        shared.cv.notify_all();
    }
}

/// Returns false when the connection must close.
fn handle_message(shared: &Shared, conn: &Arc<Conn>, session: &mut Option<(String, AgentId)>, msg: Message) -> bool {
    match msg.kind {
        MessageType::Hello => {
            let Ok(hello) = msg.payload_as::<Hello>() else {
                conn.error(code::BAD_PAYLOAD, "Hello needs name and token", None);
                return true;
            };
            let Some(&idx) = shared.token_agents.get(&hello.token) else {
                conn.error(code::AUTH_FAILED, "unknown token", None);
                return false;
            };
            let scenario = shared.sim.scenario();
            let spec = scenario.agents[idx].clone();
            let mut st = shared.lock();
            st.session_counter += 1;
            let sid = format!("s{}-{}", st.session_counter, spec.id);
            st.sessions.insert(sid.clone(), spec.id);
            st.live.insert(spec.id, Arc::clone(conn));
            st.joined.insert(spec.id);
            let open = shared.cfg.mode == Mode::Open;
            let welcome = Welcome {
                agent_id: spec.id,
                session: sid.clone(),
                dims: scenario.task.dims.clone(),
                rounds: scenario.rounds,
                params: scenario.params.clone(),
                mode: shared.cfg.mode,
                agent_base: agent_base(scenario.master_seed, &spec),
                eval_base: open.then_some(shared.ebase),
                task: open.then(|| shared.sim.task().clone()),
                spec,
            };
            conn.send(&Message::new(MessageType::Welcome, Some(sid.clone()), &welcome));
            if let Some(round) = st.open_round {
                if !st.pending.contains_key(&welcome.agent_id) {
                    conn.send(&Message::new(MessageType::RoundStart, None, &RoundStart { round }));
                }
            }
            *session = Some((sid, welcome.agent_id));
            shared.cv.notify_all();
            true
        }
        MessageType::Submit | MessageType::Query => {
            let agent = match (&*session, &msg.session) {
                (Some((sid, agent)), Some(s)) if s == sid => *agent,
                _ => {
                    conn.error(code::NO_SESSION, "send Hello first and echo the session token", None);
                    return true;
                }
            };
            if msg.kind == MessageType::Submit {
                handle_submit(shared, conn, agent, &msg);
            } else {
                handle_query(shared, conn, &msg);
            }
            true
        }
        other => {
            conn.error(code::UNEXPECTED, format!("servers do not accept {other}"), None);
            true
        }
    }
}

fn handle_submit(shared: &Shared, conn: &Arc<Conn>, agent: AgentId, msg: &Message) {
    let submit = match msg.payload_as::<Submit>() {
        Ok(s) => s,
        Err(e) => return conn.error(code::BAD_PAYLOAD, e.to_string(), None),
    };
    let mut st = shared.lock();
    if let Some(ack) = st.acked.get(&(agent, submit.nonce.clone())) {
        return conn.send(&Message::new(MessageType::Ack, None, ack));
    }
    if st.open_round != Some(submit.round) {
        return conn.error(code::STALE_ROUND, format!("round {} is not open", submit.round), None);
    }
    if let Some(p) = st.pending.get(&agent) {
        if p.nonce == submit.nonce {
            st.duplicates.push((agent, submit.nonce, Arc::clone(conn)));
        } else {
            conn.error(code::ALREADY_SUBMITTED, "one Submit per agent per round", None);
        }
        return;
    }
    st.pending.insert(agent, Pending { nonce: submit.nonce, items: submit.items, conn: Arc::clone(conn) });
    shared.cv.notify_all();
}

fn handle_query(shared: &Shared, conn: &Arc<Conn>, msg: &Message) {
    let query = match msg.payload_as::<Query>() {
        Ok(q) => q,
        Err(e) => return conn.error(code::BAD_PAYLOAD, e.to_string(), None),
    };
    let st = shared.lock();
    let result = match query {
        Query::Visited { config_hash } => QueryResult::Visited { visited: st.board.visited(&config_hash), config_hash },
        Query::Frontier { k } => QueryResult::Frontier { entries: st.board.frontier(k) },
        Query::SnapshotRound { round } => {
            let snap = st.board.snapshot_round(round);
            QueryResult::SnapshotRound { round, submissions: snap.submissions, verdicts: snap.verdicts }
        }
    };
    conn.send(&Message::new(MessageType::QueryResult, None, &result));
}
