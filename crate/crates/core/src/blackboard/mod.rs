//! The incentive-driven blackboard: an append-only store of submissions and
//! reproduction verdicts with the queries agents and the incentive layer read.
//!
//! Undisclosed submissions keep only their `config_hash`; their config is
//! dropped at append time and can never be returned by a query.

mod persist;

use std::collections::{BTreeSet, HashMap, HashSet};
use std::cmp::Ordering;
use std::fmt;
use std::sync::{Arc, RwLock, RwLockReadGuard};

use serde::{Deserialize, Serialize};

use crate::agents::AgentId;
use crate::canonical::Hash256;
use crate::error::{Error, Result};
use crate::task::Config;

pub use persist::{BoardLog, BoardSnapshot, LogRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SubmissionId(pub u64);

impl fmt::Display for SubmissionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SubmissionKind {
    New,
    Reproduction { target: SubmissionId },
}

impl SubmissionKind {
    pub fn is_new(&self) -> bool {
        matches!(self, SubmissionKind::New)
    }

    pub fn target(&self) -> Option<SubmissionId> {
        match self {
            SubmissionKind::New => None,
            SubmissionKind::Reproduction { target } => Some(*target),
        }
    }
}

/// A stored blackboard record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Submission {
    pub id: SubmissionId,
    pub agent: AgentId,
    pub round: u32,
    pub kind: SubmissionKind,
    pub config: Option<Config>,
    pub config_hash: Hash256,
    pub reported_score: f64,
    pub disclosed: bool,
    pub content_hash: Hash256,
}

#[derive(Serialize)]
struct HashedFields<'a> {
    id: SubmissionId,
    agent: AgentId,
    round: u32,
    kind: SubmissionKind,
    config: &'a Option<Config>,
    config_hash: Hash256,
    reported_score: f64,
    disclosed: bool,
}

impl Submission {
    fn compute_content_hash(&self) -> Hash256 {
        Hash256::of(&HashedFields {
            id: self.id,
            agent: self.agent,
            round: self.round,
            kind: self.kind,
            config: &self.config,
            config_hash: self.config_hash,
            reported_score: self.reported_score,
            disclosed: self.disclosed,
        })
        .expect("validated submissions hold finite reals")
    }
}

/// A submission before the board assigns its id. `config` is always carried;
/// the board keeps it only when the record is disclosed.
#[derive(Debug, Clone, PartialEq)]
pub struct Draft {
    pub agent: AgentId,
    pub round: u32,
    pub kind: SubmissionKind,
    pub config: Config,
    pub reported_score: f64,
    pub disclosed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Confirmed,
    Refuted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReproductionVerdict {
    pub reproduction: SubmissionId,
    pub original: SubmissionId,
    pub delta: f64,
    pub verdict: Verdict,
    pub tolerance: f64,
}

impl ReproductionVerdict {
    pub fn judge(delta: f64, tolerance: f64) -> Verdict {
        if delta <= tolerance {
            Verdict::Confirmed
        } else {
            Verdict::Refuted
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrontierEntry {
    pub id: SubmissionId,
    pub reported_score: f64,
    pub confirmed: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RoundSnapshot {
    pub submissions: Vec<Submission>,
    pub verdicts: Vec<ReproductionVerdict>,
}

/// Orders New submissions best-first: score descending, then id ascending.
#[derive(Debug, Clone, Copy)]
struct RankKey {
    score: f64,
    id: SubmissionId,
}

impl PartialEq for RankKey {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for RankKey {}
impl PartialOrd for RankKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for RankKey {
    fn cmp(&self, other: &Self) -> Ordering {
        other.score.total_cmp(&self.score).then(self.id.cmp(&other.id))
    }
}

#[derive(Default)]
pub struct Blackboard {
    records: Vec<Submission>,
    verdicts: Vec<ReproductionVerdict>,
    verdict_of: HashMap<SubmissionId, usize>,
    visited: HashSet<Hash256>,
    confirmed: HashSet<SubmissionId>,
    ranked: BTreeSet<RankKey>,
    log: Option<BoardLog>,
}

/// Clones the in-memory state; an attached log stays with the original.
impl Clone for Blackboard {
    fn clone(&self) -> Self {
        Blackboard {
            records: self.records.clone(),
            verdicts: self.verdicts.clone(),
            verdict_of: self.verdict_of.clone(),
            visited: self.visited.clone(),
            confirmed: self.confirmed.clone(),
            ranked: self.ranked.clone(),
            log: None,
        }
    }
}

impl fmt::Debug for Blackboard {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Blackboard")
            .field("records", &self.records.len())
            .field("verdicts", &self.verdicts.len())
            .field("logging", &self.log.is_some())
            .finish()
    }
}

impl Blackboard {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_log(log: BoardLog) -> Self {
        Blackboard { log: Some(log), ..Self::default() }
    }

    pub fn attach_log(&mut self, log: BoardLog) {
        self.log = Some(log);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last_id(&self) -> Option<SubmissionId> {
        self.records.last().map(|s| s.id)
    }

    pub fn get(&self, id: SubmissionId) -> Option<&Submission> {
        let idx = id.0.checked_sub(1)? as usize;
        self.records.get(idx)
    }

    pub fn submissions(&self) -> &[Submission] {
        &self.records
    }

    pub fn verdicts(&self) -> &[ReproductionVerdict] {
        &self.verdicts
    }

    pub fn verdict_for(&self, reproduction: SubmissionId) -> Option<&ReproductionVerdict> {
        self.verdict_of.get(&reproduction).map(|&i| &self.verdicts[i])
    }

    pub fn is_confirmed(&self, id: SubmissionId) -> bool {
        self.confirmed.contains(&id)
    }

    fn check_target(&self, agent: AgentId, kind: SubmissionKind, config_hash: Hash256) -> Result<()> {
        let Some(target) = kind.target() else { return Ok(()) };
        let original = self.get(target).ok_or(Error::UnknownTarget(target))?;
        if !original.kind.is_new() {
            return Err(Error::TargetNotNew(target));
        }
        if original.agent == agent {
            return Err(Error::ForbiddenSelfReproduction(target));
        }
        if original.config_hash != config_hash {
            return Err(Error::ConditionMismatch(target));
        }
        Ok(())
    }

    /// Validates and stores `draft`, returning its sequence id.
    pub fn append(&mut self, draft: Draft) -> Result<SubmissionId> {
        if !draft.reported_score.is_finite() {
            return Err(Error::InvalidArgument("reported_score must be finite".into()));
        }
        if !draft.kind.is_new() && !draft.disclosed {
            return Err(Error::InvalidArgument("reproductions must be disclosed".into()));
        }
        let config_hash = draft.config.hash();
        self.check_target(draft.agent, draft.kind, config_hash)?;
        let id = SubmissionId(self.records.len() as u64 + 1);
        let mut sub = Submission {
            id,
            agent: draft.agent,
            round: draft.round,
            kind: draft.kind,
            config: draft.disclosed.then_some(draft.config),
            config_hash,
            reported_score: draft.reported_score,
            disclosed: draft.disclosed,
            content_hash: Hash256([0; 32]),
        };
        sub.content_hash = sub.compute_content_hash();
        if let Some(log) = &mut self.log {
            log.write(&LogRecord::Submission(sub.clone()))?;
        }
        self.store(sub);
        Ok(id)
    }

    fn store(&mut self, sub: Submission) {
        self.visited.insert(sub.config_hash);
        if sub.kind.is_new() {
            self.ranked.insert(RankKey { score: sub.reported_score, id: sub.id });
        }
        self.records.push(sub);
    }

    /// Inserts an already-formed record (log replay, snapshot load, board
    /// mirroring), re-checking every invariant including the content hash.
    pub fn insert_record(&mut self, sub: Submission) -> Result<()> {
        let expected = SubmissionId(self.records.len() as u64 + 1);
        if sub.id != expected {
            return Err(Error::CorruptLog(format!("expected id {expected}, found {}", sub.id)));
        }
        if !sub.reported_score.is_finite() {
            return Err(Error::CorruptLog(format!("{}: non-finite score", sub.id)));
        }
        if sub.disclosed != sub.config.is_some() {
            return Err(Error::CorruptLog(format!("{}: config presence disagrees with disclosure", sub.id)));
        }
        if !sub.kind.is_new() && !sub.disclosed {
            return Err(Error::CorruptLog(format!("{}: undisclosed reproduction", sub.id)));
        }
        if let Some(c) = &sub.config {
            if c.hash() != sub.config_hash {
                return Err(Error::CorruptLog(format!("{}: config_hash mismatch", sub.id)));
            }
        }
        if sub.compute_content_hash() != sub.content_hash {
            return Err(Error::CorruptLog(format!("{}: content_hash mismatch", sub.id)));
        }
        self.check_target(sub.agent, sub.kind, sub.config_hash)?;
        if let Some(log) = &mut self.log {
            log.write(&LogRecord::Submission(sub.clone()))?;
        }
        self.store(sub);
        Ok(())
    }

    /// Judges a reproduction against its original and records the verdict.
    pub fn match_reproduction(&mut self, reproduction: SubmissionId, epsilon: f64) -> Result<ReproductionVerdict> {
        let repro = self.get(reproduction).ok_or(Error::UnknownTarget(reproduction))?;
        let Some(original) = repro.kind.target() else {
            return Err(Error::InvalidKind(reproduction));
        };
        if self.verdict_of.contains_key(&reproduction) {
            return Err(Error::AlreadyJudged(reproduction));
        }
        if !(epsilon >= 0.0) {
            return Err(Error::InvalidArgument("epsilon must be >= 0".into()));
        }
        let orig = self.get(original).ok_or(Error::UnknownTarget(original))?;
        let delta = (repro.reported_score - orig.reported_score).abs();
        let v = ReproductionVerdict {
            reproduction,
            original,
            delta,
            verdict: ReproductionVerdict::judge(delta, epsilon),
            tolerance: epsilon,
        };
        if let Some(log) = &mut self.log {
            log.write(&LogRecord::Verdict(v.clone()))?;
        }
        self.store_verdict(v.clone());
        Ok(v)
    }

    fn store_verdict(&mut self, v: ReproductionVerdict) {
        if v.verdict == Verdict::Confirmed {
            self.confirmed.insert(v.original);
        }
        self.verdict_of.insert(v.reproduction, self.verdicts.len());
        self.verdicts.push(v);
    }

    /// Inserts a stored verdict after re-deriving it from the board's scores.
    pub fn insert_verdict(&mut self, v: ReproductionVerdict) -> Result<()> {
        let repro = self
            .get(v.reproduction)
            .ok_or_else(|| Error::CorruptLog(format!("verdict for unknown {}", v.reproduction)))?;
        if repro.kind.target() != Some(v.original) {
            return Err(Error::CorruptLog(format!("verdict {} names wrong original", v.reproduction)));
        }
        if self.verdict_of.contains_key(&v.reproduction) {
            return Err(Error::AlreadyJudged(v.reproduction));
        }
        let orig = self.get(v.original).expect("target checked at append");
        let delta = (repro.reported_score - orig.reported_score).abs();
        if delta != v.delta || ReproductionVerdict::judge(delta, v.tolerance) != v.verdict {
            return Err(Error::CorruptLog(format!("verdict {} does not re-derive", v.reproduction)));
        }
        if let Some(log) = &mut self.log {
            log.write(&LogRecord::Verdict(v.clone()))?;
        }
        self.store_verdict(v);
        Ok(())
    }

    pub fn visited(&self, config_hash: &Hash256) -> bool {
        self.visited.contains(config_hash)
    }

    /// Top-`k` New submissions by reported score, ties to the earlier id.
    pub fn frontier(&self, k: usize) -> Vec<FrontierEntry> {
        self.ranked
            .iter()
            .take(k)
            .map(|key| FrontierEntry { id: key.id, reported_score: key.score, confirmed: self.is_confirmed(key.id) })
            .collect()
    }

    /// Iterates the full New-submission ranking, best first.
    pub fn ranking(&self) -> impl Iterator<Item = &Submission> + '_ {
        self.ranked.iter().map(move |k| &self.records[k.id.0 as usize - 1])
    }

    /// Records with the given round (verdicts by their reproduction's round).
    pub fn snapshot_round(&self, round: u32) -> RoundSnapshot {
        let submissions: Vec<Submission> = self.records.iter().filter(|s| s.round == round).cloned().collect();
        let verdicts = self
            .verdicts
            .iter()
            .filter(|v| self.get(v.reproduction).is_some_and(|s| s.round == round))
            .cloned()
            .collect();
        RoundSnapshot { submissions, verdicts }
    }

    /// Flushes and fsyncs the attached log, if any.
    pub fn sync(&mut self) -> Result<()> {
        match &mut self.log {
            Some(log) => log.sync(),
            None => Ok(()),
        }
    }
}

/// A board behind a lock: appends are serialized, readers see a consistent
/// prefix.
#[derive(Clone, Default)]
pub struct SharedBlackboard(Arc<RwLock<Blackboard>>);

impl SharedBlackboard {
    pub fn new(board: Blackboard) -> Self {
        SharedBlackboard(Arc::new(RwLock::new(board)))
    }

    pub fn append(&self, draft: Draft) -> Result<SubmissionId> {
        self.0.write().expect("board lock poisoned").append(draft)
    }

    pub fn read(&self) -> RwLockReadGuard<'_, Blackboard> {
        self.0.read().expect("board lock poisoned")
    }

    pub fn with_mut<R>(&self, f: impl FnOnce(&mut Blackboard) -> R) -> R {
        f(&mut self.0.write().expect("board lock poisoned"))
    }
}
