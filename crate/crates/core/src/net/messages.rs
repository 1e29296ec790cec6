//! Typed payloads for each message type. Field names follow the blackboard
//! and incentive types.

use serde::{Deserialize, Serialize};

use crate::agents::{AgentId, AgentSpec};
use crate::blackboard::{FrontierEntry, ReproductionVerdict, Submission, SubmissionId};
use crate::canonical::Hash256;
use crate::incentive::{InstitutionParams, RewardEntry};
use crate::sim::{Mode, SubmitItem};
use crate::task::TaskSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hello {
    pub name: String,
    pub token: String,
}

/// Everything a client needs to play. `task` and `eval_base` are sent only
/// in open mode, where clients evaluate on their own compute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Welcome {
    pub agent_id: AgentId,
    pub session: String,
    pub spec: AgentSpec,
    pub dims: Vec<u32>,
    pub rounds: u32,
    pub params: InstitutionParams,
    pub mode: Mode,
    pub agent_base: u64,
    pub eval_base: Option<u64>,
    pub task: Option<TaskSpec>,
}

/// An agent's whole move for one round. Resending the same `nonce` is
/// acknowledged without recording again.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Submit {
    pub round: u32,
    pub nonce: String,
    pub items: Vec<SubmitItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejected {
    pub index: u32,
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ack {
    pub nonce: String,
    pub round: u32,
    pub ids: Vec<SubmissionId>,
    pub rejected: Vec<Rejected>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "query", rename_all = "snake_case")]
pub enum Query {
    Visited { config_hash: Hash256 },
    Frontier { k: usize },
    SnapshotRound { round: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "query", rename_all = "snake_case")]
pub enum QueryResult {
    Visited { config_hash: Hash256, visited: bool },
    Frontier { entries: Vec<FrontierEntry> },
    SnapshotRound { round: u32, submissions: Vec<Submission>, verdicts: Vec<ReproductionVerdict> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundStart {
    pub round: u32,
}

/// Round close broadcast: the round's public records (for mirroring the
/// board) and the recipient's own reward entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundResult {
    pub round: u32,
    pub submissions: Vec<Submission>,
    pub verdicts: Vec<ReproductionVerdict>,
    pub rewards: Vec<RewardEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReply {
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset: Option<usize>,
}

pub mod code {
    pub const AUTH_FAILED: &str = "auth-failed";
    pub const NO_SESSION: &str = "no-session";
    pub const RATE_LIMITED: &str = "rate-limited";
    pub const BAD_PAYLOAD: &str = "bad-payload";
    pub const UNEXPECTED: &str = "unexpected-type";
    pub const STALE_ROUND: &str = "stale-round";
    pub const ALREADY_SUBMITTED: &str = "already-submitted";
    pub const INVALID_SUBMISSION: &str = "invalid-submission";
}
