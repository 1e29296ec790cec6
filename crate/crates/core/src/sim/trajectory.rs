use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::agents::AgentId;
use crate::blackboard::{Blackboard, ReproductionVerdict, Submission, SubmissionId};
use crate::canonical::{self, Hash256};
use crate::error::{Error, Result};
use crate::incentive::{allocate_round, InstitutionParams, RewardEntry, RoundContext};

/// One executed evaluation; the true score is never shown to agents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub submission: SubmissionId,
    pub round: u32,
    pub agent: AgentId,
    pub config_hash: Hash256,
    pub true_score: f64,
    pub cost: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub round: u32,
    pub entry: RewardEntry,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub agents: Vec<AgentId>,
    pub rounds: u32,
    pub submissions: Vec<Submission>,
    pub verdicts: Vec<ReproductionVerdict>,
    pub evaluations: Vec<EvaluationRecord>,
    pub rewards: Vec<LedgerEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum TrajectoryRecord {
    Header { agents: Vec<AgentId>, rounds: u32 },
    Submission(Submission),
    Verdict(ReproductionVerdict),
    Evaluation(EvaluationRecord),
    Reward(LedgerEntry),
}

impl Trajectory {
    /// Net reward per roster agent (agents with no entries total 0).
    pub fn reward_totals(&self) -> BTreeMap<AgentId, f64> {
        let mut totals: BTreeMap<AgentId, f64> = self.agents.iter().map(|&a| (a, 0.0)).collect();
        for e in &self.rewards {
            *totals.entry(e.entry.agent).or_insert(0.0) += e.entry.amount;
        }
        totals
    }

    pub fn board(&self) -> Result<Blackboard> {
        let mut board = Blackboard::new();
        for s in &self.submissions {
            board.insert_record(s.clone())?;
        }
        for v in &self.verdicts {
            board.insert_verdict(v.clone())?;
        }
        Ok(board)
    }

    /// Board records in append order: each round's submissions, then the
    /// verdicts judged at that round's close.
    fn board_records(&self) -> Vec<TrajectoryRecord> {
        let mut out = Vec::with_capacity(self.submissions.len() + self.verdicts.len());
        let round_of: BTreeMap<SubmissionId, u32> = self.submissions.iter().map(|s| (s.id, s.round)).collect();
        let mut verdicts = self.verdicts.iter().peekable();
        let mut subs = self.submissions.iter().peekable();
        for round in 0..=self.submissions.last().map_or(0, |s| s.round) {
            while let Some(s) = subs.next_if(|s| s.round == round) {
                out.push(TrajectoryRecord::Submission(s.clone()));
            }
            while let Some(v) = verdicts.next_if(|v| round_of.get(&v.reproduction) == Some(&round)) {
                out.push(TrajectoryRecord::Verdict(v.clone()));
            }
        }
        out.extend(subs.map(|s| TrajectoryRecord::Submission(s.clone())));
        out.extend(verdicts.map(|v| TrajectoryRecord::Verdict(v.clone())));
        out
    }

    /// Writes the newline-delimited log: header, board records, evaluations,
    /// then the reward-entries section.
    pub fn write_log<W: Write>(&self, mut w: W) -> Result<()> {
        let mut line = |rec: &TrajectoryRecord| -> Result<()> {
            let text = canonical::to_string(rec).map_err(|e| Error::Io(e.to_string()))?;
            writeln!(w, "{text}")?;
            Ok(())
        };
        line(&TrajectoryRecord::Header { agents: self.agents.clone(), rounds: self.rounds })?;
        for rec in self.board_records() {
            line(&rec)?;
        }
        for e in &self.evaluations {
            line(&TrajectoryRecord::Evaluation(e.clone()))?;
        }
        for r in &self.rewards {
            line(&TrajectoryRecord::Reward(r.clone()))?;
        }
        Ok(())
    }

    pub fn to_log_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_log(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("canonical text is UTF-8")
    }

    pub fn read_log<R: BufRead>(r: R) -> Result<Self> {
        let mut t = Trajectory::default();
        let mut header = false;
        for (n, line) in r.lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let rec: TrajectoryRecord =
                canonical::from_str(&line).map_err(|e| Error::CorruptLog(format!("line {}: {e}", n + 1)))?;
            match rec {
                TrajectoryRecord::Header { agents, rounds } => {
                    header = true;
                    t.agents = agents;
                    t.rounds = rounds;
                }
                TrajectoryRecord::Submission(s) => t.submissions.push(s),
                TrajectoryRecord::Verdict(v) => t.verdicts.push(v),
                TrajectoryRecord::Evaluation(e) => t.evaluations.push(e),
                TrajectoryRecord::Reward(r) => t.rewards.push(r),
            }
        }
        if !header {
            return Err(Error::CorruptLog("missing header".into()));
        }
        // Verdict order on the board is by judging time, which is
        // reproduction id order within a round.
        t.verdicts.sort_by_key(|v| v.reproduction);
        Ok(t)
    }
}

/// Recomputes every round's rewards from the stored board records.
pub fn replay_rewards(traj: &Trajectory, params: &InstitutionParams) -> Result<Vec<LedgerEntry>> {
    let board = traj.board()?;
    let mut out = Vec::new();
    for round in 0..traj.rounds {
        let ctx = RoundContext::as_of(&board, round, traj.rounds);
        let entries = allocate_round(&board.snapshot_round(round), &board, params, &ctx)?;
        out.extend(entries.into_iter().map(|entry| LedgerEntry { round, entry }));
    }
    Ok(out)
}
