//! Newline-delimited canonical-text append log and snapshot files.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Blackboard, ReproductionVerdict, Submission};
use crate::canonical;
use crate::error::{Error, Result};

/// One line of the board log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum LogRecord {
    Submission(Submission),
    Verdict(ReproductionVerdict),
}

pub struct BoardLog {
    out: BufWriter<File>,
}

impl BoardLog {
    pub fn create(path: &Path) -> Result<Self> {
        Ok(BoardLog { out: BufWriter::new(File::create(path)?) })
    }

    pub fn append_to(path: &Path) -> Result<Self> {
        let f = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(BoardLog { out: BufWriter::new(f) })
    }

    pub(super) fn write(&mut self, rec: &LogRecord) -> Result<()> {
        let line = canonical::to_string(rec).map_err(|e| Error::Io(e.to_string()))?;
        self.out.write_all(line.as_bytes())?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    pub(super) fn sync(&mut self) -> Result<()> {
        self.out.flush()?;
        self.out.get_ref().sync_data()?;
        Ok(())
    }
}

/// Full board state for fast restart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoardSnapshot {
    pub last_sequence: u64,
    pub submissions: Vec<Submission>,
    pub verdicts: Vec<ReproductionVerdict>,
}

impl Blackboard {
    /// Rebuilds a board from log lines, re-validating every record.
    pub fn replay<R: BufRead>(reader: R) -> Result<Self> {
        let mut board = Blackboard::new();
        board.replay_into(reader, 0, 0)?;
        Ok(board)
    }

    /// Applies log lines past the first `skip_subs` submissions and
    /// `skip_verdicts` verdicts.
    fn replay_into<R: BufRead>(&mut self, reader: R, skip_subs: usize, skip_verdicts: usize) -> Result<()> {
        let (mut subs, mut verdicts) = (0usize, 0usize);
        for (n, line) in reader.lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let rec: LogRecord = canonical::from_str(&line)
                .map_err(|e| Error::CorruptLog(format!("line {}: {e}", n + 1)))?;
            match rec {
                LogRecord::Submission(s) => {
                    subs += 1;
                    if subs > skip_subs {
                        self.insert_record(s)?;
                    }
                }
                LogRecord::Verdict(v) => {
                    verdicts += 1;
                    if verdicts > skip_verdicts {
                        self.insert_verdict(v)?;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn snapshot(&self) -> BoardSnapshot {
        BoardSnapshot {
            last_sequence: self.last_id().map_or(0, |id| id.0),
            submissions: self.records.clone(),
            verdicts: self.verdicts.clone(),
        }
    }

    pub fn save_snapshot(&self, path: &Path) -> Result<()> {
        let text = canonical::to_string(&self.snapshot()).map_err(|e| Error::Io(e.to_string()))?;
        let mut f = File::create(path)?;
        f.write_all(text.as_bytes())?;
        f.write_all(b"\n")?;
        f.sync_all()?;
        Ok(())
    }

    pub fn from_snapshot(snap: BoardSnapshot) -> Result<Self> {
        let mut board = Blackboard::new();
        for s in snap.submissions {
            board.insert_record(s)?;
        }
        for v in snap.verdicts {
            board.insert_verdict(v)?;
        }
        if board.last_id().map_or(0, |id| id.0) != snap.last_sequence {
            return Err(Error::CorruptLog("snapshot last_sequence disagrees with records".into()));
        }
        Ok(board)
    }

    /// Loads a snapshot, then applies whatever the log holds beyond it.
    pub fn restore(snapshot_path: &Path, log_path: Option<&Path>) -> Result<Self> {
        let text = std::fs::read_to_string(snapshot_path)?;
        let snap: BoardSnapshot =
            canonical::from_str(text.trim_end()).map_err(|e| Error::CorruptLog(format!("snapshot: {e}")))?;
        let mut board = Blackboard::from_snapshot(snap)?;
        if let Some(p) = log_path {
            let (subs, verdicts) = (board.records.len(), board.verdicts.len());
            board.replay_into(std::io::BufReader::new(File::open(p)?), subs, verdicts)?;
        }
        Ok(board)
    }
}
