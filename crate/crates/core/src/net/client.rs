//! Blocking client that plays one agent against a server, keeping a local
//! mirror of the board from round results.

use std::io::{self, Read, Write};
use std::net::{TcpStream, ToSocketAddrs};

use thiserror::Error;

use super::codec::{encode, FrameDecoder, Message, MessageType};
use super::messages::{code, Ack, ErrorReply, Hello, RoundResult, RoundStart, Submit, Welcome};
use crate::agents::{decide_actions, AgentId, BoardView, Grid, Policy};
use crate::blackboard::{Blackboard, SubmissionId};
use crate::incentive::RewardEntry;
use crate::sim::{agent_stream, eval_seed, realize};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("authentication failed: {0}")]
    AuthFailed(String),
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("protocol: {0}")]
    Protocol(String),
    #[error(transparent)]
    Core(#[from] crate::error::Error),
}

#[derive(Debug, Clone)]
pub struct ClientOptions {
    pub name: String,
    pub token: String,
    /// Plays this policy instead of the one the server assigns.
    pub policy: Option<Policy>,
}

#[derive(Debug)]
pub struct ClientOutcome {
    pub agent: AgentId,
    pub acked: Vec<SubmissionId>,
    pub rejected: usize,
    pub rewards: Vec<(u32, RewardEntry)>,
    pub board: Blackboard,
}

impl ClientOutcome {
    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().map(|(_, e)| e.amount).sum()
    }
}

struct Link {
    stream: TcpStream,
    decoder: FrameDecoder,
    buf: Vec<u8>,
}

impl Link {
    fn send(&mut self, msg: &Message) -> io::Result<()> {
        self.stream.write_all(&encode(msg))?;
        self.stream.flush()
    }

    fn recv(&mut self) -> Result<Option<Message>, ClientError> {
        loop {
            match self.decoder.next_frame() {
                Some(Ok(m)) => return Ok(Some(m)),
                Some(Err(e)) => return Err(ClientError::Protocol(e.to_string())),
                None => {}
            }
            let n = self.stream.read(&mut self.buf)?;
            if n == 0 {
                return Ok(None);
            }
            self.decoder.push(&self.buf[..n]);
        }
    }
}

pub fn run_agent(addr: impl ToSocketAddrs, opts: &ClientOptions) -> Result<ClientOutcome, ClientError> {
    let stream = TcpStream::connect(addr)?;
    stream.set_nodelay(true)?;
    let mut link = Link { stream, decoder: FrameDecoder::new(), buf: vec![0; 16 * 1024] };
    let hello = Hello { name: opts.name.clone(), token: opts.token.clone() };
    link.send(&Message::new(MessageType::Hello, None, &hello))?;

    let welcome = loop {
        let Some(msg) = link.recv()? else {
            return Err(ClientError::Protocol("server closed before Welcome".into()));
        };
        match msg.kind {
            MessageType::Welcome => break msg.payload_as::<Welcome>().map_err(|e| ClientError::Protocol(e.to_string()))?,
            MessageType::Error => {
                let err: ErrorReply = msg.payload_as().map_err(|e| ClientError::Protocol(e.to_string()))?;
                if err.code == code::AUTH_FAILED {
                    return Err(ClientError::AuthFailed(err.message));
                }
                return Err(ClientError::Protocol(format!("{}: {}", err.code, err.message)));
            }
            _ => {}
        }
    };

    let mut spec = welcome.spec.clone();
    if let Some(p) = &opts.policy {
        spec.policy = p.clone();
    }
    let grid = Grid::new(&welcome.dims);
    let ebase = welcome.eval_base.unwrap_or(0);
    let session = Some(welcome.session.clone());
    let mut out = ClientOutcome {
        agent: welcome.agent_id,
        acked: Vec::new(),
        rejected: 0,
        rewards: Vec::new(),
        board: Blackboard::new(),
    };
    if welcome.rounds == 0 {
        return Ok(out);
    }

    while let Some(msg) = link.recv()? {
        match msg.kind {
            MessageType::RoundStart => {
                let RoundStart { round } = msg.payload_as().map_err(|e| ClientError::Protocol(e.to_string()))?;
                let view = BoardView { board: &out.board, grid: &grid, params: &welcome.params, total_rounds: welcome.rounds };
                let mut rng = agent_stream(welcome.agent_base, round);
                let mut items = Vec::new();
                for (i, action) in decide_actions(&spec, &view, round, &mut rng).iter().enumerate() {
                    let i = i as u32;
                    let seed = eval_seed(ebase, round, out.agent, i);
                    items.extend(realize(action, i, &out.board, welcome.task.as_ref(), seed)?);
                }
                let submit = Submit { round, nonce: format!("{}-r{round}", out.agent), items };
                link.send(&Message::new(MessageType::Submit, session.clone(), &submit))?;
            }
            MessageType::Ack => {
                let ack: Ack = msg.payload_as().map_err(|e| ClientError::Protocol(e.to_string()))?;
                out.acked.extend(ack.ids);
                out.rejected += ack.rejected.len();
            }
            MessageType::RoundResult => {
                let result: RoundResult = msg.payload_as().map_err(|e| ClientError::Protocol(e.to_string()))?;
                for sub in result.submissions {
                    out.board.insert_record(sub)?;
                }
                for v in result.verdicts {
                    out.board.insert_verdict(v)?;
                }
                out.rewards.extend(result.rewards.into_iter().map(|e| (result.round, e)));
                if result.round + 1 >= welcome.rounds {
                    return Ok(out);
                }
            }
            MessageType::Error => {
                let err: ErrorReply = msg.payload_as().map_err(|e| ClientError::Protocol(e.to_string()))?;
                if err.code == code::AUTH_FAILED {
                    return Err(ClientError::AuthFailed(err.message));
                }
                eprintln!("server error {}: {}", err.code, err.message);
            }
            _ => {}
        }
    }
    Err(ClientError::Protocol("server closed before the last round".into()))
}
