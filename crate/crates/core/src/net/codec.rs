//! Newline-delimited canonical-text frames.
//!
//! A frame is one UTF-8 line holding `{"payload":{..},"session":..,"type":..}`
//! with keys sorted, reals in shortest round-trip form and no insignificant
//! whitespace. `session` is omitted when absent.

use std::fmt;
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};
use thiserror::Error;

pub const MAX_FRAME: usize = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MessageType {
    Hello,
    Welcome,
    Submit,
    Ack,
    Query,
    QueryResult,
    RoundStart,
    RoundResult,
    Error,
}

impl MessageType {
    pub const ALL: [MessageType; 9] = [
        MessageType::Hello,
        MessageType::Welcome,
        MessageType::Submit,
        MessageType::Ack,
        MessageType::Query,
        MessageType::QueryResult,
        MessageType::RoundStart,
        MessageType::RoundResult,
        MessageType::Error,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MessageType::Hello => "Hello",
            MessageType::Welcome => "Welcome",
            MessageType::Submit => "Submit",
            MessageType::Ack => "Ack",
            MessageType::Query => "Query",
            MessageType::QueryResult => "QueryResult",
            MessageType::RoundStart => "RoundStart",
            MessageType::RoundResult => "RoundResult",
            MessageType::Error => "Error",
        }
    }
}

impl fmt::Display for MessageType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MessageType {
    type Err = ();
    fn from_str(s: &str) -> Result<Self, ()> {
        MessageType::ALL.into_iter().find(|t| t.as_str() == s).ok_or(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub kind: MessageType,
    pub session: Option<String>,
    pub payload: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("incomplete frame")]
    Incomplete,
    #[error("protocol error at byte {offset}: {message}")]
    Protocol { offset: usize, message: String },
    #[error("frame of {len} bytes exceeds {MAX_FRAME}")]
    FrameTooLarge { len: usize },
    #[error("unknown message type {0:?}")]
    UnknownType(String),
}

impl CodecError {
    pub fn code(&self) -> &'static str {
        match self {
            CodecError::Incomplete => "incomplete-frame",
            CodecError::Protocol { .. } => "protocol-error",
            CodecError::FrameTooLarge { .. } => "frame-too-large",
            CodecError::UnknownType(_) => "unknown-type",
        }
    }
}

impl Message {
    pub fn new<P: Serialize>(kind: MessageType, session: Option<String>, payload: &P) -> Self {
        let payload = match serde_json::to_value(payload).expect("payload types serialize") {
            Value::Object(m) => m,
            Value::Null => Map::new(),
            other => panic!("payload must be an object, got {other}"),
        };
        Message { kind, session, payload }
    }

    pub fn payload_as<T: DeserializeOwned>(&self) -> serde_json::Result<T> {
        serde_json::from_value(Value::Object(self.payload.clone()))
    }
}

pub fn encode(msg: &Message) -> Vec<u8> {
    let mut env = Map::new();
    env.insert("payload".into(), Value::Object(msg.payload.clone()));
    if let Some(s) = &msg.session {
        env.insert("session".into(), Value::String(s.clone()));
    }
    env.insert("type".into(), Value::String(msg.kind.as_str().into()));
    // serde_json's map is ordered by key, and its number formatting is the
    // shortest round-trip form.
    let mut out = serde_json::to_vec(&Value::Object(env)).expect("JSON values always serialize");
    out.push(b'\n');
    out
}

fn protocol(offset: usize, message: impl Into<String>) -> CodecError {
    CodecError::Protocol { offset, message: message.into() }
}

/// Parses one frame body (without its newline).
fn parse_frame(line: &[u8]) -> Result<Message, CodecError> {
    let value: Value = serde_json::from_slice(line).map_err(|e| {
        let offset = if e.line() <= 1 { e.column().saturating_sub(1) } else { line.len() };
        protocol(offset.min(line.len()), e.to_string())
    })?;
    let Value::Object(mut env) = value else {
        return Err(protocol(0, "frame is not an object"));
    };
    let kind = match env.remove("type") {
        Some(Value::String(t)) => t.parse::<MessageType>().map_err(|_| CodecError::UnknownType(t))?,
        Some(_) => return Err(protocol(0, "type must be a string")),
        None => return Err(protocol(0, "missing type")),
    };
    let payload = match env.remove("payload") {
        Some(Value::Object(p)) => p,
        Some(_) => return Err(protocol(0, "payload must be an object")),
        None => return Err(protocol(0, "missing payload")),
    };
    let session = match env.remove("session") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(s),
        Some(_) => return Err(protocol(0, "session must be a string")),
    };
    if let Some(extra) = env.keys().next() {
        return Err(protocol(0, format!("unexpected envelope field {extra:?}")));
    }
    Ok(Message { kind, session, payload })
}

/// Decodes the first frame in `bytes`, returning it and the bytes consumed.
pub fn decode(bytes: &[u8]) -> Result<(Message, usize), CodecError> {
    match bytes.iter().position(|&b| b == b'\n') {
        Some(n) if n > MAX_FRAME => Err(CodecError::FrameTooLarge { len: n }),
        Some(n) => parse_frame(&bytes[..n]).map(|m| (m, n + 1)),
        None if bytes.len() > MAX_FRAME => Err(CodecError::FrameTooLarge { len: bytes.len() }),
        None => Err(CodecError::Incomplete),
    }
}

/// Incremental decoder over a byte stream. A bad frame yields an error and
/// is skipped; decoding continues with the next line.
#[derive(Debug, Default)]
pub struct FrameDecoder {
    buf: Vec<u8>,
    /// Inside an oversized frame: drop bytes up to the next newline.
    skipping: bool,
}

impl FrameDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    /// Next decoded frame, or `None` when more bytes are needed.
    pub fn next_frame(&mut self) -> Option<Result<Message, CodecError>> {
        loop {
            let newline = self.buf.iter().position(|&b| b == b'\n');
            if self.skipping {
                match newline {
                    Some(n) => {
                        self.buf.drain(..=n);
                        self.skipping = false;
                        continue;
                    }
                    None => {
                        self.buf.clear();
                        return None;
                    }
                }
            }
            return match decode(&self.buf) {
                Ok((m, used)) => {
                    self.buf.drain(..used);
                    Some(Ok(m))
                }
                Err(CodecError::Incomplete) => None,
                Err(e @ CodecError::FrameTooLarge { .. }) => {
                    match newline {
                        Some(n) => {
                            self.buf.drain(..=n);
                        }
                        None => {
                            self.buf.clear();
                            self.skipping = true;
                        }
                    }
                    Some(Err(e))
                }
                Err(e) => {
                    let n = newline.expect("complete frame had a newline");
                    self.buf.drain(..=n);
                    Some(Err(e))
                }
            };
        }
    }

    /// Call at end of stream: leftover bytes are an incomplete frame.
    pub fn finish(&self) -> Result<(), CodecError> {
        if self.buf.is_empty() || self.skipping {
            Ok(())
        } else {
            Err(CodecError::Incomplete)
        }
    }
}
