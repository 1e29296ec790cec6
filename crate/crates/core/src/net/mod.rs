//! Line-delimited JSON protocol, server and client.

pub mod client;
pub mod codec;
pub mod messages;
pub mod server;

pub use crate::sim::Mode as ServerMode;
pub use client::{run_agent, ClientError, ClientOptions, ClientOutcome};
pub use codec::{decode, encode, CodecError, FrameDecoder, Message, MessageType, MAX_FRAME};
pub use server::{read_token_file, Server, ServerConfig, DEFAULT_PORT};
