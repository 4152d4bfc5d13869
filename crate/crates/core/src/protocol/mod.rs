//! The relay protocol: SNT server and trainer state machines, the FNT peer
//! machine, trainer-order scheduling, wire framing, transports (TCP, TLS,
//! in-process loopback), and the deterministic simulator.
//!
//! Protocol logic is written sans-io: the cores consume messages and emit
//! messages, and the shells (std TCP threads or the single-threaded
//! loopback pump) move bytes. That keeps the networked and simulated paths
//! on the same code and makes runs reproducible.

pub mod config;
mod fnt;
mod local;
pub mod message;
mod net;
mod scheduler;
mod server;
mod simulate;
mod tls;
mod trainer;

pub use fnt::{OrderPolicy, PeerOutput, PeerProto};
pub use local::{EpochAccuracy, LocalConfig, LocalRunner, OptimizerKind};
pub use message::Message;
pub use net::{run_fnt_peer, run_server, run_trainer, FntPeerConfig, NetTrainerConfig, ServerRunReport};
pub use scheduler::{Scheduler, SchedulerKind};
pub use server::{ConnId, Output, ServerConfig, ServerCore, ServerEvent};
pub use simulate::{simulate_fnt, simulate_snt, SimConfig, SimResult};
pub use tls::TlsPaths;
pub use trainer::{RelayPayload, TrainerProto};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("empty frame")]
    EmptyFrame,
    #[error("frame of {0} bytes exceeds the limit")]
    FrameTooLarge(usize),
    #[error("unknown message type {0}")]
    UnknownMessageType(u8),
    #[error("malformed message of type {kind}: {reason}")]
    MalformedMessage { kind: u8, reason: String },
    #[error("unexpected message ({context}): {detail}")]
    UnexpectedMessage { context: &'static str, detail: String },
    #[error("message from unknown connection {0}")]
    UnknownConnection(usize),
    #[error("peer reported error {code}: {text}")]
    ServerError { code: u16, text: String },
    #[error("no trainers left in the run")]
    NoTrainersLeft,
    #[error("run stalled: {0}")]
    Stalled(String),
    #[error("peer {peer} unreachable at relay position {position}")]
    PeerUnreachable { peer: u32, position: u32 },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("connection closed mid-run")]
    ConnectionClosed,
    #[error("tls failure: {0}")]
    Tls(String),
    #[error(transparent)]
    Envelope(#[from] crate::envelope::EnvelopeError),
    #[error(transparent)]
    Nn(#[from] crate::nn::NnError),
    #[error(transparent)]
    Optim(#[from] crate::optim::OptimError),
    #[error(transparent)]
    Data(#[from] crate::data::DataError),
}
