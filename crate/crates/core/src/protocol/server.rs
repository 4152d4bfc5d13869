//! The relay server's protocol core, written sans-io: feed it connections
//! and messages, it returns the frames to send. The TCP shell and the
//! in-process simulator both drive this same state machine.
//!
//! The server is honest-but-curious by construction: this module has no
//! access to keys or weight decoding — weight payloads are opaque byte
//! strings it stores and forwards, and its event log records only their
//! hashes. A token serializes updates: exactly one trainer may train at a
//! time, so the sequence of stores is totally ordered.

use std::collections::BTreeMap;

use sha2::{Digest, Sha256};

use super::message::{error_code, Message};
use super::scheduler::Scheduler;
use super::ProtocolError;

pub type ConnId = usize;

#[derive(Clone, Debug)]
pub struct ServerConfig {
    pub trainer_count: u32,
    pub central_epochs: u32,
    pub scheduler: Scheduler,
    /// Trainer expected to upload the initial weights.
    pub seed_trainer: u32,
}

/// Audit-log entry; weight payloads appear only as truncated SHA-256 hex.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ServerEvent {
    TrainerJoined { trainer: u32 },
    SeedStored { digest: String },
    TokenGranted { round: u32, epoch: u32, trainer: u32 },
    WeightsServed { trainer: u32, digest: String },
    WeightsStored { trainer: u32, digest: String },
    TokenReleased { round: u32, trainer: u32 },
    TokenRevoked { round: u32, trainer: u32, reason: String },
    EpochCompleted { epoch: u32 },
    FinalServed { trainer: u32 },
}

impl std::fmt::Display for ServerEvent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ServerEvent::TrainerJoined { trainer } => write!(f, "joined trainer={trainer}"),
            ServerEvent::SeedStored { digest } => write!(f, "seed-stored digest={digest}"),
            ServerEvent::TokenGranted { round, epoch, trainer } => {
                write!(f, "granted round={round} epoch={epoch} trainer={trainer}")
            }
            ServerEvent::WeightsServed { trainer, digest } => {
                write!(f, "served trainer={trainer} digest={digest}")
            }
            ServerEvent::WeightsStored { trainer, digest } => {
                write!(f, "stored trainer={trainer} digest={digest}")
            }
            ServerEvent::TokenReleased { round, trainer } => {
                write!(f, "released round={round} trainer={trainer}")
            }
            ServerEvent::TokenRevoked { round, trainer, reason } => {
                write!(f, "revoked round={round} trainer={trainer} reason={reason}")
            }
            ServerEvent::EpochCompleted { epoch } => write!(f, "epoch-completed epoch={epoch}"),
            ServerEvent::FinalServed { trainer } => write!(f, "final-served trainer={trainer}"),
        }
    }
}

/// Frames to send (and connections to close) in response to one input.
#[derive(Clone, Debug)]
pub enum Output {
    Send(ConnId, Message),
    Close(ConnId),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum GrantStage {
    AwaitingGet,
    AwaitingPut,
    AwaitingRelease,
}

#[derive(Clone, Debug)]
struct Grant {
    trainer: u32,
    round: u32,
    stage: GrantStage,
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Phase {
    /// Collecting HELLOs and the seed upload.
    Joining,
    /// Token rounds in progress.
    Running,
    /// Fetch-only grants so every trainer ends with the final weights.
    Draining { queue: Vec<u32> },
    Done,
}

fn digest_hex(bytes: &[u8]) -> String {
    let full = Sha256::digest(bytes);
    full.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// The SNT server state machine.
pub struct ServerCore {
    cfg: ServerConfig,
    /// Current encrypted weights; opaque to the server.
    enc_weights: Option<Vec<u8>>,
    roster: BTreeMap<u32, ConnId>,
    conn_owner: BTreeMap<ConnId, u32>,
    phase: Phase,
    grant: Option<Grant>,
    round: u32,
    previous_grantee: Option<u32>,
    grant_history: Vec<(u32, u32)>,
    events: Vec<ServerEvent>,
}

impl ServerCore {
    pub fn new(cfg: ServerConfig) -> Self {
        ServerCore {
            cfg,
            enc_weights: None,
            roster: BTreeMap::new(),
            conn_owner: BTreeMap::new(),
            phase: Phase::Joining,
            grant: None,
            round: 0,
            previous_grantee: None,
            grant_history: Vec::new(),
            events: Vec::new(),
        }
    }

    pub fn is_done(&self) -> bool {
        self.phase == Phase::Done
    }

    pub fn events(&self) -> &[ServerEvent] {
        &self.events
    }

    /// `(epoch, trainer)` per grant, in grant order.
    pub fn grant_history(&self) -> &[(u32, u32)] {
        &self.grant_history
    }

    pub fn final_ciphertext(&self) -> Option<&[u8]> {
        self.enc_weights.as_deref()
    }

    /// The trainer currently holding the token, if any.
    pub fn token_holder(&self) -> Option<u32> {
        self.grant.as_ref().map(|g| g.trainer)
    }

    /// Connection registered for a trainer.
    pub fn conn_of(&self, trainer: u32) -> Option<ConnId> {
        self.roster.get(&trainer).copied()
    }

    fn alive(&self) -> Vec<u32> {
        self.roster.keys().copied().collect()
    }

    fn send_to(&self, trainer: u32, msg: Message) -> Output {
        Output::Send(self.roster[&trainer], msg)
    }

    pub fn on_connect(&mut self, _conn: ConnId) -> Vec<Output> {
        Vec::new()
    }

    pub fn on_message(&mut self, conn: ConnId, msg: Message) -> Result<Vec<Output>, ProtocolError> {
        match msg {
            Message::Hello { trainer_id } => self.on_hello(conn, trainer_id),
            Message::PutWeights(bytes) => self.on_put(conn, bytes),
            Message::GetWeights => self.on_get(conn),
            Message::TokenRelease => self.on_release(conn),
            other => Ok(vec![Output::Send(
                conn,
                Message::Error {
                    code: error_code::PROTOCOL,
                    text: format!("server cannot handle {}", other.type_name()),
                },
            )]),
        }
    }

    fn on_hello(&mut self, conn: ConnId, trainer_id: u32) -> Result<Vec<Output>, ProtocolError> {
        if self.phase != Phase::Joining {
            return Ok(vec![Output::Send(
                conn,
                Message::Error { code: error_code::REJECTED, text: "run already started".into() },
            )]);
        }
        if trainer_id >= self.cfg.trainer_count || self.roster.contains_key(&trainer_id) {
            self.events.push(ServerEvent::TrainerJoined { trainer: trainer_id });
            return Ok(vec![
                Output::Send(
                    conn,
                    Message::Error {
                        code: error_code::DUPLICATE_ID,
                        text: format!("trainer id {trainer_id} rejected"),
                    },
                ),
                Output::Close(conn),
            ]);
        }
        self.roster.insert(trainer_id, conn);
        self.conn_owner.insert(conn, trainer_id);
        self.events.push(ServerEvent::TrainerJoined { trainer: trainer_id });
        let mut outputs = vec![Output::Send(conn, Message::Ack)];
        outputs.extend(self.maybe_start()?);
        Ok(outputs)
    }

    fn on_put(&mut self, conn: ConnId, bytes: Vec<u8>) -> Result<Vec<Output>, ProtocolError> {
        let Some(&trainer) = self.conn_owner.get(&conn) else {
            return Err(ProtocolError::UnknownConnection(conn));
        };
        match (&self.phase, &mut self.grant) {
            (Phase::Joining, _) if trainer == self.cfg.seed_trainer && self.enc_weights.is_none() => {
                self.events.push(ServerEvent::SeedStored { digest: digest_hex(&bytes) });
                self.enc_weights = Some(bytes);
                let mut outputs = vec![Output::Send(conn, Message::Ack)];
                outputs.extend(self.maybe_start()?);
                Ok(outputs)
            }
            (Phase::Running, Some(grant))
                if grant.trainer == trainer && grant.stage == GrantStage::AwaitingPut =>
            {
                grant.stage = GrantStage::AwaitingRelease;
                self.events
                    .push(ServerEvent::WeightsStored { trainer, digest: digest_hex(&bytes) });
                self.enc_weights = Some(bytes);
                Ok(vec![Output::Send(conn, Message::Ack)])
            }
            _ => Ok(vec![Output::Send(
                conn,
                Message::Error {
                    code: error_code::NO_TOKEN,
                    text: format!("trainer {trainer} has no token to store weights"),
                },
            )]),
        }
    }

    fn on_get(&mut self, conn: ConnId) -> Result<Vec<Output>, ProtocolError> {
        let Some(&trainer) = self.conn_owner.get(&conn) else {
            return Err(ProtocolError::UnknownConnection(conn));
        };
        let Some(bytes) = self.enc_weights.clone() else {
            return Ok(vec![Output::Send(
                conn,
                Message::Error { code: error_code::PROTOCOL, text: "no weights stored yet".into() },
            )]);
        };
        // the store is read-passive: any trainer may fetch; the token only
        // guards stores
        if let Some(grant) = &mut self.grant {
            if grant.trainer == trainer && grant.stage == GrantStage::AwaitingGet {
                grant.stage = match self.phase {
                    Phase::Draining { .. } => GrantStage::AwaitingRelease,
                    _ => GrantStage::AwaitingPut,
                };
            }
        }
        let event = match self.phase {
            Phase::Draining { .. } => ServerEvent::FinalServed { trainer },
            _ => ServerEvent::WeightsServed { trainer, digest: digest_hex(&bytes) },
        };
        self.events.push(event);
        Ok(vec![Output::Send(conn, Message::Weights(bytes))])
    }

    fn on_release(&mut self, conn: ConnId) -> Result<Vec<Output>, ProtocolError> {
        let Some(&trainer) = self.conn_owner.get(&conn) else {
            return Err(ProtocolError::UnknownConnection(conn));
        };
        let Some(grant) = &self.grant else {
            return Ok(vec![Output::Send(
                conn,
                Message::Error { code: error_code::NO_TOKEN, text: "no token outstanding".into() },
            )]);
        };
        if grant.trainer != trainer || grant.stage != GrantStage::AwaitingRelease {
            return Ok(vec![Output::Send(
                conn,
                Message::Error {
                    code: error_code::PROTOCOL,
                    text: "release out of order".into(),
                },
            )]);
        }
        let round = grant.round;
        self.events.push(ServerEvent::TokenReleased { round, trainer });
        self.previous_grantee = Some(trainer);
        self.grant = None;
        match &mut self.phase {
            Phase::Running => {
                self.round += 1;
                if self.round % self.cfg.trainer_count == 0 {
                    let epoch = self.round / self.cfg.trainer_count - 1;
                    self.events.push(ServerEvent::EpochCompleted { epoch });
                }
                self.advance()
            }
            Phase::Draining { queue } => {
                if queue.is_empty() {
                    self.finish()
                } else {
                    self.advance()
                }
            }
            _ => Ok(Vec::new()),
        }
    }

    /// Starts granting once all trainers joined and the seed is stored.
    fn maybe_start(&mut self) -> Result<Vec<Output>, ProtocolError> {
        if self.phase == Phase::Joining
            && self.roster.len() as u32 == self.cfg.trainer_count
            && self.enc_weights.is_some()
        {
            self.phase = Phase::Running;
            return self.advance();
        }
        Ok(Vec::new())
    }

    /// Issues the next token grant (or starts draining / finishes the run).
    fn advance(&mut self) -> Result<Vec<Output>, ProtocolError> {
        debug_assert!(self.grant.is_none(), "at most one outstanding grant");
        match &mut self.phase {
            Phase::Running => {
                let total_rounds = self.cfg.trainer_count * self.cfg.central_epochs;
                if self.round >= total_rounds {
                    let queue = self.alive();
                    self.phase = Phase::Draining { queue };
                    return self.advance();
                }
                let epoch = self.round / self.cfg.trainer_count;
                let slot = self.round % self.cfg.trainer_count;
                let alive = self.alive();
                let trainer = self
                    .cfg
                    .scheduler
                    .next(&alive, self.previous_grantee, slot)
                    .ok_or(ProtocolError::NoTrainersLeft)?;
                self.grant = Some(Grant { trainer, round: self.round, stage: GrantStage::AwaitingGet });
                self.grant_history.push((epoch, trainer));
                self.events.push(ServerEvent::TokenGranted { round: self.round, epoch, trainer });
                Ok(vec![
                    self.send_to(trainer, Message::TokenGrant { round: self.round, central_epoch: epoch }),
                ])
            }
            Phase::Draining { queue } => {
                let Some(trainer) = queue.first().copied() else {
                    return self.finish();
                };
                queue.remove(0);
                // fetch-only grant, marked by epoch == central_epochs
                let epoch = self.cfg.central_epochs;
                self.grant = Some(Grant { trainer, round: self.round, stage: GrantStage::AwaitingGet });
                Ok(vec![
                    self.send_to(trainer, Message::TokenGrant { round: self.round, central_epoch: epoch }),
                ])
            }
            _ => Ok(Vec::new()),
        }
    }

    fn finish(&mut self) -> Result<Vec<Output>, ProtocolError> {
        self.phase = Phase::Done;
        Ok(self.roster.values().map(|&conn| Output::Close(conn)).collect())
    }

    /// Drops a trainer (disconnect or token timeout). A held token is
    /// revoked, the stored weights stay at the last completed PUT, and the
    /// round is retried with the remaining trainers.
    pub fn on_trainer_lost(&mut self, conn: ConnId, reason: &str) -> Result<Vec<Output>, ProtocolError> {
        let Some(trainer) = self.conn_owner.remove(&conn) else {
            return Ok(Vec::new());
        };
        self.roster.remove(&trainer);
        let held = self.grant.as_ref().is_some_and(|g| g.trainer == trainer);
        if held {
            let grant = self.grant.take().unwrap();
            self.events.push(ServerEvent::TokenRevoked {
                round: grant.round,
                trainer,
                reason: reason.to_string(),
            });
            // the grant was recorded in the history; drop the unfinished entry
            if matches!(self.phase, Phase::Running) {
                self.grant_history.pop();
            }
            self.previous_grantee = None;
            if self.roster.is_empty() {
                return Err(ProtocolError::NoTrainersLeft);
            }
            if let Phase::Draining { .. } = self.phase {
                return self.advance();
            }
            return self.advance();
        }
        if let Phase::Draining { queue } = &mut self.phase {
            queue.retain(|&t| t != trainer);
        }
        if self.roster.is_empty() && !self.is_done() {
            return Err(ProtocolError::NoTrainersLeft);
        }
        Ok(Vec::new())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::message::Message;

    fn drive(core: &mut ServerCore, conn: ConnId, msg: Message) -> Vec<Output> {
        core.on_message(conn, msg).unwrap()
    }

    /// Minimal scripted trainer: responds to grants by get/put/release.
    fn run_round_robin(l: u32, epochs: u32) -> ServerCore {
        let mut core = ServerCore::new(ServerConfig {
            trainer_count: l,
            central_epochs: epochs,
            scheduler: Scheduler::round_robin(l),
            seed_trainer: 0,
        });
        let mut pending: Vec<Output> = Vec::new();
        for t in 0..l {
            pending.extend(drive(&mut core, t as ConnId, Message::Hello { trainer_id: t }));
        }
        pending.extend(drive(&mut core, 0, Message::PutWeights(vec![0xAA, l as u8])));
        let mut cursor = 0;
        let mut guard = 0;
        while cursor < pending.len() {
            let out = pending[cursor].clone();
            cursor += 1;
            guard += 1;
            assert!(guard < 10_000, "run did not terminate");
            if let Output::Send(conn, msg) = out {
                match msg {
                    Message::TokenGrant { central_epoch, .. } => {
                        pending.extend(drive(&mut core, conn, Message::GetWeights));
                        if central_epoch < epochs {
                            pending.extend(drive(
                                &mut core,
                                conn,
                                Message::PutWeights(vec![conn as u8, central_epoch as u8]),
                            ));
                        }
                        pending.extend(drive(&mut core, conn, Message::TokenRelease));
                    }
                    Message::Ack | Message::Weights(_) => {}
                    other => panic!("unexpected server output {other:?}"),
                }
            }
        }
        assert!(core.is_done());
        core
    }

    #[test]
    fn round_robin_grant_sequence_is_periodic() {
        let core = run_round_robin(3, 2);
        let trainers: Vec<u32> = core.grant_history().iter().map(|&(_, t)| t).collect();
        assert_eq!(trainers, vec![0, 1, 2, 0, 1, 2]);
        let epochs: Vec<u32> = core.grant_history().iter().map(|&(e, _)| e).collect();
        assert_eq!(epochs, vec![0, 0, 0, 1, 1, 1]);
    }

    #[test]
    fn every_trainer_granted_exactly_once_per_epoch() {
        let core = run_round_robin(4, 3);
        for epoch in 0..3u32 {
            for trainer in 0..4u32 {
                let count = core
                    .grant_history()
                    .iter()
                    .filter(|&&(e, t)| e == epoch && t == trainer)
                    .count();
                assert_eq!(count, 1, "epoch {epoch} trainer {trainer}");
            }
        }
    }

    #[test]
    fn final_state_is_last_put() {
        let core = run_round_robin(2, 2);
        // last put: trainer conn 1, epoch 1
        assert_eq!(core.final_ciphertext().unwrap(), &[1, 1]);
    }

    #[test]
    fn put_without_token_rejected() {
        let mut core = ServerCore::new(ServerConfig {
            trainer_count: 2,
            central_epochs: 1,
            scheduler: Scheduler::round_robin(2),
            seed_trainer: 0,
        });
        drive(&mut core, 0, Message::Hello { trainer_id: 0 });
        drive(&mut core, 1, Message::Hello { trainer_id: 1 });
        drive(&mut core, 0, Message::PutWeights(vec![1]));
        // grant goes to trainer 0; trainer 1 tries to put
        let out = drive(&mut core, 1, Message::PutWeights(vec![9]));
        assert!(matches!(
            &out[0],
            Output::Send(1, Message::Error { code, .. }) if *code == error_code::NO_TOKEN
        ));
        assert_eq!(core.final_ciphertext().unwrap(), &[1]);
    }

    #[test]
    fn duplicate_hello_rejected() {
        let mut core = ServerCore::new(ServerConfig {
            trainer_count: 2,
            central_epochs: 1,
            scheduler: Scheduler::round_robin(2),
            seed_trainer: 0,
        });
        drive(&mut core, 0, Message::Hello { trainer_id: 0 });
        let out = drive(&mut core, 5, Message::Hello { trainer_id: 0 });
        assert!(matches!(
            &out[0],
            Output::Send(5, Message::Error { code, .. }) if *code == error_code::DUPLICATE_ID
        ));
    }

    #[test]
    fn lost_token_is_revoked_and_round_retried() {
        let mut core = ServerCore::new(ServerConfig {
            trainer_count: 2,
            central_epochs: 1,
            scheduler: Scheduler::round_robin(2),
            seed_trainer: 0,
        });
        drive(&mut core, 0, Message::Hello { trainer_id: 0 });
        drive(&mut core, 1, Message::Hello { trainer_id: 1 });
        let outs = drive(&mut core, 0, Message::PutWeights(vec![7]));
        // trainer 0 holds the token now; kill it
        assert!(outs.iter().any(|o| matches!(o, Output::Send(0, Message::TokenGrant { .. }))));
        let outs = core.on_trainer_lost(0, "test kill").unwrap();
        // round retried with trainer 1
        assert!(outs.iter().any(|o| matches!(o, Output::Send(1, Message::TokenGrant { .. }))));
        assert!(core
            .events()
            .iter()
            .any(|e| matches!(e, ServerEvent::TokenRevoked { trainer: 0, .. })));
        // stored weights still the seed
        assert_eq!(core.final_ciphertext().unwrap(), &[7]);
    }

    #[test]
    fn uniform_random_never_grants_previous_twice_in_a_row() {
        let mut core = ServerCore::new(ServerConfig {
            trainer_count: 2,
            central_epochs: 3,
            scheduler: Scheduler::uniform_random(9),
            seed_trainer: 0,
        });
        let mut pending: Vec<Output> = Vec::new();
        for t in 0..2 {
            pending.extend(drive(&mut core, t as ConnId, Message::Hello { trainer_id: t }));
        }
        pending.extend(drive(&mut core, 0, Message::PutWeights(vec![1])));
        let mut cursor = 0;
        while cursor < pending.len() {
            let out = pending[cursor].clone();
            cursor += 1;
            if let Output::Send(conn, Message::TokenGrant { central_epoch, .. }) = out {
                pending.extend(drive(&mut core, conn, Message::GetWeights));
                if central_epoch < 3 {
                    pending.extend(drive(&mut core, conn, Message::PutWeights(vec![conn as u8])));
                }
                pending.extend(drive(&mut core, conn, Message::TokenRelease));
            }
        }
        let trainers: Vec<u32> = core.grant_history().iter().map(|&(_, t)| t).collect();
        assert_eq!(trainers.len(), 6);
        for pair in trainers.windows(2) {
            assert_ne!(pair[0], pair[1], "history {trainers:?}");
        }
    }
}
