//! Deterministic in-process runs: the same server/trainer/peer state
//! machines as the networked paths, driven over a synchronous loopback that
//! delivers frames in schedule order on a single thread. Repeated runs of
//! one config produce byte-identical results.

use std::collections::VecDeque;

use super::fnt::{OrderPolicy, PeerOutput, PeerProto};
use super::local::{EpochAccuracy, LocalConfig, LocalRunner, OptimizerKind};
use super::message::Message;
use super::scheduler::{Scheduler, SchedulerKind};
use super::server::{ConnId, Output, ServerConfig, ServerCore, ServerEvent};
use super::trainer::{RelayPayload, TrainerProto};
use super::ProtocolError;
use crate::analysis::RunLedger;
use crate::data::Dataset;
use crate::envelope::SymmetricKey;
use crate::nn::{init_params, NetworkSpec, ParamSet};
use crate::optim::LrSchedule;
use crate::seed::{derive, Domain};

/// Everything a deterministic run needs.
#[derive(Clone)]
pub struct SimConfig {
    pub spec: NetworkSpec,
    /// One shard per trainer; `shards.len()` is the trainer count L.
    pub shards: Vec<Dataset>,
    /// Shared held-out set for per-epoch accuracy logging (optional).
    pub eval_set: Option<Dataset>,
    pub central_epochs: u32,
    pub local_epochs: u32,
    pub batch_size: usize,
    pub schedule: LrSchedule,
    pub optimizer: OptimizerKind,
    pub scheduler: SchedulerKind,
    /// Base seed; init/shuffle/dropout/schedule/IV streams derive from it.
    pub seed: u64,
    /// Train-mode dropout on/off (off for equivalence checks).
    pub dropout: bool,
    pub shuffle: bool,
    pub record_ledger: bool,
    pub max_batches_per_round: Option<usize>,
    pub reset_moments: bool,
    /// Shared key for the SNT envelope; derived from `seed` when absent.
    pub key: Option<SymmetricKey>,
}

impl SimConfig {
    pub fn trainer_count(&self) -> u32 {
        self.shards.len() as u32
    }

    fn local_config(&self, trainer_ix: u32) -> LocalConfig {
        LocalConfig {
            trainer_ix,
            batch_size: self.batch_size,
            local_epochs: self.local_epochs,
            schedule: self.schedule.clone(),
            optimizer: self.optimizer,
            shuffle_seed_base: derive(self.seed, Domain::Shuffle, &[]),
            shuffle: self.shuffle,
            dropout: self.dropout,
            dropout_seed_base: derive(self.seed, Domain::Dropout, &[]),
            max_batches_per_round: self.max_batches_per_round,
            reset_moments: self.reset_moments,
            record_ledger: self.record_ledger,
        }
    }

    fn runner(&self, trainer_ix: u32) -> LocalRunner {
        LocalRunner::new(
            self.spec.clone(),
            self.shards[trainer_ix as usize].clone(),
            self.eval_set.clone(),
            self.local_config(trainer_ix),
        )
    }

    pub fn init_seed(&self) -> u64 {
        derive(self.seed, Domain::Init, &[])
    }

    /// The relay's initial weights (what the seeding trainer uploads).
    pub fn initial_params(&self) -> Result<ParamSet, ProtocolError> {
        Ok(init_params(&self.spec, self.init_seed())?)
    }

    fn shared_key(&self) -> SymmetricKey {
        self.key.clone().unwrap_or_else(|| {
            let a = derive(self.seed, Domain::Schedule, &[0xa11c_e5ee]);
            let b = derive(self.seed, Domain::Schedule, &[0xb0b5_0b0e]);
            let mut bytes = [0u8; 16];
            bytes[..8].copy_from_slice(&a.to_le_bytes());
            bytes[8..].copy_from_slice(&b.to_le_bytes());
            SymmetricKey::from_bytes(bytes)
        })
    }
}

/// Outputs of a deterministic run.
pub struct SimResult {
    pub final_weights: ParamSet,
    /// Server audit log (empty for FNT runs).
    pub events: Vec<ServerEvent>,
    /// Realized trainer visit order per central epoch; feed these to the
    /// centralized oracle to replay the run.
    pub epoch_orders: Vec<Vec<usize>>,
    /// Per trainer: accuracy log rows (one per trained central epoch).
    pub accuracy_logs: Vec<Vec<EpochAccuracy>>,
    /// Per trainer: recorded per-grant ledgers (when enabled).
    pub ledgers: Vec<Vec<RunLedger>>,
}

/// Runs the server-aided protocol in process.
pub fn simulate_snt(cfg: &SimConfig) -> Result<SimResult, ProtocolError> {
    let l = cfg.trainer_count();
    if l == 0 {
        return Err(ProtocolError::Config("no shards configured".into()));
    }
    let key = cfg.shared_key();
    let mut server = ServerCore::new(ServerConfig {
        trainer_count: l,
        central_epochs: cfg.central_epochs,
        scheduler: Scheduler::from_kind(
            cfg.scheduler,
            l,
            derive(cfg.seed, Domain::Schedule, &[]),
        ),
        seed_trainer: 0,
    });
    let mut trainers: Vec<TrainerProto> = (0..l)
        .map(|t| {
            let payload = RelayPayload::envelope_seeded(
                key.clone(),
                derive(cfg.seed, Domain::Schedule, &[0x1000 + t as u64]),
            );
            let seed_params =
                if t == 0 { Some(cfg.initial_params()) } else { None }.transpose()?;
            Ok(TrainerProto::new(t, payload, cfg.runner(t), cfg.central_epochs, seed_params))
        })
        .collect::<Result<_, ProtocolError>>()?;

    // conn id == trainer index in the loopback
    let mut queue: VecDeque<(ConnId, Message)> = VecDeque::new();
    for (t, trainer) in trainers.iter_mut().enumerate() {
        for msg in trainer.start()? {
            queue.push_back((t, msg));
        }
    }
    let mut steps = 0u64;
    while !server.is_done() {
        let Some((conn, msg)) = queue.pop_front() else {
            return Err(ProtocolError::Stalled("no messages in flight".into()));
        };
        steps += 1;
        if steps > 10_000_000 {
            return Err(ProtocolError::Stalled("message budget exhausted".into()));
        }
        for output in server.on_message(conn, msg)? {
            match output {
                Output::Send(dst, msg) => {
                    for reply in trainers[dst].on_message(msg)? {
                        queue.push_back((dst, reply));
                    }
                }
                Output::Close(_) => {}
            }
        }
    }

    let final_weights = collect_finals(trainers.iter().map(|t| t.final_weights()))?;
    let mut epoch_orders = vec![Vec::new(); cfg.central_epochs as usize];
    for &(epoch, trainer) in server.grant_history() {
        epoch_orders[epoch as usize].push(trainer as usize);
    }
    let (accuracy_logs, ledgers) = trainers
        .into_iter()
        .map(|t| {
            let runner = t.into_runner();
            (runner.accuracy_log().to_vec(), runner.into_ledgers())
        })
        .unzip();
    Ok(SimResult {
        final_weights,
        events: server.events().to_vec(),
        epoch_orders,
        accuracy_logs,
        ledgers,
    })
}

/// Runs the fully-connected relay in process.
pub fn simulate_fnt(cfg: &SimConfig) -> Result<SimResult, ProtocolError> {
    let l = cfg.trainer_count();
    if l == 0 {
        return Err(ProtocolError::Config("no shards configured".into()));
    }
    let schedule_seed = derive(cfg.seed, Domain::Schedule, &[]);
    let mut peers: Vec<PeerProto> = (0..l)
        .map(|p| {
            PeerProto::new(
                p,
                l,
                cfg.central_epochs,
                cfg.runner(p),
                OrderPolicy::from_kind(cfg.scheduler, schedule_seed, p),
            )
        })
        .collect();

    let mut grant_log: Vec<(u32, u32)> = Vec::new(); // (epoch, trainer)
    if cfg.central_epochs > 0 {
        grant_log.push((0, 0));
    }
    let mut queue: VecDeque<(u32, u32, Message)> = VecDeque::new(); // (from, to, msg)
    let start = peers[0].kickoff(cfg.initial_params()?)?;
    enqueue_peer_outputs(&mut queue, 0, start);

    let mut steps = 0u64;
    while let Some((from, to, msg)) = queue.pop_front() {
        steps += 1;
        if steps > 10_000_000 {
            return Err(ProtocolError::Stalled("message budget exhausted".into()));
        }
        if let Message::TokenGrant { central_epoch, .. } = &msg {
            if *central_epoch < cfg.central_epochs {
                grant_log.push((*central_epoch, to));
            }
        }
        let outputs = peers[to as usize].on_message(from, msg)?;
        enqueue_peer_outputs(&mut queue, to, outputs);
    }
    if let Some(stuck) = peers.iter().position(|p| !p.is_done()) {
        return Err(ProtocolError::Stalled(format!("peer {stuck} never finished")));
    }

    let final_weights = collect_finals(peers.iter().map(|p| p.final_weights()))?;
    let mut epoch_orders = vec![Vec::new(); cfg.central_epochs as usize];
    for &(epoch, trainer) in &grant_log {
        epoch_orders[epoch as usize].push(trainer as usize);
    }
    let (accuracy_logs, ledgers) = peers
        .into_iter()
        .map(|p| {
            let runner = p.into_runner();
            (runner.accuracy_log().to_vec(), runner.into_ledgers())
        })
        .unzip();
    Ok(SimResult { final_weights, events: Vec::new(), epoch_orders, accuracy_logs, ledgers })
}

fn enqueue_peer_outputs(queue: &mut VecDeque<(u32, u32, Message)>, from: u32, outputs: Vec<PeerOutput>) {
    for out in outputs {
        match out {
            PeerOutput::Send { to, msg } => queue.push_back((from, to, msg)),
        }
    }
}

/// All participants must agree on the final weights bit for bit.
fn collect_finals<'a>(
    finals: impl Iterator<Item = Option<&'a ParamSet>>,
) -> Result<ParamSet, ProtocolError> {
    let mut agreed: Option<&ParamSet> = None;
    for (ix, f) in finals.enumerate() {
        let Some(f) = f else {
            return Err(ProtocolError::Stalled(format!("trainer {ix} has no final weights")));
        };
        match agreed {
            None => agreed = Some(f),
            Some(first) => {
                if !first.bit_eq(f) {
                    return Err(ProtocolError::Stalled(format!(
                        "trainer {ix} disagrees on the final weights"
                    )));
                }
            }
        }
    }
    agreed.cloned().ok_or_else(|| ProtocolError::Stalled("no trainers".into()))
}
