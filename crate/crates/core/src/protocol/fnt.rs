//! Fully-connected (serverless) relay: each trainer receives the weights
//! from the previous trainer, trains, and sends them to the next. There is
//! no ciphertext layer — the pairwise channels themselves are secure — so
//! weights travel as plain blobs. After the last round the holder
//! broadcasts the final weights to every peer.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::local::LocalRunner;
use super::message::Message;
use super::scheduler::SchedulerKind;
use super::trainer::RelayPayload;
use super::ProtocolError;
use crate::envelope::serialize;
use crate::nn::ParamSet;

/// How a peer picks the next weight holder.
pub enum OrderPolicy {
    /// Ring order `i -> i+1 mod L`.
    RoundRobin,
    /// Uniform draw over the other peers.
    Random(ChaCha8Rng),
}

impl OrderPolicy {
    pub fn from_kind(kind: SchedulerKind, seed: u64, peer: u32) -> Self {
        match kind {
            SchedulerKind::RoundRobin => OrderPolicy::RoundRobin,
            // distinct stream per peer; draws stay deterministic per run
            SchedulerKind::Random => OrderPolicy::Random(ChaCha8Rng::seed_from_u64(
                crate::seed::derive(seed, crate::seed::Domain::Schedule, &[peer as u64]),
            )),
        }
    }

    fn next(&mut self, me: u32, l: u32) -> u32 {
        match self {
            OrderPolicy::RoundRobin => (me + 1) % l,
            OrderPolicy::Random(rng) => {
                // j != i per the relay rule
                let draw = rng.random_range(0..l - 1);
                if draw >= me {
                    draw + 1
                } else {
                    draw
                }
            }
        }
    }
}

#[derive(Clone, Debug)]
pub enum PeerOutput {
    Send { to: u32, msg: Message },
}

/// One FNT participant as a sans-io state machine. The TCP runner and the
/// in-process simulator both drive this.
pub struct PeerProto {
    id: u32,
    l: u32,
    total_rounds: u32,
    runner: LocalRunner,
    payload: RelayPayload,
    order: OrderPolicy,
    pending_grant: Option<(u32, u32)>,
    final_weights: Option<ParamSet>,
    done: bool,
}

impl PeerProto {
    pub fn new(
        id: u32,
        l: u32,
        central_epochs: u32,
        runner: LocalRunner,
        order: OrderPolicy,
    ) -> Self {
        PeerProto {
            id,
            l,
            total_rounds: central_epochs * l,
            runner,
            payload: RelayPayload::Blob,
            order,
            pending_grant: None,
            final_weights: None,
            done: false,
        }
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn final_weights(&self) -> Option<&ParamSet> {
        self.final_weights.as_ref()
    }

    pub fn runner(&self) -> &LocalRunner {
        &self.runner
    }

    pub fn into_runner(self) -> LocalRunner {
        self.runner
    }

    /// Starting peer: initializes the weights, runs its own first turn, and
    /// relays. (The weight vector needs to be initialized once, by one of
    /// the trainers.)
    pub fn kickoff(&mut self, initial: ParamSet) -> Result<Vec<PeerOutput>, ProtocolError> {
        let trained = self.runner.train_round(initial, 0)?;
        self.after_turn(trained, 0)
    }

    pub fn on_message(&mut self, from: u32, msg: Message) -> Result<Vec<PeerOutput>, ProtocolError> {
        match msg {
            Message::TokenGrant { round, central_epoch } => {
                if self.pending_grant.replace((round, central_epoch)).is_some() {
                    return Err(ProtocolError::UnexpectedMessage {
                        context: "fnt-peer",
                        detail: "second grant before weights arrived".into(),
                    });
                }
                Ok(Vec::new())
            }
            Message::Weights(bytes) => {
                let Some((round, epoch)) = self.pending_grant.take() else {
                    return Err(ProtocolError::UnexpectedMessage {
                        context: "fnt-peer",
                        detail: format!("weights from {from} without a grant"),
                    });
                };
                let blob = self.payload.unwrap(&bytes)?;
                let params = crate::envelope::deserialize(&blob, self.runner.spec())?;
                if round >= self.total_rounds {
                    // final broadcast
                    self.final_weights = Some(params);
                    self.done = true;
                    return Ok(Vec::new());
                }
                let trained = self.runner.train_round(params, epoch)?;
                self.after_turn(trained, round)
            }
            other => Err(ProtocolError::UnexpectedMessage {
                context: "fnt-peer",
                detail: other.type_name().into(),
            }),
        }
    }

    /// Relays after this peer's training turn `round`, or broadcasts the
    /// final weights when that was the last turn.
    fn after_turn(&mut self, trained: ParamSet, round: u32) -> Result<Vec<PeerOutput>, ProtocolError> {
        let blob = serialize(self.runner.spec(), &trained)?;
        let bytes = self.payload.wrap(blob)?;
        let next_round = round + 1;
        if next_round >= self.total_rounds {
            self.final_weights = Some(trained);
            self.done = true;
            let final_epoch = self.total_rounds / self.l.max(1);
            let mut outputs = Vec::new();
            for peer in 0..self.l {
                if peer != self.id {
                    outputs.push(PeerOutput::Send {
                        to: peer,
                        msg: Message::TokenGrant { round: next_round, central_epoch: final_epoch },
                    });
                    outputs.push(PeerOutput::Send { to: peer, msg: Message::Weights(bytes.clone()) });
                }
            }
            return Ok(outputs);
        }
        let next = self.order.next(self.id, self.l);
        let epoch = next_round / self.l;
        Ok(vec![
            PeerOutput::Send {
                to: next,
                msg: Message::TokenGrant { round: next_round, central_epoch: epoch },
            },
            PeerOutput::Send { to: next, msg: Message::Weights(bytes) },
        ])
    }
}
