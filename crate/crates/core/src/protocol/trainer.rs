//! The SNT trainer's protocol core: join, optionally seed the initial
//! weights, then serve token grants — fetch, decrypt, train locally,
//! encrypt, store, release. Weights exist in plaintext only between a
//! grant's fetch and its store.

use super::local::LocalRunner;
use super::message::Message;
use super::ProtocolError;
use crate::envelope::{
    decrypt, encrypt, serialize, CipherEnvelope, SymmetricKey, WeightBlob,
};
use crate::nn::ParamSet;

/// How weight bytes travel on the wire.
#[derive(Clone)]
pub enum RelayPayload {
    /// AES envelope under the trainers' shared key (server-aided mode).
    /// With an IV stream the envelope IVs come from that seeded source
    /// (deterministic simulation); otherwise from OS randomness.
    Envelope { key: SymmetricKey, iv_stream: Option<rand_chacha::ChaCha8Rng> },
    /// Plain weight blob (peer-to-peer mode; the channel itself is secure).
    Blob,
}

impl RelayPayload {
    pub fn envelope(key: SymmetricKey) -> Self {
        RelayPayload::Envelope { key, iv_stream: None }
    }

    pub fn envelope_seeded(key: SymmetricKey, iv_seed: u64) -> Self {
        use rand::SeedableRng;
        RelayPayload::Envelope {
            key,
            iv_stream: Some(rand_chacha::ChaCha8Rng::seed_from_u64(iv_seed)),
        }
    }

    pub(crate) fn wrap(&mut self, blob: WeightBlob) -> Result<Vec<u8>, ProtocolError> {
        match self {
            RelayPayload::Envelope { key, iv_stream } => match iv_stream {
                Some(rng) => {
                    use rand::RngCore;
                    let mut iv = [0u8; 16];
                    rng.fill_bytes(&mut iv);
                    Ok(crate::envelope::encrypt_iv(key, iv, &blob).to_bytes())
                }
                None => Ok(encrypt(key, &blob)?.to_bytes()),
            },
            RelayPayload::Blob => Ok(blob.into_bytes()),
        }
    }

    pub(crate) fn unwrap(&self, bytes: &[u8]) -> Result<WeightBlob, ProtocolError> {
        match self {
            RelayPayload::Envelope { key, .. } => {
                let envelope = CipherEnvelope::from_bytes(bytes)?;
                Ok(decrypt(key, &envelope)?)
            }
            RelayPayload::Blob => Ok(WeightBlob::from_bytes(bytes.to_vec())),
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Phase {
    AwaitHelloAck,
    AwaitSeedAck,
    Idle,
    AwaitWeights { epoch: u32 },
    AwaitFinalWeights,
    AwaitPutAck,
    Done,
}

/// Configuration for one trainer endpoint.
pub struct TrainerProto {
    id: u32,
    payload: RelayPayload,
    runner: LocalRunner,
    central_epochs: u32,
    /// Set when this trainer uploads the initial weights.
    seed: Option<ParamSet>,
    phase: Phase,
    final_weights: Option<ParamSet>,
}

impl TrainerProto {
    pub fn new(
        id: u32,
        payload: RelayPayload,
        runner: LocalRunner,
        central_epochs: u32,
        seed: Option<ParamSet>,
    ) -> Self {
        TrainerProto {
            id,
            payload,
            runner,
            central_epochs,
            seed,
            phase: Phase::AwaitHelloAck,
            final_weights: None,
        }
    }

    pub fn is_done(&self) -> bool {
        self.phase == Phase::Done
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

    /// Opening frames: HELLO, plus the encrypted initial weights when this
    /// trainer is the seeder.
    pub fn start(&mut self) -> Result<Vec<Message>, ProtocolError> {
        Ok(vec![Message::Hello { trainer_id: self.id }])
    }

    pub fn on_message(&mut self, msg: Message) -> Result<Vec<Message>, ProtocolError> {
        match (self.phase, msg) {
            (Phase::AwaitHelloAck, Message::Ack) => match self.seed.take() {
                Some(params) => {
                    let blob = serialize(self.runner.spec(), &params)?;
                    self.phase = Phase::AwaitSeedAck;
                    Ok(vec![Message::PutWeights(self.payload.wrap(blob)?)])
                }
                None => {
                    self.phase = Phase::Idle;
                    Ok(Vec::new())
                }
            },
            (Phase::AwaitSeedAck, Message::Ack) => {
                self.phase = Phase::Idle;
                Ok(Vec::new())
            }
            (Phase::Idle, Message::TokenGrant { central_epoch, .. }) => {
                self.phase = if central_epoch >= self.central_epochs {
                    Phase::AwaitFinalWeights
                } else {
                    Phase::AwaitWeights { epoch: central_epoch }
                };
                Ok(vec![Message::GetWeights])
            }
            (Phase::AwaitWeights { epoch }, Message::Weights(bytes)) => {
                let blob = self.payload.unwrap(&bytes)?;
                let params = crate::envelope::deserialize(&blob, self.runner.spec())?;
                let trained = self.runner.train_round(params, epoch)?;
                let out = serialize(self.runner.spec(), &trained)?;
                self.phase = Phase::AwaitPutAck;
                Ok(vec![Message::PutWeights(self.payload.wrap(out)?)])
            }
            (Phase::AwaitPutAck, Message::Ack) => {
                self.phase = Phase::Idle;
                Ok(vec![Message::TokenRelease])
            }
            (Phase::AwaitFinalWeights, Message::Weights(bytes)) => {
                let blob = self.payload.unwrap(&bytes)?;
                let params = crate::envelope::deserialize(&blob, self.runner.spec())?;
                self.final_weights = Some(params);
                self.phase = Phase::Done;
                Ok(vec![Message::TokenRelease])
            }
            (_, Message::Error { code, text }) => {
                Err(ProtocolError::ServerError { code, text })
            }
            (phase, other) => Err(ProtocolError::UnexpectedMessage {
                context: "trainer",
                detail: format!("{} in phase {phase:?}", other.type_name()),
            }),
        }
    }
}

impl std::fmt::Debug for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Phase::AwaitHelloAck => "await-hello-ack",
            Phase::AwaitSeedAck => "await-seed-ack",
            Phase::Idle => "idle",
            Phase::AwaitWeights { .. } => "await-weights",
            Phase::AwaitFinalWeights => "await-final-weights",
            Phase::AwaitPutAck => "await-put-ack",
            Phase::Done => "done",
        };
        write!(f, "{name}")
    }
}
