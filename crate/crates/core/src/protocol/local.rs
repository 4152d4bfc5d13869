//! The local training loop a trainer runs while it holds the weights:
//! `local_epochs` passes over its shard, each pass iterating seeded-shuffled
//! mini-batches with a gradient computation and an optimizer step.

use super::ProtocolError;
use crate::analysis::{LedgerStep, RunLedger};
use crate::data::{batches, Dataset};
use crate::nn::{evaluate, loss_and_grad, DropoutStream, NetworkSpec, ParamSet};
use crate::optim::{adam_step, lr_at, sgd_step, LrSchedule, OptimizerState};
use crate::seed::{derive, shuffle_seed, Domain};

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// One accuracy-log row, written per central epoch.
#[derive(Clone, Copy, Debug)]
pub struct EpochAccuracy {
    pub central_epoch: u32,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub loss: f64,
}

/// Per-trainer knobs for the local loop.
#[derive(Clone, Debug)]
pub struct LocalConfig {
    pub trainer_ix: u32,
    pub batch_size: usize,
    pub local_epochs: u32,
    pub schedule: LrSchedule,
    pub optimizer: OptimizerKind,
    /// Base seed for per-epoch shard shuffles (shared with the oracle).
    pub shuffle_seed_base: u64,
    /// Shuffle before each local epoch (on in real runs; off for tests).
    pub shuffle: bool,
    /// Dropout masks on/off; seeded per (trainer, central epoch, local epoch).
    pub dropout: bool,
    pub dropout_seed_base: u64,
    /// Cap on mini-batches consumed per local epoch (the "few data batches"
    /// variant); `None` means the whole shard.
    pub max_batches_per_round: Option<usize>,
    /// Zero Adam moments at the start of each token grant.
    pub reset_moments: bool,
    pub record_ledger: bool,
}

/// Trainer-local training state: the shard, optimizer state that never
/// leaves this process, accuracy logs, and optional per-epoch ledgers.
pub struct LocalRunner {
    spec: NetworkSpec,
    shard: Dataset,
    eval_set: Option<Dataset>,
    cfg: LocalConfig,
    optimizer: OptimizerState,
    accuracy_log: Vec<EpochAccuracy>,
    ledgers: Vec<RunLedger>,
}

impl LocalRunner {
    pub fn new(spec: NetworkSpec, shard: Dataset, eval_set: Option<Dataset>, cfg: LocalConfig) -> Self {
        let optimizer = match cfg.optimizer {
            OptimizerKind::Sgd => OptimizerState::sgd(),
            OptimizerKind::Adam => OptimizerState::adam(spec.param_count(), Default::default()),
        };
        LocalRunner { spec, shard, eval_set, cfg, optimizer, accuracy_log: Vec::new(), ledgers: Vec::new() }
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn shard_len(&self) -> usize {
        self.shard.len()
    }

    pub fn accuracy_log(&self) -> &[EpochAccuracy] {
        &self.accuracy_log
    }

    pub fn ledgers(&self) -> &[RunLedger] {
        &self.ledgers
    }

    pub fn into_ledgers(self) -> Vec<RunLedger> {
        self.ledgers
    }

    /// Runs the trainer's turn for `central_epoch` and returns the updated
    /// weights. With zero local epochs the weights pass through bit-exact.
    pub fn train_round(
        &mut self,
        weights: ParamSet,
        central_epoch: u32,
    ) -> Result<ParamSet, ProtocolError> {
        let w_init = self.cfg.record_ledger.then(|| weights.clone());
        let mut steps = Vec::new();
        let mut params = weights;
        if self.cfg.local_epochs > 0 {
            let alpha = lr_at(&self.cfg.schedule, central_epoch)?;
            if self.cfg.reset_moments {
                self.optimizer.reset_moments();
            }
            for local in 0..self.cfg.local_epochs {
                let seed = shuffle_seed(
                    self.cfg.shuffle_seed_base,
                    self.cfg.trainer_ix as u64,
                    central_epoch as u64,
                    local as u64,
                );
                let mut dropout = if self.cfg.dropout {
                    DropoutStream::train(derive(
                        self.cfg.dropout_seed_base,
                        Domain::Dropout,
                        &[self.cfg.trainer_ix as u64, central_epoch as u64, local as u64],
                    ))
                } else {
                    DropoutStream::eval()
                };
                let mut consumed = 0usize;
                for batch in
                    batches(&self.shard, self.cfg.batch_size, seed, self.cfg.shuffle)?
                {
                    if let Some(cap) = self.cfg.max_batches_per_round {
                        if consumed >= cap {
                            break;
                        }
                    }
                    let (_, grads) = loss_and_grad(&self.spec, &params, &batch, &mut dropout)?;
                    if self.cfg.record_ledger {
                        steps.push(LedgerStep { central_epoch, alpha, grads: grads.clone() });
                    }
                    params = match &self.optimizer {
                        OptimizerState::Sgd => sgd_step(&params, &grads, alpha)?,
                        adam @ OptimizerState::Adam { .. } => {
                            let (next, state) = adam_step(adam, &params, &grads, alpha)?;
                            self.optimizer = state;
                            next
                        }
                    };
                    consumed += 1;
                }
            }
        }
        if let Some(w_init) = w_init {
            self.ledgers.push(RunLedger { w_init, steps, w_final: params.clone() });
        }
        if let Some(eval_set) = &self.eval_set {
            let train = evaluate(&self.spec, &params, &self.shard)?;
            let test = evaluate(&self.spec, &params, eval_set)?;
            self.accuracy_log.push(EpochAccuracy {
                central_epoch,
                train_accuracy: train.accuracy,
                test_accuracy: test.accuracy,
                loss: test.mean_loss,
            });
        }
        Ok(params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::LabelKind;
    use crate::nn::{ActivationKind, LayerSpec, OutputLoss};
    use ndarray::Array2;

    fn spec() -> NetworkSpec {
        NetworkSpec {
            layers: vec![
                LayerSpec::Dense { in_dim: 2, out_dim: 3, bias: true },
                LayerSpec::Activation { f: ActivationKind::Relu },
                LayerSpec::Dense { in_dim: 3, out_dim: 2, bias: true },
            ],
            output_loss: OutputLoss::SoftmaxCrossEntropy,
        }
    }

    fn shard(n: usize) -> Dataset {
        let x = Array2::from_shape_fn((n, 2), |(i, j)| ((i * 3 + j) % 5) as f64 / 5.0);
        Dataset::new(x, (0..n).map(|i| (i % 2) as u32).collect(), LabelKind::Binary).unwrap()
    }

    fn config(local_epochs: u32, record: bool) -> LocalConfig {
        LocalConfig {
            trainer_ix: 0,
            batch_size: 4,
            local_epochs,
            schedule: LrSchedule::constant(0.1),
            optimizer: OptimizerKind::Sgd,
            shuffle_seed_base: 11,
            shuffle: true,
            dropout: false,
            dropout_seed_base: 0,
            max_batches_per_round: None,
            reset_moments: false,
            record_ledger: record,
        }
    }

    #[test]
    fn zero_local_epochs_pass_weights_through_bit_exact() {
        let s = spec();
        let w = crate::nn::init_params(&s, 1).unwrap();
        let mut runner = LocalRunner::new(s, shard(10), None, config(0, false));
        let out = runner.train_round(w.clone(), 0).unwrap();
        assert!(out.bit_eq(&w));
    }

    #[test]
    fn ledger_length_is_local_epochs_times_batch_ceil() {
        let s = spec();
        let w = crate::nn::init_params(&s, 1).unwrap();
        let mut runner = LocalRunner::new(s, shard(10), None, config(3, true));
        let _ = runner.train_round(w, 0).unwrap();
        // ceil(10 / 4) = 3 batches per local epoch
        assert_eq!(runner.ledgers()[0].len(), 3 * 3);
    }

    #[test]
    fn ledger_segment_replays_to_returned_weights() {
        let s = spec();
        let w = crate::nn::init_params(&s, 2).unwrap();
        let mut runner = LocalRunner::new(s, shard(13), None, config(2, true));
        let out = runner.train_round(w, 0).unwrap();
        let ledger = &runner.ledgers()[0];
        assert!(ledger.replay().unwrap().bit_eq(&out));
        assert!(ledger.w_final.bit_eq(&out));
    }

    #[test]
    fn max_batches_cap_limits_consumption() {
        let s = spec();
        let w = crate::nn::init_params(&s, 2).unwrap();
        let mut cfg = config(1, true);
        cfg.max_batches_per_round = Some(2);
        let mut runner = LocalRunner::new(s, shard(20), None, cfg);
        let _ = runner.train_round(w, 0).unwrap();
        assert_eq!(runner.ledgers()[0].len(), 2);
    }
}
