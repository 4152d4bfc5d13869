//! The centralized-SGD oracle: one process looping over the concatenated
//! shards exactly as a single machine holding all the data would, with the
//! same per-epoch shuffle seeds the relay trainers derive. Relay runs are
//! compared against this bit for bit.
//!
//! This loop is deliberately written out here, independent of the protocol
//! module's trainer loop, so the two sides of the equivalence check share
//! only the arithmetic primitives.

use super::AnalysisError;
use crate::data::{batches, Dataset};
use crate::nn::{init_params, loss_and_grad, DropoutStream, NetworkSpec, ParamSet};
use crate::optim::{lr_at, sgd_step, LrSchedule};
use crate::seed::shuffle_seed;

/// Inputs for an oracle run; must mirror the relay run's configuration.
pub struct OracleConfig<'a> {
    pub spec: &'a NetworkSpec,
    /// Shards indexed by trainer; visited in `epoch_orders` order.
    pub shards: &'a [Dataset],
    /// Trainer visit order per central epoch. For round robin this is
    /// `[0, 1, .., L-1]` repeated; a realized random schedule can be
    /// replayed by passing the grant order the relay actually used.
    pub epoch_orders: &'a [Vec<usize>],
    pub init_seed: u64,
    pub shuffle_seed_base: u64,
    pub local_epochs: u32,
    pub batch_size: usize,
    pub schedule: &'a LrSchedule,
    pub shuffle: bool,
}

impl<'a> OracleConfig<'a> {
    /// Round-robin visit order for `central_epochs` epochs over all shards.
    pub fn round_robin_orders(trainer_count: usize, central_epochs: u32) -> Vec<Vec<usize>> {
        (0..central_epochs).map(|_| (0..trainer_count).collect()).collect()
    }
}

/// Runs plain SGD over the shards in schedule order and returns the final
/// weights. Dropout is disabled (eval mode): the equivalence theorems are
/// claimed for the deterministic training path.
pub fn centralized_oracle(cfg: &OracleConfig<'_>) -> Result<ParamSet, AnalysisError> {
    let mut weights = init_params(cfg.spec, cfg.init_seed)?;
    for (epoch_ix, order) in cfg.epoch_orders.iter().enumerate() {
        let epoch = epoch_ix as u32;
        let alpha = lr_at(cfg.schedule, epoch)?;
        for &trainer in order {
            let shard = &cfg.shards[trainer];
            for local in 0..cfg.local_epochs {
                let seed =
                    shuffle_seed(cfg.shuffle_seed_base, trainer as u64, epoch as u64, local as u64);
                for batch in batches(shard, cfg.batch_size, seed, cfg.shuffle)? {
                    let mut stream = DropoutStream::eval();
                    let (_, grads) = loss_and_grad(cfg.spec, &weights, &batch, &mut stream)?;
                    weights = sgd_step(&weights, &grads, alpha)?;
                }
            }
        }
    }
    Ok(weights)
}

/// Largest absolute elementwise difference between two weight vectors;
/// the equivalence checks demand exactly `0.0`.
pub fn check_equivalence(relay: &ParamSet, oracle: &ParamSet) -> Result<f64, AnalysisError> {
    relay
        .max_abs_diff(oracle)
        .ok_or(AnalysisError::LengthMismatch { a: relay.len(), b: oracle.len() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Dataset, LabelKind};
    use crate::nn::{ActivationKind, LayerSpec, OutputLoss};
    use ndarray::Array2;

    fn tiny_spec() -> NetworkSpec {
        NetworkSpec {
            layers: vec![
                LayerSpec::Dense { in_dim: 2, out_dim: 4, bias: true },
                LayerSpec::Activation { f: ActivationKind::Tanh },
                LayerSpec::Dense { in_dim: 4, out_dim: 2, bias: true },
            ],
            output_loss: OutputLoss::SoftmaxCrossEntropy,
        }
    }

    fn tiny_shard(seed: u64, n: usize) -> Dataset {
        let x = Array2::from_shape_fn((n, 2), |(i, j)| {
            (((seed as usize + i * 2 + j) % 13) as f64 - 6.0) / 6.0
        });
        let labels = (0..n).map(|i| ((seed as usize + i) % 2) as u32).collect();
        Dataset::new(x, labels, LabelKind::Binary).unwrap()
    }

    #[test]
    fn oracle_is_deterministic() {
        let spec = tiny_spec();
        let shards = vec![tiny_shard(0, 12), tiny_shard(1, 12)];
        let orders = OracleConfig::round_robin_orders(2, 3);
        let cfg = OracleConfig {
            spec: &spec,
            shards: &shards,
            epoch_orders: &orders,
            init_seed: 5,
            shuffle_seed_base: 6,
            local_epochs: 1,
            batch_size: 4,
            schedule: &LrSchedule::constant(0.1),
            shuffle: true,
        };
        let a = centralized_oracle(&cfg).unwrap();
        let b = centralized_oracle(&cfg).unwrap();
        assert!(a.bit_eq(&b));
    }

    #[test]
    fn shard_order_changes_the_trajectory() {
        let spec = tiny_spec();
        let shards = vec![tiny_shard(0, 10), tiny_shard(7, 10)];
        let forward_orders = vec![vec![0, 1]];
        let reversed_orders = vec![vec![1, 0]];
        let base = |orders: &[Vec<usize>]| OracleConfig {
            spec: &spec,
            shards: &shards,
            epoch_orders: orders,
            init_seed: 5,
            shuffle_seed_base: 6,
            local_epochs: 1,
            batch_size: 4,
            schedule: &LrSchedule::constant(0.1),
            shuffle: true,
        }
        .run();
        let a = base(&forward_orders);
        let b = base(&reversed_orders);
        assert!(!a.bit_eq(&b), "SGD must be order sensitive");
    }

    impl OracleConfig<'_> {
        fn run(&self) -> ParamSet {
            centralized_oracle(self).unwrap()
        }
    }

    #[test]
    fn equivalence_reports_zero_for_identical_and_the_perturbation_otherwise() {
        let a = ParamSet::new(vec![1.0, 2.0, 3.0]);
        let mut b = a.clone();
        assert_eq!(check_equivalence(&a, &b).unwrap(), 0.0);
        b.values_mut()[1] += 1e-9;
        let diff = check_equivalence(&a, &b).unwrap();
        // representation rounding at magnitude 2.0 is ~4e-16
        assert!((diff - 1e-9).abs() < 1e-15);
        let short = ParamSet::new(vec![0.0]);
        assert!(check_equivalence(&a, &short).is_err());
    }
}
