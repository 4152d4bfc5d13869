//! Mini-batch iteration over a shard.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DataError, Dataset};
use crate::nn::MiniBatch;

/// Cuts a shard into consecutive mini-batches. With `shuffle` on, rows are
/// first permuted by `epoch_seed`; the last batch may be smaller and is
/// always processed, never dropped.
pub fn batches(
    shard: &Dataset,
    batch_size: usize,
    epoch_seed: u64,
    shuffle: bool,
) -> Result<Vec<MiniBatch>, DataError> {
    if batch_size == 0 {
        return Err(DataError::InvalidArgument("batch_size must be at least 1".into()));
    }
    if shard.is_empty() {
        return Err(DataError::Empty);
    }
    let mut order: Vec<usize> = (0..shard.len()).collect();
    if shuffle {
        let mut rng = ChaCha8Rng::seed_from_u64(epoch_seed);
        order.shuffle(&mut rng);
    }
    Ok(order.chunks(batch_size).map(|chunk| shard.minibatch(chunk)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::LabelKind;
    use crate::nn::{Inputs, Targets};
    use ndarray::Array2;

    fn toy(n: usize) -> Dataset {
        let features = Array2::from_shape_fn((n, 1), |(i, _)| i as f64);
        Dataset::new(features, (0..n as u32).map(|i| i % 2).collect(), LabelKind::Binary).unwrap()
    }

    fn first_features(batch: &MiniBatch) -> Vec<f64> {
        match &batch.inputs {
            Inputs::Flat(x) => x.column(0).to_vec(),
            _ => unreachable!(),
        }
    }

    #[test]
    fn ten_rows_batch_four_gives_4_4_2() {
        let ds = toy(10);
        let bs = batches(&ds, 4, 0, true).unwrap();
        let sizes: Vec<usize> = bs.iter().map(MiniBatch::batch_size).collect();
        assert_eq!(sizes, vec![4, 4, 2]);
    }

    #[test]
    fn no_shuffle_preserves_file_order() {
        let ds = toy(6);
        let bs = batches(&ds, 4, 99, false).unwrap();
        assert_eq!(first_features(&bs[0]), vec![0.0, 1.0, 2.0, 3.0]);
        assert_eq!(first_features(&bs[1]), vec![4.0, 5.0]);
    }

    #[test]
    fn same_seed_same_sequence() {
        let ds = toy(16);
        let a = batches(&ds, 5, 42, true).unwrap();
        let b = batches(&ds, 5, 42, true).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(first_features(x), first_features(y));
        }
    }

    #[test]
    fn epoch_concatenation_is_a_permutation_of_the_shard() {
        let ds = toy(23);
        let bs = batches(&ds, 7, 3, true).unwrap();
        let mut all: Vec<f64> = bs.iter().flat_map(|b| first_features(b)).collect();
        assert_eq!(all.len(), 23);
        all.sort_by(f64::total_cmp);
        assert_eq!(all, (0..23).map(|i| i as f64).collect::<Vec<_>>());
        // labels travel with their rows
        for b in &bs {
            let Targets::Classes(labels) = &b.targets else { unreachable!() };
            for (f, &l) in first_features(b).iter().zip(labels) {
                assert_eq!((*f as u32) % 2, l);
            }
        }
    }

    #[test]
    fn empty_shard_rejected() {
        let ds = toy(4).select(&[]);
        assert!(batches(&ds, 2, 0, false).is_err());
    }
}
