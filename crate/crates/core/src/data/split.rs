//! Stratified train/test splitting and sharding across trainers.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DataError, Dataset};
use crate::seed::{derive, Domain};

/// Assignment of training rows to `L` trainers: a partition of the row
/// indices with shard sizes differing by at most one.
#[derive(Clone, Debug)]
pub struct ShardPlan {
    pub trainer_count: usize,
    pub seed: u64,
    pub assignment: Vec<Vec<usize>>,
}

impl ShardPlan {
    pub fn shard_sizes(&self) -> Vec<usize> {
        self.assignment.iter().map(Vec::len).collect()
    }
}

/// Splits per class: each class contributes `round(class_size * test_fraction)`
/// rows to the test side (clamped so both sides keep at least one row of the
/// class), shuffled by `seed`. Deterministic in `(dataset order, seed)`.
pub fn stratified_split(
    dataset: &Dataset,
    test_fraction: f64,
    seed: u64,
) -> Result<(Dataset, Dataset), DataError> {
    if !(0.0..1.0).contains(&test_fraction) || test_fraction == 0.0 {
        return Err(DataError::InvalidArgument(format!(
            "test_fraction {test_fraction} outside (0, 1)"
        )));
    }
    let classes = dataset.label_kind().class_count();
    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); classes as usize];
    for (ix, &label) in dataset.all_labels().iter().enumerate() {
        per_class[label as usize].push(ix);
    }

    let mut train_ix = Vec::new();
    let mut test_ix = Vec::new();
    for (cls, mut indices) in per_class.into_iter().enumerate() {
        if indices.is_empty() {
            continue;
        }
        if indices.len() < 2 {
            return Err(DataError::InvalidArgument(format!(
                "class {cls} has {} row(s); cannot appear on both sides of the split",
                indices.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive(seed, Domain::Split, &[cls as u64]));
        indices.shuffle(&mut rng);
        let want = (indices.len() as f64 * test_fraction).round() as usize;
        let test_count = want.clamp(1, indices.len() - 1);
        test_ix.extend_from_slice(&indices[..test_count]);
        train_ix.extend_from_slice(&indices[test_count..]);
    }
    train_ix.sort_unstable();
    test_ix.sort_unstable();
    Ok((dataset.select(&train_ix), dataset.select(&test_ix)))
}

/// Shuffles the row indices with `seed` and deals them into `trainer_count`
/// near-equal shards.
pub fn partition(
    train: &Dataset,
    trainer_count: usize,
    seed: u64,
) -> Result<ShardPlan, DataError> {
    if trainer_count == 0 {
        return Err(DataError::InvalidArgument("trainer count must be at least 1".into()));
    }
    if trainer_count > train.len() {
        return Err(DataError::InvalidArgument(format!(
            "cannot split {} rows across {trainer_count} trainers",
            train.len()
        )));
    }
    let mut indices: Vec<usize> = (0..train.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive(seed, Domain::Partition, &[]));
    indices.shuffle(&mut rng);

    let base = train.len() / trainer_count;
    let extra = train.len() % trainer_count;
    let mut assignment = Vec::with_capacity(trainer_count);
    let mut cursor = 0;
    for t in 0..trainer_count {
        let size = base + (t < extra) as usize;
        assignment.push(indices[cursor..cursor + size].to_vec());
        cursor += size;
    }
    Ok(ShardPlan { trainer_count, seed, assignment })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::LabelKind;
    use ndarray::Array2;

    fn toy(labels: Vec<u32>, kind: LabelKind) -> Dataset {
        let n = labels.len();
        let features =
            Array2::from_shape_fn((n, 2), |(i, j)| (i * 2 + j) as f64);
        Dataset::new(features, labels, kind).unwrap()
    }

    #[test]
    fn half_split_of_ten_single_class_rows_is_five_five() {
        // one class present; the other empty class is simply absent
        let ds = toy(vec![0; 10], LabelKind::Binary);
        let (train, test) = stratified_split(&ds, 0.5, 1).unwrap();
        assert_eq!(train.len(), 5);
        assert_eq!(test.len(), 5);
    }

    #[test]
    fn split_is_deterministic_in_seed() {
        let ds = toy((0..40).map(|i| (i % 2) as u32).collect(), LabelKind::Binary);
        let (a_train, _) = stratified_split(&ds, 0.25, 9).unwrap();
        let (b_train, _) = stratified_split(&ds, 0.25, 9).unwrap();
        assert_eq!(a_train.all_labels(), b_train.all_labels());
        // feature rows equal too
        assert_eq!(a_train.minibatch(&[0]).batch_size(), 1);
    }

    #[test]
    fn class_ratio_preserved_within_two_points() {
        // 300 rows, 2:1 class ratio
        let labels: Vec<u32> = (0..300).map(|i| (i % 3 == 0) as u32).collect();
        let ds = toy(labels, LabelKind::Binary);
        let (_, test) = stratified_split(&ds, 0.2, 5).unwrap();
        let ones = test.all_labels().iter().filter(|&&l| l == 1).count() as f64;
        let ratio = ones / test.len() as f64;
        assert!((ratio - 1.0 / 3.0).abs() < 0.02, "test ratio {ratio}");
    }

    #[test]
    fn singleton_class_cannot_split() {
        let ds = toy(vec![0, 0, 0, 1], LabelKind::Binary);
        assert!(stratified_split(&ds, 0.5, 0).is_err());
    }

    #[test]
    fn partition_is_a_partition_with_near_equal_shards() {
        let ds = toy(vec![0; 103], LabelKind::Binary);
        let plan = partition(&ds, 4, 3).unwrap();
        let mut seen: Vec<usize> = plan.assignment.iter().flatten().cloned().collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..103).collect::<Vec<_>>());
        let sizes = plan.shard_sizes();
        assert_eq!(sizes.iter().sum::<usize>(), 103);
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }

    #[test]
    fn single_trainer_gets_everything() {
        let ds = toy(vec![0; 7], LabelKind::Binary);
        let plan = partition(&ds, 1, 0).unwrap();
        assert_eq!(plan.assignment.len(), 1);
        assert_eq!(plan.assignment[0].len(), 7);
    }

    #[test]
    fn more_trainers_than_rows_rejected() {
        let ds = toy(vec![0; 3], LabelKind::Binary);
        assert!(partition(&ds, 4, 0).is_err());
    }
}
