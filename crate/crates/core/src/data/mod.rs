//! Dataset ingestion, seeded shuffling, stratified splitting, sharding into
//! per-trainer portions, and mini-batch iteration.
//!
//! Everything downstream of a load is a pure function of `(inputs, seed)`:
//! the same seed always yields the same split, the same shards, and the
//! same batch order.

mod batch;
mod csv_load;
mod idx;
mod split;

pub use batch::batches;
pub use csv_load::{load_csv, CsvOptions};
pub use idx::{load_idx, load_idx_images, load_idx_labels};
pub use split::{partition, stratified_split, ShardPlan};

use ndarray::{Array2, Array4};
use thiserror::Error;

use crate::nn::{Inputs, MiniBatch, Targets};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at {path}:{line}: {reason}")]
    Parse { path: String, line: usize, reason: String },
    #[error("schema mismatch at {path}: {reason}")]
    Schema { path: String, reason: String },
    #[error("bad IDX file {path}: {reason}")]
    Idx { path: String, reason: String },
    #[error("label {label} outside declared range")]
    LabelRange { label: u32 },
    #[error("empty dataset")]
    Empty,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Kind of labels a dataset carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LabelKind {
    Binary,
    Classes(u32),
}

impl LabelKind {
    pub fn class_count(self) -> u32 {
        match self {
            LabelKind::Binary => 2,
            LabelKind::Classes(k) => k,
        }
    }
}

/// In-memory dataset: one feature row + one label per record.
///
/// Image datasets keep their rows flattened and remember the
/// `(channels, height, width)` shape so batching can rebuild tensors.
#[derive(Clone, Debug)]
pub struct Dataset {
    features: Array2<f64>,
    labels: Vec<u32>,
    label_kind: LabelKind,
    image_shape: Option<(usize, usize, usize)>,
}

impl Dataset {
    pub fn new(
        features: Array2<f64>,
        labels: Vec<u32>,
        label_kind: LabelKind,
    ) -> Result<Self, DataError> {
        if features.nrows() != labels.len() {
            return Err(DataError::InvalidArgument(format!(
                "{} feature rows but {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        let max = label_kind.class_count();
        if let Some(&bad) = labels.iter().find(|&&l| l >= max) {
            return Err(DataError::LabelRange { label: bad });
        }
        Ok(Dataset { features, labels, label_kind, image_shape: None })
    }

    pub fn with_image_shape(mut self, shape: (usize, usize, usize)) -> Result<Self, DataError> {
        let (c, h, w) = shape;
        if c * h * w != self.feature_count() {
            return Err(DataError::InvalidArgument(format!(
                "image shape {c}x{h}x{w} does not match {} features",
                self.feature_count()
            )));
        }
        self.image_shape = Some(shape);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_count(&self) -> usize {
        self.features.ncols()
    }

    pub fn label_kind(&self) -> LabelKind {
        self.label_kind
    }

    pub fn image_shape(&self) -> Option<(usize, usize, usize)> {
        self.image_shape
    }

    pub fn label(&self, row: usize) -> u32 {
        self.labels[row]
    }

    /// Labels for a set of row indices.
    pub fn labels(&self, indices: &[usize]) -> Vec<u32> {
        indices.iter().map(|&i| self.labels[i]).collect()
    }

    pub fn all_labels(&self) -> &[u32] {
        &self.labels
    }

    /// New dataset holding the given rows, in the given order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        let mut features = Array2::<f64>::zeros((indices.len(), self.feature_count()));
        for (dst, &src) in indices.iter().enumerate() {
            features.row_mut(dst).assign(&self.features.row(src));
        }
        Dataset {
            features,
            labels: self.labels(indices),
            label_kind: self.label_kind,
            image_shape: self.image_shape,
        }
    }

    /// Builds the `(X, Y)` pair for the given rows. Emits an image tensor
    /// when the dataset has an image shape, a flat matrix otherwise.
    pub fn minibatch(&self, indices: &[usize]) -> MiniBatch {
        let k = indices.len();
        let d = self.feature_count();
        let mut x = Array2::<f64>::zeros((k, d));
        for (dst, &src) in indices.iter().enumerate() {
            x.row_mut(dst).assign(&self.features.row(src));
        }
        let inputs = match self.image_shape {
            Some((c, h, w)) => {
                let img: Array4<f64> =
                    x.into_shape_with_order((k, c, h, w)).expect("shape checked at construction");
                Inputs::Images(img)
            }
            None => Inputs::Flat(x),
        };
        MiniBatch::new(inputs, Targets::Classes(self.labels(indices)))
    }

    /// Per-feature mean and standard deviation, for standardizing.
    pub fn feature_stats(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.len().max(1) as f64;
        let mut means = vec![0.0; self.feature_count()];
        let mut stds = vec![0.0; self.feature_count()];
        for (j, col) in self.features.columns().into_iter().enumerate() {
            let mean = col.sum() / n;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            means[j] = mean;
            stds[j] = var.sqrt();
        }
        (means, stds)
    }

    /// Standardizes features in place with the given stats; zero-variance
    /// columns are left centered only.
    pub fn standardize(&mut self, means: &[f64], stds: &[f64]) {
        for mut row in self.features.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v -= means[j];
                if stds[j] > 0.0 {
                    *v /= stds[j];
                }
            }
        }
    }
}
