//! Batch containers flowing through the network.

use ndarray::{Array2, Array4};

/// Inputs of one mini-batch: a flat feature matrix or an image tensor
/// in (batch, channel, height, width) order.
#[derive(Clone, Debug)]
pub enum Inputs {
    Flat(Array2<f64>),
    Images(Array4<f64>),
}

impl Inputs {
    pub fn batch_size(&self) -> usize {
        match self {
            Inputs::Flat(x) => x.nrows(),
            Inputs::Images(x) => x.shape()[0],
        }
    }
}

/// Targets of one mini-batch: class indices (classification) or raw
/// target rows (regression / squared error with arbitrary targets).
#[derive(Clone, Debug)]
pub enum Targets {
    Classes(Vec<u32>),
    Values(Array2<f64>),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Classes(c) => c.len(),
            Targets::Values(v) => v.nrows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// `(X, Y)` packed for one gradient step.
#[derive(Clone, Debug)]
pub struct MiniBatch {
    pub inputs: Inputs,
    pub targets: Targets,
}

impl MiniBatch {
    pub fn new(inputs: Inputs, targets: Targets) -> Self {
        assert!(inputs.batch_size() >= 1, "mini-batch must hold at least one row");
        assert_eq!(inputs.batch_size(), targets.len(), "X and Y row counts differ");
        MiniBatch { inputs, targets }
    }

    pub fn batch_size(&self) -> usize {
        self.inputs.batch_size()
    }
}
