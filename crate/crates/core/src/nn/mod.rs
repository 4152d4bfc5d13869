//! Neural-network engine: architecture specs, deterministic forward and
//! backward passes, losses, evaluation, and dropout.
//!
//! Everything here is a pure function over immutable inputs (`f64`
//! throughout) so trainers, the simulator, and the centralized oracle all
//! produce bit-identical arithmetic when fed the same seeds.

mod dropout;
mod engine;
mod eval;
mod params;
mod spec;
mod tensor;

pub use dropout::{DropoutMode, DropoutStream};
pub use engine::{forward, loss_and_grad, softmax_rows, ForwardOutput};
pub use eval::{evaluate, EvalReport};
pub use params::{init_params, GradSet, ParamSet};
pub use spec::{param_count, ActivationKind, LayerSpec, NetworkSpec, OutputLoss};
pub use tensor::{Inputs, MiniBatch, Targets};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("invalid network spec at layer {layer}: {reason}")]
    InvalidSpec { layer: usize, reason: String },
    #[error("network spec has no trainable layer")]
    NoTrainableLayer,
    #[error("dimension mismatch at layer {layer}: {reason}")]
    DimensionMismatch { layer: usize, reason: String },
    #[error("parameter vector has length {got}, spec requires {want}")]
    ParamLength { got: usize, want: usize },
    #[error("non-finite value produced at layer {layer}")]
    NonFinite { layer: usize },
    #[error("empty dataset")]
    EmptyDataset,
}
