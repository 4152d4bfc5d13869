//! Declarative network architecture and the canonical parameter layout.

use serde::{Deserialize, Serialize};

use super::NnError;

/// Activation function applied elementwise by an `Activation` layer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActivationKind {
    Relu,
    /// `f(z) = z` for `z > 0`, `beta * z` otherwise.
    LeakyRelu { beta: f64 },
    Sigmoid,
    Tanh,
}

/// One layer of the network, in forward order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum LayerSpec {
    Dense {
        in_dim: usize,
        out_dim: usize,
        #[serde(default = "default_true")]
        bias: bool,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
        #[serde(default = "default_true")]
        bias: bool,
    },
    MaxPool2d {
        pool_h: usize,
        pool_w: usize,
    },
    Flatten,
    Activation {
        f: ActivationKind,
    },
    Dropout {
        rate: f64,
    },
}

fn default_true() -> bool {
    true
}

impl LayerSpec {
    /// Number of trainable parameters this layer contributes.
    pub fn param_count(&self) -> usize {
        match *self {
            LayerSpec::Dense { in_dim, out_dim, bias } => {
                in_dim * out_dim + if bias { out_dim } else { 0 }
            }
            LayerSpec::Conv2d { in_channels, out_channels, kernel_h, kernel_w, bias } => {
                out_channels * in_channels * kernel_h * kernel_w
                    + if bias { out_channels } else { 0 }
            }
            _ => 0,
        }
    }

    pub fn is_trainable(&self) -> bool {
        self.param_count() > 0
    }
}

/// Loss applied to the final layer's outputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputLoss {
    SoftmaxCrossEntropy,
    SigmoidBinaryCrossEntropy,
    MeanSquaredError,
}

/// Ordered layer list plus output loss; the single source of truth for
/// shapes and for the canonical flattened parameter layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub layers: Vec<LayerSpec>,
    pub output_loss: OutputLoss,
}

impl NetworkSpec {
    pub fn new(layers: Vec<LayerSpec>, output_loss: OutputLoss) -> Result<Self, NnError> {
        let spec = NetworkSpec { layers, output_loss };
        spec.validate()?;
        Ok(spec)
    }

    /// Checks the statically checkable invariants: at least one trainable
    /// layer, dropout rates in `[0, 1)`, positive dimensions, and
    /// consecutive dense/conv dimensions compatible. Spatial shapes that
    /// depend on the input (pool/flatten sizes) are checked at forward time.
    pub fn validate(&self) -> Result<(), NnError> {
        if !self.layers.iter().any(|l| l.is_trainable()) {
            return Err(NnError::NoTrainableLayer);
        }
        // Width of the most recent dimension-bearing layer, if known.
        let mut dense_width: Option<usize> = None;
        let mut conv_channels: Option<usize> = None;
        for (ix, layer) in self.layers.iter().enumerate() {
            match *layer {
                LayerSpec::Dense { in_dim, out_dim, .. } => {
                    if in_dim == 0 || out_dim == 0 {
                        return Err(NnError::InvalidSpec {
                            layer: ix,
                            reason: "dense dimensions must be positive".into(),
                        });
                    }
                    if let Some(prev) = dense_width {
                        if prev != in_dim {
                            return Err(NnError::InvalidSpec {
                                layer: ix,
                                reason: format!(
                                    "dense expects {in_dim} inputs but previous layer produces {prev}"
                                ),
                            });
                        }
                    }
                    dense_width = Some(out_dim);
                }
                LayerSpec::Conv2d { in_channels, out_channels, kernel_h, kernel_w, .. } => {
                    if in_channels == 0 || out_channels == 0 || kernel_h == 0 || kernel_w == 0 {
                        return Err(NnError::InvalidSpec {
                            layer: ix,
                            reason: "conv dimensions must be positive".into(),
                        });
                    }
                    if dense_width.is_some() {
                        return Err(NnError::InvalidSpec {
                            layer: ix,
                            reason: "conv layer after dense output".into(),
                        });
                    }
                    if let Some(prev) = conv_channels {
                        if prev != in_channels {
                            return Err(NnError::InvalidSpec {
                                layer: ix,
                                reason: format!(
                                    "conv expects {in_channels} channels but previous layer produces {prev}"
                                ),
                            });
                        }
                    }
                    conv_channels = Some(out_channels);
                }
                LayerSpec::MaxPool2d { pool_h, pool_w } => {
                    if pool_h == 0 || pool_w == 0 {
                        return Err(NnError::InvalidSpec {
                            layer: ix,
                            reason: "pool dimensions must be positive".into(),
                        });
                    }
                    if dense_width.is_some() {
                        return Err(NnError::InvalidSpec {
                            layer: ix,
                            reason: "pool layer after dense output".into(),
                        });
                    }
                }
                LayerSpec::Flatten => {
                    // Output width depends on the input's spatial shape.
                    conv_channels = None;
                    dense_width = None;
                }
                LayerSpec::Activation { .. } => {}
                LayerSpec::Dropout { rate } => {
                    if !(0.0..1.0).contains(&rate) {
                        return Err(NnError::InvalidSpec {
                            layer: ix,
                            reason: format!("dropout rate {rate} outside [0, 1)"),
                        });
                    }
                }
            }
        }
        Ok(())
    }

    /// Total trainable parameter count under the canonical layout.
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerSpec::param_count).sum()
    }

    /// Byte offset (in values) of each layer's parameter slice.
    pub fn layer_offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut acc = 0;
        for layer in &self.layers {
            offsets.push(acc);
            acc += layer.param_count();
        }
        offsets
    }

    /// Canonical byte encoding of the spec. Stable across runs and hosts;
    /// hashed into weight blobs so a receiver can reject weights for a
    /// different architecture.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(b"SPEC");
        out.push(1); // encoding version
        out.extend_from_slice(&(self.layers.len() as u32).to_le_bytes());
        for layer in &self.layers {
            match *layer {
                LayerSpec::Dense { in_dim, out_dim, bias } => {
                    out.push(1);
                    out.extend_from_slice(&(in_dim as u64).to_le_bytes());
                    out.extend_from_slice(&(out_dim as u64).to_le_bytes());
                    out.push(bias as u8);
                }
                LayerSpec::Conv2d { in_channels, out_channels, kernel_h, kernel_w, bias } => {
                    out.push(2);
                    out.extend_from_slice(&(in_channels as u64).to_le_bytes());
                    out.extend_from_slice(&(out_channels as u64).to_le_bytes());
                    out.extend_from_slice(&(kernel_h as u64).to_le_bytes());
                    out.extend_from_slice(&(kernel_w as u64).to_le_bytes());
                    out.push(bias as u8);
                }
                LayerSpec::MaxPool2d { pool_h, pool_w } => {
                    out.push(3);
                    out.extend_from_slice(&(pool_h as u64).to_le_bytes());
                    out.extend_from_slice(&(pool_w as u64).to_le_bytes());
                }
                LayerSpec::Flatten => out.push(4),
                LayerSpec::Activation { f } => {
                    out.push(5);
                    match f {
                        ActivationKind::Relu => out.push(1),
                        ActivationKind::LeakyRelu { beta } => {
                            out.push(2);
                            out.extend_from_slice(&beta.to_le_bytes());
                        }
                        ActivationKind::Sigmoid => out.push(3),
                        ActivationKind::Tanh => out.push(4),
                    }
                }
                LayerSpec::Dropout { rate } => {
                    out.push(6);
                    out.extend_from_slice(&rate.to_le_bytes());
                }
            }
        }
        out.push(match self.output_loss {
            OutputLoss::SoftmaxCrossEntropy => 1,
            OutputLoss::SigmoidBinaryCrossEntropy => 2,
            OutputLoss::MeanSquaredError => 3,
        });
        out
    }
}

/// Trainable parameter count for a validated spec.
pub fn param_count(spec: &NetworkSpec) -> Result<usize, NnError> {
    spec.validate()?;
    Ok(spec.param_count())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_chain(dims: &[usize]) -> NetworkSpec {
        let mut layers = Vec::new();
        for w in dims.windows(2) {
            layers.push(LayerSpec::Dense { in_dim: w[0], out_dim: w[1], bias: true });
            layers.push(LayerSpec::Activation { f: ActivationKind::Relu });
        }
        NetworkSpec { layers, output_loss: OutputLoss::SoftmaxCrossEntropy }
    }

    #[test]
    fn mlp_784_500_10_has_397510_params() {
        assert_eq!(param_count(&dense_chain(&[784, 500, 10])).unwrap(), 397_510);
    }

    #[test]
    fn lenet_style_has_431080_params() {
        let spec = NetworkSpec {
            layers: vec![
                LayerSpec::Conv2d { in_channels: 1, out_channels: 20, kernel_h: 5, kernel_w: 5, bias: true },
                LayerSpec::MaxPool2d { pool_h: 2, pool_w: 2 },
                LayerSpec::Conv2d { in_channels: 20, out_channels: 50, kernel_h: 5, kernel_w: 5, bias: true },
                LayerSpec::MaxPool2d { pool_h: 2, pool_w: 2 },
                LayerSpec::Flatten,
                LayerSpec::Dense { in_dim: 800, out_dim: 500, bias: true },
                LayerSpec::Activation { f: ActivationKind::Tanh },
                LayerSpec::Dense { in_dim: 500, out_dim: 10, bias: true },
            ],
            output_loss: OutputLoss::SoftmaxCrossEntropy,
        };
        assert_eq!(param_count(&spec).unwrap(), 431_080);
    }

    #[test]
    fn pima_net_has_37505_params() {
        assert_eq!(param_count(&dense_chain(&[8, 512, 64, 1])).unwrap(), 37_505);
    }

    #[test]
    fn zero_trainable_layers_rejected() {
        let spec = NetworkSpec {
            layers: vec![LayerSpec::Activation { f: ActivationKind::Relu }],
            output_loss: OutputLoss::MeanSquaredError,
        };
        assert!(matches!(param_count(&spec), Err(NnError::NoTrainableLayer)));
    }

    #[test]
    fn mismatched_dense_dims_rejected() {
        let spec = NetworkSpec {
            layers: vec![
                LayerSpec::Dense { in_dim: 4, out_dim: 8, bias: true },
                LayerSpec::Dense { in_dim: 9, out_dim: 2, bias: true },
            ],
            output_loss: OutputLoss::MeanSquaredError,
        };
        match spec.validate() {
            Err(NnError::InvalidSpec { layer, .. }) => assert_eq!(layer, 1),
            other => panic!("expected InvalidSpec, got {other:?}"),
        }
    }

    #[test]
    fn dropout_rate_one_rejected() {
        let spec = NetworkSpec {
            layers: vec![
                LayerSpec::Dense { in_dim: 2, out_dim: 2, bias: true },
                LayerSpec::Dropout { rate: 1.0 },
            ],
            output_loss: OutputLoss::MeanSquaredError,
        };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn canonical_bytes_distinguish_specs() {
        let a = dense_chain(&[4, 3]);
        let b = dense_chain(&[4, 2]);
        assert_ne!(a.canonical_bytes(), b.canonical_bytes());
        assert_eq!(a.canonical_bytes(), dense_chain(&[4, 3]).canonical_bytes());
    }
}
