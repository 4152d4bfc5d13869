//! Network architectures used by the bundled experiments.

use crate::nn::{ActivationKind, LayerSpec, NetworkSpec, OutputLoss};

fn dense(in_dim: usize, out_dim: usize) -> LayerSpec {
    LayerSpec::Dense { in_dim, out_dim, bias: true }
}

fn relu() -> LayerSpec {
    LayerSpec::Activation { f: ActivationKind::Relu }
}

fn dropout(rate: f64) -> LayerSpec {
    LayerSpec::Dropout { rate }
}

/// ReLU hidden layers with optional dropout after each, sigmoid-style binary
/// output handled by the loss. `hidden` pairs are `(width, dropout_rate)`;
/// rate 0 adds no dropout layer.
fn binary_mlp(input: usize, hidden: &[(usize, f64)]) -> NetworkSpec {
    let mut layers = Vec::new();
    let mut prev = input;
    for &(width, rate) in hidden {
        layers.push(dense(prev, width));
        layers.push(relu());
        if rate > 0.0 {
            layers.push(dropout(rate));
        }
        prev = width;
    }
    layers.push(dense(prev, 1));
    NetworkSpec { layers, output_loss: OutputLoss::SigmoidBinaryCrossEntropy }
}

/// 784-500-10 MLP; 397,510 parameters.
pub fn mnist_mlp() -> NetworkSpec {
    NetworkSpec {
        layers: vec![dense(784, 500), LayerSpec::Activation { f: ActivationKind::Tanh }, dense(500, 10)],
        output_loss: OutputLoss::SoftmaxCrossEntropy,
    }
}

/// Small 784-128-10 MLP for desk-scale digit runs.
pub fn mnist_subset_mlp() -> NetworkSpec {
    NetworkSpec {
        layers: vec![dense(784, 128), relu(), dense(128, 10)],
        output_loss: OutputLoss::SoftmaxCrossEntropy,
    }
}

/// LeNet-style CNN for 1x28x28 inputs; 431,080 parameters.
pub fn lenet() -> NetworkSpec {
    NetworkSpec {
        layers: vec![
            LayerSpec::Conv2d { in_channels: 1, out_channels: 20, kernel_h: 5, kernel_w: 5, bias: true },
            LayerSpec::MaxPool2d { pool_h: 2, pool_w: 2 },
            LayerSpec::Activation { f: ActivationKind::Tanh },
            LayerSpec::Conv2d { in_channels: 20, out_channels: 50, kernel_h: 5, kernel_w: 5, bias: true },
            LayerSpec::MaxPool2d { pool_h: 2, pool_w: 2 },
            LayerSpec::Activation { f: ActivationKind::Tanh },
            LayerSpec::Flatten,
            dense(800, 500),
            LayerSpec::Activation { f: ActivationKind::Tanh },
            dense(500, 10),
        ],
        output_loss: OutputLoss::SoftmaxCrossEntropy,
    }
}

/// 8-512-64-1 with dropout 0.6/0.4; 37,505 parameters.
pub fn pima_net() -> NetworkSpec {
    binary_mlp(8, &[(512, 0.6), (64, 0.4)])
}

/// Nine-input stack down to 1 output; 14,785 parameters.
pub fn breast_cancer_net() -> NetworkSpec {
    binary_mlp(
        9,
        &[(32, 0.1), (40, 0.2), (40, 0.0), (64, 0.4), (64, 0.4), (64, 0.4), (8, 0.0), (4, 0.0)],
    )
}

/// 4-128-64-64-1 with dropout 0.7/0.5/0.5; 13,121 parameters.
pub fn banknote_net() -> NetworkSpec {
    binary_mlp(4, &[(128, 0.7), (64, 0.5), (64, 0.5)])
}

/// 14-64-32-1 with dropout 0.4/0.2; 3,073 parameters.
pub fn adult_net() -> NetworkSpec {
    binary_mlp(14, &[(64, 0.4), (32, 0.2)])
}

/// 3-64-32-1 with dropout 0.4/0.2; 2,369 parameters.
pub fn skin_net() -> NetworkSpec {
    binary_mlp(3, &[(64, 0.4), (32, 0.2)])
}

/// 30-64-32-1 with dropout 0.4/0.2; 4,097 parameters.
pub fn credit_net() -> NetworkSpec {
    binary_mlp(30, &[(64, 0.4), (32, 0.2)])
}

/// Looks a preset up by its config-file name.
pub fn by_name(name: &str) -> Option<NetworkSpec> {
    match name {
        "mnist-mlp" => Some(mnist_mlp()),
        "mnist-subset-mlp" => Some(mnist_subset_mlp()),
        "lenet" => Some(lenet()),
        "pima" => Some(pima_net()),
        "breast-cancer" => Some(breast_cancer_net()),
        "banknote" => Some(banknote_net()),
        "adult" => Some(adult_net()),
        "skin" => Some(skin_net()),
        "credit" => Some(credit_net()),
        _ => None,
    }
}
