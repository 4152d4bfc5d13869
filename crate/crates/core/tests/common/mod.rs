//! Helpers shared by the integration suites: the finite-difference gradient
//! oracle and seeded generators for small nets and synthetic datasets.

#![allow(dead_code)]

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use wrelay_core::data::{Dataset, LabelKind};
use wrelay_core::nn::{
    loss_and_grad, ActivationKind, DropoutStream, LayerSpec, MiniBatch, NetworkSpec, OutputLoss,
    ParamSet,
};

/// Central-difference gradient `(J(w+h) - J(w-h)) / 2h`, evaluated through
/// the loss value only. Each probe recreates the dropout stream from the
/// same seed so both sides of the difference see identical masks.
pub fn finite_difference_grad(
    spec: &NetworkSpec,
    params: &ParamSet,
    batch: &MiniBatch,
    dropout_seed: Option<u64>,
    h: f64,
) -> Vec<f64> {
    let loss_at = |values: &[f64]| -> f64 {
        let p = ParamSet::new(values.to_vec());
        let mut stream = match dropout_seed {
            Some(seed) => DropoutStream::train(seed),
            None => DropoutStream::eval(),
        };
        let (j, _) = loss_and_grad(spec, &p, batch, &mut stream).expect("finite probe");
        j
    };
    let base = params.values().to_vec();
    let mut grad = Vec::with_capacity(base.len());
    for i in 0..base.len() {
        let mut plus = base.clone();
        plus[i] += h;
        let mut minus = base.clone();
        minus[i] -= h;
        grad.push((loss_at(&plus) - loss_at(&minus)) / (2.0 * h));
    }
    grad
}

/// Worst elementwise relative error between an analytic gradient and the
/// finite-difference oracle. Coordinates where both are below the
/// finite-difference noise floor count as agreeing.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&g, &fd)| {
            let denom = g.abs().max(fd.abs());
            if denom < 1e-5 {
                0.0
            } else {
                (g - fd).abs() / denom
            }
        })
        .fold(0.0, f64::max)
}

/// A small random dense (occasionally conv) net with at most ~200 params,
/// plus a compatible random batch and initial parameters.
pub fn random_small_net(seed: u64) -> (NetworkSpec, ParamSet, MiniBatch, Option<u64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let activations = [
        ActivationKind::Relu,
        ActivationKind::LeakyRelu { beta: 0.1 },
        ActivationKind::Sigmoid,
        ActivationKind::Tanh,
    ];
    let losses = [
        OutputLoss::SoftmaxCrossEntropy,
        OutputLoss::SigmoidBinaryCrossEntropy,
        OutputLoss::MeanSquaredError,
    ];
    let loss = losses[rng.random_range(0..losses.len())];
    let use_conv = rng.random_range(0..4) == 0;
    let batch_size = rng.random_range(1..5);
    let with_dropout = rng.random_range(0..3) == 0;

    let (layers, inputs) = if use_conv {
        let in_ch = rng.random_range(1..3);
        let out_ch = rng.random_range(1..3);
        let side = rng.random_range(5..7);
        let k = rng.random_range(2..4);
        let after_conv = side - k + 1;
        let pooled = after_conv / 2;
        let flat = out_ch * pooled * pooled;
        let out_dim = if loss == OutputLoss::SigmoidBinaryCrossEntropy { 1 } else { 3 };
        let layers = vec![
            LayerSpec::Conv2d {
                in_channels: in_ch,
                out_channels: out_ch,
                kernel_h: k,
                kernel_w: k,
                bias: true,
            },
            LayerSpec::Activation { f: activations[rng.random_range(0..4)] },
            LayerSpec::MaxPool2d { pool_h: 2, pool_w: 2 },
            LayerSpec::Flatten,
            LayerSpec::Dense { in_dim: flat, out_dim, bias: true },
        ];
        let x = ndarray::Array4::from_shape_fn((batch_size, in_ch, side, side), |_| {
            rng.random_range(-1.0..1.0)
        });
        (layers, wrelay_core::nn::Inputs::Images(x))
    } else {
        let in_dim = rng.random_range(2..6);
        let hidden = rng.random_range(2..8);
        let out_dim = if loss == OutputLoss::SigmoidBinaryCrossEntropy { 1 } else { rng.random_range(2..4) };
        let mut layers = vec![
            LayerSpec::Dense { in_dim, out_dim: hidden, bias: true },
            LayerSpec::Activation { f: activations[rng.random_range(0..4)] },
        ];
        if with_dropout {
            layers.push(LayerSpec::Dropout { rate: 0.25 });
        }
        layers.push(LayerSpec::Dense { in_dim: hidden, out_dim, bias: true });
        let x = Array2::from_shape_fn((batch_size, in_dim), |_| rng.random_range(-1.0..1.0));
        (layers, wrelay_core::nn::Inputs::Flat(x))
    };

    let spec = NetworkSpec { layers, output_loss: loss };
    assert!(spec.param_count() <= 200, "generator produced {} params", spec.param_count());
    let params = wrelay_core::nn::init_params(&spec, seed ^ 0xabcd).unwrap();

    let out_dim = match loss {
        OutputLoss::SigmoidBinaryCrossEntropy => 1,
        _ => match spec.layers.last().unwrap() {
            LayerSpec::Dense { out_dim, .. } => *out_dim,
            _ => unreachable!(),
        },
    };
    let targets = match loss {
        OutputLoss::SoftmaxCrossEntropy => wrelay_core::nn::Targets::Classes(
            (0..batch_size).map(|_| rng.random_range(0..out_dim as u32)).collect(),
        ),
        OutputLoss::SigmoidBinaryCrossEntropy => wrelay_core::nn::Targets::Classes(
            (0..batch_size).map(|_| rng.random_range(0..2)).collect(),
        ),
        OutputLoss::MeanSquaredError => wrelay_core::nn::Targets::Values(
            Array2::from_shape_fn((batch_size, out_dim), |_| rng.random_range(-1.0..1.0)),
        ),
    };
    let batch = MiniBatch::new(inputs, targets);
    let dropout_seed = with_dropout.then(|| seed ^ 0x5eed);
    (spec, params, batch, dropout_seed)
}

/// Synthetic two-class blob dataset: class c centered at (-1)^c * 0.7 per
/// feature with unit-ish noise. Linearly separable enough to train fast.
pub fn synthetic_blobs(n: usize, features: usize, classes: u32, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Array2::<f64>::zeros((n, features));
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let cls = rng.random_range(0..classes);
        labels.push(cls);
        let angle = cls as f64 / classes as f64 * std::f64::consts::TAU;
        for j in 0..features {
            let center = 0.9 * (angle + j as f64).sin();
            x[[i, j]] = center + rng.random_range(-0.45..0.45);
        }
    }
    let kind = if classes == 2 { LabelKind::Binary } else { LabelKind::Classes(classes) };
    Dataset::new(x, labels, kind).unwrap()
}
