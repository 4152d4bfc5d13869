//! Deterministic forward and backward passes.
//!
//! The backward pass consumes the exact per-layer caches produced by the
//! forward pass (including dropout masks), so `loss_and_grad` differentiates
//! the same stochastic function it evaluated.

use ndarray::{Array1, Array2, Array4, ArrayView2, Axis};

use super::dropout::DropoutStream;
use super::params::{GradSet, ParamSet};
use super::spec::{ActivationKind, LayerSpec, NetworkSpec, OutputLoss};
use super::tensor::{Inputs, MiniBatch, Targets};
use super::NnError;

/// Activations flowing between layers.
#[derive(Clone, Debug)]
enum Feature {
    Flat(Array2<f64>),
    Image(Array4<f64>),
}

impl Feature {
    fn is_finite(&self) -> bool {
        match self {
            Feature::Flat(x) => x.iter().all(|v| v.is_finite()),
            Feature::Image(x) => x.iter().all(|v| v.is_finite()),
        }
    }

    fn len(&self) -> usize {
        match self {
            Feature::Flat(x) => x.len(),
            Feature::Image(x) => x.len(),
        }
    }
}

#[derive(Debug)]
enum LayerCache {
    Dense { input: Array2<f64> },
    Conv { input: Array4<f64> },
    Pool { in_shape: [usize; 4], argmax: Vec<usize> },
    Flatten { in_shape: [usize; 4] },
    Activation { saved: Feature },
    Dropout { mask: Option<Vec<f64>> },
}

/// Result of a forward pass: final-layer outputs plus the caches backward
/// needs.
#[derive(Debug)]
pub struct ForwardOutput {
    pub outputs: Array2<f64>,
    #[allow(dead_code)]
    caches: Vec<LayerCache>,
}

fn dense_views(
    params: &[f64],
    offset: usize,
    in_dim: usize,
    out_dim: usize,
    bias: bool,
) -> (ArrayView2<'_, f64>, Option<&[f64]>) {
    let w = ArrayView2::from_shape((in_dim, out_dim), &params[offset..offset + in_dim * out_dim])
        .expect("weight slice matches layer shape");
    let b = bias.then(|| &params[offset + in_dim * out_dim..offset + in_dim * out_dim + out_dim]);
    (w, b)
}

/// Applies the activation in place and returns the tensor backward needs:
/// pre-activation for (leaky) ReLU, the activation output for sigmoid/tanh.
fn apply_activation(kind: ActivationKind, x: &mut Feature) -> Feature {
    let f = |v: f64| -> f64 {
        match kind {
            ActivationKind::Relu => v.max(0.0),
            ActivationKind::LeakyRelu { beta } => {
                if v > 0.0 {
                    v
                } else {
                    beta * v
                }
            }
            ActivationKind::Sigmoid => 1.0 / (1.0 + (-v).exp()),
            ActivationKind::Tanh => v.tanh(),
        }
    };
    let save_pre = matches!(kind, ActivationKind::Relu | ActivationKind::LeakyRelu { .. });
    match x {
        Feature::Flat(a) => {
            let pre = save_pre.then(|| a.clone());
            a.mapv_inplace(f);
            Feature::Flat(pre.unwrap_or_else(|| a.clone()))
        }
        Feature::Image(a) => {
            let pre = save_pre.then(|| a.clone());
            a.mapv_inplace(f);
            Feature::Image(pre.unwrap_or_else(|| a.clone()))
        }
    }
}

fn activation_grad(kind: ActivationKind, saved: &Feature, grad: &mut Feature) {
    let d = |s: f64| -> f64 {
        match kind {
            ActivationKind::Relu => {
                if s > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            ActivationKind::LeakyRelu { beta } => {
                if s > 0.0 {
                    1.0
                } else {
                    beta
                }
            }
            // `s` is the activation output for these two.
            ActivationKind::Sigmoid => s * (1.0 - s),
            ActivationKind::Tanh => 1.0 - s * s,
        }
    };
    match (saved, grad) {
        (Feature::Flat(s), Feature::Flat(g)) => g.zip_mut_with(s, |gv, &sv| *gv *= d(sv)),
        (Feature::Image(s), Feature::Image(g)) => g.zip_mut_with(s, |gv, &sv| *gv *= d(sv)),
        _ => unreachable!("activation cache shape matches gradient shape"),
    }
}

fn apply_mask(mask: &[f64], x: &mut Feature) {
    match x {
        Feature::Flat(a) => a.iter_mut().zip(mask).for_each(|(v, &m)| *v *= m),
        Feature::Image(a) => a.iter_mut().zip(mask).for_each(|(v, &m)| *v *= m),
    }
}

fn step_layer(
    layer: &LayerSpec,
    ix: usize,
    values: &[f64],
    offsets: &[usize],
    x: Feature,
    dropout: &mut DropoutStream,
) -> Result<(Feature, LayerCache), NnError> {
    match *layer {
        LayerSpec::Dense { in_dim, out_dim, bias } => {
            let Feature::Flat(input) = x else {
                return Err(NnError::DimensionMismatch {
                    layer: ix,
                    reason: "dense layer fed an image tensor (missing flatten?)".into(),
                });
            };
            if input.ncols() != in_dim {
                return Err(NnError::DimensionMismatch {
                    layer: ix,
                    reason: format!("dense expects {in_dim} features, got {}", input.ncols()),
                });
            }
            let (w, b) = dense_views(values, offsets[ix], in_dim, out_dim, bias);
            let mut out = input.dot(&w);
            if let Some(b) = b {
                let bias_row = ArrayView2::from_shape((1, out_dim), b).unwrap();
                out += &bias_row;
            }
            Ok((Feature::Flat(out), LayerCache::Dense { input }))
        }
        LayerSpec::Conv2d { in_channels, out_channels, kernel_h, kernel_w, bias } => {
            let Feature::Image(input) = x else {
                return Err(NnError::DimensionMismatch {
                    layer: ix,
                    reason: "conv layer fed a flat matrix".into(),
                });
            };
            let s = input.shape();
            let (batch, chans, h, w) = (s[0], s[1], s[2], s[3]);
            if chans != in_channels {
                return Err(NnError::DimensionMismatch {
                    layer: ix,
                    reason: format!("conv expects {in_channels} channels, got {chans}"),
                });
            }
            if h < kernel_h || w < kernel_w {
                return Err(NnError::DimensionMismatch {
                    layer: ix,
                    reason: format!("input {h}x{w} smaller than kernel {kernel_h}x{kernel_w}"),
                });
            }
            let (oh, ow) = (h - kernel_h + 1, w - kernel_w + 1);
            let base = offsets[ix];
            let wsz = in_channels * kernel_h * kernel_w;
            let mut out = Array4::<f64>::zeros((batch, out_channels, oh, ow));
            for n in 0..batch {
                for o in 0..out_channels {
                    let b0 = if bias { values[base + out_channels * wsz + o] } else { 0.0 };
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut acc = b0;
                            for c in 0..in_channels {
                                for ky in 0..kernel_h {
                                    for kx in 0..kernel_w {
                                        let wv = values
                                            [base + o * wsz + c * kernel_h * kernel_w + ky * kernel_w + kx];
                                        acc += wv * input[[n, c, oy + ky, ox + kx]];
                                    }
                                }
                            }
                            out[[n, o, oy, ox]] = acc;
                        }
                    }
                }
            }
            Ok((Feature::Image(out), LayerCache::Conv { input }))
        }
        LayerSpec::MaxPool2d { pool_h, pool_w } => {
            let Feature::Image(input) = x else {
                return Err(NnError::DimensionMismatch {
                    layer: ix,
                    reason: "pool layer fed a flat matrix".into(),
                });
            };
            let s = input.shape();
            let (batch, chans, h, w) = (s[0], s[1], s[2], s[3]);
            let (oh, ow) = (h / pool_h, w / pool_w);
            if oh == 0 || ow == 0 {
                return Err(NnError::DimensionMismatch {
                    layer: ix,
                    reason: format!("input {h}x{w} smaller than pool {pool_h}x{pool_w}"),
                });
            }
            let mut out = Array4::<f64>::zeros((batch, chans, oh, ow));
            let mut argmax = vec![0usize; batch * chans * oh * ow];
            let flat_in = input.as_slice().expect("standard layout");
            let mut cursor = 0;
            for n in 0..batch {
                for c in 0..chans {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut best = f64::NEG_INFINITY;
                            let mut best_ix = 0;
                            for py in 0..pool_h {
                                for px in 0..pool_w {
                                    let (y, xpos) = (oy * pool_h + py, ox * pool_w + px);
                                    let flat = ((n * chans + c) * h + y) * w + xpos;
                                    if flat_in[flat] > best {
                                        best = flat_in[flat];
                                        best_ix = flat;
                                    }
                                }
                            }
                            out[[n, c, oy, ox]] = best;
                            argmax[cursor] = best_ix;
                            cursor += 1;
                        }
                    }
                }
            }
            Ok((Feature::Image(out), LayerCache::Pool { in_shape: [batch, chans, h, w], argmax }))
        }
        LayerSpec::Flatten => {
            let Feature::Image(input) = x else {
                return Err(NnError::DimensionMismatch {
                    layer: ix,
                    reason: "flatten fed a flat matrix".into(),
                });
            };
            let s = input.shape();
            let in_shape = [s[0], s[1], s[2], s[3]];
            let flat = input
                .into_shape_with_order((in_shape[0], in_shape[1] * in_shape[2] * in_shape[3]))
                .expect("standard layout reshape");
            Ok((Feature::Flat(flat), LayerCache::Flatten { in_shape }))
        }
        LayerSpec::Activation { f } => {
            let mut x = x;
            let saved = apply_activation(f, &mut x);
            Ok((x, LayerCache::Activation { saved }))
        }
        LayerSpec::Dropout { rate } => {
            let mut x = x;
            let mask = dropout.mask(x.len(), rate);
            if let Some(m) = &mask {
                apply_mask(m, &mut x);
            }
            Ok((x, LayerCache::Dropout { mask }))
        }
    }
}

fn run_forward(
    spec: &NetworkSpec,
    params: &ParamSet,
    inputs: &Inputs,
    dropout: &mut DropoutStream,
) -> Result<(Array2<f64>, Vec<LayerCache>), NnError> {
    let want = spec.param_count();
    if params.len() != want {
        return Err(NnError::ParamLength { got: params.len(), want });
    }
    let values = params.values();
    let offsets = spec.layer_offsets();
    let mut x = match inputs {
        Inputs::Flat(m) => Feature::Flat(m.clone()),
        Inputs::Images(t) => Feature::Image(t.clone()),
    };
    let mut caches = Vec::with_capacity(spec.layers.len());
    for (ix, layer) in spec.layers.iter().enumerate() {
        let (next, cache) = step_layer(layer, ix, values, &offsets, x, dropout)?;
        caches.push(cache);
        x = next;
    }
    match x {
        Feature::Flat(out) => Ok((out, caches)),
        Feature::Image(_) => Err(NnError::DimensionMismatch {
            layer: spec.layers.len().saturating_sub(1),
            reason: "network output is an image tensor (missing flatten?)".into(),
        }),
    }
}

/// Runs the network on a batch of inputs, returning outputs plus the caches
/// a backward pass would need.
pub fn forward(
    spec: &NetworkSpec,
    params: &ParamSet,
    inputs: &Inputs,
    dropout: &mut DropoutStream,
) -> Result<ForwardOutput, NnError> {
    let (outputs, caches) = run_forward(spec, params, inputs, dropout)?;
    Ok(ForwardOutput { outputs, caches })
}

/// Row-wise softmax with the usual max-shift for stability.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum: f64 = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

fn targets_as_value_rows(targets: &Targets, out_dim: usize) -> Array2<f64> {
    match targets {
        Targets::Values(v) => v.clone(),
        Targets::Classes(c) => {
            let mut m = Array2::<f64>::zeros((c.len(), out_dim));
            for (i, &cls) in c.iter().enumerate() {
                if out_dim == 1 {
                    m[[i, 0]] = cls as f64;
                } else {
                    m[[i, cls as usize]] = 1.0;
                }
            }
            m
        }
    }
}

/// Mean loss over the batch and its gradient with respect to the final
/// layer's outputs.
pub(crate) fn loss_and_output_grad(
    loss: OutputLoss,
    outputs: &Array2<f64>,
    targets: &Targets,
) -> (f64, Array2<f64>) {
    let batch = outputs.nrows() as f64;
    match loss {
        OutputLoss::SoftmaxCrossEntropy => {
            let Targets::Classes(classes) = targets else {
                panic!("softmax cross-entropy needs class targets");
            };
            let probs = softmax_rows(outputs);
            let mut j = 0.0;
            for (i, &cls) in classes.iter().enumerate() {
                // log-sum-exp form of -log softmax(z)_y
                let row = outputs.row(i);
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
                j += lse - row[cls as usize];
            }
            let mut grad = probs;
            for (i, &cls) in classes.iter().enumerate() {
                grad[[i, cls as usize]] -= 1.0;
            }
            grad.mapv_inplace(|v| v / batch);
            (j / batch, grad)
        }
        OutputLoss::SigmoidBinaryCrossEntropy => {
            let y = targets_as_value_rows(targets, outputs.ncols());
            let mut j = 0.0;
            let mut grad = Array2::<f64>::zeros(outputs.raw_dim());
            for ((ix, &z), &yv) in outputs.indexed_iter().zip(y.iter()) {
                // stable: max(z,0) - z*y + ln(1 + e^{-|z|})
                j += z.max(0.0) - z * yv + (1.0 + (-z.abs()).exp()).ln();
                let s = 1.0 / (1.0 + (-z).exp());
                grad[ix] = (s - yv) / batch;
            }
            (j / batch, grad)
        }
        OutputLoss::MeanSquaredError => {
            let y = targets_as_value_rows(targets, outputs.ncols());
            let diff = outputs - &y;
            let j = diff.iter().map(|d| d * d).sum::<f64>() / batch;
            let grad = diff.mapv(|d| 2.0 * d / batch);
            (j, grad)
        }
    }
}

/// Mean loss `J` over the batch and the gradient `G = dJ/dW` under the same
/// dropout masks as the forward pass.
pub fn loss_and_grad(
    spec: &NetworkSpec,
    params: &ParamSet,
    batch: &MiniBatch,
    dropout: &mut DropoutStream,
) -> Result<(f64, GradSet), NnError> {
    let (outputs, caches) = run_forward(spec, params, &batch.inputs, dropout)?;
    let (j, out_grad) = loss_and_output_grad(spec.output_loss, &outputs, &batch.targets);
    if !j.is_finite() {
        return Err(NnError::NonFinite { layer: locate_non_finite(spec, params, batch) });
    }

    let values = params.values();
    let offsets = spec.layer_offsets();
    let mut grads = GradSet::zeros(params.len());
    let mut grad = Feature::Flat(out_grad);

    for (ix, layer) in spec.layers.iter().enumerate().rev() {
        let cache = &caches[ix];
        match (layer, cache) {
            (&LayerSpec::Dense { in_dim, out_dim, bias }, LayerCache::Dense { input }) => {
                let Feature::Flat(dy) = grad else { unreachable!() };
                let (w, _) = dense_views(values, offsets[ix], in_dim, out_dim, bias);
                let dw = input.t().dot(&dy);
                let gslice = &mut grads.values_mut()[offsets[ix]..];
                gslice[..in_dim * out_dim]
                    .iter_mut()
                    .zip(dw.iter())
                    .for_each(|(dst, src)| *dst = *src);
                if bias {
                    let db: Array1<f64> = dy.sum_axis(Axis(0));
                    gslice[in_dim * out_dim..in_dim * out_dim + out_dim]
                        .iter_mut()
                        .zip(db.iter())
                        .for_each(|(dst, src)| *dst = *src);
                }
                grad = Feature::Flat(dy.dot(&w.t()));
            }
            (
                &LayerSpec::Conv2d { in_channels, out_channels, kernel_h, kernel_w, bias },
                LayerCache::Conv { input },
            ) => {
                let Feature::Image(dy) = grad else { unreachable!() };
                let s = input.shape();
                let (batch_n, _, h, w) = (s[0], s[1], s[2], s[3]);
                let os = dy.shape();
                let (oh, ow) = (os[2], os[3]);
                let base = offsets[ix];
                let wsz = in_channels * kernel_h * kernel_w;
                let mut dx = Array4::<f64>::zeros((batch_n, in_channels, h, w));
                let g = grads.values_mut();
                for n in 0..batch_n {
                    for o in 0..out_channels {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let gv = dy[[n, o, oy, ox]];
                                if bias {
                                    g[base + out_channels * wsz + o] += gv;
                                }
                                for c in 0..in_channels {
                                    for ky in 0..kernel_h {
                                        for kx in 0..kernel_w {
                                            let wix = base
                                                + o * wsz
                                                + c * kernel_h * kernel_w
                                                + ky * kernel_w
                                                + kx;
                                            g[wix] += gv * input[[n, c, oy + ky, ox + kx]];
                                            dx[[n, c, oy + ky, ox + kx]] += gv * values[wix];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                grad = Feature::Image(dx);
            }
            (&LayerSpec::MaxPool2d { .. }, LayerCache::Pool { in_shape, argmax }) => {
                let Feature::Image(dy) = grad else { unreachable!() };
                let mut dx =
                    Array4::<f64>::zeros((in_shape[0], in_shape[1], in_shape[2], in_shape[3]));
                let dx_flat = dx.as_slice_mut().expect("standard layout");
                for (&src_ix, &gv) in argmax.iter().zip(dy.iter()) {
                    dx_flat[src_ix] += gv;
                }
                grad = Feature::Image(dx);
            }
            (&LayerSpec::Flatten, LayerCache::Flatten { in_shape }) => {
                let Feature::Flat(dy) = grad else { unreachable!() };
                // dot() can hand back a non-standard layout when a factor is
                // effectively rank one; to_shape copies in that case
                let img = dy
                    .to_shape((in_shape[0], in_shape[1], in_shape[2], in_shape[3]))
                    .expect("element count preserved")
                    .into_owned();
                grad = Feature::Image(img);
            }
            (&LayerSpec::Activation { f }, LayerCache::Activation { saved }) => {
                activation_grad(f, saved, &mut grad);
            }
            (&LayerSpec::Dropout { .. }, LayerCache::Dropout { mask }) => {
                if let Some(m) = mask {
                    apply_mask(m, &mut grad);
                }
            }
            _ => unreachable!("cache kind matches layer kind"),
        }
    }

    Ok((j, grads))
}

/// Re-runs the forward pass (dropout disabled) to find the first layer that
/// produces a non-finite value; used only on the error path.
fn locate_non_finite(spec: &NetworkSpec, params: &ParamSet, batch: &MiniBatch) -> usize {
    let mut stream = DropoutStream::eval();
    let values = params.values();
    let offsets = spec.layer_offsets();
    let mut x = match &batch.inputs {
        Inputs::Flat(m) => Feature::Flat(m.clone()),
        Inputs::Images(t) => Feature::Image(t.clone()),
    };
    for (ix, layer) in spec.layers.iter().enumerate() {
        match step_layer(layer, ix, values, &offsets, x, &mut stream) {
            Ok((next, _)) => {
                if !next.is_finite() {
                    return ix;
                }
                x = next;
            }
            Err(_) => return ix,
        }
    }
    spec.layers.len()
}
