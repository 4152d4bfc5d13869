//! Flattened parameter and gradient vectors in the canonical layout:
//! layers in spec order; within a dense layer the weight matrix row-major
//! (input-major) then bias; within a conv layer filters in
//! (out_channel, in_channel, kernel_row, kernel_col) order then bias.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::spec::{LayerSpec, NetworkSpec};
use super::NnError;
use crate::seed::{derive, Domain};

/// The flattened weight vector `W`; the unit of relay between trainers.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet {
    values: Vec<f64>,
}

impl ParamSet {
    pub fn new(values: Vec<f64>) -> Self {
        ParamSet { values }
    }

    pub fn zeros(len: usize) -> Self {
        ParamSet { values: vec![0.0; len] }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// True iff every value is bitwise identical to `other`'s.
    pub fn bit_eq(&self, other: &ParamSet) -> bool {
        self.values.len() == other.values.len()
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    /// Largest absolute elementwise difference.
    pub fn max_abs_diff(&self, other: &ParamSet) -> Option<f64> {
        if self.values.len() != other.values.len() {
            return None;
        }
        Some(
            self.values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max),
        )
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Gradient vector `G`, same layout and length as the paired [`ParamSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradSet {
    values: Vec<f64>,
}

impl GradSet {
    pub fn new(values: Vec<f64>) -> Self {
        GradSet { values }
    }

    pub fn zeros(len: usize) -> Self {
        GradSet { values: vec![0.0; len] }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
}

/// Glorot-uniform initialization, biases zero; a deterministic function of
/// `(spec, seed)`.
pub fn init_params(spec: &NetworkSpec, seed: u64) -> Result<ParamSet, NnError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive(seed, Domain::Init, &[]));
    let mut values = Vec::with_capacity(spec.param_count());
    for layer in &spec.layers {
        match *layer {
            LayerSpec::Dense { in_dim, out_dim, bias } => {
                let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
                for _ in 0..in_dim * out_dim {
                    values.push(rng.random_range(-limit..limit));
                }
                if bias {
                    values.extend(std::iter::repeat_n(0.0, out_dim));
                }
            }
            LayerSpec::Conv2d { in_channels, out_channels, kernel_h, kernel_w, bias } => {
                let fan_in = in_channels * kernel_h * kernel_w;
                let fan_out = out_channels * kernel_h * kernel_w;
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                for _ in 0..out_channels * in_channels * kernel_h * kernel_w {
                    values.push(rng.random_range(-limit..limit));
                }
                if bias {
                    values.extend(std::iter::repeat_n(0.0, out_channels));
                }
            }
            _ => {}
        }
    }
    Ok(ParamSet::new(values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::spec::{ActivationKind, OutputLoss};

    fn small_spec() -> NetworkSpec {
        NetworkSpec {
            layers: vec![
                LayerSpec::Dense { in_dim: 2, out_dim: 2, bias: true },
                LayerSpec::Activation { f: ActivationKind::Relu },
            ],
            output_loss: OutputLoss::MeanSquaredError,
        }
    }

    #[test]
    fn init_is_deterministic_in_seed() {
        let spec = small_spec();
        let a = init_params(&spec, 7).unwrap();
        let b = init_params(&spec, 7).unwrap();
        assert!(a.bit_eq(&b));
        let c = init_params(&spec, 8).unwrap();
        assert!(!a.bit_eq(&c));
    }

    #[test]
    fn init_length_matches_param_count() {
        let spec = small_spec();
        assert_eq!(init_params(&spec, 0).unwrap().len(), spec.param_count());
    }

    #[test]
    fn dense_2x2_weights_within_glorot_bound() {
        let spec = small_spec();
        let params = init_params(&spec, 3).unwrap();
        let limit = (6.0_f64 / 4.0).sqrt();
        for &w in &params.values()[..4] {
            assert!(w.abs() <= limit, "weight {w} outside ±{limit}");
        }
        // biases zero
        assert_eq!(&params.values()[4..], &[0.0, 0.0]);
    }
}
