//! Seeded dropout mask stream.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DropoutMode {
    Train,
    Eval,
}

/// Produces Bernoulli keep-masks for dropout layers. The stream is seeded,
/// so identical seeds yield identical mask sequences; in eval mode every
/// mask is all-ones (represented as `None`, no randomness consumed).
#[derive(Clone, Debug)]
pub struct DropoutStream {
    rng: ChaCha8Rng,
    mode: DropoutMode,
}

impl DropoutStream {
    pub fn train(seed: u64) -> Self {
        DropoutStream { rng: ChaCha8Rng::seed_from_u64(seed), mode: DropoutMode::Train }
    }

    pub fn eval() -> Self {
        DropoutStream { rng: ChaCha8Rng::seed_from_u64(0), mode: DropoutMode::Eval }
    }

    pub fn mode(&self) -> DropoutMode {
        self.mode
    }

    /// Inverted-dropout mask: entries are `1/(1-rate)` with probability
    /// `1-rate`, else `0`. Returns `None` (identity) in eval mode and for
    /// rate zero, so a rate-0 layer is numerically a no-op.
    pub fn mask(&mut self, len: usize, rate: f64) -> Option<Vec<f64>> {
        if self.mode == DropoutMode::Eval || rate == 0.0 {
            return None;
        }
        let keep = 1.0 - rate;
        let scale = 1.0 / keep;
        Some(
            (0..len)
                .map(|_| if self.rng.random::<f64>() < keep { scale } else { 0.0 })
                .collect(),
        )
    }
}
