//! Backpropagation checked against central finite differences over a
//! seeded family of small nets (dense, conv, dropout, all losses).

mod common;

use common::{finite_difference_grad, max_relative_error, random_small_net};
use wrelay_core::nn::{loss_and_grad, DropoutStream};

const H: f64 = 1e-5;
const TOLERANCE: f64 = 1e-4;

#[test]
fn gradients_match_finite_differences_over_random_nets() {
    let mut worst = 0.0_f64;
    for seed in 0..40 {
        let (spec, params, batch, dropout_seed) = random_small_net(seed);
        let mut stream = match dropout_seed {
            Some(s) => DropoutStream::train(s),
            None => DropoutStream::eval(),
        };
        let (_, analytic) = loss_and_grad(&spec, &params, &batch, &mut stream).unwrap();
        let numeric = finite_difference_grad(&spec, &params, &batch, dropout_seed, H);
        let err = max_relative_error(analytic.values(), &numeric);
        assert!(
            err < TOLERANCE,
            "net seed {seed}: max relative error {err:.3e} (loss {:?})",
            spec.output_loss
        );
        worst = worst.max(err);
    }
    println!("worst relative error across nets: {worst:.3e}");
}

#[test]
fn conv_pool_gradients_match_finite_differences() {
    // conv seeds are the 1-in-4 slice of the generator; force a few
    let mut checked = 0;
    for seed in 0..64 {
        let (spec, params, batch, dropout_seed) = random_small_net(seed);
        let has_conv = spec
            .layers
            .iter()
            .any(|l| matches!(l, wrelay_core::nn::LayerSpec::Conv2d { .. }));
        if !has_conv {
            continue;
        }
        let mut stream = match dropout_seed {
            Some(s) => DropoutStream::train(s),
            None => DropoutStream::eval(),
        };
        let (_, analytic) = loss_and_grad(&spec, &params, &batch, &mut stream).unwrap();
        let numeric = finite_difference_grad(&spec, &params, &batch, dropout_seed, H);
        let err = max_relative_error(analytic.values(), &numeric);
        assert!(err < TOLERANCE, "conv net seed {seed}: max relative error {err:.3e}");
        checked += 1;
    }
    assert!(checked >= 5, "only {checked} conv nets drawn");
}
