//! Shared test support: the central finite-difference oracle used to
//! verify every backward rule independently of the tape.

use mvter_core::rng::SplitMix64;
use mvter_core::tensor::{Tape, Tensor, Var};

/// Builds a scalar loss from freshly bound parameter vars.
pub type LossBuilder = dyn Fn(&mut Tape<f64>, &[Var]) -> Var;

pub fn random_tensor(shape: Vec<usize>, lo: f64, hi: f64, rng: &mut SplitMix64) -> Tensor<f64> {
    let len: usize = shape.iter().product();
    let data: Vec<f64> = (0..len).map(|_| rng.uniform(lo, hi)).collect();
    Tensor::new(shape, data).unwrap()
}

/// Random tensor whose values are pairwise separated by at least `gap`,
/// for ops with argmax-style nonsmoothness (maxpool, view_max).
pub fn separated_tensor(shape: Vec<usize>, gap: f64, rng: &mut SplitMix64) -> Tensor<f64> {
    let len: usize = shape.iter().product();
    let mut levels: Vec<f64> = (0..len).map(|i| i as f64 * gap * 2.0).collect();
    rng.shuffle(&mut levels);
    let data: Vec<f64> = levels
        .into_iter()
        .map(|l| l + rng.uniform(0.0, gap * 0.5) - (len as f64) * gap)
        .collect();
    Tensor::new(shape, data).unwrap()
}

fn loss_value(inputs: &[Tensor<f64>], build: &LossBuilder) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| tape.parameter(t.clone()).unwrap())
        .collect();
    let loss = build(&mut tape, &vars);
    tape.value(loss).item().unwrap()
}

/// Central finite-difference check of every element of every input.
/// Returns the worst relative error observed.
#[allow(clippy::needless_range_loop)] // indices drive the perturbation
pub fn finite_diff_check(inputs: &[Tensor<f64>], build: &LossBuilder, step: f64) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| tape.parameter(t.clone()).unwrap())
        .collect();
    let loss = build(&mut tape, &vars);
    tape.backward(loss).unwrap();
    let analytic: Vec<Vec<f64>> = vars.iter().map(|&v| tape.grad(v).unwrap().to_vec()).collect();

    let mut worst = 0.0f64;
    for (i, input) in inputs.iter().enumerate() {
        for j in 0..input.len() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += step;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= step;
            let numeric = (loss_value(&plus, build) - loss_value(&minus, build)) / (2.0 * step);
            let a = analytic[i][j];
            let denom = a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    worst
}

/// Asserts the oracle agrees with backward within `tol`.
pub fn assert_grad(inputs: &[Tensor<f64>], build: &LossBuilder, tol: f64) {
    let worst = finite_diff_check(inputs, build, 1e-4);
    assert!(worst < tol, "worst relative gradient error {worst} >= {tol}");
}
