//! Minimal dense/convolutional networks with analytic gradients, Adam,
//! and a reduce-on-plateau learning-rate schedule.
//!
//! Parameters of every network live in one flat buffer so that optimisers,
//! finite-difference checks and serialisation all see the same vector.

mod conv;
mod dense;
mod optim;
mod train;

pub use conv::{Cnn, ConvLayer};
pub use dense::{DenseLayer, Mlp};
pub use optim::{Adam, PlateauScheduler};
pub use train::{evaluate_mse, train, EpochRecord, TrainConfig, TrainHistory};

use rand::Rng;

/// A trainable map from fixed-length input samples to fixed-length outputs.
pub trait Network: Clone {
    fn input_len(&self) -> usize;
    fn output_len(&self) -> usize;
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];

    /// Forward pass over `n` samples stored back to back.
    fn forward_batch(&self, inputs: &[f64], n: usize) -> Vec<f64>;

    /// Data term `mean((y - t)^2)` over all `n * output_len` entries and its
    /// gradient with respect to the parameters (penalty excluded).
    fn data_loss_grad(&self, inputs: &[f64], targets: &[f64], n: usize) -> (f64, Vec<f64>);

    /// `mse + l2 / 2 * ||theta||^2` and its exact gradient. The penalty
    /// gradient is `l2 * theta`, the coupled weight-decay convention of Adam.
    fn loss_grad(&self, inputs: &[f64], targets: &[f64], n: usize, l2: f64) -> (f64, Vec<f64>) {
        let (mut loss, mut grad) = self.data_loss_grad(inputs, targets, n);
        if l2 != 0.0 {
            let p = self.params();
            loss += 0.5 * l2 * p.iter().map(|v| v * v).sum::<f64>();
            for (g, v) in grad.iter_mut().zip(p) {
                *g += l2 * v;
            }
        }
        (loss, grad)
    }
}

pub fn count_parameters<N: Network>(net: &N) -> usize {
    net.params().len()
}

/// Glorot-uniform fill: `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`.
pub(crate) fn glorot_fill(rng: &mut impl Rng, out: &mut [f64], fan_in: usize, fan_out: usize) {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    for v in out {
        *v = rng.random_range(-a..a);
    }
}
