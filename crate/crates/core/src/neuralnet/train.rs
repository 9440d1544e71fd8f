use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Adam, Network, PlateauScheduler};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub initial_lr: f64,
    pub l2_penalty: f64,
    pub epochs: usize,
    pub plateau_patience: usize,
    pub plateau_factor: f64,
    pub min_lr: f64,
    pub seed: u64,
    pub validation_fraction: f64,
}

impl Default for TrainConfig {
    /// Batch 32, lr 1e-3, L2 1e-4, 500 epochs, plateau patience 30.
    fn default() -> Self {
        Self {
            batch_size: 32,
            initial_lr: 1e-3,
            l2_penalty: 1e-4,
            epochs: 500,
            plateau_patience: 30,
            plateau_factor: 0.1,
            min_lr: 1e-6,
            seed: 0,
            validation_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::param("batch_size must be at least 1"));
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return Err(Error::param(format!(
                "plateau_factor must lie in (0, 1), got {}",
                self.plateau_factor
            )));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::param(format!(
                "validation_fraction must lie in [0, 1), got {}",
                self.validation_fraction
            )));
        }
        if !(self.initial_lr > 0.0) || self.min_lr < 0.0 || self.l2_penalty < 0.0 {
            return Err(Error::param("learning rates must be positive and l2_penalty non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: f64,
    pub lr: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub config: TrainConfig,
    /// Data loss on the training split before the first update.
    pub initial_train_loss: f64,
    /// Data loss on the training split with the returned parameters.
    pub final_train_loss: f64,
    pub best_epoch: Option<usize>,
    pub epochs: Vec<EpochRecord>,
}

/// Mean squared error of `net` on `n` samples, evaluated in chunks.
pub fn evaluate_mse<N: Network>(net: &N, inputs: &[f64], targets: &[f64], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let (il, ol) = (net.input_len(), net.output_len());
    let mut acc = 0.0;
    let chunk = 256;
    let mut start = 0;
    while start < n {
        let end = (start + chunk).min(n);
        let y = net.forward_batch(&inputs[start * il..end * il], end - start);
        acc += y
            .iter()
            .zip(&targets[start * ol..end * ol])
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();
        start = end;
    }
    acc / (n * ol) as f64
}

fn gather(src: &[f64], width: usize, idx: &[usize]) -> Vec<f64> {
    let mut out = Vec::with_capacity(idx.len() * width);
    for &i in idx {
        out.extend_from_slice(&src[i * width..(i + 1) * width]);
    }
    out
}

/// Mini-batch Adam with a plateau schedule; returns the parameters with the
/// best validation loss (training loss when no validation split is carved).
pub fn train<N: Network>(
    mut net: N,
    inputs: &[f64],
    targets: &[f64],
    n: usize,
    config: &TrainConfig,
) -> Result<(N, TrainHistory)> {
    config.validate()?;
    let (il, ol) = (net.input_len(), net.output_len());
    if inputs.len() != n * il || targets.len() != n * ol {
        return Err(Error::param(format!(
            "training data shapes ({} inputs, {} targets) do not match {n} samples of {il} -> {ol}",
            inputs.len(),
            targets.len()
        )));
    }
    if n == 0 {
        return Err(Error::param("no training samples"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut n_val = (n as f64 * config.validation_fraction).round() as usize;
    if config.validation_fraction > 0.0 && n >= 2 {
        n_val = n_val.clamp(1, n - 1);
    }
    let val_idx = order.split_off(n - n_val);
    let mut train_idx = order;
    let (val_x, val_t) = (gather(inputs, il, &val_idx), gather(targets, ol, &val_idx));
    let (tr_x, tr_t) = (gather(inputs, il, &train_idx), gather(targets, ol, &train_idx));
    let n_train = train_idx.len();

    let initial_train_loss = evaluate_mse(&net, &tr_x, &tr_t, n_train);
    let mut history = TrainHistory {
        config: config.clone(),
        initial_train_loss,
        final_train_loss: initial_train_loss,
        best_epoch: None,
        epochs: Vec::new(),
    };
    if config.epochs == 0 {
        return Ok((net, history));
    }

    let mut adam = Adam::new(net.params().len());
    let mut sched = PlateauScheduler::new(
        config.initial_lr,
        config.plateau_factor,
        config.plateau_patience,
        config.min_lr,
    );
    let mut best_loss = f64::INFINITY;
    let mut best_params = net.params().to_vec();

    for epoch in 0..config.epochs {
        let start = Instant::now();
        let lr = sched.lr();
        train_idx.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in train_idx.chunks(config.batch_size) {
            let bx = gather(inputs, il, batch);
            let bt = gather(targets, ol, batch);
            let (loss, grad) = net.loss_grad(&bx, &bt, batch.len(), config.l2_penalty);
            if !loss.is_finite() {
                return Err(Error::TrainingDiverged { epoch });
            }
            epoch_loss += loss * batch.len() as f64;
            adam.step(net.params_mut(), &grad, lr);
        }
        epoch_loss /= n_train as f64;
        let val_loss = if n_val > 0 {
            evaluate_mse(&net, &val_x, &val_t, n_val)
        } else {
            evaluate_mse(&net, &tr_x, &tr_t, n_train)
        };
        if !val_loss.is_finite() {
            return Err(Error::TrainingDiverged { epoch });
        }
        if val_loss < best_loss {
            best_loss = val_loss;
            best_params.copy_from_slice(net.params());
            history.best_epoch = Some(epoch);
        }
        sched.step(val_loss);
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: epoch_loss,
            validation_loss: val_loss,
            lr,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    net.params_mut().copy_from_slice(&best_params);
    history.final_train_loss = evaluate_mse(&net, &tr_x, &tr_t, n_train);
    Ok((net, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuralnet::Mlp;

    #[test]
    fn zero_epochs_returns_initial_model() {
        let net = Mlp::new(&[1, 1], 3).unwrap();
        let x = [0.0, 1.0, 2.0];
        let y = [1.0, 4.0, 7.0];
        let cfg = TrainConfig { epochs: 0, ..Default::default() };
        let (out, hist) = train(net.clone(), &x, &y, 3, &cfg).unwrap();
        assert_eq!(out, net);
        assert!(hist.epochs.is_empty());
    }

    #[test]
    fn rejects_bad_config() {
        let net = Mlp::new(&[1, 1], 3).unwrap();
        for cfg in [
            TrainConfig { batch_size: 0, ..Default::default() },
            TrainConfig { plateau_factor: 1.0, ..Default::default() },
            TrainConfig { validation_fraction: 1.0, ..Default::default() },
        ] {
            assert!(train(net.clone(), &[0.0], &[0.0], 1, &cfg).is_err());
        }
    }

    #[test]
    fn diverging_training_names_epoch() {
        let net = Mlp::new(&[1, 8, 1], 1).unwrap();
        let x = [1.0, 2.0];
        let y = [f64::MAX, -f64::MAX];
        let cfg = TrainConfig { epochs: 3, validation_fraction: 0.0, l2_penalty: 0.0, ..Default::default() };
        assert!(matches!(
            train(net, &x, &y, 2, &cfg),
            Err(Error::TrainingDiverged { epoch: 0 })
        ));
    }
}
