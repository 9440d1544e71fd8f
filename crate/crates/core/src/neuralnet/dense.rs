use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{glorot_fill, Network};
use crate::error::{Error, Result};
use crate::linalg::{gemm, Op};

/// Shape of one fully connected layer; weights are `out_dim x in_dim`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub in_dim: usize,
    pub out_dim: usize,
}

impl DenseLayer {
    pub fn parameter_count(&self) -> usize {
        self.in_dim * self.out_dim + self.out_dim
    }
}

/// Multilayer perceptron with ReLU between layers and a linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<DenseLayer>,
    offsets: Vec<usize>,
    params: Vec<f64>,
}

impl Mlp {
    /// `widths = [input, hidden..., output]`, Glorot-initialised, zero biases.
    pub fn new(widths: &[usize], seed: u64) -> Result<Self> {
        let mut net = Self::zeros(widths)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in 0..net.layers.len() {
            let DenseLayer { in_dim, out_dim } = net.layers[l];
            let off = net.offsets[l];
            glorot_fill(&mut rng, &mut net.params[off..off + in_dim * out_dim], in_dim, out_dim);
        }
        Ok(net)
    }

    pub fn zeros(widths: &[usize]) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::param(format!("invalid MLP widths {widths:?}")));
        }
        let layers: Vec<DenseLayer> = widths
            .windows(2)
            .map(|w| DenseLayer {
                in_dim: w[0],
                out_dim: w[1],
            })
            .collect();
        let mut offsets = Vec::with_capacity(layers.len());
        let mut total = 0;
        for l in &layers {
            offsets.push(total);
            total += l.parameter_count();
        }
        Ok(Self {
            layers,
            offsets,
            params: vec![0.0; total],
        })
    }

    pub fn from_params(widths: &[usize], params: Vec<f64>) -> Result<Self> {
        let mut net = Self::zeros(widths)?;
        if params.len() != net.params.len() {
            return Err(Error::Format(format!(
                "MLP {widths:?} needs {} parameters, got {}",
                net.params.len(),
                params.len()
            )));
        }
        net.params = params;
        Ok(net)
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.layers[0].in_dim];
        w.extend(self.layers.iter().map(|l| l.out_dim));
        w
    }

    pub fn weights(&self, l: usize) -> &[f64] {
        let DenseLayer { in_dim, out_dim } = self.layers[l];
        &self.params[self.offsets[l]..self.offsets[l] + in_dim * out_dim]
    }

    pub fn bias(&self, l: usize) -> &[f64] {
        let DenseLayer { in_dim, out_dim } = self.layers[l];
        let start = self.offsets[l] + in_dim * out_dim;
        &self.params[start..start + out_dim]
    }

    /// Single-sample forward pass with shape checking.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_len() {
            return Err(Error::param(format!(
                "MLP expects {} inputs, got {}",
                self.input_len(),
                x.len()
            )));
        }
        Ok(self.forward_batch(x, 1))
    }

    /// Pre-activations of every layer for a batch.
    fn forward_cached(&self, inputs: &[f64], n: usize) -> Vec<Vec<f64>> {
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut act: Vec<f64> = inputs.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = vec![0.0; n * layer.out_dim];
            for row in z.chunks_exact_mut(layer.out_dim) {
                row.copy_from_slice(self.bias(l));
            }
            gemm(n, layer.in_dim, layer.out_dim, 1.0, &act, Op::N, self.weights(l), Op::T, 1.0, &mut z);
            if l + 1 < self.layers.len() {
                act = z.iter().map(|v| v.max(0.0)).collect();
            }
            pre.push(z);
        }
        pre
    }
}

impl Network for Mlp {
    fn input_len(&self) -> usize {
        self.layers[0].in_dim
    }

    fn output_len(&self) -> usize {
        self.layers.last().unwrap().out_dim
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn forward_batch(&self, inputs: &[f64], n: usize) -> Vec<f64> {
        assert_eq!(inputs.len(), n * self.input_len(), "MLP batch input shape");
        self.forward_cached(inputs, n).pop().unwrap()
    }

    fn data_loss_grad(&self, inputs: &[f64], targets: &[f64], n: usize) -> (f64, Vec<f64>) {
        assert_eq!(inputs.len(), n * self.input_len(), "MLP batch input shape");
        assert_eq!(targets.len(), n * self.output_len(), "MLP batch target shape");
        let pre = self.forward_cached(inputs, n);
        let out = pre.last().unwrap();
        let count = targets.len() as f64;
        let mut loss = 0.0;
        let mut delta: Vec<f64> = out
            .iter()
            .zip(targets)
            .map(|(y, t)| {
                let r = y - t;
                loss += r * r;
                2.0 * r / count
            })
            .collect();
        loss /= count;

        let mut grad = vec![0.0; self.params.len()];
        for l in (0..self.layers.len()).rev() {
            let DenseLayer { in_dim, out_dim } = self.layers[l];
            let act_prev: Vec<f64> = if l == 0 {
                inputs.to_vec()
            } else {
                pre[l - 1].iter().map(|v| v.max(0.0)).collect()
            };
            let off = self.offsets[l];
            let (gw, rest) = grad[off..].split_at_mut(in_dim * out_dim);
            gemm(out_dim, n, in_dim, 1.0, &delta, Op::T, &act_prev, Op::N, 0.0, gw);
            let gb = &mut rest[..out_dim];
            for row in delta.chunks_exact(out_dim) {
                for (g, d) in gb.iter_mut().zip(row) {
                    *g += d;
                }
            }
            if l > 0 {
                let mut back = vec![0.0; n * in_dim];
                gemm(n, out_dim, in_dim, 1.0, &delta, Op::N, self.weights(l), Op::N, 0.0, &mut back);
                for (b, z) in back.iter_mut().zip(&pre[l - 1]) {
                    if *z <= 0.0 {
                        *b = 0.0;
                    }
                }
                delta = back;
            }
        }
        (loss, grad)
    }
}
