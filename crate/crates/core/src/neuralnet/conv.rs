use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{glorot_fill, Network};
use crate::error::{Error, Result};
use crate::linalg::{gemm, Op};

/// Shape of one same-padded 2D convolution; weights are
/// `out_channels x in_channels x k x k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvLayer {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_size: usize,
}

impl ConvLayer {
    pub fn parameter_count(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel_size * self.kernel_size + self.out_channels
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel_size * self.kernel_size
    }
}

/// Stack of same-padded convolutions with ReLU between layers and a linear
/// final layer. Images are square, `side x side`, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Cnn {
    layers: Vec<ConvLayer>,
    offsets: Vec<usize>,
    params: Vec<f64>,
    side: usize,
}

impl Cnn {
    /// `channels = [in, hidden..., out]`, one kernel size for all layers.
    pub fn new(channels: &[usize], kernel_size: usize, side: usize, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(channels, kernel_size, side)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in 0..net.layers.len() {
            let layer = net.layers[l];
            let k2 = layer.kernel_size * layer.kernel_size;
            let nw = layer.out_channels * layer.patch_len();
            let off = net.offsets[l];
            glorot_fill(
                &mut rng,
                &mut net.params[off..off + nw],
                layer.in_channels * k2,
                layer.out_channels * k2,
            );
        }
        Ok(net)
    }

    pub fn zeros(channels: &[usize], kernel_size: usize, side: usize) -> Result<Self> {
        if channels.len() < 2 || channels.contains(&0) {
            return Err(Error::param(format!("invalid CNN channels {channels:?}")));
        }
        if kernel_size % 2 == 0 {
            return Err(Error::param(format!("kernel size must be odd, got {kernel_size}")));
        }
        if side == 0 {
            return Err(Error::param("image side must be positive"));
        }
        let layers: Vec<ConvLayer> = channels
            .windows(2)
            .map(|w| ConvLayer {
                in_channels: w[0],
                out_channels: w[1],
                kernel_size,
            })
            .collect();
        let mut offsets = Vec::new();
        let mut total = 0;
        for l in &layers {
            offsets.push(total);
            total += l.parameter_count();
        }
        Ok(Self {
            layers,
            offsets,
            params: vec![0.0; total],
            side,
        })
    }

    pub fn from_params(channels: &[usize], kernel_size: usize, side: usize, params: Vec<f64>) -> Result<Self> {
        let mut net = Self::zeros(channels, kernel_size, side)?;
        if params.len() != net.params.len() {
            return Err(Error::Format(format!(
                "CNN {channels:?} k={kernel_size} needs {} parameters, got {}",
                net.params.len(),
                params.len()
            )));
        }
        net.params = params;
        Ok(net)
    }

    pub fn layers(&self) -> &[ConvLayer] {
        &self.layers
    }

    pub fn channels(&self) -> Vec<usize> {
        let mut c = vec![self.layers[0].in_channels];
        c.extend(self.layers.iter().map(|l| l.out_channels));
        c
    }

    pub fn kernel_size(&self) -> usize {
        self.layers[0].kernel_size
    }

    pub fn side(&self) -> usize {
        self.side
    }

    /// Same parameters, different working image size.
    pub fn with_side(&self, side: usize) -> Self {
        Self { side, ..self.clone() }
    }

    fn weights(&self, l: usize) -> &[f64] {
        let n = self.layers[l].out_channels * self.layers[l].patch_len();
        &self.params[self.offsets[l]..self.offsets[l] + n]
    }

    fn bias(&self, l: usize) -> &[f64] {
        let n = self.layers[l].out_channels * self.layers[l].patch_len();
        let start = self.offsets[l] + n;
        &self.params[start..start + self.layers[l].out_channels]
    }

    /// Runs one `side x side` image with the given channel count.
    pub fn forward_image(&self, image: &[f64], side: usize) -> Result<Vec<f64>> {
        let want = self.layers[0].in_channels * side * side;
        if image.len() != want {
            return Err(Error::param(format!(
                "CNN expects {want} input values for a {side}x{side} image, got {}",
                image.len()
            )));
        }
        Ok(self.with_side(side).forward_one(image).pop().unwrap())
    }

    /// Pre-activations of every layer for one image.
    fn forward_one(&self, image: &[f64]) -> Vec<Vec<f64>> {
        let hw = self.side * self.side;
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut act = image.to_vec();
        let mut cols = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            im2col(&act, layer.in_channels, self.side, layer.kernel_size, &mut cols);
            let mut z = vec![0.0; layer.out_channels * hw];
            for (c, row) in z.chunks_exact_mut(hw).enumerate() {
                row.fill(self.bias(l)[c]);
            }
            gemm(layer.out_channels, layer.patch_len(), hw, 1.0, self.weights(l), Op::N, &cols, Op::N, 1.0, &mut z);
            if l + 1 < self.layers.len() {
                act = z.iter().map(|v| v.max(0.0)).collect();
            }
            pre.push(z);
        }
        pre
    }
}

/// Unfolds a `channels x side x side` image into a
/// `(channels k k) x (side side)` matrix with zero padding.
fn im2col(image: &[f64], channels: usize, side: usize, k: usize, cols: &mut Vec<f64>) {
    let hw = side * side;
    let pad = (k / 2) as isize;
    cols.clear();
    cols.resize(channels * k * k * hw, 0.0);
    for c in 0..channels {
        let plane = &image[c * hw..(c + 1) * hw];
        for ki in 0..k {
            for kj in 0..k {
                let row = ((c * k + ki) * k + kj) * hw;
                let dy = ki as isize - pad;
                let dx = kj as isize - pad;
                for y in 0..side {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= side as isize {
                        continue;
                    }
                    let x0 = (-dx).max(0) as usize;
                    let x1 = (side as isize - dx).min(side as isize) as usize;
                    if x0 >= x1 {
                        continue;
                    }
                    let src = sy as usize * side;
                    let dst = row + y * side;
                    for x in x0..x1 {
                        cols[dst + x] = plane[src + (x as isize + dx) as usize];
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the image.
fn col2im(cols: &[f64], channels: usize, side: usize, k: usize, image: &mut [f64]) {
    let hw = side * side;
    let pad = (k / 2) as isize;
    image.fill(0.0);
    for c in 0..channels {
        for ki in 0..k {
            for kj in 0..k {
                let row = ((c * k + ki) * k + kj) * hw;
                let dy = ki as isize - pad;
                let dx = kj as isize - pad;
                for y in 0..side {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= side as isize {
                        continue;
                    }
                    let x0 = (-dx).max(0) as usize;
                    let x1 = (side as isize - dx).min(side as isize) as usize;
                    let dst = c * hw + sy as usize * side;
                    for x in x0..x1 {
                        image[dst + (x as isize + dx) as usize] += cols[row + y * side + x];
                    }
                }
            }
        }
    }
}

impl Network for Cnn {
    fn input_len(&self) -> usize {
        self.layers[0].in_channels * self.side * self.side
    }

    fn output_len(&self) -> usize {
        self.layers.last().unwrap().out_channels * self.side * self.side
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn forward_batch(&self, inputs: &[f64], n: usize) -> Vec<f64> {
        assert_eq!(inputs.len(), n * self.input_len(), "CNN batch input shape");
        inputs
            .chunks_exact(self.input_len())
            .flat_map(|img| self.forward_one(img).pop().unwrap())
            .collect()
    }

    fn data_loss_grad(&self, inputs: &[f64], targets: &[f64], n: usize) -> (f64, Vec<f64>) {
        assert_eq!(inputs.len(), n * self.input_len(), "CNN batch input shape");
        assert_eq!(targets.len(), n * self.output_len(), "CNN batch target shape");
        let hw = self.side * self.side;
        let count = targets.len() as f64;
        let mut loss = 0.0;
        let mut grad = vec![0.0; self.params.len()];
        let mut cols = Vec::new();
        for (img, tgt) in inputs
            .chunks_exact(self.input_len())
            .zip(targets.chunks_exact(self.output_len()))
        {
            let pre = self.forward_one(img);
            let mut delta: Vec<f64> = pre
                .last()
                .unwrap()
                .iter()
                .zip(tgt)
                .map(|(y, t)| {
                    let r = y - t;
                    loss += r * r;
                    2.0 * r / count
                })
                .collect();
            for l in (0..self.layers.len()).rev() {
                let layer = self.layers[l];
                let input: Vec<f64> = if l == 0 {
                    img.to_vec()
                } else {
                    pre[l - 1].iter().map(|v| v.max(0.0)).collect()
                };
                im2col(&input, layer.in_channels, self.side, layer.kernel_size, &mut cols);
                let off = self.offsets[l];
                let nw = layer.out_channels * layer.patch_len();
                let (gw, rest) = grad[off..].split_at_mut(nw);
                gemm(layer.out_channels, hw, layer.patch_len(), 1.0, &delta, Op::N, &cols, Op::T, 1.0, gw);
                for (g, row) in rest[..layer.out_channels].iter_mut().zip(delta.chunks_exact(hw)) {
                    *g += row.iter().sum::<f64>();
                }
                if l > 0 {
                    let mut dcols = vec![0.0; layer.patch_len() * hw];
                    gemm(layer.patch_len(), layer.out_channels, hw, 1.0, self.weights(l), Op::T, &delta, Op::N, 0.0, &mut dcols);
                    let mut back = vec![0.0; layer.in_channels * hw];
                    col2im(&dcols, layer.in_channels, self.side, layer.kernel_size, &mut back);
                    for (b, z) in back.iter_mut().zip(&pre[l - 1]) {
                        if *z <= 0.0 {
                            *b = 0.0;
                        }
                    }
                    delta = back;
                }
            }
        }
        (loss / count, grad)
    }
}
