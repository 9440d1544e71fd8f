//! Gaussian random field sampler on a Dirichlet sine basis.
//!
//! A field is `f(x, y) = sum_k c_k sigma_k sin(pi k1 x) sin(pi k2 y)` over
//! the modes `k1, k2 = 1..=D-2` that are resolvable on the interior nodes,
//! with `c_k ~ N(0, 1)` and
//! `sigma_k = tau^(alpha-1) * (pi^2 |k|^2 + tau^2)^(-alpha/2)`.
//! Every sample vanishes on the boundary ring.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::field::Field;
use crate::error::{Error, Result};
use crate::linalg::{gemm, Op};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrfParams {
    pub alpha: f64,
    pub tau: f64,
    pub seed: u64,
}

impl Default for GrfParams {
    fn default() -> Self {
        Self {
            alpha: 3.0,
            tau: 3.0,
            seed: 0,
        }
    }
}

impl GrfParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::param(format!("alpha must be > 0, got {}", self.alpha)));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::param(format!("tau must be > 0, got {}", self.tau)));
        }
        Ok(())
    }

    /// Spectral amplitude of sine mode `(k1, k2)`.
    pub fn mode_amplitude(&self, k1: usize, k2: usize) -> f64 {
        let k2sum = (k1 * k1 + k2 * k2) as f64;
        self.tau.powf(self.alpha - 1.0) * (PI * PI * k2sum + self.tau * self.tau).powf(-self.alpha / 2.0)
    }
}

/// Number of sine modes per axis resolvable on a `D`-node grid.
pub fn modes_per_axis(resolution: usize) -> usize {
    resolution.saturating_sub(2)
}

fn check_resolution(resolution: usize) -> Result<()> {
    if resolution < 4 {
        return Err(Error::param(format!(
            "GRF resolution must be at least 4, got {resolution}"
        )));
    }
    Ok(())
}

/// Draws one field. Deterministic in `(params.seed, sample_index)`.
pub fn sample_grf(params: &GrfParams, resolution: usize, sample_index: u64) -> Result<Field> {
    params.validate()?;
    check_resolution(resolution)?;
    let k = modes_per_axis(resolution);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    rng.set_stream(sample_index);
    let draws: Vec<f64> = (0..k * k).map(|_| rng.sample(StandardNormal)).collect();
    grf_from_coefficients(params, resolution, &draws)
}

/// Synthesises a field from explicit standard-normal draws, ordered
/// row-major over `(k2, k1)` with both indices starting at mode 1.
pub fn grf_from_coefficients(params: &GrfParams, resolution: usize, draws: &[f64]) -> Result<Field> {
    params.validate()?;
    check_resolution(resolution)?;
    let k = modes_per_axis(resolution);
    if draws.len() != k * k {
        return Err(Error::param(format!(
            "expected {} spectral draws for resolution {resolution}, got {}",
            k * k,
            draws.len()
        )));
    }
    let mut amps = vec![0.0; k * k];
    for k2 in 0..k {
        for k1 in 0..k {
            amps[k2 * k + k1] = draws[k2 * k + k1] * params.mode_amplitude(k1 + 1, k2 + 1);
        }
    }
    let basis = sine_basis(resolution);
    // F = S A S^T with S[i][m] = sin(pi (m+1) x_i)
    let mut tmp = vec![0.0; resolution * k];
    gemm(resolution, k, k, 1.0, &basis, Op::N, &amps, Op::N, 0.0, &mut tmp);
    let mut values = vec![0.0; resolution * resolution];
    gemm(resolution, k, resolution, 1.0, &tmp, Op::N, &basis, Op::T, 0.0, &mut values);
    // sin(pi m) is not exactly zero in floating point
    for i in 0..resolution {
        values[i] = 0.0;
        values[(resolution - 1) * resolution + i] = 0.0;
        values[i * resolution] = 0.0;
        values[i * resolution + resolution - 1] = 0.0;
    }
    Field::new(resolution, values)
}

/// `D x (D-2)` matrix of sine modes evaluated on the grid nodes.
fn sine_basis(resolution: usize) -> Vec<f64> {
    let k = modes_per_axis(resolution);
    let h = 1.0 / (resolution as f64 - 1.0);
    let mut s = vec![0.0; resolution * k];
    for i in 0..resolution {
        for m in 0..k {
            s[i * k + m] = (PI * (m + 1) as f64 * i as f64 * h).sin();
        }
    }
    s
}
