//! Patch decomposition geometry, extraction, and reassembly.
//!
//! Origins along each axis are the same list for rows and columns. For a
//! `D`-node axis, patch size `p` and stride `s`, the axis holds
//! `n = floor((D - p) / s) + 1` origins (raised to the minimum needed to
//! cover the axis when `s` is close to `p`), spread evenly over `[0, D - p]`
//! so that the first patch starts at 0 and the last one ends on the field
//! edge. When `s` divides `D - p` the origins are exactly `0, s, 2s, ...`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field_data::Field;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchLayout {
    resolution: usize,
    patch_size: usize,
    stride: usize,
    axis_origins: Vec<usize>,
}

impl PatchLayout {
    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn patch_len(&self) -> usize {
        self.patch_size * self.patch_size
    }

    /// Origins along one axis.
    pub fn axis_origins(&self) -> &[usize] {
        &self.axis_origins
    }

    pub fn count(&self) -> usize {
        self.axis_origins.len() * self.axis_origins.len()
    }

    /// Top-left `(row, col)` corners in row-major order.
    pub fn origins(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.count());
        for &r in &self.axis_origins {
            for &c in &self.axis_origins {
                out.push((r, c));
            }
        }
        out
    }

    pub fn origin(&self, k: usize) -> (usize, usize) {
        let n = self.axis_origins.len();
        (self.axis_origins[k / n], self.axis_origins[k % n])
    }

    /// True when the patches tile the field without overlap.
    pub fn is_partition(&self) -> bool {
        self.axis_origins
            .iter()
            .enumerate()
            .all(|(i, &o)| o == i * self.patch_size)
            && self.axis_origins.len() * self.patch_size == self.resolution
    }

    /// Coordinates `c > 0` along an axis where one patch starts or ends.
    pub fn boundary_positions(&self) -> Vec<usize> {
        let mut b: Vec<usize> = self
            .axis_origins
            .iter()
            .flat_map(|&o| [o, o + self.patch_size])
            .filter(|&c| c > 0 && c < self.resolution)
            .collect();
        b.sort_unstable();
        b.dedup();
        b
    }
}

/// Builds the layout for a `D x D` field with patch size `p` and stride `s`.
pub fn make_layout(resolution: usize, patch_size: usize, stride: usize) -> Result<PatchLayout> {
    if patch_size == 0 || stride == 0 {
        return Err(Error::param("patch size and stride must be positive"));
    }
    if patch_size > resolution {
        return Err(Error::param(format!(
            "patch size {patch_size} exceeds field resolution {resolution}"
        )));
    }
    if stride > patch_size {
        return Err(Error::param(format!(
            "stride {stride} exceeds patch size {patch_size}; cells would be skipped"
        )));
    }
    let span = resolution - patch_size;
    let by_stride = span / stride + 1;
    let for_coverage = span.div_ceil(patch_size) + 1;
    let n = by_stride.max(for_coverage);
    let axis_origins = if n == 1 {
        vec![0]
    } else {
        let gaps = n - 1;
        (0..n).map(|i| (2 * i * span + gaps) / (2 * gaps)).collect()
    };
    Ok(PatchLayout {
        resolution,
        patch_size,
        stride,
        axis_origins,
    })
}

/// Patches of one field, vectorised row-major and stored back to back.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSet {
    layout: PatchLayout,
    data: Vec<f64>,
}

impl PatchSet {
    pub fn new(layout: PatchLayout, patches: Vec<Vec<f64>>) -> Result<Self> {
        if patches.len() != layout.count() {
            return Err(Error::param(format!(
                "layout has {} origins but {} patches were given",
                layout.count(),
                patches.len()
            )));
        }
        let len = layout.patch_len();
        let mut data = Vec::with_capacity(len * patches.len());
        for (k, p) in patches.iter().enumerate() {
            if p.len() != len {
                return Err(Error::param(format!("patch {k} has {} values, expected {len}", p.len())));
            }
            data.extend_from_slice(p);
        }
        Ok(Self { layout, data })
    }

    pub fn layout(&self) -> &PatchLayout {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.layout.count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn patch(&self, k: usize) -> &[f64] {
        let len = self.layout.patch_len();
        &self.data[k * len..(k + 1) * len]
    }

    pub fn patch_mut(&mut self, k: usize) -> &mut [f64] {
        let len = self.layout.patch_len();
        &mut self.data[k * len..(k + 1) * len]
    }
}

/// Copies the `p x p` block at `(row, col)` of `field` into `out`.
pub fn copy_patch(field: &Field, row: usize, col: usize, p: usize, out: &mut [f64]) {
    let d = field.resolution();
    let v = field.values();
    for i in 0..p {
        let src = (row + i) * d + col;
        out[i * p..(i + 1) * p].copy_from_slice(&v[src..src + p]);
    }
}

pub fn extract_patches(field: &Field, layout: &PatchLayout) -> Result<PatchSet> {
    field.check_resolution(layout.resolution)?;
    let len = layout.patch_len();
    let mut data = vec![0.0; len * layout.count()];
    for (k, (r, c)) in layout.origins().into_iter().enumerate() {
        copy_patch(field, r, c, layout.patch_size, &mut data[k * len..(k + 1) * len]);
    }
    Ok(PatchSet {
        layout: layout.clone(),
        data,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowMask {
    size: usize,
    weights: Vec<f64>,
}

impl WindowMask {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.size + j]
    }
}

/// One-dimensional taper `0.5 (1 - cos(2 pi n / (p + 1)))` for `n = 1..=p`.
pub fn hanning_1d(p: usize) -> Vec<f64> {
    (1..=p)
        .map(|n| 0.5 * (1.0 - (2.0 * PI * n as f64 / (p as f64 + 1.0)).cos()))
        .collect()
}

/// Outer product of two 1D Hanning tapers.
pub fn hanning_window(p: usize) -> Result<WindowMask> {
    if p < 2 {
        return Err(Error::param(format!("Hanning window needs p >= 2, got {p}")));
    }
    let h = hanning_1d(p);
    let mut weights = Vec::with_capacity(p * p);
    for hi in &h {
        for hj in &h {
            weights.push(hi * hj);
        }
    }
    Ok(WindowMask { size: p, weights })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum AssemblyMode {
    /// Direct placement; requires a non-overlapping layout.
    Mosaic,
    /// Window-weighted average of overlapping patches.
    Blend(WindowMask),
}

pub fn assemble_patches(patches: &PatchSet, mode: &AssemblyMode) -> Result<Field> {
    let layout = &patches.layout;
    let d = layout.resolution;
    let p = layout.patch_size;
    match mode {
        AssemblyMode::Mosaic => {
            if !layout.is_partition() {
                return Err(Error::param(format!(
                    "mosaic assembly needs non-overlapping patches tiling the field (p={p}, s={}, D={d})",
                    layout.stride
                )));
            }
            let mut out = Field::zeros(d);
            let v = out.values_mut();
            for (k, (r, c)) in layout.origins().into_iter().enumerate() {
                let patch = patches.patch(k);
                for i in 0..p {
                    let dst = (r + i) * d + c;
                    v[dst..dst + p].copy_from_slice(&patch[i * p..(i + 1) * p]);
                }
            }
            Ok(out)
        }
        AssemblyMode::Blend(window) => {
            if window.size != p {
                return Err(Error::param(format!(
                    "window size {} does not match patch size {p}",
                    window.size
                )));
            }
            let mut num = vec![0.0; d * d];
            let mut den = vec![0.0; d * d];
            for (k, (r, c)) in layout.origins().into_iter().enumerate() {
                let patch = patches.patch(k);
                for i in 0..p {
                    let row = (r + i) * d + c;
                    for j in 0..p {
                        let w = window.weights[i * p + j];
                        num[row + j] += w * patch[i * p + j];
                        den[row + j] += w;
                    }
                }
            }
            for (cell, (n, w)) in num.iter_mut().zip(&den).enumerate() {
                if *w <= 0.0 {
                    return Err(Error::Numeric(format!(
                        "cell ({}, {}) received zero blending weight",
                        cell / d,
                        cell % d
                    )));
                }
                *n /= w;
            }
            Field::new(d, num)
        }
    }
}
