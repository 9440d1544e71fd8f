//! Truncated PCA bases fitted through the Gram matrix of the centred data,
//! globally or independently per patch origin.
//!
//! For an `m x d` centred matrix `X` the smaller of `X X^T` (`m x m`) and
//! `X^T X` (`d x d`) is diagonalised, so the cost follows
//! `O(min(m d^2, m^2 d))`. Components are stored as rows.

use std::time::Instant;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field_data::Field;
use crate::linalg::{dot, gemm, Op};
use crate::patching::{assemble_patches, copy_patch, AssemblyMode, PatchLayout, PatchSet};

/// How many components to keep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// Smallest `k` whose retained squared-singular-value fraction reaches the target.
    VarianceTarget(f64),
    FixedK(usize),
}

impl Default for Selection {
    fn default() -> Self {
        Selection::VarianceTarget(0.99)
    }
}

impl Selection {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Selection::VarianceTarget(t) if !(t > 0.0 && t <= 1.0) => {
                Err(Error::param(format!("variance target must lie in (0, 1], got {t}")))
            }
            Selection::FixedK(0) => Err(Error::param("fixed component count must be positive")),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaBasis {
    dim: usize,
    mean: Vec<f64>,
    /// `k x dim`, row-major, orthonormal rows.
    components: Vec<f64>,
    singular_values: Vec<f64>,
    /// Squared Frobenius norm of the centred training matrix.
    total_variance: f64,
    variance_ratio: f64,
}

impl PcaBasis {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn k(&self) -> usize {
        self.singular_values.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn components(&self) -> &[f64] {
        &self.components
    }

    pub fn component(&self, i: usize) -> &[f64] {
        &self.components[i * self.dim..(i + 1) * self.dim]
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    pub fn total_variance(&self) -> f64 {
        self.total_variance
    }

    pub fn variance_ratio(&self) -> f64 {
        self.variance_ratio
    }

    /// Reassembles a basis from stored parts, checking shapes.
    pub fn from_parts(
        mean: Vec<f64>,
        components: Vec<f64>,
        singular_values: Vec<f64>,
        total_variance: f64,
        variance_ratio: f64,
    ) -> Result<Self> {
        let dim = mean.len();
        let k = singular_values.len();
        if dim == 0 || k == 0 || components.len() != k * dim {
            return Err(Error::Format(format!(
                "basis parts inconsistent: dim {dim}, k {k}, {} component values",
                components.len()
            )));
        }
        Ok(Self {
            dim,
            mean,
            components,
            singular_values,
            total_variance,
            variance_ratio,
        })
    }

    /// `components * (x - mean)`.
    pub fn encode(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_len(x.len(), self.dim, "input")?;
        let centred: Vec<f64> = x.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        Ok((0..self.k()).map(|i| dot(self.component(i), &centred)).collect())
    }

    /// `mean + components^T * z`.
    pub fn decode(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check_len(z.len(), self.k(), "code")?;
        let mut out = self.mean.clone();
        for (i, &zi) in z.iter().enumerate() {
            if zi != 0.0 {
                for (o, c) in out.iter_mut().zip(self.component(i)) {
                    *o += zi * c;
                }
            }
        }
        Ok(out)
    }

    /// Encodes `rows` samples of length `dim` at once; returns `rows x k`.
    pub fn encode_batch(&self, data: &[f64], rows: usize) -> Result<Vec<f64>> {
        self.check_len(data.len(), rows * self.dim, "batch")?;
        let mut centred = data.to_vec();
        for row in centred.chunks_exact_mut(self.dim) {
            for (v, m) in row.iter_mut().zip(&self.mean) {
                *v -= m;
            }
        }
        let mut out = vec![0.0; rows * self.k()];
        gemm(rows, self.dim, self.k(), 1.0, &centred, Op::N, &self.components, Op::T, 0.0, &mut out);
        Ok(out)
    }

    fn check_len(&self, got: usize, want: usize, what: &str) -> Result<()> {
        if got != want {
            return Err(Error::param(format!("{what} length {got} does not match basis ({want})")));
        }
        Ok(())
    }
}

/// Fits a basis to `rows x cols` row-major samples.
pub fn fit_pca(samples: &[f64], rows: usize, cols: usize, selection: Selection) -> Result<PcaBasis> {
    fit_pca_owned(samples.to_vec(), rows, cols, selection)
}

/// As [`fit_pca`], centring the given buffer in place.
pub fn fit_pca_owned(mut x: Vec<f64>, m: usize, d: usize, selection: Selection) -> Result<PcaBasis> {
    selection.validate()?;
    if m < 2 {
        return Err(Error::param(format!("PCA needs at least 2 samples, got {m}")));
    }
    if d == 0 {
        return Err(Error::param("PCA sample dimension must be positive"));
    }
    if x.len() != m * d {
        return Err(Error::param(format!("expected {} values for {m} x {d}, got {}", m * d, x.len())));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("PCA input contains non-finite values".into()));
    }

    let mut mean = vec![0.0; d];
    for row in x.chunks_exact(d) {
        for (mu, v) in mean.iter_mut().zip(row) {
            *mu += v;
        }
    }
    mean.iter_mut().for_each(|v| *v /= m as f64);
    let raw_energy: f64 = x.iter().map(|v| v * v).sum();
    for row in x.chunks_exact_mut(d) {
        for (v, mu) in row.iter_mut().zip(&mean) {
            *v -= mu;
        }
    }
    let total: f64 = x.iter().map(|v| v * v).sum();

    // identical samples leave only rounding noise after centring
    let noise_floor = (64.0 * f64::EPSILON).powi(2) * raw_energy;
    if total <= noise_floor {
        return Ok(degenerate_basis(mean));
    }

    let small_side = m.min(d);
    let mut gram = vec![0.0; small_side * small_side];
    if m <= d {
        gemm(m, d, m, 1.0, &x, Op::N, &x, Op::T, 0.0, &mut gram);
    } else {
        gemm(d, m, d, 1.0, &x, Op::T, &x, Op::N, 0.0, &mut gram);
    }
    let (eigvals, eigvecs) = sorted_eigen(small_side, gram)?;

    let lambda_max = eigvals[0].max(0.0);
    let cutoff = lambda_max * small_side as f64 * f64::EPSILON * 16.0;
    let rank = eigvals.iter().take_while(|&&l| l > cutoff).count().max(1);
    let cap = rank.min(m - 1).min(d).max(1);

    let k = match selection {
        Selection::FixedK(k) => k.min(cap),
        Selection::VarianceTarget(t) => {
            let goal = t * total;
            let mut acc = 0.0;
            let mut k = cap;
            for (i, &l) in eigvals.iter().take(cap).enumerate() {
                acc += l.max(0.0);
                if acc >= goal {
                    k = i + 1;
                    break;
                }
            }
            k
        }
    };

    let singular_values: Vec<f64> = eigvals[..k].iter().map(|l| l.max(0.0).sqrt()).collect();
    let mut components = vec![0.0; k * d];
    if m <= d {
        // v_i = X^T u_i / sigma_i
        gemm(k, m, d, 1.0, &eigvecs[..k * m], Op::N, &x, Op::N, 0.0, &mut components);
        for (row, s) in components.chunks_exact_mut(d).zip(&singular_values) {
            row.iter_mut().for_each(|v| *v /= s);
        }
    } else {
        components.copy_from_slice(&eigvecs[..k * d]);
    }
    reorthonormalize(&mut components, d)?;
    canonicalize_signs(&mut components, d);

    let retained: f64 = singular_values.iter().map(|s| s * s).sum();
    Ok(PcaBasis {
        dim: d,
        mean,
        components,
        singular_values,
        total_variance: total,
        variance_ratio: (retained / total).min(1.0),
    })
}

fn degenerate_basis(mean: Vec<f64>) -> PcaBasis {
    let d = mean.len();
    let mut components = vec![0.0; d];
    components[0] = 1.0;
    PcaBasis {
        dim: d,
        mean,
        components,
        singular_values: vec![0.0],
        total_variance: 0.0,
        variance_ratio: 1.0,
    }
}

/// Eigenpairs of a symmetric matrix, eigenvalues descending; eigenvectors
/// returned as rows of an `n x n` row-major buffer.
fn sorted_eigen(n: usize, gram: Vec<f64>) -> Result<(Vec<f64>, Vec<f64>)> {
    let mat = DMatrix::from_row_slice(n, n, &gram);
    drop(gram);
    let eig = SymmetricEigen::try_new(mat, f64::EPSILON, 0)
        .ok_or_else(|| Error::Numeric("symmetric eigensolver did not converge".into()))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = vec![0.0; n * n];
    for (row, &i) in order.iter().enumerate() {
        let col = eig.eigenvectors.column(i);
        vectors[row * n..(row + 1) * n].copy_from_slice(col.as_slice());
    }
    Ok((values, vectors))
}

/// One modified Gram-Schmidt pass over the rows.
fn reorthonormalize(rows: &mut [f64], d: usize) -> Result<()> {
    let k = rows.len() / d;
    for i in 0..k {
        let (done, rest) = rows.split_at_mut(i * d);
        let row = &mut rest[..d];
        for j in 0..i {
            let prev = &done[j * d..(j + 1) * d];
            let proj = dot(prev, row);
            for (r, p) in row.iter_mut().zip(prev) {
                *r -= proj * p;
            }
        }
        let n = dot(row, row).sqrt();
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::Numeric(format!("component {i} collapsed during re-orthonormalisation")));
        }
        row.iter_mut().for_each(|v| *v /= n);
    }
    Ok(())
}

/// Flips each row so its largest-magnitude entry is positive.
fn canonicalize_signs(rows: &mut [f64], d: usize) {
    for row in rows.chunks_exact_mut(d) {
        let mut best = 0.0f64;
        for &v in row.iter() {
            if v.abs() > best.abs() {
                best = v;
            }
        }
        if best < 0.0 {
            row.iter_mut().for_each(|v| *v = -*v);
        }
    }
}

/// Flattens whole fields into an `m x D^2` matrix.
pub fn field_matrix(fields: &[&Field]) -> Result<(Vec<f64>, usize, usize)> {
    let first = fields.first().ok_or_else(|| Error::param("no fields given"))?;
    let d = first.len();
    let mut out = Vec::with_capacity(fields.len() * d);
    for (i, f) in fields.iter().enumerate() {
        f.check_resolution(first.resolution()).map_err(|e| e.at_sample(i))?;
        out.extend_from_slice(f.values());
    }
    Ok((out, fields.len(), d))
}

/// Collects the patch at origin `k` across all fields into an `m x p^2` matrix.
pub fn origin_matrix(fields: &[&Field], layout: &PatchLayout, k: usize) -> Vec<f64> {
    let (r, c) = layout.origin(k);
    let p = layout.patch_size();
    let len = layout.patch_len();
    let mut out = vec![0.0; fields.len() * len];
    for (i, f) in fields.iter().enumerate() {
        copy_patch(f, r, c, p, &mut out[i * len..(i + 1) * len]);
    }
    out
}

pub fn fit_global(fields: &[&Field], selection: Selection) -> Result<PcaBasis> {
    let (x, m, d) = field_matrix(fields)?;
    fit_pca_owned(x, m, d, selection)
}

/// One basis per patch origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchBasisBank {
    layout: PatchLayout,
    bases: Vec<PcaBasis>,
}

impl PatchBasisBank {
    pub fn new(layout: PatchLayout, bases: Vec<PcaBasis>) -> Result<Self> {
        if bases.len() != layout.count() {
            return Err(Error::Format(format!(
                "bank holds {} bases for {} origins",
                bases.len(),
                layout.count()
            )));
        }
        if let Some(b) = bases.iter().find(|b| b.dim() != layout.patch_len()) {
            return Err(Error::Format(format!(
                "basis dimension {} does not match patch length {}",
                b.dim(),
                layout.patch_len()
            )));
        }
        Ok(Self { layout, bases })
    }

    pub fn layout(&self) -> &PatchLayout {
        &self.layout
    }

    pub fn bases(&self) -> &[PcaBasis] {
        &self.bases
    }

    pub fn widths(&self) -> Vec<usize> {
        self.bases.iter().map(PcaBasis::k).collect()
    }
}

/// Per-origin fitting times in seconds, in origin order.
pub type OriginTimings = Vec<f64>;

pub fn fit_patch_bank(
    fields: &[&Field],
    layout: &PatchLayout,
    selection: Selection,
) -> Result<(PatchBasisBank, OriginTimings)> {
    if fields.len() < 2 {
        return Err(Error::param(format!("patch bank needs at least 2 fields, got {}", fields.len())));
    }
    for (i, f) in fields.iter().enumerate() {
        f.check_resolution(layout.resolution()).map_err(|e| e.at_sample(i))?;
    }
    let fitted = (0..layout.count())
        .into_par_iter()
        .map(|k| {
            let start = Instant::now();
            let x = origin_matrix(fields, layout, k);
            let basis = fit_pca_owned(x, fields.len(), layout.patch_len(), selection).map_err(|e| e.at_origin(k))?;
            Ok((basis, start.elapsed().as_secs_f64()))
        })
        .collect::<Result<Vec<_>>>()?;
    let (bases, times) = fitted.into_iter().unzip();
    Ok((
        PatchBasisBank {
            layout: layout.clone(),
            bases,
        },
        times,
    ))
}

/// Concatenated per-segment PCA codes.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentVector {
    widths: Vec<usize>,
    values: Vec<f64>,
}

impl LatentVector {
    pub fn new(widths: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let total: usize = widths.iter().sum();
        if total != values.len() {
            return Err(Error::param(format!(
                "latent segments sum to {total} but {} values were given",
                values.len()
            )));
        }
        Ok(Self { widths, values })
    }

    pub fn zeros(widths: Vec<usize>) -> Self {
        let total = widths.iter().sum();
        Self {
            widths,
            values: vec![0.0; total],
        }
    }

    pub fn total_dim(&self) -> usize {
        self.values.len()
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn segments(&self) -> impl Iterator<Item = &[f64]> {
        let mut offset = 0;
        self.widths.iter().map(move |&w| {
            let s = &self.values[offset..offset + w];
            offset += w;
            s
        })
    }
}

/// The basis of one side of a pipeline: global or patchwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FieldBasis {
    Global(PcaBasis),
    Patch(PatchBasisBank),
}

impl FieldBasis {
    pub fn widths(&self) -> Vec<usize> {
        match self {
            FieldBasis::Global(b) => vec![b.k()],
            FieldBasis::Patch(bank) => bank.widths(),
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.widths().iter().sum()
    }

    pub fn resolution(&self) -> usize {
        match self {
            FieldBasis::Global(b) => (b.dim() as f64).sqrt().round() as usize,
            FieldBasis::Patch(bank) => bank.layout().resolution(),
        }
    }

    pub fn layout(&self) -> Option<&PatchLayout> {
        match self {
            FieldBasis::Global(_) => None,
            FieldBasis::Patch(bank) => Some(bank.layout()),
        }
    }

    pub fn encode_field(&self, field: &Field) -> Result<LatentVector> {
        field.check_resolution(self.resolution())?;
        match self {
            FieldBasis::Global(b) => LatentVector::new(vec![b.k()], b.encode(field.values())?),
            FieldBasis::Patch(bank) => {
                let layout = bank.layout();
                let p = layout.patch_size();
                let mut patch = vec![0.0; layout.patch_len()];
                let mut values = Vec::with_capacity(self.latent_dim());
                for (k, (r, c)) in layout.origins().into_iter().enumerate() {
                    copy_patch(field, r, c, p, &mut patch);
                    values.extend(bank.bases[k].encode(&patch)?);
                }
                LatentVector::new(bank.widths(), values)
            }
        }
    }

    /// Encodes many fields; returns `n x latent_dim`, row-major.
    pub fn encode_fields(&self, fields: &[&Field]) -> Result<Vec<f64>> {
        let n = fields.len();
        let dim = self.latent_dim();
        for (i, f) in fields.iter().enumerate() {
            f.check_resolution(self.resolution()).map_err(|e| e.at_sample(i))?;
        }
        match self {
            FieldBasis::Global(b) => {
                let (x, _, _) = field_matrix(fields)?;
                b.encode_batch(&x, n)
            }
            FieldBasis::Patch(bank) => {
                let layout = bank.layout();
                let codes: Vec<Vec<f64>> = (0..layout.count())
                    .into_par_iter()
                    .map(|k| bank.bases[k].encode_batch(&origin_matrix(fields, layout, k), n))
                    .collect::<Result<_>>()?;
                let mut out = vec![0.0; n * dim];
                let mut offset = 0;
                for (k, block) in codes.iter().enumerate() {
                    let w = bank.bases[k].k();
                    for i in 0..n {
                        out[i * dim + offset..i * dim + offset + w].copy_from_slice(&block[i * w..(i + 1) * w]);
                    }
                    offset += w;
                }
                Ok(out)
            }
        }
    }

    /// Decodes a latent vector; `mode` applies to patchwise bases only.
    pub fn decode_field(&self, latent: &LatentVector, mode: &AssemblyMode) -> Result<Field> {
        if latent.widths() != self.widths().as_slice() {
            return Err(Error::param(format!(
                "latent segments ({} values in {} segments) do not match the basis ({} in {})",
                latent.total_dim(),
                latent.widths().len(),
                self.latent_dim(),
                self.widths().len()
            )));
        }
        match self {
            FieldBasis::Global(b) => Field::new(self.resolution(), b.decode(latent.values())?),
            FieldBasis::Patch(bank) => {
                let patches = latent
                    .segments()
                    .zip(&bank.bases)
                    .map(|(z, b)| b.decode(z))
                    .collect::<Result<Vec<_>>>()?;
                assemble_patches(&PatchSet::new(bank.layout().clone(), patches)?, mode)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::patching::make_layout;

    fn lcg_matrix(m: usize, d: usize, seed: u64) -> Vec<f64> {
        let mut s = seed;
        (0..m * d)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
            })
            .collect()
    }

    #[test]
    fn identical_samples_give_degenerate_basis() {
        let row = [0.1, 0.2, 0.3, 0.7];
        let x: Vec<f64> = row.iter().cycle().take(4 * 5).copied().collect();
        let b = fit_pca(&x, 5, 4, Selection::VarianceTarget(0.99)).unwrap();
        assert_eq!(b.k(), 1);
        assert_eq!(b.singular_values(), &[0.0]);
        assert_eq!(b.variance_ratio(), 1.0);
        assert!(b.encode(&row).unwrap()[0].abs() < 1e-15);
        assert_eq!(b.decode(&[0.0]).unwrap(), b.mean().to_vec());
    }

    #[test]
    fn rank_one_data_recovers_direction() {
        let v = [0.6, 0.0, -0.8];
        let c = [1.0, -2.0, 0.5, 3.0];
        let x: Vec<f64> = c.iter().flat_map(|ci| v.iter().map(move |vi| ci * vi)).collect();
        let b = fit_pca(&x, 4, 3, Selection::VarianceTarget(0.99)).unwrap();
        assert_eq!(b.k(), 1);
        let dotv = dot(b.component(0), &v).abs();
        assert!((dotv - 1.0).abs() < 1e-12);
        for row in x.chunks(3) {
            let back = b.decode(&b.encode(row).unwrap()).unwrap();
            for (a, r) in back.iter().zip(row) {
                assert!((a - r).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn both_gram_sides_agree() {
        // wide (m <= d) and tall (m > d) routes on transposed-shape data
        for (m, d) in [(6, 20), (30, 5)] {
            let x = lcg_matrix(m, d, 3);
            let b = fit_pca(&x, m, d, Selection::FixedK(3)).unwrap();
            let mut svd_x = DMatrix::from_row_slice(m, d, &x);
            let mean = b.mean().to_vec();
            for mut row in svd_x.row_iter_mut() {
                for (v, mu) in row.iter_mut().zip(&mean) {
                    *v -= mu;
                }
            }
            let svd = svd_x.svd(false, false);
            let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
            sv.sort_by(|a, b| b.total_cmp(a));
            for (a, e) in b.singular_values().iter().zip(&sv) {
                assert!((a - e).abs() < 1e-10 * e.max(1.0), "{a} vs {e}");
            }
        }
    }

    #[test]
    fn errors_on_bad_input() {
        assert!(fit_pca(&[1.0, 2.0], 1, 2, Selection::default()).is_err());
        assert!(fit_pca(&[1.0, f64::NAN, 0.0, 1.0], 2, 2, Selection::default()).is_err());
        assert!(fit_pca(&[1.0; 4], 2, 2, Selection::VarianceTarget(1.5)).is_err());
        let b = fit_pca(&lcg_matrix(5, 4, 1), 5, 4, Selection::FixedK(2)).unwrap();
        assert!(b.encode(&[0.0; 3]).is_err());
        assert!(b.decode(&[0.0; 3]).is_err());
    }

    #[test]
    fn constant_dataset_bank_is_degenerate() {
        let f = Field::from_fn(16, |_, _| 2.5);
        let fields = vec![&f; 4];
        let layout = make_layout(16, 8, 8).unwrap();
        let (bank, times) = fit_patch_bank(&fields, &layout, Selection::default()).unwrap();
        assert_eq!(bank.bases().len(), 4);
        assert_eq!(times.len(), 4);
        assert!(bank.bases().iter().all(|b| b.k() == 1 && b.singular_values()[0] == 0.0));
    }

    #[test]
    fn zero_latent_decodes_to_stitched_means() {
        let fields: Vec<Field> = (0..5)
            .map(|s| Field::from_fn(8, |i, j| ((i * 3 + j * 5 + s * 7) % 11) as f64))
            .collect();
        let refs: Vec<&Field> = fields.iter().collect();
        let layout = make_layout(8, 4, 4).unwrap();
        let (bank, _) = fit_patch_bank(&refs, &layout, Selection::FixedK(2)).unwrap();
        let basis = FieldBasis::Patch(bank.clone());
        let out = basis
            .decode_field(&LatentVector::zeros(basis.widths()), &AssemblyMode::Mosaic)
            .unwrap();
        for (k, (r, c)) in layout.origins().into_iter().enumerate() {
            let mean = bank.bases()[k].mean();
            for i in 0..4 {
                for j in 0..4 {
                    assert_eq!(out.get(r + i, c + j), mean[i * 4 + j]);
                }
            }
        }
    }

    #[test]
    fn batch_encoding_matches_single() {
        let fields: Vec<Field> = (0..6)
            .map(|s| Field::from_fn(8, |i, j| ((i * i + j * 3 + s * 5) % 13) as f64 * 0.1))
            .collect();
        let refs: Vec<&Field> = fields.iter().collect();
        let layout = make_layout(8, 4, 2).unwrap();
        let (bank, _) = fit_patch_bank(&refs, &layout, Selection::VarianceTarget(0.9)).unwrap();
        for basis in [FieldBasis::Patch(bank), FieldBasis::Global(fit_global(&refs, Selection::FixedK(3)).unwrap())] {
            let batch = basis.encode_fields(&refs).unwrap();
            let dim = basis.latent_dim();
            for (i, f) in fields.iter().enumerate() {
                let single = basis.encode_field(f).unwrap();
                for (a, b) in single.values().iter().zip(&batch[i * dim..(i + 1) * dim]) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }
}
