//! Field comparison metrics and evaluation reports.
//!
//! Conventions: SSIM uses a square uniform window (default 7), constants
//! `C1 = (0.01 L)^2`, `C2 = (0.03 L)^2` with `L` the dynamic range of the
//! reference field, and population (co)variances inside each window. The
//! spectrum bins the raw DFT by rounded radial wavenumber and is normalised
//! so that the bins sum to the sum of squared cell values.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field_data::Field;
use crate::patching::PatchLayout;

fn check_pair(a: &Field, b: &Field) -> Result<()> {
    if a.resolution() != b.resolution() {
        return Err(Error::param(format!(
            "fields differ in resolution: {} vs {}",
            a.resolution(),
            b.resolution()
        )));
    }
    Ok(())
}

pub fn mse(a: &Field, b: &Field) -> Result<f64> {
    check_pair(a, b)?;
    let s: f64 = a.values().iter().zip(b.values()).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(s / a.len() as f64)
}

pub fn mae(a: &Field, b: &Field) -> Result<f64> {
    check_pair(a, b)?;
    let s: f64 = a.values().iter().zip(b.values()).map(|(x, y)| (x - y).abs()).sum();
    Ok(s / a.len() as f64)
}

/// Symmetric SSIM; the dynamic range is taken over both fields together.
pub fn ssim(a: &Field, b: &Field) -> Result<f64> {
    check_pair(a, b)?;
    let (amin, amax) = a.min_max();
    let (bmin, bmax) = b.min_max();
    let range = amax.max(bmax) - amin.min(bmin);
    ssim_with_range(a, b, range, 7)
}

/// Mean SSIM over all `window x window` positions fully inside the field.
pub fn ssim_with_range(a: &Field, b: &Field, range: f64, window: usize) -> Result<f64> {
    check_pair(a, b)?;
    let d = a.resolution();
    if window == 0 || window > d {
        return Err(Error::param(format!("SSIM window {window} does not fit a {d}x{d} field")));
    }
    if !(range >= 0.0 && range.is_finite()) {
        return Err(Error::param(format!("SSIM dynamic range must be finite and >= 0, got {range}")));
    }
    let range = if range > 0.0 {
        range
    } else {
        let (amin, amax) = a.min_max();
        let (bmin, bmax) = b.min_max();
        amax.max(bmax) - amin.min(bmin)
    };
    if range == 0.0 {
        return Ok(1.0);
    }
    let c1 = (0.01 * range).powi(2);
    let c2 = (0.03 * range).powi(2);
    let (av, bv) = (a.values(), b.values());
    let n = (window * window) as f64;
    let positions = d - window + 1;
    let mut total = 0.0;
    for r in 0..positions {
        for c in 0..positions {
            let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in r..r + window {
                for j in c..c + window {
                    let x = av[i * d + j];
                    let y = bv[i * d + j];
                    sa += x;
                    sb += y;
                    saa += x * x;
                    sbb += y * y;
                    sab += x * y;
                }
            }
            let (ma, mb) = (sa / n, sb / n);
            let va = saa / n - ma * ma;
            let vb = sbb / n - mb * mb;
            let cov = sab / n - ma * mb;
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
    }
    Ok(total / (positions * positions) as f64)
}

/// Radially binned DFT energy; entry `k` collects wavenumbers with
/// `round(|k|) = k`.
pub fn energy_spectrum(u: &Field) -> Vec<f64> {
    let d = u.resolution();
    let mut data: Vec<Complex<f64>> = u.values().iter().map(|&v| Complex::new(v, 0.0)).collect();
    let fft = FftPlanner::new().plan_fft_forward(d);
    for row in data.chunks_exact_mut(d) {
        fft.process(row);
    }
    let mut column = vec![Complex::new(0.0, 0.0); d];
    for j in 0..d {
        for i in 0..d {
            column[i] = data[i * d + j];
        }
        fft.process(&mut column);
        for i in 0..d {
            data[i * d + j] = column[i];
        }
    }
    let signed = |k: usize| if k <= d / 2 { k as f64 } else { k as f64 - d as f64 };
    let max_bin = ((2.0f64).sqrt() * (d / 2) as f64).round() as usize;
    let mut bins = vec![0.0; max_bin + 1];
    let norm = (d * d) as f64;
    for i in 0..d {
        for j in 0..d {
            let k = signed(i).hypot(signed(j)).round() as usize;
            bins[k] += data[i * d + j].norm_sqr() / norm;
        }
    }
    bins
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PdfBin {
    pub center: f64,
    pub density: f64,
}

/// Normalised histogram of the field's values over their min/max range.
pub fn pdf_estimate(u: &Field, bins: usize) -> Result<Vec<PdfBin>> {
    pdf_of_values(u.values(), bins, None)
}

/// Histogram density of `values` over `range` (default: their min/max).
/// A zero-width range yields one bin of width 1 holding all mass.
pub fn pdf_of_values(values: &[f64], bins: usize, range: Option<(f64, f64)>) -> Result<Vec<PdfBin>> {
    if bins < 2 {
        return Err(Error::param(format!("pdf needs at least 2 bins, got {bins}")));
    }
    if values.is_empty() {
        return Err(Error::param("pdf of an empty value set"));
    }
    let (lo, hi) = range.unwrap_or_else(|| {
        values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    });
    if !(hi >= lo) {
        return Err(Error::param(format!("invalid pdf range [{lo}, {hi}]")));
    }
    if hi == lo {
        return Ok(vec![PdfBin {
            center: lo,
            density: 1.0,
        }]);
    }
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    let mut inside = 0usize;
    for &v in values {
        if v < lo || v > hi {
            continue;
        }
        let b = (((v - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
        inside += 1;
    }
    let scale = 1.0 / (inside.max(1) as f64 * width);
    Ok(counts
        .iter()
        .enumerate()
        .map(|(b, &c)| PdfBin {
            center: lo + (b as f64 + 0.5) * width,
            density: c as f64 * scale,
        })
        .collect())
}

/// Mean absolute first difference across patch boundaries minus the same
/// over all other neighbouring cell pairs.
pub fn seam_discontinuity(u: &Field, layout: &PatchLayout) -> Result<f64> {
    u.check_resolution(layout.resolution())?;
    let d = u.resolution();
    let mut is_seam = vec![false; d];
    for c in layout.boundary_positions() {
        is_seam[c] = true;
    }
    let v = u.values();
    let (mut seam_sum, mut seam_n, mut rest_sum, mut rest_n) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..d {
        for j in 1..d {
            // horizontal pair (i, j-1)-(i, j) and vertical pair (j-1, i)-(j, i)
            let h = (v[i * d + j] - v[i * d + j - 1]).abs();
            let vert = (v[j * d + i] - v[(j - 1) * d + i]).abs();
            if is_seam[j] {
                seam_sum += h + vert;
                seam_n += 2;
            } else {
                rest_sum += h + vert;
                rest_n += 2;
            }
        }
    }
    let mean = |s: f64, n: usize| if n == 0 { 0.0 } else { s / n as f64 };
    Ok(mean(seam_sum, seam_n) - mean(rest_sum, rest_n))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    pub pdf_bins: usize,
    pub ssim_window: usize,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            pdf_bins: 64,
            ssim_window: 7,
        }
    }
}

impl MetricsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pdf_bins < 2 {
            return Err(Error::param("pdf_bins must be at least 2"));
        }
        if self.ssim_window == 0 {
            return Err(Error::param("ssim_window must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub index: usize,
    pub mse: f64,
    pub mae: f64,
    pub ssim: f64,
    pub seam: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumBin {
    pub k: usize,
    pub truth: f64,
    pub prediction: f64,
}

/// Aggregated comparison of predictions against ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub label: String,
    pub split: String,
    /// Set when the evaluated samples were seen during fitting.
    pub in_sample: bool,
    pub sample_count: usize,
    pub mse: f64,
    pub mae: f64,
    pub ssim: f64,
    /// Mean seam statistic of predictions and of ground truth, when the
    /// output side is patchwise.
    pub seam_prediction: Option<f64>,
    pub seam_truth: Option<f64>,
    pub config: MetricsConfig,
    /// Mean spectra over samples.
    pub spectrum: Vec<SpectrumBin>,
    /// Pooled value densities over a common range.
    pub pdf_truth: Vec<PdfBin>,
    pub pdf_prediction: Vec<PdfBin>,
    pub samples: Vec<SampleMetrics>,
}

/// Scalar part of a report, written as JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub label: String,
    pub split: String,
    pub in_sample: bool,
    pub sample_count: usize,
    pub mse: f64,
    pub mae: f64,
    pub ssim: f64,
    pub seam_prediction: Option<f64>,
    pub seam_truth: Option<f64>,
    pub config: MetricsConfig,
    pub ssim_convention: String,
    pub spectrum_convention: String,
}

/// Compares `predictions[i]` with `truths[i]`; `indices[i]` labels the
/// sample in the per-sample table.
pub fn compare_fields(
    predictions: &[Field],
    truths: &[&Field],
    indices: &[usize],
    seam_layout: Option<&PatchLayout>,
    config: &MetricsConfig,
) -> Result<MetricsReport> {
    config.validate()?;
    if predictions.is_empty() {
        return Err(Error::param("no samples to evaluate"));
    }
    if predictions.len() != truths.len() || indices.len() != truths.len() {
        return Err(Error::param(format!(
            "{} predictions, {} truths and {} indices",
            predictions.len(),
            truths.len(),
            indices.len()
        )));
    }
    struct One {
        metrics: SampleMetrics,
        seam_truth: Option<f64>,
        spec_truth: Vec<f64>,
        spec_pred: Vec<f64>,
    }
    let per: Vec<One> = (0..predictions.len())
        .into_par_iter()
        .map(|i| {
            let (p, t) = (&predictions[i], truths[i]);
            let (tmin, tmax) = t.min_max();
            let (seam, seam_truth) = match seam_layout {
                Some(l) => (Some(seam_discontinuity(p, l)?), Some(seam_discontinuity(t, l)?)),
                None => (None, None),
            };
            Ok(One {
                metrics: SampleMetrics {
                    index: indices[i],
                    mse: mse(p, t)?,
                    mae: mae(p, t)?,
                    ssim: ssim_with_range(p, t, tmax - tmin, config.ssim_window)?,
                    seam,
                },
                seam_truth,
                spec_truth: energy_spectrum(t),
                spec_pred: energy_spectrum(p),
            })
        })
        .collect::<Result<_>>()?;

    let n = per.len() as f64;
    let mean_of = |f: &dyn Fn(&One) -> f64| per.iter().map(f).sum::<f64>() / n;
    let nbins = per[0].spec_truth.len();
    let spectrum = (0..nbins)
        .map(|k| SpectrumBin {
            k,
            truth: mean_of(&|o| o.spec_truth[k]),
            prediction: mean_of(&|o| o.spec_pred[k]),
        })
        .collect();

    let pooled_t: Vec<f64> = truths.iter().flat_map(|t| t.values().iter().copied()).collect();
    let pooled_p: Vec<f64> = predictions.iter().flat_map(|p| p.values().iter().copied()).collect();
    let (lo, hi) = pooled_t
        .iter()
        .chain(&pooled_p)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));

    Ok(MetricsReport {
        label: String::new(),
        split: String::new(),
        in_sample: false,
        sample_count: per.len(),
        mse: mean_of(&|o| o.metrics.mse),
        mae: mean_of(&|o| o.metrics.mae),
        ssim: mean_of(&|o| o.metrics.ssim),
        seam_prediction: seam_layout.map(|_| mean_of(&|o| o.metrics.seam.unwrap())),
        seam_truth: seam_layout.map(|_| mean_of(&|o| o.seam_truth.unwrap())),
        config: config.clone(),
        spectrum,
        pdf_truth: pdf_of_values(&pooled_t, config.pdf_bins, Some((lo, hi)))?,
        pdf_prediction: pdf_of_values(&pooled_p, config.pdf_bins, Some((lo, hi)))?,
        samples: per.into_iter().map(|o| o.metrics).collect(),
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl MetricsReport {
    pub fn summary(&self) -> ReportSummary {
        ReportSummary {
            label: self.label.clone(),
            split: self.split.clone(),
            in_sample: self.in_sample,
            sample_count: self.sample_count,
            mse: self.mse,
            mae: self.mae,
            ssim: self.ssim,
            seam_prediction: self.seam_prediction,
            seam_truth: self.seam_truth,
            config: self.config.clone(),
            ssim_convention: format!(
                "uniform {w}x{w} window, C1=(0.01L)^2, C2=(0.03L)^2, L=per-sample ground-truth range",
                w = self.config.ssim_window
            ),
            spectrum_convention: "raw 2D DFT, bin k holds round(|k|)=k, |U|^2/D^2 so bins sum to sum(u^2)".into(),
        }
    }

    pub fn spectrum_csv(&self) -> String {
        let mut s = String::from("k,energy_truth,energy_prediction\n");
        for b in &self.spectrum {
            writeln!(s, "{},{},{}", b.k, b.truth, b.prediction).unwrap();
        }
        s
    }

    pub fn pdf_csv(&self) -> String {
        let mut s = String::from("center,density_truth,density_prediction\n");
        for (t, p) in self.pdf_truth.iter().zip(&self.pdf_prediction) {
            writeln!(s, "{},{},{}", t.center, t.density, p.density).unwrap();
        }
        s
    }

    pub fn samples_csv(&self) -> String {
        let mut s = String::from("index,mse,mae,ssim,seam\n");
        for m in &self.samples {
            writeln!(s, "{},{},{},{},{}", m.index, m.mse, m.mae, m.ssim, opt(m.seam)).unwrap();
        }
        s
    }

    /// Writes `report.json`, `spectrum.csv`, `pdf.csv` and `samples.csv`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut json = serde_json::to_string_pretty(&self.summary())?;
        json.push('\n');
        fs::write(dir.join("report.json"), json)?;
        fs::write(dir.join("spectrum.csv"), self.spectrum_csv())?;
        fs::write(dir.join("pdf.csv"), self.pdf_csv())?;
        fs::write(dir.join("samples.csv"), self.samples_csv())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::patching::make_layout;
    use std::f64::consts::PI;

    #[test]
    fn constant_offset() {
        let a = Field::from_fn(16, |i, j| (i * j) as f64 * 0.1);
        let b = Field::from_fn(16, |i, j| (i * j) as f64 * 0.1 + 0.5);
        assert!((mse(&a, &b).unwrap() - 0.25).abs() < 1e-12);
        assert!((mae(&a, &b).unwrap() - 0.5).abs() < 1e-12);
        assert!(mse(&a, &Field::zeros(8)).is_err());
    }

    #[test]
    fn ssim_identity_and_perturbation() {
        let a = Field::from_unit_square(32, |x, y| (3.0 * x).sin() + y * y);
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
        // a checkerboard destroys local structure without moving window means much
        let b = Field::from_fn(32, |i, j| a.get(i, j) + if (i + j) % 2 == 0 { 0.2 } else { -0.2 });
        let s = ssim(&a, &b).unwrap();
        assert!(s < 0.9 && s > -1.0, "{s}");
        assert_eq!(ssim(&Field::zeros(8), &Field::zeros(8)).unwrap(), 1.0);
    }

    #[test]
    fn single_mode_spectrum() {
        let u = Field::from_fn(128, |_, j| (2.0 * PI * 4.0 * j as f64 / 128.0).sin());
        let e = energy_spectrum(&u);
        let total: f64 = e.iter().sum();
        assert!(e[4] / total > 0.99);
    }

    #[test]
    fn constant_field_pdf() {
        let pdf = pdf_estimate(&Field::from_fn(8, |_, _| 2.5), 64).unwrap();
        assert_eq!(pdf, vec![PdfBin { center: 2.5, density: 1.0 }]);
        assert!(pdf_estimate(&Field::zeros(8), 1).is_err());
    }

    #[test]
    fn jump_field_seam_is_one() {
        let layout = make_layout(64, 16, 16).unwrap();
        let u = Field::from_fn(64, |i, j| (i / 16 + j / 16) as f64);
        assert!((seam_discontinuity(&u, &layout).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn self_comparison_report() {
        let fields: Vec<Field> = (0..3)
            .map(|s| Field::from_unit_square(16, |x, y| (x * (s + 1) as f64).sin() * y))
            .collect();
        let truths: Vec<&Field> = fields.iter().collect();
        let r = compare_fields(&fields, &truths, &[0, 1, 2], None, &MetricsConfig::default()).unwrap();
        assert_eq!(r.mse, 0.0);
        assert_eq!(r.ssim, 1.0);
        assert_eq!(r.sample_count, 3);
        assert!(compare_fields(&[], &[], &[], None, &MetricsConfig::default()).is_err());
    }
}
