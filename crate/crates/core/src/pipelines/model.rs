use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::spec::{VariantKind, VariantSpec};
use crate::error::{Error, Result};
use crate::field_data::{train_test_split, Dataset, Field, Sample};
use crate::metrics::{compare_fields, MetricsConfig, MetricsReport};
use crate::neuralnet::{count_parameters, train, Cnn, Mlp, Network, TrainHistory};
use crate::patching::{hanning_window, AssemblyMode};
use crate::pca::{fit_global, fit_patch_bank, FieldBasis, LatentVector, Selection};

/// Affine per-feature map `z = (x - mean) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

fn column_means(data: &[f64], n: usize, dim: usize) -> Vec<f64> {
    let mut mean = vec![0.0; dim];
    for row in data.chunks_exact(dim) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    mean
}

impl Standardizer {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    /// Zero mean, unit variance for every feature.
    pub fn per_feature(data: &[f64], n: usize, dim: usize) -> Self {
        let mean = column_means(data, n, dim);
        let mut var = vec![0.0; dim];
        for row in data.chunks_exact(dim) {
            for ((v, x), m) in var.iter_mut().zip(row).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let scale = var
            .iter()
            .map(|v| {
                let s = (v / n as f64).sqrt();
                if s > 1e-300 { s } else { 1.0 }
            })
            .collect();
        Self { mean, scale }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, data: &mut [f64]) {
        for row in data.chunks_exact_mut(self.dim()) {
            for ((x, m), s) in row.iter_mut().zip(&self.mean).zip(&self.scale) {
                *x = (*x - m) / s;
            }
        }
    }

    pub fn invert(&self, data: &mut [f64]) {
        for row in data.chunks_exact_mut(self.dim()) {
            for ((x, m), s) in row.iter_mut().zip(&self.mean).zip(&self.scale) {
                *x = *x * s + m;
            }
        }
    }
}

/// CNN post-processor working on fields divided by `scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct Refiner {
    pub cnn: Cnn,
    pub scale: f64,
    pub residual: bool,
}

impl Refiner {
    pub fn refine(&self, field: &Field) -> Result<Field> {
        let d = field.resolution();
        let x: Vec<f64> = field.values().iter().map(|v| v / self.scale).collect();
        let y = self.cnn.forward_image(&x, d)?;
        let values = if self.residual {
            field.values().iter().zip(&y).map(|(u, r)| u + r * self.scale).collect()
        } else {
            y.iter().map(|v| v * self.scale).collect()
        };
        Field::new(d, values)
    }
}

/// Loss trajectory endpoints kept inside the model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub initial_train_loss: f64,
    pub final_train_loss: f64,
    pub best_epoch: Option<usize>,
    pub epochs_run: usize,
    pub final_lr: Option<f64>,
}

impl From<&TrainHistory> for TrainSummary {
    fn from(h: &TrainHistory) -> Self {
        Self {
            initial_train_loss: h.initial_train_loss,
            final_train_loss: h.final_train_loss,
            best_epoch: h.best_epoch,
            epochs_run: h.epochs.len(),
            final_lr: h.epochs.last().map(|e| e.lr),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetadata {
    /// Size and content checksum of the dataset the model was fitted on.
    pub dataset_size: usize,
    pub dataset_checksum: u32,
    pub train_count: usize,
    pub test_count: usize,
    pub input_latent_dim: usize,
    pub output_latent_dim: usize,
    pub input_widths: Vec<usize>,
    pub output_widths: Vec<usize>,
    pub operator_parameters: usize,
    pub refiner_parameters: usize,
    pub operator_training: TrainSummary,
    pub refiner_training: Option<TrainSummary>,
}

/// Wall-clock seconds per fitting stage.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub input_pca: f64,
    pub output_pca: f64,
    pub training: f64,
    pub refiner_training: f64,
}

impl StageTimings {
    pub fn total(&self) -> f64 {
        self.input_pca + self.output_pca + self.training + self.refiner_training
    }
}

/// Everything measured while fitting that does not belong in the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub label: String,
    pub timings: StageTimings,
    pub operator_history: TrainHistory,
    pub refiner_history: Option<TrainHistory>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineModel {
    pub spec: VariantSpec,
    pub input: FieldBasis,
    pub output: FieldBasis,
    pub input_norm: Standardizer,
    pub output_norm: Standardizer,
    pub operator: Mlp,
    pub refiner: Option<Refiner>,
    pub metadata: ModelMetadata,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    All,
}

impl Split {
    pub fn name(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
            Split::All => "all",
        }
    }
}

/// CRC32 over the little-endian bits of every value, coefficient then
/// solution, sample by sample.
pub fn dataset_checksum(d: &Dataset) -> u32 {
    let mut h = crc32fast::Hasher::new();
    for s in d.samples() {
        for f in [&s.coefficient, &s.solution] {
            for v in f.values() {
                h.update(&v.to_le_bytes());
            }
        }
    }
    h.finalize()
}

fn fit_side(fields: &[&Field], geometry: Option<super::PatchGeometry>, selection: Selection, d: usize) -> Result<FieldBasis> {
    match geometry {
        None => Ok(FieldBasis::Global(fit_global(fields, selection)?)),
        Some(g) => {
            let (bank, _) = fit_patch_bank(fields, &g.layout(d)?, selection)?;
            Ok(FieldBasis::Patch(bank))
        }
    }
}

/// Random square crops of (input, target) pairs, flattened back to back.
fn crops(
    inputs: &[Field],
    targets: &[Field],
    side: usize,
    per_sample: usize,
    seed: u64,
) -> (Vec<f64>, Vec<f64>) {
    let d = inputs[0].resolution();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut xs = Vec::with_capacity(inputs.len() * per_sample * side * side);
    let mut ts = Vec::with_capacity(xs.capacity());
    for (x, t) in inputs.iter().zip(targets) {
        for _ in 0..per_sample {
            let r = rng.random_range(0..=d - side);
            let c = rng.random_range(0..=d - side);
            for i in r..r + side {
                xs.extend_from_slice(&x.values()[i * d + c..i * d + c + side]);
                ts.extend_from_slice(&t.values()[i * d + c..i * d + c + side]);
            }
        }
    }
    (xs, ts)
}

/// Fits every stage of `spec` on the training split of `dataset`.
pub fn fit_pipeline(dataset: &Dataset, spec: &VariantSpec) -> Result<(PipelineModel, FitReport)> {
    spec.validate()?;
    let d = spec.resolution;
    if dataset.resolution() != d {
        return Err(Error::Geometry {
            expected: d,
            actual: dataset.resolution(),
        });
    }
    let (train_idx, test_idx) = train_test_split(dataset.len(), spec.test_fraction, spec.split_seed);
    if train_idx.len() < 2 {
        return Err(Error::param(format!(
            "training split holds {} samples; at least 2 are needed",
            train_idx.len()
        )));
    }
    let train_set: Vec<&Sample> = train_idx.iter().map(|&i| &dataset.samples()[i]).collect();
    let fs: Vec<&Field> = train_set.iter().map(|s| &s.coefficient).collect();
    let us: Vec<&Field> = train_set.iter().map(|s| &s.solution).collect();
    let n = fs.len();
    let mut timings = StageTimings::default();

    let start = Instant::now();
    let input = fit_side(&fs, spec.input_patch, spec.input_selection, d).map_err(|e| e.in_stage("input PCA"))?;
    let mut x = input.encode_fields(&fs).map_err(|e| e.in_stage("input PCA"))?;
    let input_norm = Standardizer::per_feature(&x, n, input.latent_dim());
    input_norm.apply(&mut x);
    timings.input_pca = start.elapsed().as_secs_f64();

    let start = Instant::now();
    let output_geometry = match spec.kind {
        VariantKind::LocalToLocal => spec.output_patch,
        _ => None,
    };
    let output = fit_side(&us, output_geometry, spec.output_selection, d).map_err(|e| e.in_stage("output PCA"))?;
    let mut y = output.encode_fields(&us).map_err(|e| e.in_stage("output PCA"))?;
    let output_norm = Standardizer::per_feature(&y, n, output.latent_dim());
    output_norm.apply(&mut y);
    timings.output_pca = start.elapsed().as_secs_f64();

    let start = Instant::now();
    let mut widths = vec![input.latent_dim()];
    widths.extend(&spec.hidden_widths);
    widths.push(output.latent_dim());
    let net = Mlp::new(&widths, spec.train.seed).map_err(|e| e.in_stage("training"))?;
    let (operator, operator_history) = train(net, &x, &y, n, &spec.train).map_err(|e| e.in_stage("training"))?;
    timings.training = start.elapsed().as_secs_f64();

    let mut model = PipelineModel {
        spec: spec.clone(),
        input_norm,
        output_norm,
        metadata: ModelMetadata {
            dataset_size: dataset.len(),
            dataset_checksum: dataset_checksum(dataset),
            train_count: train_idx.len(),
            test_count: test_idx.len(),
            input_latent_dim: input.latent_dim(),
            output_latent_dim: output.latent_dim(),
            input_widths: input.widths(),
            output_widths: output.widths(),
            operator_parameters: count_parameters(&operator),
            refiner_parameters: 0,
            operator_training: TrainSummary::from(&operator_history),
            refiner_training: None,
        },
        input,
        output,
        operator,
        refiner: None,
    };

    let mut refiner_history = None;
    if let Some(rspec) = &spec.refiner {
        let start = Instant::now();
        let stage = |e: Error| e.in_stage("refiner training");
        let blocky = model.predict_batch(&fs).map_err(stage)?;
        let truths: Vec<Field> = us.iter().map(|u| (*u).clone()).collect();
        let ss: f64 = truths.iter().flat_map(|u| u.values()).map(|v| v * v).sum();
        let rms = (ss / (n * d * d) as f64).sqrt();
        let scale = if rms > 0.0 { rms } else { 1.0 };
        let side = if rspec.crop == 0 { d } else { rspec.crop };
        let (mut cx, mut ct) = crops(&blocky, &truths, side, rspec.crops_per_sample, rspec.train.seed);
        if rspec.residual {
            for (t, b) in ct.iter_mut().zip(&cx) {
                *t -= b;
            }
        }
        cx.iter_mut().for_each(|v| *v /= scale);
        ct.iter_mut().for_each(|v| *v /= scale);
        let count = n * rspec.crops_per_sample;
        let cnn = Cnn::new(&rspec.channels(), rspec.kernel_size, side, rspec.train.seed).map_err(stage)?;
        let (cnn, history) = train(cnn, &cx, &ct, count, &rspec.train).map_err(stage)?;
        model.metadata.refiner_parameters = count_parameters(&cnn);
        model.metadata.refiner_training = Some(TrainSummary::from(&history));
        model.refiner = Some(Refiner {
            cnn: cnn.with_side(d),
            scale,
            residual: rspec.residual,
        });
        refiner_history = Some(history);
        timings.refiner_training = start.elapsed().as_secs_f64();
    }

    let report = FitReport {
        label: spec.label(),
        timings,
        operator_history,
        refiner_history,
    };
    Ok((model, report))
}

impl PipelineModel {
    pub fn resolution(&self) -> usize {
        self.spec.resolution
    }

    pub fn parameter_count(&self) -> usize {
        self.metadata.operator_parameters + self.metadata.refiner_parameters
    }

    pub fn assembly_mode(&self) -> Result<AssemblyMode> {
        match (&self.output, self.spec.blend) {
            (FieldBasis::Patch(bank), true) => Ok(AssemblyMode::Blend(hanning_window(bank.layout().patch_size())?)),
            _ => Ok(AssemblyMode::Mosaic),
        }
    }

    /// The same model with the refinement stage dropped.
    pub fn without_refiner(&self) -> Self {
        let mut m = self.clone();
        m.refiner = None;
        m.spec.refiner = None;
        m.metadata.refiner_parameters = 0;
        m.metadata.refiner_training = None;
        m
    }

    fn check_inputs(&self, fields: &[&Field]) -> Result<()> {
        for (i, f) in fields.iter().enumerate() {
            if f.resolution() != self.resolution() {
                let e = Error::Geometry {
                    expected: self.resolution(),
                    actual: f.resolution(),
                };
                return Err(if fields.len() > 1 { e.at_sample(i) } else { e });
            }
        }
        Ok(())
    }

    /// Output-side latent codes for a batch, `n x output_latent_dim`.
    pub fn predict_latent_batch(&self, fields: &[&Field]) -> Result<Vec<f64>> {
        self.check_inputs(fields)?;
        if fields.is_empty() {
            return Ok(Vec::new());
        }
        let mut x = self.input.encode_fields(fields)?;
        self.input_norm.apply(&mut x);
        let mut y = self.operator.forward_batch(&x, fields.len());
        self.output_norm.invert(&mut y);
        Ok(y)
    }

    pub fn predict_latent(&self, f: &Field) -> Result<LatentVector> {
        let y = self.predict_latent_batch(&[f])?;
        LatentVector::new(self.output.widths(), y)
    }

    pub fn predict_batch(&self, fields: &[&Field]) -> Result<Vec<Field>> {
        let y = self.predict_latent_batch(fields)?;
        let mode = self.assembly_mode()?;
        let dim = self.output.latent_dim();
        y.par_chunks_exact(dim)
            .map(|row| {
                let field = self.output.decode_field(&LatentVector::new(self.output.widths(), row.to_vec())?, &mode)?;
                match &self.refiner {
                    Some(r) => r.refine(&field),
                    None => Ok(field),
                }
            })
            .collect()
    }

    pub fn predict(&self, f: &Field) -> Result<Field> {
        Ok(self.predict_batch(&[f])?.pop().unwrap())
    }

    /// Dataset indices of `split`. Train and test refer to the fitting
    /// dataset and are refused for any other dataset.
    pub fn split_indices(&self, dataset: &Dataset, split: Split) -> Result<Vec<usize>> {
        if split == Split::All {
            return Ok((0..dataset.len()).collect());
        }
        if dataset.len() != self.metadata.dataset_size || dataset_checksum(dataset) != self.metadata.dataset_checksum {
            return Err(Error::param(format!(
                "the {} split refers to the {}-sample fitting dataset; this dataset differs (use the all split)",
                split.name(),
                self.metadata.dataset_size
            )));
        }
        let (train, test) = train_test_split(dataset.len(), self.spec.test_fraction, self.spec.split_seed);
        Ok(if split == Split::Train { train } else { test })
    }

    /// Metrics of predictions on `indices` of `dataset`.
    pub fn evaluate_indices(&self, dataset: &Dataset, indices: &[usize], config: &MetricsConfig) -> Result<MetricsReport> {
        if indices.is_empty() {
            return Err(Error::param("evaluation set is empty"));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= dataset.len()) {
            return Err(Error::param(format!("sample index {bad} out of range for {} samples", dataset.len())));
        }
        let fs: Vec<&Field> = indices.iter().map(|&i| &dataset.samples()[i].coefficient).collect();
        let us: Vec<&Field> = indices.iter().map(|&i| &dataset.samples()[i].solution).collect();
        let preds = self.predict_batch(&fs)?;
        let mut report = compare_fields(&preds, &us, indices, self.output.layout(), config)?;
        report.label = self.spec.label();
        Ok(report)
    }

    pub fn evaluate(&self, dataset: &Dataset, split: Split, config: &MetricsConfig) -> Result<MetricsReport> {
        let indices = self.split_indices(dataset, split)?;
        if indices.is_empty() {
            return Err(Error::param(format!("the {} split is empty", split.name())));
        }
        let mut report = self.evaluate_indices(dataset, &indices, config)?;
        report.split = split.name().into();
        report.in_sample = match split {
            Split::Test => false,
            Split::Train => true,
            Split::All => {
                self.metadata.dataset_size == dataset.len()
                    && self.metadata.dataset_checksum == dataset_checksum(dataset)
                    && self.metadata.train_count > 0
            }
        };
        Ok(report)
    }
}
