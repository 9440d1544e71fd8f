//! Timing studies: global PCA cost against grid size, the patch size and
//! stride trade-off, and stage-wise pipeline timing with speedups.

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field_data::{generate_dataset, Dataset, Field, GrfParams, SolverConfig};
use crate::metrics::MetricsConfig;
use crate::patching::{extract_patches, make_layout};
use crate::pca::{fit_global, fit_patch_bank, Selection};
use crate::pipelines::{fit_pipeline, Split, VariantKind, VariantSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    InputPca,
    OutputPca,
    Training,
    Inference,
    RefinerTraining,
    Extraction,
    PatchPca,
    GlobalPca,
}

impl Stage {
    pub fn name(&self) -> &'static str {
        match self {
            Stage::InputPca => "input_pca",
            Stage::OutputPca => "output_pca",
            Stage::Training => "training",
            Stage::Inference => "inference",
            Stage::RefinerTraining => "refiner_training",
            Stage::Extraction => "extraction",
            Stage::PatchPca => "patch_pca",
            Stage::GlobalPca => "global_pca",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Machine {
    pub os: String,
    pub arch: String,
    pub threads: usize,
    pub cpu: String,
}

impl Machine {
    pub fn current() -> Self {
        let cpu = std::fs::read_to_string("/proc/cpuinfo")
            .ok()
            .and_then(|s| {
                s.lines()
                    .find(|l| l.starts_with("model name"))
                    .and_then(|l| l.split(':').nth(1))
                    .map(|v| v.trim().to_string())
            })
            .unwrap_or_else(|| "unknown".into());
        Self {
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
            threads: rayon::current_num_threads(),
            cpu,
        }
    }
}

/// Median wall time of one stage over `repetitions` runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRecord {
    pub label: String,
    pub stage: Stage,
    pub wall_seconds: f64,
    pub repetitions: usize,
    pub config: serde_json::Value,
    pub machine: Machine,
}

pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of nothing");
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn check_reps(repetitions: usize) -> Result<()> {
    if repetitions == 0 {
        return Err(Error::param("repetitions must be at least 1"));
    }
    Ok(())
}

/// Runs `f` `repetitions` times and returns the median time with the last result.
fn timed<T>(repetitions: usize, mut f: impl FnMut() -> Result<T>) -> Result<(f64, T)> {
    let mut times = Vec::with_capacity(repetitions);
    let mut last = None;
    for _ in 0..repetitions {
        let start = Instant::now();
        last = Some(f()?);
        times.push(start.elapsed().as_secs_f64());
    }
    Ok((median(&times), last.unwrap()))
}

/// Flop estimate of a Gram-route PCA on an `m x d` matrix.
pub fn pca_cost_model(m: usize, d: usize) -> f64 {
    let s = m.min(d) as f64;
    m as f64 * d as f64 * s + s * s * s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaGridRecord {
    pub resolution: usize,
    pub samples: usize,
    pub components: Option<usize>,
    pub variance_ratio: Option<f64>,
    pub model_flops: f64,
    pub timing: Option<TimingRecord>,
    /// Why the grid size was skipped, when it was.
    pub skipped: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaGridOptions {
    pub samples: usize,
    pub repetitions: usize,
    pub selection: Selection,
    pub grf: GrfParams,
    /// Estimated working-set cap; larger grids are skipped.
    pub memory_budget_bytes: u64,
}

impl Default for PcaGridOptions {
    fn default() -> Self {
        Self {
            samples: 200,
            repetitions: 3,
            selection: Selection::default(),
            grf: GrfParams::default(),
            memory_budget_bytes: 2 << 30,
        }
    }
}

fn pca_memory_estimate(m: usize, d: usize) -> u64 {
    let s = m.min(d) as u64;
    // data copy, centred matrix, Gram matrix and eigenvectors
    8 * (2 * m as u64 * d as u64 + 2 * s * s + s * d as u64)
}

/// Global PCA fit time on solution fields, per grid size.
pub fn bench_pca_vs_grid(grids: &[usize], options: &PcaGridOptions) -> Result<Vec<PcaGridRecord>> {
    check_reps(options.repetitions)?;
    options.selection.validate()?;
    if options.samples < 2 {
        return Err(Error::param("PCA benchmark needs at least 2 samples"));
    }
    let machine = Machine::current();
    let mut out = Vec::new();
    for &d in grids {
        let dim = d * d;
        let model_flops = pca_cost_model(options.samples, dim);
        let need = pca_memory_estimate(options.samples, dim);
        if need > options.memory_budget_bytes {
            out.push(PcaGridRecord {
                resolution: d,
                samples: options.samples,
                components: None,
                variance_ratio: None,
                model_flops,
                timing: None,
                skipped: Some(format!(
                    "estimated {need} bytes exceeds the {} byte budget",
                    options.memory_budget_bytes
                )),
            });
            continue;
        }
        let data = generate_dataset(options.samples, d, &options.grf, &SolverConfig::for_resolution(d))?;
        let us = data.solutions();
        let (secs, basis) = timed(options.repetitions, || fit_global(&us, options.selection))?;
        out.push(PcaGridRecord {
            resolution: d,
            samples: options.samples,
            components: Some(basis.k()),
            variance_ratio: Some(basis.variance_ratio()),
            model_flops,
            timing: Some(TimingRecord {
                label: format!("global-D{d}"),
                stage: Stage::GlobalPca,
                wall_seconds: secs,
                repetitions: options.repetitions,
                config: serde_json::json!({ "resolution": d, "samples": options.samples, "selection": options.selection }),
                machine: machine.clone(),
            }),
            skipped: None,
        });
    }
    Ok(out)
}

pub fn pca_grid_csv(records: &[PcaGridRecord]) -> String {
    let mut s = String::from("resolution,samples,components,variance_ratio,wall_seconds,repetitions,model_flops,skipped\n");
    for r in records {
        writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.resolution,
            r.samples,
            r.components.map(|v| v.to_string()).unwrap_or_default(),
            r.variance_ratio.map(|v| v.to_string()).unwrap_or_default(),
            r.timing.as_ref().map(|t| t.wall_seconds.to_string()).unwrap_or_default(),
            r.timing.as_ref().map(|t| t.repetitions).unwrap_or(0),
            r.model_flops,
            r.skipped.as_deref().unwrap_or("").replace(',', ";"),
        )
        .unwrap();
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchTradeoffRecord {
    pub patch_size: usize,
    pub stride: usize,
    pub patch_count: usize,
    pub latent_dim: usize,
    pub extraction_seconds: f64,
    pub bank_fit_seconds: f64,
    /// Global fit time on the same fields, for reference.
    pub global_fit_seconds: f64,
    pub repetitions: usize,
    /// Test metrics of a local-to-local pipeline at this geometry, if requested.
    pub downstream_mse: Option<f64>,
    pub downstream_ssim: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchTradeoffOptions {
    pub repetitions: usize,
    pub selection: Selection,
    /// Fit a pipeline per geometry with this template (epochs etc.); the
    /// patch geometry and assembly mode are set per pair.
    pub downstream: Option<VariantSpec>,
}

impl Default for PatchTradeoffOptions {
    fn default() -> Self {
        Self {
            repetitions: 3,
            selection: Selection::default(),
            downstream: None,
        }
    }
}

/// Bank-fit and extraction cost on the solution fields of `dataset` for
/// every `(p, s)` pair.
pub fn bench_patch_tradeoff(
    pairs: &[(usize, usize)],
    dataset: &Dataset,
    options: &PatchTradeoffOptions,
) -> Result<Vec<PatchTradeoffRecord>> {
    check_reps(options.repetitions)?;
    let d = dataset.resolution();
    let layouts = pairs
        .iter()
        .map(|&(p, s)| make_layout(d, p, s))
        .collect::<Result<Vec<_>>>()?;
    let us: Vec<&Field> = dataset.solutions();
    let (global_secs, _) = timed(options.repetitions, || fit_global(&us, options.selection))?;
    let mut out = Vec::new();
    for layout in layouts {
        let (extract_secs, _) = timed(options.repetitions, || {
            us.iter().map(|u| extract_patches(u, &layout)).collect::<Result<Vec<_>>>()
        })?;
        let (bank_secs, (bank, _)) = timed(options.repetitions, || fit_patch_bank(&us, &layout, options.selection))?;
        let (mut mse, mut ssim) = (None, None);
        if let Some(template) = &options.downstream {
            let (p, s) = (layout.patch_size(), layout.stride());
            let mut spec = if s < p || !layout.is_partition() {
                VariantSpec::local_to_local_blend(d, p, s)
            } else {
                VariantSpec::local_to_local(d, p)
            };
            spec.input_selection = template.input_selection;
            spec.output_selection = template.output_selection;
            spec.hidden_widths = template.hidden_widths.clone();
            spec.train = template.train.clone();
            spec.test_fraction = template.test_fraction;
            spec.split_seed = template.split_seed;
            let (model, _) = fit_pipeline(dataset, &spec)?;
            let report = model.evaluate(dataset, Split::Test, &MetricsConfig::default())?;
            mse = Some(report.mse);
            ssim = Some(report.ssim);
        }
        out.push(PatchTradeoffRecord {
            patch_size: layout.patch_size(),
            stride: layout.stride(),
            patch_count: layout.count(),
            latent_dim: bank.widths().iter().sum(),
            extraction_seconds: extract_secs,
            bank_fit_seconds: bank_secs,
            global_fit_seconds: global_secs,
            repetitions: options.repetitions,
            downstream_mse: mse,
            downstream_ssim: ssim,
        });
    }
    Ok(out)
}

pub fn patch_tradeoff_csv(records: &[PatchTradeoffRecord]) -> String {
    let mut s = String::from(
        "patch_size,stride,patch_count,latent_dim,extraction_seconds,bank_fit_seconds,global_fit_seconds,repetitions,mse,ssim\n",
    );
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in records {
        writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            r.patch_size,
            r.stride,
            r.patch_count,
            r.latent_dim,
            r.extraction_seconds,
            r.bank_fit_seconds,
            r.global_fit_seconds,
            r.repetitions,
            opt(r.downstream_mse),
            opt(r.downstream_ssim)
        )
        .unwrap();
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantTotals {
    pub label: String,
    pub pca_seconds: f64,
    pub training_seconds: f64,
    pub inference_seconds: f64,
    pub total_seconds: f64,
    pub parameters: usize,
    pub test_mse: f64,
    pub test_mae: f64,
    pub test_ssim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Speedup {
    pub label: String,
    pub baseline: String,
    /// Baseline total over variant total.
    pub total: f64,
    /// Baseline PCA time over variant PCA time.
    pub pca: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineBench {
    pub records: Vec<TimingRecord>,
    pub totals: Vec<VariantTotals>,
    /// Ratios against the first global variant; empty without one or with a
    /// single variant.
    pub speedups: Vec<Speedup>,
}

/// Fits, predicts and evaluates every variant; per-stage times are the
/// pipeline's own measurements, median over repetitions.
pub fn bench_pipeline(variants: &[VariantSpec], dataset: &Dataset, repetitions: usize) -> Result<PipelineBench> {
    check_reps(repetitions)?;
    if variants.is_empty() {
        return Err(Error::param("no variants to benchmark"));
    }
    for v in variants {
        v.validate()?;
    }
    let machine = Machine::current();
    let mut records = Vec::new();
    let mut totals = Vec::new();
    for spec in variants {
        let label = spec.label();
        let mut stages: Vec<(Stage, Vec<f64>)> = [
            Stage::InputPca,
            Stage::OutputPca,
            Stage::Training,
            Stage::RefinerTraining,
            Stage::Inference,
        ]
        .into_iter()
        .map(|s| (s, Vec::new()))
        .collect();
        let mut last = None;
        for _ in 0..repetitions {
            let (model, fit) = fit_pipeline(dataset, spec).map_err(|e| e.in_stage("benchmark fit"))?;
            let test = model.split_indices(dataset, Split::Test)?;
            let fs: Vec<&Field> = test.iter().map(|&i| &dataset.samples()[i].coefficient).collect();
            let start = Instant::now();
            model.predict_batch(&fs)?;
            let inference = start.elapsed().as_secs_f64();
            let t = &fit.timings;
            for (stage, v) in stages.iter_mut() {
                v.push(match stage {
                    Stage::InputPca => t.input_pca,
                    Stage::OutputPca => t.output_pca,
                    Stage::Training => t.training,
                    Stage::RefinerTraining => t.refiner_training,
                    _ => inference,
                });
            }
            last = Some(model);
        }
        let model = last.unwrap();
        let report = model.evaluate(dataset, Split::Test, &MetricsConfig::default())?;
        let med: Vec<(Stage, f64)> = stages.iter().map(|(s, v)| (*s, median(v))).collect();
        let get = |s: Stage| med.iter().find(|(x, _)| *x == s).unwrap().1;
        let config = serde_json::to_value(spec)?;
        for &(stage, secs) in &med {
            if stage == Stage::RefinerTraining && spec.refiner.is_none() {
                continue;
            }
            records.push(TimingRecord {
                label: label.clone(),
                stage,
                wall_seconds: secs,
                repetitions,
                config: config.clone(),
                machine: machine.clone(),
            });
        }
        let pca = get(Stage::InputPca) + get(Stage::OutputPca);
        let training = get(Stage::Training) + get(Stage::RefinerTraining);
        let inference = get(Stage::Inference);
        totals.push(VariantTotals {
            label,
            pca_seconds: pca,
            training_seconds: training,
            inference_seconds: inference,
            total_seconds: pca + training + inference,
            parameters: model.parameter_count(),
            test_mse: report.mse,
            test_mae: report.mae,
            test_ssim: report.ssim,
        });
    }
    let speedups = match variants.iter().position(|v| v.kind == VariantKind::Global) {
        Some(b) if variants.len() > 1 => {
            let base = totals[b].clone();
            totals
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != b)
                .map(|(_, t)| Speedup {
                    label: t.label.clone(),
                    baseline: base.label.clone(),
                    total: base.total_seconds / t.total_seconds,
                    pca: base.pca_seconds / t.pca_seconds,
                })
                .collect()
        }
        _ => Vec::new(),
    };
    Ok(PipelineBench {
        records,
        totals,
        speedups,
    })
}

pub fn timing_csv(records: &[TimingRecord]) -> String {
    let mut s = String::from("label,stage,wall_seconds,repetitions,threads\n");
    for r in records {
        writeln!(
            s,
            "{},{},{},{},{}",
            r.label,
            r.stage.name(),
            r.wall_seconds,
            r.repetitions,
            r.machine.threads
        )
        .unwrap();
    }
    s
}
