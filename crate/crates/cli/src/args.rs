use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ppca_core::field_data::Precision;
use ppca_core::pipelines::Split;

use crate::config::{BlendWindow, VariantChoice};

/// Patch-based PCA-Net operators for the 2D Poisson equation.
///
/// Every flag has a config-file key, shown as [config: section.key]. Flags
/// override the file given with --config.
#[derive(Debug, Parser)]
#[command(name = "ppca", version, propagate_version = true)]
pub struct Cli {
    /// TOML run configuration [config: -]
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Worker threads; 1 gives fully deterministic scheduling [config: threads]
    #[arg(long, global = true, env = "PPCA_THREADS", value_name = "N")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample GRF sources, solve the Poisson problems and write a dataset
    Generate(GenerateArgs),
    /// Fit a pipeline variant and write the model file
    Fit(FitArgs),
    /// Run a model on a field file, a directory of field files, or a dataset
    Predict(PredictArgs),
    /// Write metric reports of a model on a dataset split
    Evaluate(EvaluateArgs),
    /// Timing studies
    Bench(BenchArgs),
    /// Print the header of a dataset, model or field file as JSON
    Inspect(InspectArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PrecisionArg {
    F32,
    F64,
}

impl From<PrecisionArg> for Precision {
    fn from(p: PrecisionArg) -> Self {
        match p {
            PrecisionArg::F32 => Precision::F32,
            PrecisionArg::F64 => Precision::F64,
        }
    }
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Number of samples [config: dataset.n]
    #[arg(long)]
    pub n: Option<usize>,
    /// Grid resolution D [config: dataset.grid]
    #[arg(long)]
    pub grid: Option<usize>,
    /// GRF smoothness exponent [config: dataset.alpha]
    #[arg(long)]
    pub alpha: Option<f64>,
    /// GRF inverse length scale [config: dataset.tau]
    #[arg(long)]
    pub tau: Option<f64>,
    /// GRF seed [config: dataset.seed]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Payload float width [config: dataset.precision]
    #[arg(long, value_enum)]
    pub precision: Option<PrecisionArg>,
    /// Dataset file to write [config: dataset.path]
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Dataset file [config: dataset.path]
    #[arg(long, value_name = "FILE")]
    pub data: Option<PathBuf>,
    /// Output directory for model.ppcm, fit.json and config.toml [config: output_dir]
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Pipeline variant [config: variant.kind]
    #[arg(long, value_enum)]
    pub variant: Option<VariantChoice>,
    /// Patch size p [config: variant.patch]
    #[arg(long)]
    pub patch: Option<usize>,
    /// Patch stride s, default p [config: variant.stride]
    #[arg(long)]
    pub stride: Option<usize>,
    /// Window for blending overlapping output patches [config: variant.blend]
    #[arg(long, value_enum)]
    pub blend: Option<BlendWindow>,
    /// Add the CNN refiner after mosaic assembly [config: variant.refine]
    #[arg(long)]
    pub refine: bool,
    /// Refiner kernel size (3, 5 or 7) [config: refiner.kernel_size]
    #[arg(long)]
    pub kernel: Option<usize>,
    /// Operator hidden widths, comma separated [config: variant.hidden]
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    /// Input-side retained variance [config: variant.variance_in]
    #[arg(long)]
    pub variance_in: Option<f64>,
    /// Output-side retained variance [config: variant.variance_out]
    #[arg(long)]
    pub variance_out: Option<f64>,
    /// Fixed input-side component count per basis [config: variant.components_in]
    #[arg(long)]
    pub components_in: Option<usize>,
    /// Fixed output-side component count per basis [config: variant.components_out]
    #[arg(long)]
    pub components_out: Option<usize>,
    /// Held-out fraction [config: variant.test_fraction]
    #[arg(long)]
    pub test_fraction: Option<f64>,
    /// Train/test split seed [config: variant.split_seed]
    #[arg(long)]
    pub split_seed: Option<u64>,
    /// Operator epochs [config: training.epochs]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Mini-batch size [config: training.batch_size]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Initial learning rate [config: training.initial_lr]
    #[arg(long)]
    pub lr: Option<f64>,
    /// L2 penalty [config: training.l2_penalty]
    #[arg(long)]
    pub l2: Option<f64>,
    /// Plateau patience in epochs [config: training.plateau_patience]
    #[arg(long)]
    pub patience: Option<usize>,
    /// Training seed [config: training.seed]
    #[arg(long)]
    pub train_seed: Option<u64>,
    /// Refiner epochs [config: refiner.train.epochs]
    #[arg(long)]
    pub refine_epochs: Option<usize>,
    /// Refiner training crop side, 0 for whole fields [config: refiner.crop]
    #[arg(long)]
    pub crop: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Model file [config: model]
    #[arg(long, value_name = "FILE")]
    pub model: Option<PathBuf>,
    /// Field file, directory of .ppcf files, or dataset file [config: -]
    #[arg(long, value_name = "PATH")]
    pub input: PathBuf,
    /// Output field file, or directory for batch input [config: output_dir]
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
    All,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Test => Split::Test,
            SplitArg::All => Split::All,
        }
    }
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Model file [config: model]
    #[arg(long, value_name = "FILE")]
    pub model: Option<PathBuf>,
    /// Dataset file [config: dataset.path]
    #[arg(long, value_name = "FILE")]
    pub data: Option<PathBuf>,
    /// Report directory [config: output_dir]
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Samples to evaluate; train and test refer to the fitting split [config: -]
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    /// Histogram bins of the value densities [config: metrics.pdf_bins]
    #[arg(long)]
    pub pdf_bins: Option<usize>,
    /// SSIM window side [config: metrics.ssim_window]
    #[arg(long)]
    pub ssim_window: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BenchKind {
    /// Global PCA time and component count against grid size
    PcaGrid,
    /// Patch-bank cost for (patch, stride) pairs
    Patch,
    /// Stage timings and speedups of whole pipelines
    Pipeline,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(value_enum)]
    pub kind: BenchKind,
    /// Output directory [config: output_dir]
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Dataset file for the patch and pipeline studies [config: dataset.path]
    #[arg(long, value_name = "FILE")]
    pub data: Option<PathBuf>,
    /// Grid sizes, comma separated [config: bench.grids]
    #[arg(long, value_delimiter = ',')]
    pub grids: Option<Vec<usize>>,
    /// Samples per grid size [config: bench.samples]
    #[arg(long)]
    pub samples: Option<usize>,
    /// patch:stride pairs, comma separated, e.g. 16:16,16:8 [config: bench.pairs]
    #[arg(long, value_delimiter = ',')]
    pub pairs: Option<Vec<String>>,
    /// Variants, comma separated: global, l2g, l2l, l2l-overlap, l2l-refine [config: bench.variants]
    #[arg(long, value_delimiter = ',')]
    pub variants: Option<Vec<String>>,
    /// Repetitions per case; the median is reported [config: bench.repetitions]
    #[arg(long)]
    pub reps: Option<usize>,
    /// Skip grid sizes whose PCA working set exceeds this many MiB [config: bench.memory_budget_mb]
    #[arg(long)]
    pub memory_budget_mb: Option<u64>,
    /// Operator epochs for pipeline fits [config: training.epochs]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Fit a local-to-local pipeline for every pair [config: bench.downstream]
    #[arg(long)]
    pub downstream: bool,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    /// Dataset (.ppca), model (.ppcm) or field (.ppcf) file
    pub path: PathBuf,
}
