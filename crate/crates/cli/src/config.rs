//! Run configuration: a TOML file whose keys mirror the command-line
//! flags. Flags override file values; the effective configuration is
//! written next to every command's outputs.

use std::fs;
use std::path::{Path, PathBuf};

use ppca_core::field_data::{GrfParams, Precision};
use ppca_core::metrics::MetricsConfig;
use ppca_core::neuralnet::TrainConfig;
use ppca_core::pca::Selection;
use ppca_core::pipelines::{PatchGeometry, RefinerSpec, VariantSpec};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum VariantChoice {
    /// Global PCA on both sides
    Global,
    /// Patch PCA input, global PCA output
    L2g,
    /// Patch PCA on both sides
    L2l,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum BlendWindow {
    #[default]
    None,
    Hanning,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    pub n: Option<usize>,
    pub grid: usize,
    pub alpha: f64,
    pub tau: f64,
    pub seed: u64,
    pub precision: Precision,
    /// Dataset file written by `generate` and read by the other commands.
    pub path: Option<PathBuf>,
}

impl Default for DatasetSection {
    fn default() -> Self {
        let grf = GrfParams::default();
        Self {
            n: None,
            grid: 128,
            alpha: grf.alpha,
            tau: grf.tau,
            seed: grf.seed,
            precision: Precision::default(),
            path: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VariantSection {
    pub kind: VariantChoice,
    pub patch: usize,
    /// Defaults to the patch size (no overlap).
    pub stride: Option<usize>,
    pub blend: BlendWindow,
    pub refine: bool,
    pub hidden: Vec<usize>,
    pub variance_in: f64,
    pub variance_out: f64,
    /// Fixed component counts; override the variance targets when set.
    pub components_in: Option<usize>,
    pub components_out: Option<usize>,
    pub test_fraction: f64,
    pub split_seed: u64,
}

impl Default for VariantSection {
    fn default() -> Self {
        let base = VariantSpec::global(128);
        let target = |s: Selection| match s {
            Selection::VarianceTarget(t) => t,
            Selection::FixedK(_) => 0.99,
        };
        Self {
            kind: VariantChoice::Global,
            patch: 16,
            stride: None,
            blend: BlendWindow::None,
            refine: false,
            hidden: base.hidden_widths,
            variance_in: target(base.input_selection),
            variance_out: target(base.output_selection),
            components_in: None,
            components_out: None,
            test_fraction: base.test_fraction,
            split_seed: base.split_seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchSection {
    pub grids: Vec<usize>,
    /// Samples generated per grid size in the PCA-vs-grid study.
    pub samples: usize,
    /// `[patch, stride]` pairs for the trade-off study.
    pub pairs: Vec<[usize; 2]>,
    pub variants: Vec<String>,
    /// Defaults to 3 for the PCA studies and 1 for the pipeline study.
    pub repetitions: Option<usize>,
    pub memory_budget_mb: u64,
    /// Also fit a pipeline per pair in the trade-off study.
    pub downstream: bool,
}

impl Default for BenchSection {
    fn default() -> Self {
        Self {
            grids: vec![32, 64, 128],
            samples: 200,
            pairs: vec![[8, 8], [8, 4], [16, 16], [16, 8], [32, 32], [32, 16], [64, 64], [64, 32]],
            variants: vec!["global".into(), "l2l-overlap".into(), "l2l-refine".into()],
            repetitions: None,
            memory_budget_mb: 2048,
            downstream: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub threads: Option<usize>,
    pub output_dir: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub dataset: DatasetSection,
    pub variant: VariantSection,
    pub training: TrainConfig,
    pub refiner: RefinerSpec,
    pub metrics: MetricsConfig,
    pub bench: BenchSection,
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::Config {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn to_toml(&self) -> CliResult<String> {
        toml::to_string_pretty(self).map_err(|e| CliError::usage(format!("cannot render config: {e}")))
    }

    /// Writes the effective configuration as `name` inside `dir`.
    pub fn echo(&self, dir: &Path, name: &str) -> CliResult<()> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let path = dir.join(name);
        fs::write(&path, self.to_toml()?).map_err(|e| CliError::io(&path, e))
    }

    pub fn grf(&self) -> GrfParams {
        GrfParams {
            alpha: self.dataset.alpha,
            tau: self.dataset.tau,
            seed: self.dataset.seed,
        }
    }

    fn selection(target: f64, fixed: Option<usize>) -> Selection {
        match fixed {
            Some(k) => Selection::FixedK(k),
            None => Selection::VarianceTarget(target),
        }
    }

    /// The variant described by the `[variant]`, `[training]` and
    /// `[refiner]` sections at resolution `d`.
    pub fn variant_spec(&self, d: usize) -> CliResult<VariantSpec> {
        let v = &self.variant;
        let geometry = PatchGeometry {
            patch_size: v.patch,
            stride: v.stride.unwrap_or(v.patch),
        };
        let mut spec = match v.kind {
            VariantChoice::Global => {
                if v.stride.is_some() || v.blend != BlendWindow::None || v.refine {
                    return Err(CliError::usage(
                        "the global variant takes no --stride, --blend or --refine",
                    ));
                }
                VariantSpec::global(d)
            }
            VariantChoice::L2g => VariantSpec::local_to_global(d, geometry),
            VariantChoice::L2l => {
                let mut s = VariantSpec::local_to_local(d, v.patch);
                s.input_patch = Some(geometry);
                s.output_patch = Some(geometry);
                s
            }
        };
        spec.blend = v.blend == BlendWindow::Hanning;
        if v.refine {
            spec.refiner = Some(self.refiner.clone());
        }
        spec.hidden_widths = v.hidden.clone();
        spec.input_selection = Self::selection(v.variance_in, v.components_in);
        spec.output_selection = Self::selection(v.variance_out, v.components_out);
        spec.train = self.training.clone();
        spec.test_fraction = v.test_fraction;
        spec.split_seed = v.split_seed;
        spec.validate()?;
        Ok(spec)
    }

    /// Named presets used by the pipeline benchmark, built on this config.
    pub fn named_variant(&self, name: &str, d: usize) -> CliResult<VariantSpec> {
        let mut cfg = self.clone();
        let v = &mut cfg.variant;
        v.blend = BlendWindow::None;
        v.refine = false;
        match name {
            "global" => {
                v.kind = VariantChoice::Global;
                v.stride = None;
            }
            "l2g" => {
                v.kind = VariantChoice::L2g;
            }
            "l2l" => {
                v.kind = VariantChoice::L2l;
                v.stride = None;
            }
            "l2l-overlap" => {
                v.kind = VariantChoice::L2l;
                v.stride = Some(v.stride.filter(|&s| s < v.patch).unwrap_or((v.patch / 2).max(1)));
                v.blend = BlendWindow::Hanning;
            }
            "l2l-refine" => {
                v.kind = VariantChoice::L2l;
                v.stride = None;
                v.refine = true;
            }
            other => {
                return Err(CliError::usage(format!(
                    "unknown variant {other:?}; expected global, l2g, l2l, l2l-overlap or l2l-refine"
                )))
            }
        }
        cfg.variant_spec(d)
    }
}

/// Fails with a validation error when an input path does not exist.
pub fn require_file(path: &Path, what: &str) -> CliResult<()> {
    if !path.exists() {
        return Err(CliError::usage(format!("{what} {} does not exist", path.display())));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults_and_round_trips() {
        let cfg: RunConfig = toml::from_str("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        let back: RunConfig = toml::from_str(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("colour = 3").is_err());
        assert!(toml::from_str::<RunConfig>("[variant]\npatchsize = 3").is_err());
        assert!(toml::from_str::<RunConfig>("[training]\nepoch = 3").is_err());
    }

    #[test]
    fn blend_without_overlap_is_a_usage_error() {
        let mut cfg = RunConfig::default();
        cfg.variant.kind = VariantChoice::L2l;
        cfg.variant.blend = BlendWindow::Hanning;
        cfg.variant.stride = Some(16);
        let err = cfg.variant_spec(128).unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn named_presets() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.named_variant("l2l-overlap", 128).unwrap().label(), "l2l-p16-s8-blend");
        assert_eq!(cfg.named_variant("l2l-refine", 128).unwrap().label(), "l2l-p16-s16-refine-k5");
        assert!(cfg.named_variant("bogus", 128).is_err());
    }
}
