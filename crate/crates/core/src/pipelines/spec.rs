use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neuralnet::TrainConfig;
use crate::patching::{make_layout, PatchLayout};
use crate::pca::Selection;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantKind {
    /// Global PCA on both sides.
    Global,
    /// Patchwise input bases, global output basis.
    LocalToGlobal,
    /// Patchwise bases on both sides.
    LocalToLocal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchGeometry {
    pub patch_size: usize,
    pub stride: usize,
}

impl PatchGeometry {
    pub fn non_overlapping(patch_size: usize) -> Self {
        Self {
            patch_size,
            stride: patch_size,
        }
    }

    pub fn layout(&self, resolution: usize) -> Result<PatchLayout> {
        make_layout(resolution, self.patch_size, self.stride)
    }
}

/// Convolutional post-processor applied to patchwise reconstructions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RefinerSpec {
    pub kernel_size: usize,
    /// Hidden channel widths; the network maps 1 channel to 1 channel.
    pub hidden_channels: Vec<usize>,
    /// Side of the square training crops; 0 trains on whole fields.
    pub crop: usize,
    pub crops_per_sample: usize,
    /// Predict a correction added to the input instead of the field itself.
    pub residual: bool,
    pub train: TrainConfig,
}

impl Default for RefinerSpec {
    fn default() -> Self {
        Self {
            kernel_size: 5,
            hidden_channels: vec![16, 16],
            crop: 32,
            crops_per_sample: 1,
            residual: false,
            train: TrainConfig {
                epochs: 40,
                batch_size: 16,
                plateau_patience: 5,
                ..TrainConfig::default()
            },
        }
    }
}

impl RefinerSpec {
    pub fn channels(&self) -> Vec<usize> {
        let mut c = vec![1];
        c.extend(&self.hidden_channels);
        c.push(1);
        c
    }
}

/// Complete description of one pipeline variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariantSpec {
    pub kind: VariantKind,
    pub resolution: usize,
    pub input_patch: Option<PatchGeometry>,
    pub output_patch: Option<PatchGeometry>,
    /// Hanning-window blending of overlapping output patches.
    pub blend: bool,
    pub refiner: Option<RefinerSpec>,
    pub input_selection: Selection,
    pub output_selection: Selection,
    pub hidden_widths: Vec<usize>,
    pub train: TrainConfig,
    pub test_fraction: f64,
    pub split_seed: u64,
}

impl VariantSpec {
    fn base(kind: VariantKind, resolution: usize) -> Self {
        Self {
            kind,
            resolution,
            input_patch: None,
            output_patch: None,
            blend: false,
            refiner: None,
            input_selection: Selection::default(),
            output_selection: Selection::default(),
            hidden_widths: vec![256, 256],
            train: TrainConfig::default(),
            test_fraction: 0.1,
            split_seed: 0,
        }
    }

    pub fn global(resolution: usize) -> Self {
        Self::base(VariantKind::Global, resolution)
    }

    pub fn local_to_global(resolution: usize, input: PatchGeometry) -> Self {
        Self {
            input_patch: Some(input),
            ..Self::base(VariantKind::LocalToGlobal, resolution)
        }
    }

    /// Non-overlapping patches of size `p` on both sides, mosaic assembly.
    pub fn local_to_local(resolution: usize, p: usize) -> Self {
        Self {
            input_patch: Some(PatchGeometry::non_overlapping(p)),
            output_patch: Some(PatchGeometry::non_overlapping(p)),
            ..Self::base(VariantKind::LocalToLocal, resolution)
        }
    }

    /// Overlapping patches `(p, s)` on both sides with Hanning blending.
    pub fn local_to_local_blend(resolution: usize, p: usize, s: usize) -> Self {
        let g = PatchGeometry {
            patch_size: p,
            stride: s,
        };
        Self {
            input_patch: Some(g),
            output_patch: Some(g),
            blend: true,
            ..Self::base(VariantKind::LocalToLocal, resolution)
        }
    }

    /// Non-overlapping mosaic followed by a CNN refiner.
    pub fn local_to_local_refined(resolution: usize, p: usize, kernel_size: usize) -> Self {
        Self {
            refiner: Some(RefinerSpec {
                kernel_size,
                ..RefinerSpec::default()
            }),
            ..Self::local_to_local(resolution, p)
        }
    }

    /// Short label used in reports, e.g. `l2l-p16-s8-blend`.
    pub fn label(&self) -> String {
        let geom = |g: &Option<PatchGeometry>| {
            g.map(|g| format!("-p{}-s{}", g.patch_size, g.stride)).unwrap_or_default()
        };
        match self.kind {
            VariantKind::Global => "global".into(),
            VariantKind::LocalToGlobal => format!("l2g{}", geom(&self.input_patch)),
            VariantKind::LocalToLocal => {
                let mut s = format!("l2l{}", geom(&self.output_patch));
                if self.blend {
                    s.push_str("-blend");
                }
                if let Some(r) = &self.refiner {
                    s.push_str(&format!("-refine-k{}", r.kernel_size));
                }
                s
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.resolution < 4 {
            return Err(Error::param(format!("resolution {} is too small", self.resolution)));
        }
        self.input_selection.validate()?;
        self.output_selection.validate()?;
        self.train.validate()?;
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(Error::param(format!("test_fraction must lie in [0, 1), got {}", self.test_fraction)));
        }
        if self.hidden_widths.contains(&0) {
            return Err(Error::param("hidden widths must be positive"));
        }
        match self.kind {
            VariantKind::Global => {
                if self.input_patch.is_some() || self.output_patch.is_some() {
                    return Err(Error::param("global variant takes no patch geometry"));
                }
            }
            VariantKind::LocalToGlobal => {
                if self.input_patch.is_none() {
                    return Err(Error::param("local-to-global variant needs an input patch geometry"));
                }
                if self.output_patch.is_some() {
                    return Err(Error::param("local-to-global variant has a global output side"));
                }
            }
            VariantKind::LocalToLocal => {
                if self.input_patch.is_none() || self.output_patch.is_none() {
                    return Err(Error::param("local-to-local variant needs input and output patch geometry"));
                }
            }
        }
        if let Some(g) = self.input_patch {
            g.layout(self.resolution)?;
        }
        if self.blend && self.kind != VariantKind::LocalToLocal {
            return Err(Error::param("blending applies to local-to-local variants only"));
        }
        if self.refiner.is_some() && self.kind != VariantKind::LocalToLocal {
            return Err(Error::param("a refiner applies to local-to-local variants only"));
        }
        if let Some(g) = self.output_patch {
            let layout = g.layout(self.resolution)?;
            if self.blend {
                if g.stride >= g.patch_size {
                    return Err(Error::param(format!(
                        "blending needs overlapping output patches (stride {} < patch size {})",
                        g.stride, g.patch_size
                    )));
                }
                if g.patch_size < 2 {
                    return Err(Error::param("blending needs patch size >= 2"));
                }
            } else if !layout.is_partition() {
                return Err(Error::param(format!(
                    "mosaic assembly needs non-overlapping output patches that tile the field \
                     (patch {}, stride {}, resolution {}); enable blending for overlap",
                    g.patch_size, g.stride, self.resolution
                )));
            }
        }
        if let Some(r) = &self.refiner {
            if self.blend {
                return Err(Error::param("the refiner works on mosaic reconstructions; disable blending"));
            }
            if r.kernel_size % 2 == 0 || r.kernel_size == 0 {
                return Err(Error::param(format!("refiner kernel size must be odd, got {}", r.kernel_size)));
            }
            if r.hidden_channels.contains(&0) {
                return Err(Error::param("refiner channel widths must be positive"));
            }
            if r.crop > self.resolution {
                return Err(Error::param(format!(
                    "refiner crop {} exceeds resolution {}",
                    r.crop, self.resolution
                )));
            }
            if r.crops_per_sample == 0 {
                return Err(Error::param("refiner crops_per_sample must be positive"));
            }
            r.train.validate()?;
        }
        Ok(())
    }
}
