//! End-to-end variants: global, local-to-global and local-to-local PCA-Nets,
//! the latter with optional window blending or CNN refinement.

mod format;
mod model;
mod spec;

pub use format::{decode_model, decode_model_header, encode_model, load_model, save_model, MODEL_MAGIC, MODEL_VERSION};
pub use model::{
    dataset_checksum, fit_pipeline, FitReport, ModelMetadata, PipelineModel, Refiner, Split, StageTimings,
    Standardizer, TrainSummary,
};
pub use spec::{PatchGeometry, RefinerSpec, VariantKind, VariantSpec};
