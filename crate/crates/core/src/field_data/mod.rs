//! Synthetic Poisson data: GRF source fields, finite-difference solutions,
//! and the binary dataset container.

mod dataset;
mod field;
mod fieldfile;
mod grf;
mod solver;

pub use dataset::{
    decode_dataset, decode_dataset_header, encode_dataset, generate_dataset, generate_dataset_with_progress,
    load_dataset, save_dataset, sidecar_path, train_test_split, Dataset, DatasetHeader, DatasetSidecar,
    DatasetStatistics, Precision, Provenance, Sample, DATASET_MAGIC, DATASET_VERSION,
};
pub use field::{grid_spacing, Field};
pub use fieldfile::{decode_field, encode_field, load_field, save_field, FIELD_MAGIC, FIELD_VERSION};
pub use grf::{grf_from_coefficients, modes_per_axis, sample_grf, GrfParams};
pub use solver::{apply_laplacian, solve_poisson, SolverConfig, SolverMethod};
