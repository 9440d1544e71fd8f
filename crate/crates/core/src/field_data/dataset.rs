use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::field::Field;
use super::grf::{sample_grf, GrfParams};
use super::solver::{solve_poisson, SolverConfig};
use crate::error::{Error, Result};
use crate::io::{check_magic, get_f32s, get_f64s, ByteReader};

pub const DATASET_MAGIC: &[u8; 4] = b"PPCA";
pub const DATASET_VERSION: u16 = 1;
const FLAG_F64: u8 = 0b0000_0001;
const HEADER_LEN: usize = 4 + 2 + 4 + 4 + 1;

/// One `(coefficient, solution)` pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub coefficient: Field,
    pub solution: Field,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub grf: GrfParams,
    pub solver: SolverConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    resolution: usize,
    samples: Vec<Sample>,
    pub provenance: Option<Provenance>,
}

impl Dataset {
    pub fn new(resolution: usize, samples: Vec<Sample>, provenance: Option<Provenance>) -> Result<Self> {
        for (i, s) in samples.iter().enumerate() {
            s.coefficient.check_resolution(resolution).map_err(|e| e.at_sample(i))?;
            s.solution.check_resolution(resolution).map_err(|e| e.at_sample(i))?;
        }
        Ok(Self {
            resolution,
            samples,
            provenance,
        })
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn coefficients(&self) -> Vec<&Field> {
        self.samples.iter().map(|s| &s.coefficient).collect()
    }

    pub fn solutions(&self) -> Vec<&Field> {
        self.samples.iter().map(|s| &s.solution).collect()
    }

    /// New dataset holding the selected samples, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            resolution: self.resolution,
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            provenance: self.provenance.clone(),
        }
    }
}

/// Deterministic shuffled split into `(train, test)` index lists.
///
/// The test side receives `round(n * test_fraction)` samples, at least one
/// when `n >= 2` and `test_fraction > 0`.
pub fn train_test_split(n: usize, test_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let mut n_test = (n as f64 * test_fraction).round() as usize;
    if test_fraction > 0.0 && n >= 2 {
        n_test = n_test.clamp(1, n - 1);
    }
    let test = idx.split_off(n - n_test);
    (idx, test)
}

/// Generates `n` independent `(f, u)` pairs, in parallel over samples.
pub fn generate_dataset(
    n: usize,
    resolution: usize,
    params: &GrfParams,
    config: &SolverConfig,
) -> Result<Dataset> {
    generate_dataset_with_progress(n, resolution, params, config, &|_| {})
}

/// As [`generate_dataset`], calling `progress(i)` as sample `i` completes.
pub fn generate_dataset_with_progress(
    n: usize,
    resolution: usize,
    params: &GrfParams,
    config: &SolverConfig,
    progress: &(dyn Fn(usize) + Sync),
) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::param("dataset size must be at least 1"));
    }
    params.validate()?;
    config.validate()?;
    let samples = (0..n)
        .into_par_iter()
        .map(|i| {
            let coefficient = sample_grf(params, resolution, i as u64).map_err(|e| e.at_sample(i))?;
            let solution = solve_poisson(&coefficient, config).map_err(|e| e.at_sample(i))?;
            progress(i);
            Ok(Sample {
                coefficient,
                solution,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        resolution,
        samples,
        provenance: Some(Provenance {
            grf: *params,
            solver: *config,
        }),
    })
}

/// On-disk float width of the payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

/// Serialises the binary dataset container.
pub fn encode_dataset(d: &Dataset, precision: Precision) -> Vec<u8> {
    let cells = d.resolution * d.resolution;
    let width = match precision {
        Precision::F32 => 4,
        Precision::F64 => 8,
    };
    let mut out = Vec::with_capacity(HEADER_LEN + d.len() * 2 * cells * width + 4);
    out.extend_from_slice(DATASET_MAGIC);
    out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    out.extend_from_slice(&(d.resolution as u32).to_le_bytes());
    out.extend_from_slice(&(d.len() as u32).to_le_bytes());
    out.push(if precision == Precision::F64 { FLAG_F64 } else { 0 });
    for s in &d.samples {
        for field in [&s.coefficient, &s.solution] {
            for &v in field.values() {
                match precision {
                    Precision::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
                    Precision::F64 => out.extend_from_slice(&v.to_le_bytes()),
                }
            }
        }
    }
    let crc = crc32fast::hash(&out[HEADER_LEN..]);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

/// Header fields of a dataset file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DatasetHeader {
    pub version: u16,
    pub resolution: usize,
    pub count: usize,
    pub precision: Precision,
}

pub fn decode_dataset_header(bytes: &[u8]) -> Result<DatasetHeader> {
    let mut r = ByteReader::new(bytes, "dataset header");
    check_magic(r.take(4)?, DATASET_MAGIC)?;
    let version = r.u16()?;
    if version > DATASET_VERSION {
        return Err(Error::Version {
            found: version,
            supported: DATASET_VERSION,
        });
    }
    let resolution = r.u32()? as usize;
    let count = r.u32()? as usize;
    let flags = r.u8()?;
    if flags & !FLAG_F64 != 0 {
        return Err(Error::Format(format!("unknown dataset flags {flags:#04x}")));
    }
    Ok(DatasetHeader {
        version,
        resolution,
        count,
        precision: if flags & FLAG_F64 != 0 { Precision::F64 } else { Precision::F32 },
    })
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset> {
    let header = decode_dataset_header(bytes)?;
    let cells = header.resolution * header.resolution;
    let width = match header.precision {
        Precision::F32 => 4,
        Precision::F64 => 8,
    };
    let payload_len = header.count * 2 * cells * width;
    let mut r = ByteReader::new(bytes, "dataset payload");
    r.take(HEADER_LEN)?;
    let payload = r.take(payload_len)?;
    let stored = r.u32()?;
    if r.remaining() != 0 {
        return Err(Error::Format(format!("{} trailing bytes after checksum", r.remaining())));
    }
    let computed = crc32fast::hash(payload);
    if stored != computed {
        return Err(Error::Checksum {
            section: "payload".into(),
            stored,
            computed,
        });
    }
    let values = match header.precision {
        Precision::F32 => get_f32s(payload),
        Precision::F64 => get_f64s(payload),
    };
    let mut samples = Vec::with_capacity(header.count);
    for (i, pair) in values.chunks_exact(2 * cells).enumerate() {
        let coefficient = Field::new(header.resolution, pair[..cells].to_vec()).map_err(|e| e.at_sample(i))?;
        let solution = Field::new(header.resolution, pair[cells..].to_vec()).map_err(|e| e.at_sample(i))?;
        samples.push(Sample {
            coefficient,
            solution,
        });
    }
    Ok(Dataset {
        resolution: header.resolution,
        samples,
        provenance: None,
    })
}

/// JSON sidecar written next to every dataset file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetSidecar {
    pub provenance: Option<Provenance>,
    pub resolution: usize,
    pub count: usize,
    pub precision: Precision,
    pub created_unix_seconds: u64,
    pub statistics: DatasetStatistics,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DatasetStatistics {
    pub coefficient_mean: f64,
    pub coefficient_std: f64,
    pub coefficient_abs_max: f64,
    pub solution_mean: f64,
    pub solution_std: f64,
    pub solution_abs_max: f64,
}

impl DatasetStatistics {
    pub fn of(d: &Dataset) -> Self {
        fn stats<'a>(fields: impl Iterator<Item = &'a Field>) -> (f64, f64, f64) {
            let (mut n, mut s, mut s2, mut m) = (0usize, 0.0, 0.0, 0.0f64);
            for f in fields {
                for &v in f.values() {
                    n += 1;
                    s += v;
                    s2 += v * v;
                    m = m.max(v.abs());
                }
            }
            let n = n.max(1) as f64;
            let mean = s / n;
            ((mean), (s2 / n - mean * mean).max(0.0).sqrt(), m)
        }
        let (cm, cs, cx) = stats(d.samples.iter().map(|s| &s.coefficient));
        let (um, us, ux) = stats(d.samples.iter().map(|s| &s.solution));
        Self {
            coefficient_mean: cm,
            coefficient_std: cs,
            coefficient_abs_max: cx,
            solution_mean: um,
            solution_std: us,
            solution_abs_max: ux,
        }
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Writes the binary container and its JSON sidecar.
pub fn save_dataset(d: &Dataset, path: &Path, precision: Precision) -> Result<()> {
    fs::write(path, encode_dataset(d, precision))?;
    let sidecar = DatasetSidecar {
        provenance: d.provenance.clone(),
        resolution: d.resolution,
        count: d.len(),
        precision,
        created_unix_seconds: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|t| t.as_secs())
            .unwrap_or(0),
        statistics: DatasetStatistics::of(d),
    };
    fs::write(sidecar_path(path), serde_json::to_vec_pretty(&sidecar)?)?;
    Ok(())
}

/// Reads a dataset file; provenance is restored from the sidecar if present.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let bytes = fs::read(path)?;
    let mut d = decode_dataset(&bytes)?;
    if let Ok(text) = fs::read(sidecar_path(path)) {
        let sidecar: DatasetSidecar = serde_json::from_slice(&text)?;
        d.provenance = sidecar.provenance;
    }
    Ok(d)
}
