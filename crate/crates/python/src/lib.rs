//! Python module `ppca`.
//!
//! Fields cross the boundary as nested lists of rows (a 2-D numpy array is
//! accepted too); reports and metadata come back as plain dicts.

use std::path::PathBuf;

use ppca_core::field_data::{self as fd, GrfParams, Precision, SolverConfig, SolverMethod};
use ppca_core::metrics::{self, MetricsConfig};
use ppca_core::patching::make_layout;
use ppca_core::pca::Selection;
use ppca_core::pipelines::{self as pl, PatchGeometry, Split};
use ppca_core::{Error, ErrorClass};
use pyo3::exceptions::{PyIOError, PyIndexError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn py_err(e: Error) -> PyErr {
    let msg = e.to_string();
    match e.class() {
        ErrorClass::Validation => PyValueError::new_err(msg),
        ErrorClass::Runtime => PyRuntimeError::new_err(msg),
        ErrorClass::Io => PyIOError::new_err(msg),
    }
}

trait IntoPyResult<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> IntoPyResult<T> for ppca_core::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

fn json_to_py(py: Python<'_>, json: serde_json::Result<String>) -> PyResult<Bound<'_, PyAny>> {
    let text = json.map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn solver_method(name: &str) -> PyResult<SolverMethod> {
    match name {
        "cg" => Ok(SolverMethod::ConjugateGradient),
        "dst" => Ok(SolverMethod::SineTransform),
        other => Err(PyValueError::new_err(format!("unknown solver {other:?}, expected \"cg\" or \"dst\""))),
    }
}

fn split(name: &str) -> PyResult<Split> {
    match name {
        "train" => Ok(Split::Train),
        "test" => Ok(Split::Test),
        "all" => Ok(Split::All),
        other => Err(PyValueError::new_err(format!("unknown split {other:?}"))),
    }
}

/// Square grid function stored row-major.
#[pyclass(name = "Field", module = "ppca", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyField {
    inner: fd::Field,
}

#[pymethods]
impl PyField {
    #[new]
    fn new(rows: Vec<Vec<f64>>) -> PyResult<Self> {
        let d = rows.len();
        if let Some(bad) = rows.iter().find(|r| r.len() != d) {
            return Err(PyValueError::new_err(format!(
                "field must be square: {d} rows but a row of length {}",
                bad.len()
            )));
        }
        Ok(Self {
            inner: fd::Field::new(d, rows.concat()).py()?,
        })
    }

    #[staticmethod]
    fn zeros(resolution: usize) -> Self {
        Self {
            inner: fd::Field::zeros(resolution),
        }
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: fd::load_field(&path).py()?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        fd::save_field(&self.inner, &path).py()
    }

    #[getter]
    fn resolution(&self) -> usize {
        self.inner.resolution()
    }

    fn to_list(&self) -> Vec<Vec<f64>> {
        self.inner
            .values()
            .chunks(self.inner.resolution())
            .map(<[f64]>::to_vec)
            .collect()
    }

    fn min_max(&self) -> (f64, f64) {
        self.inner.min_max()
    }

    fn __repr__(&self) -> String {
        format!("Field(resolution={})", self.inner.resolution())
    }
}

/// Paired coefficient and solution fields.
#[pyclass(name = "Dataset", module = "ppca", frozen)]
pub struct PyDataset {
    inner: fd::Dataset,
}

impl PyDataset {
    fn sample(&self, index: usize) -> PyResult<&fd::Sample> {
        self.inner
            .samples()
            .get(index)
            .ok_or_else(|| PyIndexError::new_err(format!("sample {index} out of range for {} samples", self.inner.len())))
    }
}

#[pymethods]
impl PyDataset {
    /// Samples `n` random coefficients and solves for each one.
    #[staticmethod]
    #[pyo3(signature = (n, resolution, alpha = 3.0, tau = 3.0, seed = 0, solver = "cg"))]
    fn generate(
        py: Python<'_>,
        n: usize,
        resolution: usize,
        alpha: f64,
        tau: f64,
        seed: u64,
        solver: &str,
    ) -> PyResult<Self> {
        let params = GrfParams { alpha, tau, seed };
        let mut cfg = SolverConfig::for_resolution(resolution);
        cfg.method = solver_method(solver)?;
        let inner = py.detach(|| fd::generate_dataset(n, resolution, &params, &cfg)).py()?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: fd::load_dataset(&path).py()?,
        })
    }

    #[pyo3(signature = (path, precision = "f32"))]
    fn save(&self, path: PathBuf, precision: &str) -> PyResult<()> {
        let precision = match precision {
            "f32" => Precision::F32,
            "f64" => Precision::F64,
            other => return Err(PyValueError::new_err(format!("unknown precision {other:?}"))),
        };
        fd::save_dataset(&self.inner, &path, precision).py()
    }

    #[getter]
    fn resolution(&self) -> usize {
        self.inner.resolution()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn coefficient(&self, index: usize) -> PyResult<PyField> {
        Ok(PyField {
            inner: self.sample(index)?.coefficient.clone(),
        })
    }

    fn solution(&self, index: usize) -> PyResult<PyField> {
        Ok(PyField {
            inner: self.sample(index)?.solution.clone(),
        })
    }

    fn __repr__(&self) -> String {
        format!("Dataset(len={}, resolution={})", self.inner.len(), self.inner.resolution())
    }
}

/// Pipeline variant. `kind` is `global`, `l2g` or `l2l`, as on the command line.
#[pyclass(name = "VariantSpec", module = "ppca", skip_from_py_object)]
#[derive(Clone)]
pub struct PySpec {
    inner: pl::VariantSpec,
}

#[pymethods]
impl PySpec {
    #[new]
    #[pyo3(signature = (kind, resolution, patch = 16, stride = None, blend = false, refine = false, kernel = 5))]
    fn new(
        kind: &str,
        resolution: usize,
        patch: usize,
        stride: Option<usize>,
        blend: bool,
        refine: bool,
        kernel: usize,
    ) -> PyResult<Self> {
        let geometry = PatchGeometry {
            patch_size: patch,
            stride: stride.unwrap_or(patch),
        };
        let mut inner = match kind {
            "global" => pl::VariantSpec::global(resolution),
            "l2g" => pl::VariantSpec::local_to_global(resolution, geometry),
            "l2l" => {
                let mut s = pl::VariantSpec::local_to_local(resolution, patch);
                s.input_patch = Some(geometry);
                s.output_patch = Some(geometry);
                s
            }
            other => return Err(PyValueError::new_err(format!("unknown variant kind {other:?}"))),
        };
        inner.blend = blend;
        if refine {
            inner.refiner = pl::VariantSpec::local_to_local_refined(resolution, patch, kernel).refiner;
        }
        inner.validate().py()?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner: pl::VariantSpec = serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        inner.validate().py()?;
        Ok(Self { inner })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string_pretty(&self.inner).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    #[getter]
    fn label(&self) -> String {
        self.inner.label()
    }

    #[getter]
    fn epochs(&self) -> usize {
        self.inner.train.epochs
    }

    #[setter]
    fn set_epochs(&mut self, epochs: usize) {
        self.inner.train.epochs = epochs;
    }

    #[getter]
    fn hidden_widths(&self) -> Vec<usize> {
        self.inner.hidden_widths.clone()
    }

    #[setter]
    fn set_hidden_widths(&mut self, widths: Vec<usize>) {
        self.inner.hidden_widths = widths;
    }

    #[setter]
    fn set_variance_in(&mut self, target: f64) {
        self.inner.input_selection = Selection::VarianceTarget(target);
    }

    #[setter]
    fn set_variance_out(&mut self, target: f64) {
        self.inner.output_selection = Selection::VarianceTarget(target);
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.train.seed
    }

    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.inner.train.seed = seed;
    }

    fn __repr__(&self) -> String {
        format!("VariantSpec({:?})", self.inner.label())
    }
}

/// Fitted pipeline.
#[pyclass(name = "Model", module = "ppca", frozen)]
pub struct PyModel {
    inner: pl::PipelineModel,
}

#[pymethods]
impl PyModel {
    /// Fits `spec` on `dataset`; returns the model and the fit report as a dict.
    #[staticmethod]
    fn fit<'py>(py: Python<'py>, dataset: &PyDataset, spec: &PySpec) -> PyResult<(Self, Bound<'py, PyAny>)> {
        let (data, spec) = (&dataset.inner, &spec.inner);
        let (inner, report) = py.detach(|| pl::fit_pipeline(data, spec)).py()?;
        let report = json_to_py(py, serde_json::to_string(&report))?;
        Ok((Self { inner }, report))
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: pl::load_model(&path).py()?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        pl::save_model(&self.inner, &path).py()
    }

    fn predict(&self, py: Python<'_>, f: &PyField) -> PyResult<PyField> {
        let (model, f) = (&self.inner, &f.inner);
        Ok(PyField {
            inner: py.detach(|| model.predict(f)).py()?,
        })
    }

    fn predict_batch(&self, py: Python<'_>, fields: Vec<PyRef<'_, PyField>>) -> PyResult<Vec<PyField>> {
        let refs: Vec<&fd::Field> = fields.iter().map(|f| &f.inner).collect();
        let model = &self.inner;
        let out = py.detach(|| model.predict_batch(&refs)).py()?;
        Ok(out.into_iter().map(|inner| PyField { inner }).collect())
    }

    /// Scalar metrics on a split of `dataset`, as a dict.
    #[pyo3(signature = (dataset, split = "test", pdf_bins = 64, ssim_window = 7))]
    fn evaluate<'py>(
        &self,
        py: Python<'py>,
        dataset: &PyDataset,
        split: &str,
        pdf_bins: usize,
        ssim_window: usize,
    ) -> PyResult<Bound<'py, PyAny>> {
        let split = self::split(split)?;
        let cfg = MetricsConfig { pdf_bins, ssim_window };
        let (model, data) = (&self.inner, &dataset.inner);
        let report = py.detach(|| model.evaluate(data, split, &cfg)).py()?;
        json_to_py(py, serde_json::to_string(&report.summary()))
    }

    fn without_refiner(&self) -> Self {
        Self {
            inner: self.inner.without_refiner(),
        }
    }

    #[getter]
    fn label(&self) -> String {
        self.inner.spec.label()
    }

    #[getter]
    fn resolution(&self) -> usize {
        self.inner.resolution()
    }

    #[getter]
    fn parameter_count(&self) -> usize {
        self.inner.parameter_count()
    }

    #[getter]
    fn spec(&self) -> PySpec {
        PySpec {
            inner: self.inner.spec.clone(),
        }
    }

    #[getter]
    fn metadata<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        json_to_py(py, serde_json::to_string(&self.inner.metadata))
    }

    fn __repr__(&self) -> String {
        format!("Model({:?}, parameters={})", self.inner.spec.label(), self.inner.parameter_count())
    }
}

/// Solves `lap_h u = f` with zero boundary values.
#[pyfunction]
#[pyo3(signature = (f, method = "cg"))]
fn solve_poisson(py: Python<'_>, f: &PyField, method: &str) -> PyResult<PyField> {
    let mut cfg = SolverConfig::for_resolution(f.inner.resolution());
    cfg.method = solver_method(method)?;
    let f = &f.inner;
    Ok(PyField {
        inner: py.detach(|| fd::solve_poisson(f, &cfg)).py()?,
    })
}

#[pyfunction]
fn mse(a: &PyField, b: &PyField) -> PyResult<f64> {
    metrics::mse(&a.inner, &b.inner).py()
}

#[pyfunction]
fn mae(a: &PyField, b: &PyField) -> PyResult<f64> {
    metrics::mae(&a.inner, &b.inner).py()
}

#[pyfunction]
fn ssim(a: &PyField, b: &PyField) -> PyResult<f64> {
    metrics::ssim(&a.inner, &b.inner).py()
}

/// Radially binned energy, one entry per integer wavenumber.
#[pyfunction]
fn energy_spectrum(u: &PyField) -> Vec<f64> {
    metrics::energy_spectrum(&u.inner)
}

/// Number of patches the layout rule places on a `resolution` grid.
#[pyfunction]
fn patch_count(resolution: usize, patch: usize, stride: usize) -> PyResult<usize> {
    Ok(make_layout(resolution, patch, stride).py()?.count())
}

#[pymodule]
fn ppca(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyField>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PySpec>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(solve_poisson, m)?)?;
    m.add_function(wrap_pyfunction!(mse, m)?)?;
    m.add_function(wrap_pyfunction!(mae, m)?)?;
    m.add_function(wrap_pyfunction!(ssim, m)?)?;
    m.add_function(wrap_pyfunction!(energy_spectrum, m)?)?;
    m.add_function(wrap_pyfunction!(patch_count, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
