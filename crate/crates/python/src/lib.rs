//! Python bindings for `scil-core`.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use scil_core::engine::{Engine as CoreEngine, EngineConfig};
use scil_core::experiment::{self, DiffReport, ExperimentConfig};
use scil_core::metrics::PrequentialScorer as CoreScorer;
use scil_core::model::{ModelConfig, UnifiedModel as CoreModel};
use scil_core::streams::{SyntheticStream, StreamSpec};
use scil_core::{corrector, smote, Error};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Config(_) | Error::Toml(_) | Error::InputDomain(_) | Error::Precondition(_) => {
            PyValueError::new_err(e.to_string())
        }
        Error::Io(_) => PyIOError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn load_config(dataset: Option<&str>, toml: Option<&str>) -> PyResult<ExperimentConfig> {
    match (dataset, toml) {
        (_, Some(text)) => ExperimentConfig::from_toml(text).map_err(py_err),
        (Some(name), None) => experiment::default_config(name)
            .ok_or_else(|| PyValueError::new_err(format!("unknown dataset {name:?}"))),
        (None, None) => Err(PyValueError::new_err("pass a dataset name or a TOML config")),
    }
}

/// Default experiment config for `dataset` as TOML.
#[pyfunction]
fn default_config(dataset: &str) -> PyResult<String> {
    load_config(Some(dataset), None)?.to_toml().map_err(py_err)
}

/// Synthetic stream as a list of `(t, label, features)` tuples.
#[pyfunction]
#[pyo3(signature = (dataset, seed=1, length=None))]
fn generate(dataset: &str, seed: u64, length: Option<usize>) -> PyResult<Vec<(u64, usize, Vec<f64>)>> {
    let mut spec = match dataset {
        "blob" => StreamSpec::blob(),
        "sea" => StreamSpec::sea(),
        "vib" => StreamSpec::vib(),
        other => return Err(PyValueError::new_err(format!("no generator named {other:?}"))),
    };
    if let Some(n) = length {
        spec.length = n;
    }
    let stream = SyntheticStream::new(&spec, seed).map_err(py_err)?;
    Ok(stream.map(|i| (i.t, i.label, i.x)).collect())
}

#[pyfunction]
fn geometric_median(points: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
    corrector::geometric_median(&points).map_err(py_err)
}

/// Oversamples `points` to `target` rows (originals first).
#[pyfunction]
#[pyo3(signature = (points, target, k=5, seed=0))]
fn smote_oversample(points: Vec<Vec<f64>>, target: usize, k: usize, seed: u64) -> PyResult<Vec<Vec<f64>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    smote::smote_class(&points, target, k, &mut rng).map_err(py_err)
}

/// Runs a multi-seed experiment and returns the summary as JSON.
#[pyfunction]
#[pyo3(signature = (dataset=None, config=None, runs=None, write_outputs=false))]
fn run_experiment(
    py: Python<'_>,
    dataset: Option<&str>,
    config: Option<&str>,
    runs: Option<usize>,
    write_outputs: bool,
) -> PyResult<String> {
    let mut cfg = load_config(dataset, config)?;
    if let Some(r) = runs {
        cfg.runs = r;
    }
    cfg.write_outputs = write_outputs;
    let summary = py
        .detach(|| experiment::run_experiment(&cfg))
        .map_err(py_err)?
        .0;
    serde_json::to_string_pretty(&summary).map_err(|e| py_err(e.into()))
}

/// `None` if the two files are identical, otherwise a description.
#[pyfunction]
fn diff(a: PathBuf, b: PathBuf) -> PyResult<Option<String>> {
    match experiment::diff_streams(&a, &b).map_err(py_err)? {
        DiffReport::Identical => Ok(None),
        other => Ok(Some(other.to_string())),
    }
}

#[pyclass(module = "scil")]
struct UnifiedModel {
    inner: CoreModel,
    rng: ChaCha8Rng,
}

#[pymethods]
impl UnifiedModel {
    #[new]
    #[pyo3(signature = (input_dim, classes, seed=0))]
    fn new(input_dim: usize, classes: usize, seed: u64) -> PyResult<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inner = CoreModel::new(ModelConfig::small(input_dim), classes, seed, &mut rng).map_err(py_err)?;
        Ok(Self { inner, rng })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner = CoreModel::from_json(text).map_err(py_err)?;
        let rng = ChaCha8Rng::seed_from_u64(inner.seed());
        Ok(Self { inner, rng })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(py_err)
    }

    #[getter]
    fn class_count(&self) -> usize {
        self.inner.class_count()
    }

    /// `(label, probabilities, reconstruction_loss)`.
    fn predict(&self, x: Vec<f64>) -> PyResult<(usize, Vec<f64>, f64)> {
        let p = self.inner.predict(&x).map_err(py_err)?;
        Ok((p.label, p.probabilities, p.recon_loss))
    }

    fn reconstruction_loss(&self, x: Vec<f64>) -> PyResult<f64> {
        self.inner.reconstruction_loss(&x).map_err(py_err)
    }

    fn expand_classes(&mut self, new_count: usize) -> PyResult<()> {
        self.inner.expand_classes(new_count, &mut self.rng).map_err(py_err)
    }

    /// Trains for `epochs` and returns the mean loss of each epoch.
    fn train(&mut self, xs: Vec<Vec<f64>>, labels: Vec<usize>, epochs: usize) -> PyResult<Vec<f64>> {
        if xs.len() != labels.len() {
            return Err(PyValueError::new_err("xs and labels differ in length"));
        }
        let rows: Vec<_> = xs.into_iter().zip(labels).collect();
        self.inner.train_session(&rows, epochs, &mut self.rng).map_err(py_err)
    }

    fn accuracy(&self, xs: Vec<Vec<f64>>, labels: Vec<usize>) -> PyResult<f64> {
        let rows: Vec<_> = xs.into_iter().zip(labels).collect();
        self.inner.accuracy(&rows).map_err(py_err)
    }
}

#[pyclass(module = "scil")]
struct Engine {
    inner: CoreEngine,
}

#[pymethods]
impl Engine {
    /// Pretrains on `data[i]`, the instances of class `i` (class 0 is the
    /// majority). `config` is an engine TOML table; the dataset defaults are
    /// used otherwise.
    #[new]
    #[pyo3(signature = (data, dataset="blob", config=None, seed=0))]
    fn new(data: Vec<Vec<Vec<f64>>>, dataset: &str, config: Option<&str>, seed: u64) -> PyResult<Self> {
        let mut cfg: EngineConfig = match config {
            Some(text) => toml::from_str(text).map_err(|e| py_err(e.into()))?,
            None => load_config(Some(dataset), None)?.engine,
        };
        if cfg.model.input_dim == 0 {
            cfg.model.input_dim = data.first().and_then(|d| d.first()).map_or(0, Vec::len);
        }
        cfg.seed = seed;
        let inner = CoreEngine::pretrain(cfg, &data).map_err(py_err)?;
        Ok(Self { inner })
    }

    /// Processes one instance and returns the outcome as a dict.
    #[pyo3(signature = (x, truth=None))]
    fn step<'py>(&mut self, py: Python<'py>, x: Vec<f64>, truth: Option<usize>) -> PyResult<Bound<'py, PyDict>> {
        let o = self.inner.step(&x, truth).map_err(py_err)?;
        let d = PyDict::new(py);
        d.set_item("timestep", o.timestep)?;
        d.set_item("model_label", o.model_label)?;
        d.set_item("predicted_label", o.predicted_label)?;
        d.set_item("is_novel", o.is_novel)?;
        d.set_item("recon_loss", o.recon_loss)?;
        d.set_item("theta", o.theta_of_predicted)?;
        d.set_item("event", o.event.as_str())?;
        d.set_item("promoted_class", o.promotion.as_ref().map(|p| p.class))?;
        d.set_item("promoted_truths", o.promotion.map(|p| p.ground_truths))?;
        d.set_item("corrections", o.corrections.len())?;
        Ok(d)
    }

    #[getter]
    fn thresholds(&self) -> Vec<f64> {
        self.inner.thresholds().theta.clone()
    }

    #[getter]
    fn class_count(&self) -> usize {
        self.inner.class_count()
    }

    #[getter]
    fn timestep(&self) -> u64 {
        self.inner.timestep()
    }

    #[getter]
    fn stored(&self) -> usize {
        self.inner.memory().total_stored()
    }

    #[getter]
    fn capacity_bound(&self) -> usize {
        self.inner.memory().capacity_bound()
    }

    fn model(&self) -> UnifiedModel {
        let inner = self.inner.model().clone();
        let rng = ChaCha8Rng::seed_from_u64(inner.seed());
        UnifiedModel { inner, rng }
    }
}

#[pyclass(module = "scil")]
struct PrequentialScorer {
    inner: CoreScorer,
}

#[pymethods]
impl PrequentialScorer {
    #[new]
    #[pyo3(signature = (fading=0.99, initial_labels=vec![0, 1]))]
    fn new(fading: f64, initial_labels: Vec<usize>) -> Self {
        Self {
            inner: CoreScorer::new(fading, &initial_labels),
        }
    }

    /// Scores one step; `predicted` is the internal class or `None` for novel.
    fn record(&mut self, true_label: usize, predicted: Option<usize>) -> bool {
        self.inner.record(true_label, predicted)
    }

    fn update_label_map(&mut self, internal: usize, buffer_truths: Vec<Option<usize>>) {
        self.inner.update_label_map(internal, &buffer_truths);
    }

    #[getter]
    fn en_accuracy(&self) -> f64 {
        self.inner.en_accuracy()
    }

    #[getter]
    fn g_mean(&self) -> f64 {
        self.inner.g_mean()
    }

    #[getter]
    fn false_negative_rate(&self) -> f64 {
        self.inner.false_negative_rate()
    }

    fn recalls(&self) -> Vec<(usize, f64)> {
        self.inner.recalls()
    }
}

#[pymodule]
fn scil(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Engine>()?;
    m.add_class::<UnifiedModel>()?;
    m.add_class::<PrequentialScorer>()?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(geometric_median, m)?)?;
    m.add_function(wrap_pyfunction!(smote_oversample, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(diff, m)?)?;
    Ok(())
}
