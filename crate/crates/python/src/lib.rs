//! Python bindings: metering, labelling, splitting, models, metrics and
//! the full pipeline. Configs cross the boundary as plain dicts.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use flowlab_core::dataset::{ColumnData, Dataset as CoreDataset};
use flowlab_core::eval::{self, ReportConfig};
use flowlab_core::explain::{self, Grouping, PermutationConfig};
use flowlab_core::ingest::{parse_capture, IngestConfig};
use flowlab_core::labeling::{label_dataset, RuleSet};
use flowlab_core::meter::{self, MeterConfig};
use flowlab_core::models::{Model as CoreModel, ModelSpec};
use flowlab_core::pipeline::{Run, RunConfig};
use flowlab_core::split::{self as core_split, Partition, SplitAssignment, SplitSpec};
use flowlab_core::synth::{write_capture, SynthConfig};
use flowlab_core::transforms::LabeledRows;
use flowlab_core::Error;

create_exception!(flowlab, FlowlabError, PyException);
create_exception!(flowlab, ConfigError, FlowlabError);
create_exception!(flowlab, LeakageError, FlowlabError);

fn err(e: Error) -> PyErr {
    match e {
        Error::Leakage { .. } | Error::Lineage(_) => LeakageError::new_err(e.to_string()),
        e if e.is_validation() => ConfigError::new_err(e.to_string()),
        e => FlowlabError::new_err(e.to_string()),
    }
}

trait OrPy<T> {
    fn py_err(self) -> PyResult<T>;
}

impl<T> OrPy<T> for flowlab_core::Result<T> {
    fn py_err(self) -> PyResult<T> {
        self.map_err(err)
    }
}

/// Python object -> JSON text, via the stdlib encoder.
fn dumps(py: Python<'_>, obj: &Bound<'_, PyAny>) -> PyResult<String> {
    py.import("json")?.call_method1("dumps", (obj,))?.extract()
}

fn loads<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (text,))
}

fn to_py<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| FlowlabError::new_err(e.to_string()))?;
    loads(py, &text)
}

fn from_py<T: serde::de::DeserializeOwned + Default>(py: Python<'_>, obj: Option<&Bound<'_, PyAny>>) -> PyResult<T> {
    match obj {
        None => Ok(T::default()),
        Some(o) if o.is_none() => Ok(T::default()),
        Some(o) => serde_json::from_str(&dumps(py, o)?).map_err(|e| ConfigError::new_err(e.to_string())),
    }
}

/// A column-oriented table of flows.
#[pyclass(module = "flowlab")]
struct Dataset {
    inner: CoreDataset,
}

#[pymethods]
impl Dataset {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Dataset { inner: CoreDataset::load(path).py_err()? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(path, &[]).py_err()
    }

    #[getter]
    fn n_rows(&self) -> usize {
        self.inner.n_rows()
    }

    #[getter]
    fn columns(&self) -> Vec<String> {
        self.inner.column_names().into_iter().map(String::from).collect()
    }

    /// Numbers as floats, timestamps as epoch seconds, text as str.
    fn column<'py>(&self, py: Python<'py>, name: &str) -> PyResult<Bound<'py, PyList>> {
        let col = self.inner.column(name).ok_or_else(|| ConfigError::new_err(format!("no column {name:?}")))?;
        match &col.data {
            ColumnData::Text(v) => PyList::new(py, v),
            data => PyList::new(py, (0..data.len()).map(|i| data.as_f64(i).unwrap_or(f64::NAN))),
        }
    }

    fn labels(&self) -> Option<Vec<String>> {
        self.inner.labels().map(<[String]>::to_vec)
    }

    /// Row-major numeric matrix over the given columns.
    fn matrix(&self, columns: Vec<String>) -> PyResult<Vec<Vec<f64>>> {
        let cols: Vec<&[f64]> =
            columns.iter().map(|c| self.inner.require_nums(c, "python")).collect::<Result<_, _>>().py_err()?;
        Ok((0..self.inner.n_rows()).map(|i| cols.iter().map(|c| c[i]).collect()).collect())
    }

    fn __len__(&self) -> usize {
        self.inner.n_rows()
    }

    fn __repr__(&self) -> String {
        format!("Dataset({} rows x {} columns)", self.inner.n_rows(), self.inner.n_cols())
    }
}

/// Write a synthetic labelled capture; returns the packet count.
#[pyfunction]
#[pyo3(signature = (path, flows = 600, seed = 7))]
fn synth_capture(path: PathBuf, flows: usize, seed: u64) -> PyResult<usize> {
    write_capture(path, &SynthConfig { flows, seed, ..Default::default() }).py_err()
}

/// Decode a capture and meter it into a flow table.
#[pyfunction]
#[pyo3(signature = (path, config = None))]
fn meter_capture(py: Python<'_>, path: PathBuf, config: Option<&Bound<'_, PyAny>>) -> PyResult<(Dataset, Py<PyAny>)> {
    let cfg: MeterConfig = from_py(py, config)?;
    let cap = parse_capture(path, &IngestConfig::default()).py_err()?;
    let (records, stats) = meter::meter_packets(&cap.packets, &cfg).py_err()?;
    let ds = meter::records_to_dataset(&records, cfg.splt_n).py_err()?;
    Ok((Dataset { inner: ds }, to_py(py, &stats)?.unbind()))
}

/// Attach labels from port rules (the built-in table when `rules` is None).
#[pyfunction]
#[pyo3(signature = (dataset, rules = None))]
fn label(py: Python<'_>, mut dataset: PyRefMut<'_, Dataset>, rules: Option<&str>) -> PyResult<Py<PyAny>> {
    let rules = match rules {
        Some(text) => RuleSet::parse(text, "<python>").py_err()?,
        None => RuleSet::default_ports(),
    };
    let stats = label_dataset(&mut dataset.inner, Some(&rules), None).py_err()?;
    Ok(to_py(py, &stats)?.unbind())
}

/// A train/validation/test assignment.
#[pyclass(module = "flowlab")]
struct Split {
    inner: SplitAssignment,
}

#[pymethods]
impl Split {
    #[getter]
    fn partitions(&self) -> Vec<&'static str> {
        self.inner.partitions.iter().map(|p| p.as_str()).collect()
    }

    #[getter]
    fn fingerprint(&self) -> String {
        self.inner.manifest.fingerprint.clone()
    }

    fn rows(&self, partition: &str) -> PyResult<Vec<usize>> {
        let p: Partition = partition.parse().py_err()?;
        Ok(self.inner.rows(p))
    }

    fn manifest<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.manifest)
    }
}

/// Partition a labelled dataset; keyword arguments follow the split spec.
#[pyfunction]
#[pyo3(signature = (dataset, **spec))]
fn split(py: Python<'_>, dataset: &Dataset, spec: Option<&Bound<'_, PyDict>>) -> PyResult<Split> {
    let spec: SplitSpec = from_py(py, spec.map(|d| d.as_any()))?;
    Ok(Split { inner: core_split::split(&dataset.inner, &spec).py_err()? })
}

/// A fitted decision tree, random forest or k-NN classifier.
#[pyclass(module = "flowlab")]
struct Model {
    inner: CoreModel,
}

#[pymethods]
impl Model {
    /// `spec` is a dict such as `{"kind": "forest", "n_trees": 50}`.
    #[staticmethod]
    #[pyo3(signature = (x, y, spec = None))]
    fn fit(py: Python<'_>, x: Vec<Vec<f64>>, y: Vec<String>, spec: Option<&Bound<'_, PyAny>>) -> PyResult<Self> {
        let spec: ModelSpec = from_py(py, spec)?;
        let inner = py.detach(|| spec.fit(&x, &y)).py_err()?;
        Ok(Model { inner })
    }

    fn predict(&self, py: Python<'_>, x: Vec<Vec<f64>>) -> PyResult<Vec<String>> {
        py.detach(|| self.inner.predict(&x)).py_err()
    }

    fn predict_proba(&self, py: Python<'_>, x: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        py.detach(|| self.inner.predict_proba(&x)).py_err()
    }

    #[getter]
    fn classes(&self) -> Vec<String> {
        self.inner.classes().to_vec()
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.inner.kind()
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(|e| FlowlabError::new_err(e.to_string()))
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner = serde_json::from_str(text).map_err(|e| FlowlabError::new_err(e.to_string()))?;
        Ok(Model { inner })
    }

    fn __repr__(&self) -> String {
        format!("Model(kind={:?}, classes={:?})", self.inner.kind(), self.inner.classes())
    }
}

/// Full metric report (per class, macro/weighted/micro, confusion matrix).
#[pyfunction]
#[pyo3(signature = (actual, predicted, beta = 1.0))]
fn evaluate<'py>(py: Python<'py>, actual: Vec<String>, predicted: Vec<String>, beta: f64) -> PyResult<Bound<'py, PyAny>> {
    let cm = eval::confusion(&actual, &predicted).py_err()?;
    to_py(py, &eval::report(&cm, &ReportConfig { beta, ..Default::default() }))
}

#[pyfunction]
fn score(metric: &str, actual: Vec<String>, predicted: Vec<String>) -> PyResult<f64> {
    let m: eval::Metric = metric.parse().py_err()?;
    m.score(&actual, &predicted).py_err()
}

#[pyfunction]
fn roc_auc(scores: Vec<f64>, actual: Vec<bool>) -> PyResult<f64> {
    Ok(eval::roc_auc(&scores, &actual).py_err()?.auc)
}

/// Permutation importance; correlated columns are grouped unless
/// `group_threshold` is None.
#[pyfunction]
#[pyo3(signature = (model, x, y, columns, metric = "macro_f1", repeats = 10, seed = 0, group_threshold = Some(0.9)))]
#[allow(clippy::too_many_arguments)]
fn permutation_importance<'py>(
    py: Python<'py>,
    model: &Model,
    x: Vec<Vec<f64>>,
    y: Vec<String>,
    columns: Vec<String>,
    metric: &str,
    repeats: usize,
    seed: u64,
    group_threshold: Option<f64>,
) -> PyResult<Bound<'py, PyAny>> {
    let rows = LabeledRows::new(columns, x, y).py_err()?;
    let cfg = PermutationConfig {
        metric: metric.to_string(),
        repeats,
        seed,
        grouping: group_threshold.map_or(Grouping::None, |threshold| Grouping::Correlation { threshold }),
    };
    let table = py.detach(|| explain::permutation_importance(&model.inner, &rows, &cfg)).py_err()?;
    to_py(py, &table)
}

/// Single-pass mean, variance, skewness and excess kurtosis.
#[pyclass(module = "flowlab")]
#[derive(Default)]
struct StreamingMoments {
    inner: meter::StreamingMoments,
}

#[pymethods]
impl StreamingMoments {
    #[new]
    fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, x: f64) {
        self.inner.push(x);
    }

    fn extend(&mut self, xs: Vec<f64>) {
        xs.into_iter().for_each(|x| self.inner.push(x));
    }

    #[getter]
    fn count(&self) -> u64 {
        self.inner.count()
    }

    #[getter]
    fn mean(&self) -> Option<f64> {
        self.inner.mean()
    }

    #[getter]
    fn variance(&self) -> Option<f64> {
        self.inner.variance()
    }

    #[getter]
    fn skewness(&self) -> Option<f64> {
        self.inner.skewness()
    }

    #[getter]
    fn kurtosis(&self) -> Option<f64> {
        self.inner.kurtosis()
    }
}

/// Run every pipeline stage; returns the run directory.
/// `overrides` maps dotted keys to values, e.g. `{"model.n_trees": 20}`.
#[pyfunction]
#[pyo3(signature = (config = None, overrides = None))]
fn run_pipeline(py: Python<'_>, config: Option<&Bound<'_, PyAny>>, overrides: Option<&Bound<'_, PyDict>>) -> PyResult<String> {
    let text = match config {
        Some(c) if !c.is_none() => Some(dumps(py, c)?),
        _ => None,
    };
    let mut pairs = Vec::new();
    if let Some(d) = overrides {
        for (k, v) in d.iter() {
            let raw = match v.extract::<String>() {
                Ok(s) => s,
                Err(_) => dumps(py, &v)?,
            };
            pairs.push((k.extract::<String>()?, raw));
        }
    }
    let cfg = RunConfig::from_json(text.as_deref(), &pairs).py_err()?;
    let run = Run::new(cfg).py_err()?;
    py.detach(|| run.run_all()).py_err()?;
    Ok(run.dir.display().to_string())
}

#[pymodule]
fn flowlab(m: &Bound<'_, PyModule>) -> PyResult<()> {
    let py = m.py();
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add("FlowlabError", py.get_type::<FlowlabError>())?;
    m.add("ConfigError", py.get_type::<ConfigError>())?;
    m.add("LeakageError", py.get_type::<LeakageError>())?;
    m.add_class::<Dataset>()?;
    m.add_class::<Split>()?;
    m.add_class::<Model>()?;
    m.add_class::<StreamingMoments>()?;
    m.add_function(wrap_pyfunction!(synth_capture, m)?)?;
    m.add_function(wrap_pyfunction!(meter_capture, m)?)?;
    m.add_function(wrap_pyfunction!(label, m)?)?;
    m.add_function(wrap_pyfunction!(split, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(score, m)?)?;
    m.add_function(wrap_pyfunction!(roc_auc, m)?)?;
    m.add_function(wrap_pyfunction!(permutation_importance, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    Ok(())
}
