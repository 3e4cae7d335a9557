//! Python bindings: training, seen and unseen hashing, metrics and the
//! experiment runner. Matrices cross the boundary as lists of rows; codes as
//! lists of `±1`.

use nalgebra::DMatrix;
use pyo3::exceptions::{PyArithmeticError, PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use zshash::dataset::{DatasetBundle, FeatureMatrix, LabelVector, SignatureMatrix, SyntheticParams};
use zshash::hashing::{HashCode, HashCodeSet};
use zshash::pipeline::{ExperimentConfig, TrainedModel};
use zshash::zsl::ExtendedAnchorSet;
use zshash::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Numeric(_) => PyArithmeticError::new_err(e.to_string()),
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

trait OrPy<T> {
    fn py_err(self) -> PyResult<T>;
}

impl<T> OrPy<T> for zshash::Result<T> {
    fn py_err(self) -> PyResult<T> {
        self.map_err(to_py)
    }
}

fn matrix(rows: &[Vec<f64>], what: &str) -> PyResult<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 {
        return Err(PyValueError::new_err(format!("{what} is empty")));
    }
    if rows.iter().any(|row| row.len() != c) {
        return Err(PyValueError::new_err(format!("{what} rows have different lengths")));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn features(rows: &[Vec<f64>]) -> PyResult<FeatureMatrix> {
    FeatureMatrix::new(matrix(rows, "features")?).py_err()
}

fn signatures(rows: &[Vec<f64>]) -> PyResult<SignatureMatrix> {
    SignatureMatrix::new(matrix(rows, "signatures")?).py_err()
}

fn codes(signs: &[Vec<i8>]) -> PyResult<HashCodeSet> {
    if signs.iter().flatten().any(|&s| s != 1 && s != -1) {
        return Err(PyValueError::new_err("codes must contain only +1 and -1"));
    }
    HashCodeSet::from_codes(signs.iter().map(|s| HashCode::from_signs(s)).collect()).py_err()
}

fn signs(set: &HashCodeSet) -> Vec<Vec<i8>> {
    set.codes().iter().map(HashCode::to_signs).collect()
}

fn labels(raw: Vec<usize>) -> PyResult<LabelVector> {
    let n = raw.iter().copied().max().map_or(0, |m| m + 1);
    LabelVector::new(raw, n).py_err()
}

/// Config from optional text plus keyword overrides, applied in that order.
fn config(text: Option<&str>, overrides: Option<&Bound<'_, PyDict>>) -> PyResult<ExperimentConfig> {
    let mut cfg = match text {
        Some(t) => ExperimentConfig::parse_str(t).py_err()?,
        None => ExperimentConfig::default(),
    };
    if let Some(kw) = overrides {
        for (k, v) in kw.iter() {
            let key: String = k.extract()?;
            let value = match v.extract::<bool>() {
                Ok(b) => b.to_string(),
                Err(_) => v.str()?.to_string(),
            };
            cfg.set(&key, &value).py_err()?;
        }
    }
    cfg.validate().py_err()?;
    Ok(cfg)
}

/// A trained model, optionally extended to unseen classes.
#[pyclass(name = "Model", module = "zshash_py")]
struct PyModel {
    inner: TrainedModel,
    unseen: Option<(ExtendedAnchorSet, SignatureMatrix)>,
}

#[pymethods]
impl PyModel {
    /// Trains on seen-class data. `signatures` has one row per attribute and
    /// one column per class; keyword arguments are config entries.
    #[staticmethod]
    #[pyo3(signature = (features, labels, signatures, config_text=None, **overrides))]
    fn train(
        py: Python<'_>,
        features: Vec<Vec<f64>>,
        labels: Vec<usize>,
        signatures: Vec<Vec<f64>>,
        config_text: Option<&str>,
        overrides: Option<&Bound<'_, PyDict>>,
    ) -> PyResult<Self> {
        let cfg = config(config_text, overrides)?;
        let sig = self::signatures(&signatures)?;
        let n = sig.n_classes();
        let bundle = DatasetBundle::new(
            self::features(&features)?,
            LabelVector::new(labels, n).py_err()?,
            sig,
            None,
        )
        .py_err()?;
        let inner = py.detach(|| zshash::pipeline::train(&bundle, &cfg)).py_err()?;
        Ok(PyModel { inner, unseen: None })
    }

    #[staticmethod]
    fn load(dir: &str) -> PyResult<Self> {
        Ok(PyModel {
            inner: TrainedModel::load(dir.as_ref()).py_err()?,
            unseen: None,
        })
    }

    fn save(&self, dir: &str) -> PyResult<()> {
        self.inner.save(dir.as_ref()).py_err()
    }

    #[getter]
    fn code_length(&self) -> usize {
        self.inner.code_length()
    }

    #[getter]
    fn n_anchors(&self) -> usize {
        self.inner.n_anchors()
    }

    #[getter]
    fn sigma(&self) -> f64 {
        self.inner.sigma
    }

    #[getter]
    fn centers(&self) -> Vec<Vec<f64>> {
        rows_of(&self.inner.anchors.centers)
    }

    #[getter]
    fn embedding(&self) -> Vec<Vec<f64>> {
        rows_of(&self.inner.embedding.m)
    }

    #[getter]
    fn class_of_anchor(&self) -> Vec<usize> {
        self.inner.anchors.class_of_anchor.clone()
    }

    fn anchor_codes(&self) -> Vec<Vec<i8>> {
        signs(&self.inner.anchor_codes())
    }

    /// Codes of seen-class instances.
    fn hash(&self, py: Python<'_>, features: Vec<Vec<f64>>) -> PyResult<Vec<Vec<i8>>> {
        let x = self::features(&features)?;
        Ok(signs(&py.detach(|| self.inner.hash_seen(&x)).py_err()?))
    }

    /// Synthesizes anchors for unseen classes (one signature column each)
    /// and returns their codes.
    fn extend(&mut self, unseen_signatures: Vec<Vec<f64>>) -> PyResult<Vec<Vec<i8>>> {
        let sig = signatures(&unseen_signatures)?;
        let ids: Vec<usize> = (0..sig.n_classes()).collect();
        let ext = self.inner.extend(&sig, &ids).py_err()?;
        let out = signs(&ext.unseen_codes());
        self.unseen = Some((ext, sig));
        Ok(out)
    }

    /// Codes of unseen-class instances; call `extend` first.
    fn hash_unseen(&self, py: Python<'_>, features: Vec<Vec<f64>>) -> PyResult<Vec<Vec<i8>>> {
        let (ext, sig) = self
            .unseen
            .as_ref()
            .ok_or_else(|| PyValueError::new_err("call extend() before hash_unseen()"))?;
        let x = self::features(&features)?;
        Ok(signs(&py.detach(|| self.inner.hash_unseen(&x, ext, sig)).py_err()?))
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(n_anchors={}, code_length={}, embedder={})",
            self.inner.n_anchors(),
            self.inner.code_length(),
            self.inner.embedding.embedder.kind
        )
    }
}

/// Synthetic zero-shot data as a dict of lists.
#[pyfunction]
#[pyo3(signature = (n_seen=8, n_unseen=2, per_class=50, dim=32, attr_dim=16, spread=0.1, seed=1))]
#[allow(clippy::too_many_arguments)]
fn generate_synthetic(
    py: Python<'_>,
    n_seen: usize,
    n_unseen: usize,
    per_class: usize,
    dim: usize,
    attr_dim: usize,
    spread: f64,
    seed: u64,
) -> PyResult<Bound<'_, PyDict>> {
    let p = SyntheticParams::new(n_seen, n_unseen, per_class, dim, attr_dim, spread, seed);
    let split = zshash::generate_synthetic(&p).py_err()?;
    let d = PyDict::new(py);
    for (prefix, b) in [("seen", &split.seen), ("unseen", &split.unseen)] {
        d.set_item(format!("{prefix}_features"), rows_of(b.features.matrix()))?;
        d.set_item(format!("{prefix}_labels"), b.labels.as_slice().to_vec())?;
        d.set_item(format!("{prefix}_signatures"), rows_of(b.signatures.matrix()))?;
    }
    d.set_item("unseen_class_ids", split.unseen_class_ids.clone())?;
    Ok(d)
}

#[pyfunction]
fn hamming_distance(a: Vec<i8>, b: Vec<i8>) -> PyResult<usize> {
    let set = codes(&[a, b])?;
    zshash::hamming_distance(set.get(0), set.get(1)).py_err()
}

/// Hamming-radius precision, recall and F1 (macro-averaged over queries).
#[pyfunction]
#[pyo3(signature = (queries, query_labels, database, db_labels, radius=2))]
fn lookup_metrics<'py>(
    py: Python<'py>,
    queries: Vec<Vec<i8>>,
    query_labels: Vec<usize>,
    database: Vec<Vec<i8>>,
    db_labels: Vec<usize>,
    radius: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let (ql, dl) = shared_labels(query_labels, db_labels)?;
    let m = zshash::lookup_metrics(&codes(&queries)?, &ql, &codes(&database)?, &dl, radius).py_err()?;
    let d = PyDict::new(py);
    d.set_item("precision", m.precision)?;
    d.set_item("recall", m.recall)?;
    d.set_item("f1", m.f1)?;
    d.set_item("radius", m.radius)?;
    d.set_item("n_queries", m.n_queries)?;
    d.set_item("empty_retrievals", m.empty_retrievals)?;
    Ok(d)
}

#[pyfunction]
fn mean_average_precision(
    queries: Vec<Vec<i8>>,
    query_labels: Vec<usize>,
    database: Vec<Vec<i8>>,
    db_labels: Vec<usize>,
) -> PyResult<f64> {
    let (ql, dl) = shared_labels(query_labels, db_labels)?;
    zshash::mean_average_precision(&codes(&queries)?, &ql, &codes(&database)?, &dl).py_err()
}

fn shared_labels(q: Vec<usize>, d: Vec<usize>) -> PyResult<(LabelVector, LabelVector)> {
    let n = q.iter().chain(&d).copied().max().map_or(0, |m| m + 1);
    Ok((LabelVector::new(q, n).py_err()?, LabelVector::new(d, n).py_err()?))
}

/// Assignment accuracy of codes against anchor codes.
#[pyfunction]
fn anchor_assignment_accuracy(
    codes_: Vec<Vec<i8>>,
    labels_: Vec<usize>,
    anchor_codes: Vec<Vec<i8>>,
    class_of_anchor: Vec<usize>,
) -> PyResult<f64> {
    let l = labels(labels_)?;
    let n = l.n_classes().max(class_of_anchor.iter().copied().max().map_or(0, |m| m + 1));
    let l = LabelVector::new(l.as_slice().to_vec(), n).py_err()?;
    Ok(zshash::anchor_assignment_accuracy(&codes(&codes_)?, &l, &codes(&anchor_codes)?, &class_of_anchor)
        .py_err()?
        .accuracy)
}

/// Runs the configured experiment and returns the metrics CSV.
#[pyfunction]
#[pyo3(signature = (config_text=None, **overrides))]
fn run_experiment(py: Python<'_>, config_text: Option<&str>, overrides: Option<&Bound<'_, PyDict>>) -> PyResult<String> {
    let cfg = config(config_text, overrides)?;
    py.detach(|| zshash::pipeline::run_from_config(&cfg)).py_err()
}

/// The default configuration in config-file form.
#[pyfunction]
fn default_config() -> String {
    ExperimentConfig::default().to_config_string()
}

#[pymodule]
fn zshash_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(generate_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(hamming_distance, m)?)?;
    m.add_function(wrap_pyfunction!(lookup_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(mean_average_precision, m)?)?;
    m.add_function(wrap_pyfunction!(anchor_assignment_accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    Ok(())
}
