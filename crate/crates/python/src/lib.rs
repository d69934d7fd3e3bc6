//! Python bindings: manifests, metrics, focal loss, embedding stores and heads.
//!
//! Structured values cross the boundary as plain dicts and lists (via JSON).

use std::path::PathBuf;

use dfl_core::embedstore::{self, EmbeddingDataset, NormalizationMode, Provenance};
use dfl_core::head::{self, Checkpoint, HeadConfig};
use dfl_core::{dataset, metrics};
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyDict;

pyo3::create_exception!(dfl, DflError, PyException);

fn err(e: dfl_core::Error) -> PyErr {
    DflError::new_err(e.to_string())
}

fn to_py(py: Python<'_>, value: &impl serde::Serialize) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| DflError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn from_py<T: serde::de::DeserializeOwned>(py: Python<'_>, obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = py.import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| DflError::new_err(e.to_string()))
}

/// Loads and validates a manifest, returned as a dict.
#[pyfunction]
fn load_manifest(py: Python<'_>, path: PathBuf) -> PyResult<Py<PyAny>> {
    let m = dataset::load_manifest(&path).map_err(err)?;
    m.validate().map_err(err)?;
    to_py(py, &m)
}

/// Content hash of a manifest file, as used for cache keys.
#[pyfunction]
fn manifest_hash(path: PathBuf) -> PyResult<String> {
    Ok(dataset::load_manifest(&path).map_err(err)?.content_hash())
}

fn confusion(truth: &[u32], pred: &[u32], classes: usize) -> PyResult<metrics::ConfusionMatrix> {
    metrics::confusion(truth, pred, classes).map_err(err)
}

#[pyfunction]
fn confusion_matrix(truth: Vec<u32>, pred: Vec<u32>, classes: usize) -> PyResult<Vec<Vec<u64>>> {
    Ok(confusion(&truth, &pred, classes)?.rows())
}

#[pyfunction]
fn balanced_accuracy(truth: Vec<u32>, pred: Vec<u32>, classes: usize) -> PyResult<f64> {
    metrics::balanced_accuracy(&confusion(&truth, &pred, classes)?).map_err(err)
}

#[pyfunction]
fn cohen_kappa(truth: Vec<u32>, pred: Vec<u32>, classes: usize) -> PyResult<f64> {
    Ok(metrics::cohen_kappa(&confusion(&truth, &pred, classes)?)
        .map_err(err)?
        .value)
}

#[pyfunction]
fn weighted_f1(truth: Vec<u32>, pred: Vec<u32>, classes: usize) -> PyResult<f64> {
    metrics::weighted_f1(&confusion(&truth, &pred, classes)?).map_err(err)
}

#[pyfunction]
fn pr_auc(truth: Vec<bool>, scores: Vec<f64>) -> PyResult<f64> {
    metrics::pr_auc(&truth, &scores).map_err(err)
}

/// Full report dict from per-row class probabilities.
#[pyfunction]
#[pyo3(signature = (truth, probabilities, threshold = metrics::DEFAULT_THRESHOLD))]
fn evaluate(py: Python<'_>, truth: Vec<u32>, probabilities: Vec<Vec<f64>>, threshold: f64) -> PyResult<Py<PyAny>> {
    let classes = probabilities.first().map_or(0, Vec::len);
    let flat: Vec<f64> = probabilities.concat();
    let report = metrics::evaluate(&truth, &flat, classes, threshold, Default::default()).map_err(err)?;
    to_py(py, &report)
}

#[pyfunction]
fn focal_loss(p: Vec<f64>, y: usize, gamma: f64, alpha: Vec<f64>) -> PyResult<f64> {
    if y >= p.len() || alpha.len() != p.len() {
        return Err(DflError::new_err("y must index p and alpha must match p in length"));
    }
    Ok(head::focal_loss(&p, y, gamma, &alpha))
}

type StoreContents = (Vec<Vec<f32>>, Vec<u32>, Py<PyAny>);

/// Reads a store as `(rows, labels, provenance)`.
#[pyfunction]
fn read_store(py: Python<'_>, path: PathBuf) -> PyResult<StoreContents> {
    let ds = embedstore::read_store(&path).map_err(err)?;
    let rows = ds.iter_rows().map(|(r, _)| r.to_vec()).collect();
    Ok((rows, ds.labels().to_vec(), to_py(py, &ds.provenance)?))
}

#[pyfunction]
#[pyo3(signature = (path, rows, labels, classes, backbone_id = "python".to_string(), views = vec!["x20".to_string()]))]
fn write_store(
    path: PathBuf,
    rows: Vec<Vec<f32>>,
    labels: Vec<u32>,
    classes: Vec<String>,
    backbone_id: String,
    views: Vec<String>,
) -> PyResult<()> {
    let dim = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != dim) {
        return Err(DflError::new_err("rows have different lengths"));
    }
    let provenance = Provenance {
        backbone_id,
        views,
        normalization: NormalizationMode::Off,
        manifest_hash: String::new(),
        classes,
    };
    let ds = EmbeddingDataset::new(dim, rows.concat(), labels, provenance).map_err(err)?;
    embedstore::write_store(&ds, &path).map_err(err)
}

/// Trains a head on two stores and writes a checkpoint; returns the training log.
/// `config` is a dict of head settings; unset dimensions come from the data.
#[pyfunction]
#[pyo3(signature = (train, val, out, config = None))]
fn train_head(
    py: Python<'_>,
    train: PathBuf,
    val: PathBuf,
    out: PathBuf,
    config: Option<&Bound<'_, PyDict>>,
) -> PyResult<Py<PyAny>> {
    let template: HeadConfig = match config {
        Some(c) => from_py(py, c.as_any())?,
        None => HeadConfig::default(),
    };
    let train_set = embedstore::read_store(&train).map_err(err)?;
    let val_set = embedstore::read_store(&val).map_err(err)?;
    let cfg = template
        .resolve(train_set.dim(), train_set.provenance.num_classes())
        .map_err(err)?;
    let (model, log) = head::train(&train_set, &val_set, &cfg).map_err(err)?;
    let ckpt = Checkpoint {
        model,
        classes: train_set.provenance.classes.clone(),
        views: train_set.provenance.views.clone(),
        backbone_id: train_set.provenance.backbone_id.clone(),
    };
    head::save_checkpoint(&ckpt, &out, true).map_err(err)?;
    to_py(py, &log)
}

/// Class probabilities for each embedding row.
#[pyfunction]
fn predict(checkpoint: PathBuf, rows: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    let ckpt = head::load_checkpoint(&checkpoint).map_err(err)?;
    rows.iter()
        .map(|r| head::forward(&ckpt.model, r).map_err(err))
        .collect()
}

/// Checkpoint metadata: config, classes, views, backbone id and parameter count.
#[pyfunction]
fn load_checkpoint(py: Python<'_>, path: PathBuf) -> PyResult<Py<PyAny>> {
    let ckpt = head::load_checkpoint(&path).map_err(err)?;
    let meta = serde_json::json!({
        "config": ckpt.model.config,
        "classes": ckpt.classes,
        "views": ckpt.views,
        "backbone_id": ckpt.backbone_id,
        "parameters": ckpt.model.parameter_count(),
    });
    to_py(py, &meta)
}

#[pymodule]
fn dfl(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("DflError", m.py().get_type::<DflError>())?;
    m.add_function(wrap_pyfunction!(load_manifest, m)?)?;
    m.add_function(wrap_pyfunction!(manifest_hash, m)?)?;
    m.add_function(wrap_pyfunction!(confusion_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(balanced_accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(cohen_kappa, m)?)?;
    m.add_function(wrap_pyfunction!(weighted_f1, m)?)?;
    m.add_function(wrap_pyfunction!(pr_auc, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(focal_loss, m)?)?;
    m.add_function(wrap_pyfunction!(read_store, m)?)?;
    m.add_function(wrap_pyfunction!(write_store, m)?)?;
    m.add_function(wrap_pyfunction!(train_head, m)?)?;
    m.add_function(wrap_pyfunction!(predict, m)?)?;
    m.add_function(wrap_pyfunction!(load_checkpoint, m)?)?;
    Ok(())
}
