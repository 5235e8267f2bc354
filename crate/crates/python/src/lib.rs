//! Python bindings. Datasets and checkpoints cross the boundary as directory
//! and file paths; reports come back as dicts.

use std::path::PathBuf;

use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use apnet::cli::{self, RunConfig};
use apnet::model::Checkpoint;
use apnet::{ApnetError, EvalConfig, GraphScope, Setting, SyntheticConfig};

fn py_err(e: ApnetError) -> PyErr {
    if e.is_io() {
        PyOSError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

#[pyfunction]
fn harmonic_mean(s: f64, u: f64) -> f64 {
    apnet::harmonic_mean(s, u)
}

/// Mean over `class_set` of each class's accuracy, in [0, 1].
#[pyfunction]
fn per_class_accuracy(predictions: Vec<usize>, truths: Vec<usize>, class_set: Vec<usize>) -> PyResult<f64> {
    apnet::per_class_accuracy(&predictions, &truths, &class_set).map_err(py_err)
}

/// Writes a synthetic dataset directory; returns (images, classes).
#[pyfunction]
#[pyo3(signature = (out, n_seen=None, n_unseen=None, attr_dim=None, image_dim=None,
                    images_per_class=None, noise_std=None, test_fraction=None, seed=None))]
#[allow(clippy::too_many_arguments)]
fn generate_synthetic(
    py: Python<'_>,
    out: PathBuf,
    n_seen: Option<usize>,
    n_unseen: Option<usize>,
    attr_dim: Option<usize>,
    image_dim: Option<usize>,
    images_per_class: Option<usize>,
    noise_std: Option<f64>,
    test_fraction: Option<f64>,
    seed: Option<u64>,
) -> PyResult<(usize, usize)> {
    let d = SyntheticConfig::default();
    let cfg = SyntheticConfig {
        n_seen: n_seen.unwrap_or(d.n_seen),
        n_unseen: n_unseen.unwrap_or(d.n_unseen),
        attr_dim: attr_dim.unwrap_or(d.attr_dim),
        image_dim: image_dim.unwrap_or(d.image_dim),
        images_per_class: images_per_class.unwrap_or(d.images_per_class),
        noise_std: noise_std.unwrap_or(d.noise_std),
        test_fraction: test_fraction.unwrap_or(d.test_fraction),
        seed: seed.unwrap_or(d.seed),
    };
    py.detach(|| {
        let ds = apnet::generate_synthetic(&cfg)?;
        apnet::save_dataset(&ds, &out)?;
        Ok((ds.num_samples(), ds.num_classes()))
    })
    .map_err(py_err)
}

/// Trains on `data` and writes checkpoint, log and config to `out`.
/// `config` is an optional JSON run configuration; returns per-epoch mean losses.
#[pyfunction]
#[pyo3(signature = (data, out, config=None))]
fn train(py: Python<'_>, data: PathBuf, out: PathBuf, config: Option<&str>) -> PyResult<Vec<f64>> {
    let mut cfg: RunConfig = match config {
        Some(json) => serde_json::from_str(json).map_err(|e| PyValueError::new_err(e.to_string()))?,
        None => RunConfig::default(),
    };
    cfg.data = Some(data);
    cfg.out = Some(out.clone());
    py.detach(|| -> apnet::Result<Vec<f64>> {
        cli::cmd_train(&cfg, &mut std::io::sink())?;
        let log = std::fs::read_to_string(out.join(cli::TRAIN_LOG_FILE)).map_err(|e| ApnetError::io(&out, e))?;
        Ok(log
            .lines()
            .filter_map(|l| serde_json::from_str::<serde_json::Value>(l).ok())
            .filter_map(|v| v["mean_loss"].as_f64())
            .collect())
    })
    .map_err(py_err)
}

/// Evaluates a checkpoint; the dict holds `S`, `U`, `H` (None for zsl) and `per_class_acc`.
#[pyfunction]
#[pyo3(signature = (data, checkpoint, setting="zsl", graph_scope="unseen"))]
fn evaluate<'py>(
    py: Python<'py>,
    data: PathBuf,
    checkpoint: PathBuf,
    setting: &str,
    graph_scope: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let setting: Setting = setting.parse().map_err(|e: ApnetError| PyValueError::new_err(e.to_string()))?;
    let scope: GraphScope = graph_scope.parse().map_err(|e: ApnetError| PyValueError::new_err(e.to_string()))?;
    let report = py
        .detach(|| {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let ds = apnet::load_dataset(&data)?;
            let cfg = EvalConfig {
                prop: ckpt.prop.clone(),
                head: ckpt.head.clone(),
                graph_scope: scope,
            };
            cli::evaluate(&ckpt, &ds, setting, &cfg)
        })
        .map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("S", report.acc_seen)?;
    d.set_item("U", report.acc_unseen)?;
    d.set_item("H", report.harmonic)?;
    d.set_item("per_class_acc", report.per_class_acc)?;
    Ok(d)
}

/// Runs the command-line interface in-process: returns (exit code, stdout, stderr).
#[pyfunction]
fn run_cli(py: Python<'_>, args: Vec<String>) -> (i32, String, String) {
    py.detach(|| {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let argv = std::iter::once("apnet".to_string()).chain(args);
        let code = cli::run(argv, &mut out, &mut err);
        (
            code,
            String::from_utf8_lossy(&out).into_owned(),
            String::from_utf8_lossy(&err).into_owned(),
        )
    })
}

#[pymodule]
fn apnet_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(harmonic_mean, m)?)?;
    m.add_function(wrap_pyfunction!(per_class_accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(generate_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    Ok(())
}
