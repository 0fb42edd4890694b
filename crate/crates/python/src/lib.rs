//! Python bindings: datasets, pretraining, fine-tuning, evaluation,
//! traces, and the core numerical operations.
//!
//! Windows cross the boundary as nested lists `[n][T]`.

use std::path::PathBuf;

use dmae::data::{
    dataset_from_csv, load_dataset, make_synthetic, mask_dataset, save_dataset, Dataset, MaskPlan, MissingPattern,
    Sample, SyntheticSpec,
};
use dmae::model::{self, DmaeModel};
use dmae::nn::{ops, Tensor};
use dmae::train::{
    self, decode_checkpoint, encode_checkpoint, evaluate_head, mean_imputation, prepare, reconstruct,
    reconstruction_metrics, CheckpointMeta, EpochRecord, Head, HeadSpec, Task, TrainConfig,
};
use dmae::DmaeError;
use pyo3::exceptions::{PyIndexError, PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyString};

fn err(e: DmaeError) -> PyErr {
    let msg = format!("{}: {e}", e.code());
    match e {
        DmaeError::Io { .. } => PyOSError::new_err(msg),
        DmaeError::Divergence { .. } => PyRuntimeError::new_err(msg),
        _ => PyValueError::new_err(msg),
    }
}

fn tensor(rows: Vec<Vec<f64>>, what: &str) -> PyResult<Tensor<f64>> {
    let width = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || width == 0 || rows.iter().any(|r| r.len() != width) {
        return Err(PyValueError::new_err(format!("{what} must be a non-empty rectangular [n][T] list")));
    }
    Tensor::from_vec(&[rows.len(), width], rows.concat()).map_err(err)
}

fn rows(t: &Tensor<f64>) -> Vec<Vec<f64>> {
    t.data().chunks(t.dim(t.ndim() - 1)).map(<[f64]>::to_vec).collect()
}

/// `[n, T]` → `[1, n, T]`.
fn batched(t: &Tensor<f64>) -> PyResult<Tensor<f64>> {
    t.clone().reshape(&[1, t.dim(0), t.dim(1)]).map_err(err)
}

fn to_f32(t: &Tensor<f64>) -> Tensor<f32> {
    t.cast()
}

/// A config given as a dict or a JSON string, merged over the defaults.
fn train_config(py: Python<'_>, config: Option<&Bound<'_, PyAny>>) -> PyResult<TrainConfig> {
    let Some(config) = config else { return Ok(TrainConfig::default()) };
    let text: String = if config.is_instance_of::<PyString>() {
        config.extract()?
    } else {
        py.import("json")?.call_method1("dumps", (config,))?.extract()?
    };
    let c: TrainConfig = serde_json::from_str(&text).map_err(|e| PyValueError::new_err(format!("E_CONFIG: {e}")))?;
    c.validate().map_err(err)?;
    Ok(c)
}

fn parse_pattern(name: &str) -> PyResult<MissingPattern> {
    match name {
        "point" => Ok(MissingPattern::Point),
        "line" => Ok(MissingPattern::Line),
        "block" => Ok(MissingPattern::Block),
        _ => Err(PyValueError::new_err(format!("unknown pattern {name:?}; expected point, line or block"))),
    }
}

/// Labeled windows with ground truth for artificially removed entries.
#[pyclass(name = "Dataset", module = "dmae_py", skip_from_py_object)]
#[derive(Clone)]
pub struct PyDataset {
    inner: Dataset,
}

#[pymethods]
impl PyDataset {
    #[staticmethod]
    #[pyo3(signature = (n=5, length=64, count=2000, classes=3, noise=0.1, horizon=5, seed=0))]
    fn synthetic(n: usize, length: usize, count: usize, classes: usize, noise: f64, horizon: usize, seed: u64) -> PyResult<Self> {
        let spec = SyntheticSpec { n, len: length, count, classes, noise, horizon, seed };
        Ok(PyDataset { inner: make_synthetic(&spec).map_err(err)? })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyDataset { inner: load_dataset(&path).map_err(err)? })
    }

    /// Sliding windows over a CSV series (empty or `NaN` cells are missing).
    #[staticmethod]
    #[pyo3(signature = (path, length, stride=1))]
    fn from_csv(path: PathBuf, length: usize, stride: usize) -> PyResult<Self> {
        Ok(PyDataset { inner: dataset_from_csv(&path, length, stride).map_err(err)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_dataset(&path, &self.inner).map_err(err)
    }

    /// Copy with `ratio` of the entries removed; removed values are kept as
    /// ground truth.
    #[pyo3(signature = (ratio, pattern="point", span=5, seed=0))]
    fn mask(&self, ratio: f64, pattern: &str, span: usize, seed: u64) -> PyResult<Self> {
        let plan = MaskPlan::new(ratio, parse_pattern(pattern)?, span, seed).map_err(err)?;
        Ok(PyDataset { inner: mask_dataset(&self.inner, &plan).map_err(err)? })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn names(&self) -> Vec<String> {
        self.inner.names.clone()
    }

    #[getter]
    fn num_attributes(&self) -> usize {
        self.inner.num_attributes()
    }

    #[getter]
    fn window_len(&self) -> usize {
        self.inner.window_len()
    }

    /// `(values, mask, label)` of window `i`.
    fn window(&self, i: usize) -> PyResult<(Vec<Vec<f64>>, Vec<Vec<f64>>, Option<usize>)> {
        let s = self.sample(i)?;
        Ok((rows(s.window.values()), rows(s.window.mask()), s.label))
    }

    /// Fraction of entries that are missing.
    fn missing_fraction(&self) -> f64 {
        let total: usize = self.inner.samples.iter().map(|s| s.window.values().len()).sum();
        let observed: f64 = self.inner.samples.iter().map(|s| s.window.mask().data().iter().sum::<f64>()).sum();
        1.0 - observed / total.max(1) as f64
    }

    fn __repr__(&self) -> String {
        format!("Dataset(windows={}, n={}, T={})", self.inner.len(), self.inner.num_attributes(), self.inner.window_len())
    }
}

impl PyDataset {
    fn sample(&self, i: usize) -> PyResult<&Sample> {
        self.inner
            .samples
            .get(i)
            .ok_or_else(|| PyIndexError::new_err(format!("window {i} out of range ({} windows)", self.inner.len())))
    }
}

fn record_dict<'py>(py: Python<'py>, r: &EpochRecord) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("epoch", r.epoch)?;
    d.set_item("train_loss", r.train_loss)?;
    d.set_item("val_mse_v", r.val_mse_v)?;
    d.set_item("val_mse_m", r.val_mse_m)?;
    d.set_item("val_loss", r.val_loss)?;
    d.set_item("warm_up", r.warm_up)?;
    Ok(d)
}

/// A pretrained auto-encoder, optionally with a fine-tuned head.
#[pyclass(name = "Model", module = "dmae_py")]
pub struct PyModel {
    model: DmaeModel<f32>,
    head: Option<Head>,
    meta: CheckpointMeta,
    history: Vec<EpochRecord>,
    /// Validation metric of the last fine-tuning epoch.
    head_metric: Option<f64>,
}

#[pymethods]
impl PyModel {
    /// Pretrains on `dataset`; `config` is a dict or JSON string of
    /// training-config fields overriding the defaults.
    #[staticmethod]
    #[pyo3(signature = (dataset, config=None))]
    fn pretrain(py: Python<'_>, dataset: &PyDataset, config: Option<&Bound<'_, PyAny>>) -> PyResult<Self> {
        let config = train_config(py, config)?;
        let run = py.detach(|| train::pretrain(&dataset.inner, &config)).map_err(err)?;
        let meta = dmae::cli::pretrained_meta(&run);
        Ok(PyModel { model: run.model, head: None, meta, history: run.history, head_metric: None })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let ck = train::load_checkpoint(&path).map_err(err)?;
        Ok(PyModel { model: ck.model, head: ck.head, meta: ck.meta, history: Vec::new(), head_metric: None })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        train::save_checkpoint(&path, &self.model, self.head.as_ref(), &self.meta).map_err(err)
    }

    /// Per-epoch pretraining records (empty for a loaded checkpoint).
    #[getter]
    fn history<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        self.history.iter().map(|r| record_dict(py, r)).collect()
    }

    /// Resolved training configuration as JSON.
    #[getter]
    fn config(&self) -> String {
        serde_json::to_string(&self.meta.train).expect("config serializes")
    }

    #[getter]
    fn head_metric(&self) -> Option<f64> {
        self.head_metric
    }

    /// Fine-tunes a copy with a fresh head. `task` is "classify" or
    /// "predict"; the returned model carries the head.
    #[pyo3(signature = (dataset, task, steps=1, classes=None, config=None))]
    fn finetune(
        &self,
        py: Python<'_>,
        dataset: &PyDataset,
        task: &str,
        steps: usize,
        classes: Option<usize>,
        config: Option<&Bound<'_, PyAny>>,
    ) -> PyResult<PyModel> {
        let mut train_cfg = match config {
            Some(_) => train_config(py, config)?,
            None => self.meta.train.clone(),
        };
        train_cfg.seed = self.meta.train.seed;
        let task = match task {
            "classify" => Task::Classify {
                classes: classes.or(dataset.inner.num_classes).ok_or_else(|| PyValueError::new_err("classes unknown"))?,
            },
            "predict" => Task::Predict { steps, target: train_cfg.target },
            other => return Err(PyValueError::new_err(format!("unknown task {other:?}; expected classify or predict"))),
        };
        let copy = decode_checkpoint(&encode_checkpoint(&self.model, None, &self.meta)).map_err(err)?.model;
        let normalizer = self.meta.normalizer.clone();
        let tuned = py
            .detach(|| train::finetune(copy, &normalizer, &dataset.inner, task, &train_cfg))
            .map_err(err)?;
        let metric = tuned.final_metric();
        let meta = CheckpointMeta {
            train: train_cfg.clone(),
            head: Some(HeadSpec { task, pooling: train_cfg.pooling }),
            ..self.meta.clone()
        };
        Ok(PyModel { model: tuned.model, head: Some(tuned.head), meta, history: self.history.clone(), head_metric: Some(metric) })
    }

    /// Reconstruction metrics (normalized units) and the mean-imputation
    /// baseline on the validation split, or on every window with
    /// `split="all"`; includes the head metric when a head is attached.
    #[pyo3(signature = (dataset, split="val"))]
    fn evaluate<'py>(&mut self, py: Python<'py>, dataset: &PyDataset, split: &str) -> PyResult<Bound<'py, PyDict>> {
        let data = prepare(&dataset.inner, self.meta.train.seed, Some(&self.meta.normalizer)).map_err(err)?;
        let samples: Vec<Sample> = match split {
            "val" => data.val,
            "all" => data.train.into_iter().chain(data.val).collect(),
            other => return Err(PyValueError::new_err(format!("unknown split {other:?}; expected val or all"))),
        };
        let recon = reconstruct(&mut self.model, &samples).map_err(err)?;
        let (mse_v, mse_m) = reconstruction_metrics(&samples, &recon);
        let (base_v, base_m) = reconstruction_metrics(&samples, &mean_imputation(&samples));
        let d = PyDict::new(py);
        d.set_item("windows", samples.len())?;
        d.set_item("mse_v", mse_v)?;
        d.set_item("mse_m", mse_m)?;
        d.set_item("mean_imputation_mse_v", base_v)?;
        d.set_item("mean_imputation_mse_m", base_m)?;
        if let Some(head) = &self.head {
            let score = evaluate_head(&mut self.model, head, &samples).map_err(err)?;
            d.set_item(dmae::cli::metric_column(head.task).trim_start_matches("val_"), score)?;
        }
        Ok(d)
    }

    /// Reconstructs one `[n][T]` window (original units); entries with
    /// mask 0 are imputed.
    fn reconstruct(&mut self, values: Vec<Vec<f64>>, mask: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let (x, keep) = self.window(values, mask)?;
        let (y, _) = self
            .model
            .forward(&to_f32(&batched(&x)?), &to_f32(&batched(&keep)?), None, dmae::nn::Mode::Eval)
            .map_err(err)?;
        let y = Tensor::from_vec(&[x.dim(0), x.dim(1)], y.data().iter().map(|&v| v as f64).collect()).map_err(err)?;
        Ok(rows(&self.meta.normalizer.invert_tensor(&y)))
    }

    /// `(header, rows)` of embedded values and kernel attention weights
    /// over time for one window.
    fn trace(&mut self, values: Vec<Vec<f64>>, mask: Vec<Vec<f64>>) -> PyResult<(Vec<String>, Vec<Vec<f64>>)> {
        let (x, keep) = self.window(values, mask)?;
        let names = dmae::data::synthetic::attribute_names(x.dim(0));
        let trace = self.model.trace(&to_f32(&x), &to_f32(&keep), &names).map_err(err)?;
        Ok((trace.header(), trace.rows()))
    }

    fn __repr__(&self) -> String {
        let c = self.model.config();
        format!("Model(n={}, T={}, hidden={}, head={})", c.n, c.len, c.hidden, self.head.is_some())
    }
}

impl PyModel {
    /// Canonicalized, normalized `[n, T]` window.
    fn window(&self, values: Vec<Vec<f64>>, mask: Vec<Vec<f64>>) -> PyResult<(Tensor<f64>, Tensor<f64>)> {
        let (values, mask) = (tensor(values, "values")?, tensor(mask, "mask")?);
        let c = self.model.config();
        if values.shape() != [c.n, c.len] {
            return Err(PyValueError::new_err(format!("E_CONFIG: model expects [{}][{}], got {:?}", c.n, c.len, values.shape())));
        }
        let w = dmae::data::MtsWindow::new(values, mask, 0).map_err(err)?;
        let w = self.meta.normalizer.apply(&w).map_err(err)?;
        Ok((w.values().clone(), w.mask().clone()))
    }
}

/// Causal dilated convolution of `x` `[c_in][T]` with `kernel`
/// `[c_out][c_in][k]`.
#[pyfunction]
fn causal_dilated_conv1d(x: Vec<Vec<f64>>, kernel: Vec<Vec<Vec<f64>>>, dilation: usize) -> PyResult<Vec<Vec<f64>>> {
    let x = tensor(x, "x")?;
    let (c_out, c_in) = (kernel.len(), kernel.first().map_or(0, Vec::len));
    let k = kernel.first().and_then(|o| o.first()).map_or(0, Vec::len);
    if c_out == 0 || kernel.iter().any(|o| o.len() != c_in || o.iter().any(|i| i.len() != k)) {
        return Err(PyValueError::new_err("kernel must be a non-empty rectangular [c_out][c_in][k] list"));
    }
    let flat: Vec<f64> = kernel.into_iter().flatten().flatten().collect();
    let kernel = Tensor::from_vec(&[c_out, c_in, k], flat).map_err(err)?;
    Ok(rows(&ops::causal_dilated_conv1d(&x, &kernel, dilation).map_err(err)?))
}

#[pyfunction]
fn softmax_tempered(scores: Vec<f64>, temperature: f64) -> PyResult<Vec<f64>> {
    ops::softmax_tempered(&scores, temperature).map_err(err)
}

/// Masked-reconstruction objective of one `[n][T]` window.
#[pyfunction]
fn dmae_loss(
    x_hat: Vec<Vec<f64>>,
    x_hat_r: Vec<Vec<f64>>,
    x: Vec<Vec<f64>>,
    mask: Vec<Vec<f64>>,
    mask_r: Vec<Vec<f64>>,
    m_r: f64,
) -> PyResult<f64> {
    let t = |v, what| tensor(v, what).and_then(|t| batched(&t));
    let out = model::dmae_loss(&t(x_hat, "x_hat")?, &t(x_hat_r, "x_hat_r")?, &t(x, "x")?, &t(mask, "mask")?, &t(mask_r, "mask_r")?, m_r)
        .map_err(err)?;
    Ok(out.value)
}

#[pyfunction]
fn mae_p(targets: Vec<Vec<f64>>, predictions: Vec<Vec<f64>>) -> PyResult<f64> {
    if targets.len() != predictions.len() || targets.iter().zip(&predictions).any(|(t, p)| t.len() != p.len()) {
        return Err(PyValueError::new_err("targets and predictions must have matching shapes"));
    }
    Ok(train::mae_p(&targets, &predictions))
}

#[pyfunction]
fn precision(labels: Vec<usize>, scores: Vec<Vec<f64>>) -> PyResult<f64> {
    if labels.len() != scores.len() {
        return Err(PyValueError::new_err("one score vector per label required"));
    }
    Ok(train::precision(&labels, &scores))
}

#[pymodule]
fn dmae_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(causal_dilated_conv1d, m)?)?;
    m.add_function(wrap_pyfunction!(softmax_tempered, m)?)?;
    m.add_function(wrap_pyfunction!(dmae_loss, m)?)?;
    m.add_function(wrap_pyfunction!(mae_p, m)?)?;
    m.add_function(wrap_pyfunction!(precision, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
