use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, NormalizerState, Sample};
use crate::error::{DmaeError, Result};
use crate::model::DmaeModel;
use crate::nn::ops::{relu_in_place, softmax_unchecked};
use crate::nn::{Linear, Mode, Module, Param, Tensor};
use crate::train::config::{Pooling, TrainConfig};
use crate::train::metrics::{mae_p, precision};
use crate::train::optim::Adam;
use crate::train::pretrain::{batch, prepare, stream, TRAIN_STREAM};

const HEAD_STREAM: u64 = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Task {
    Classify { classes: usize },
    Predict { steps: usize, target: usize },
}

impl Task {
    pub fn outputs(self) -> usize {
        match self {
            Task::Classify { classes } => classes,
            Task::Predict { steps, .. } => steps,
        }
    }
}

/// Feedforward head on pooled encoder features.
#[derive(Clone, Debug)]
pub struct Head {
    pub task: Task,
    pub pooling: Pooling,
    pub hidden: Linear<f32>,
    pub out: Linear<f32>,
}

pub struct HeadCache {
    pooled: Vec<f32>,
    hidden: Vec<f32>,
}

impl Head {
    pub fn new<R: Rng + ?Sized>(task: Task, pooling: Pooling, features: usize, rng: &mut R) -> Self {
        let width = pooling.width(features);
        Head {
            task,
            pooling,
            hidden: Linear::new("head.hidden", width, features, rng),
            out: Linear::new("head.out", features, task.outputs(), rng),
        }
    }

    /// `features` is one `[h_s, T]` slab.
    pub fn forward(&self, features: &[f32], len: usize) -> (Vec<f32>, HeadCache) {
        let pooled = pool(features, len, self.pooling);
        let mut hidden = self.hidden.forward_vec(&pooled);
        relu_in_place(&mut hidden);
        (self.out.forward_vec(&hidden), HeadCache { pooled, hidden })
    }

    /// Returns the gradient w.r.t. the `[h_s, T]` features.
    pub fn backward(&mut self, cache: &HeadCache, grad: &[f32], len: usize) -> Vec<f32> {
        let mut gh = self.out.backward_vec(&cache.hidden, grad);
        gh.iter_mut().zip(&cache.hidden).filter(|(_, &h)| h <= 0.0).for_each(|(g, _)| *g = 0.0);
        let gp = self.hidden.backward_vec(&cache.pooled, &gh);
        pool_backward(&gp, len, self.pooling)
    }
}

impl Module<f32> for Head {
    fn params(&self) -> Vec<&Param<f32>> {
        let mut v = self.hidden.params();
        v.extend(self.out.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param<f32>> {
        let mut v = self.hidden.params_mut();
        v.extend(self.out.params_mut());
        v
    }
}

pub fn pool(features: &[f32], len: usize, pooling: Pooling) -> Vec<f32> {
    let mut v = crate::model::head_pool(features, len);
    if pooling == Pooling::MeanLast {
        v.extend(features.chunks(len).map(|row| row[len - 1]));
    }
    v
}

fn pool_backward(grad: &[f32], len: usize, pooling: Pooling) -> Vec<f32> {
    let h = match pooling {
        Pooling::Mean => grad.len(),
        Pooling::MeanLast => grad.len() / 2,
    };
    let inv = 1.0 / len as f32;
    let mut out = vec![0.0; h * len];
    for c in 0..h {
        out[c * len..(c + 1) * len].iter_mut().for_each(|g| *g = grad[c] * inv);
        if pooling == Pooling::MeanLast {
            out[c * len + len - 1] += grad[h + c];
        }
    }
    out
}

/// Training target of one normalized sample.
fn target(sample: &Sample, task: Task) -> Result<Vec<f64>> {
    match task {
        Task::Classify { classes } => {
            let label = sample.label.ok_or_else(|| DmaeError::Data("classification needs labeled windows".into()))?;
            if label >= classes {
                return Err(DmaeError::Data(format!("label {label} outside [0, {classes})")));
            }
            Ok(vec![label as f64])
        }
        Task::Predict { steps, target } => {
            let future = sample.future.as_ref().ok_or_else(|| DmaeError::Data("prediction needs future values".into()))?;
            if steps > future.dim(1) {
                return Err(DmaeError::Data(format!("horizon {steps} exceeds the {} future steps available", future.dim(1))));
            }
            if target >= future.dim(0) {
                return Err(DmaeError::Config(format!("target attribute {target} out of range")));
            }
            Ok((0..steps).map(|h| future.at2(target, h)).collect())
        }
    }
}

/// Loss and its gradient w.r.t. the head output, for one sample.
fn head_loss(task: Task, out: &[f32], target: &[f64], scale: f64) -> (f64, Vec<f32>) {
    match task {
        Task::Classify { .. } => {
            let scores: Vec<f64> = out.iter().map(|&v| v as f64).collect();
            let p = softmax_unchecked(&scores, 1.0);
            let label = target[0] as usize;
            let grad = p.iter().enumerate().map(|(i, &pi)| ((pi - (i == label) as u8 as f64) * scale) as f32).collect();
            (-p[label].max(f64::MIN_POSITIVE).ln(), grad)
        }
        Task::Predict { .. } => {
            let s = target.len() as f64;
            let mut loss = 0.0;
            let grad = out
                .iter()
                .zip(target)
                .map(|(&o, &t)| {
                    let r = o as f64 - t;
                    loss += r * r / s;
                    (2.0 * r / s * scale) as f32
                })
                .collect();
            (loss, grad)
        }
    }
}

/// `MAE_p(s)` for prediction, `PRE_c` for classification.
fn score(task: Task, outputs: &[Vec<f64>], targets: &[Vec<f64>]) -> f64 {
    match task {
        Task::Classify { .. } => {
            let labels: Vec<usize> = targets.iter().map(|t| t[0] as usize).collect();
            precision(&labels, outputs)
        }
        Task::Predict { .. } => mae_p(targets, outputs),
    }
}

/// Last observed value of the target attribute, repeated over the horizon.
pub fn persistence_mae(samples: &[Sample], steps: usize, target_attr: usize) -> Result<f64> {
    let mut preds = Vec::with_capacity(samples.len());
    let mut targets = Vec::with_capacity(samples.len());
    for s in samples {
        let (v, m) = (s.window.values(), s.window.mask());
        let last = (0..v.dim(1)).rev().find(|&t| m.at2(target_attr, t) == 1.0).map_or(0.0, |t| v.at2(target_attr, t));
        preds.push(vec![last; steps]);
        targets.push(target(s, Task::Predict { steps, target: target_attr })?);
    }
    Ok(mae_p(&targets, &preds))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinetuneRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// `MAE_p(s)` or precision on the validation split.
    pub val_metric: f64,
}

pub struct Finetuned {
    pub model: DmaeModel<f32>,
    pub head: Head,
    pub history: Vec<FinetuneRecord>,
    pub normalizer: NormalizerState,
}

impl Finetuned {
    pub fn final_metric(&self) -> f64 {
        self.history.last().map_or(f64::NAN, |r| r.val_metric)
    }
}

fn predict(model: &mut DmaeModel<f32>, head: &Head, samples: &[&Sample]) -> Result<Vec<Vec<f64>>> {
    let len = model.config().len;
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(64) {
        let b = batch(chunk);
        let (features, _) = model.encode(&b.x, &b.mask, None, Mode::Eval)?;
        for i in 0..chunk.len() {
            out.push(head.forward(features.slab(i), len).0.iter().map(|&v| v as f64).collect());
        }
    }
    Ok(out)
}

/// Head metric (`MAE_p(s)` or precision) on already-normalized samples.
pub fn evaluate_head(model: &mut DmaeModel<f32>, head: &Head, samples: &[Sample]) -> Result<f64> {
    let targets = samples.iter().map(|s| target(s, head.task)).collect::<Result<Vec<_>>>()?;
    let refs: Vec<&Sample> = samples.iter().collect();
    let outputs = predict(model, head, &refs)?;
    Ok(score(head.task, &outputs, &targets))
}

/// Trains a fresh head (and, unless frozen, the encoder) on `dataset`.
/// The normalizer and split seed should match pretraining.
pub fn finetune(
    mut model: DmaeModel<f32>,
    normalizer: &NormalizerState,
    dataset: &Dataset,
    task: Task,
    config: &TrainConfig,
) -> Result<Finetuned> {
    config.validate()?;
    let mc = model.config().clone();
    if dataset.num_attributes() != mc.n || dataset.window_len() != mc.len {
        return Err(DmaeError::Config(format!(
            "model expects n={}, T={}; dataset has n={}, T={}",
            mc.n,
            mc.len,
            dataset.num_attributes(),
            dataset.window_len()
        )));
    }
    if let Task::Classify { classes } = task {
        if classes < 2 {
            return Err(DmaeError::Config("classification needs at least 2 classes".into()));
        }
    }
    let data = prepare(dataset, config.seed, Some(normalizer))?;
    let train_targets = data.train.iter().map(|s| target(s, task)).collect::<Result<Vec<_>>>()?;
    let val_targets = data.val.iter().map(|s| target(s, task)).collect::<Result<Vec<_>>>()?;
    let mut head = Head::new(task, config.pooling, mc.hidden, &mut stream(config.seed, HEAD_STREAM));
    model.set_warm_up(false);
    let mut rng = stream(config.seed, TRAIN_STREAM);
    let mut opt = Adam::new(config.finetune_learning_rate);
    let len = mc.len;
    let frozen: Option<Vec<Vec<f32>>> = if config.freeze_encoder {
        let refs: Vec<&Sample> = data.train.iter().collect();
        let mut cached = Vec::with_capacity(refs.len());
        for chunk in refs.chunks(64) {
            let b = batch(chunk);
            let (f, _) = model.encode(&b.x, &b.mask, None, Mode::Eval)?;
            cached.extend((0..chunk.len()).map(|i| f.slab(i).to_vec()));
        }
        Some(cached)
    } else {
        None
    };
    let mut history = Vec::with_capacity(config.finetune_epochs);
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    for epoch in 0..config.finetune_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for idx in order.chunks(config.batch_size) {
            let scale = 1.0 / idx.len() as f64;
            head.zero_grad();
            if let Some(cached) = &frozen {
                for &i in idx {
                    let (out, cache) = head.forward(&cached[i], len);
                    let (l, g) = head_loss(task, &out, &train_targets[i], scale);
                    total += l;
                    head.backward(&cache, &g, len);
                }
                opt.step(head.params_mut());
            } else {
                model.zero_grad();
                let refs: Vec<&Sample> = idx.iter().map(|&i| &data.train[i]).collect();
                let b = batch(&refs);
                let (features, enc_cache) = model.encode(&b.x, &b.mask, None, Mode::Train)?;
                let mut grad = Tensor::zeros(features.shape());
                for (k, &i) in idx.iter().enumerate() {
                    let (out, cache) = head.forward(features.slab(k), len);
                    let (l, g) = head_loss(task, &out, &train_targets[i], scale);
                    total += l;
                    let gf = head.backward(&cache, &g, len);
                    grad.slab_mut(k).copy_from_slice(&gf);
                }
                model.encode_backward(&enc_cache, &grad);
                let mut params = model.encoder_params_mut();
                params.extend(head.params_mut());
                opt.step(params);
            }
        }
        let val_refs: Vec<&Sample> = data.val.iter().collect();
        let outputs = predict(&mut model, &head, &val_refs)?;
        let record = FinetuneRecord {
            epoch,
            train_loss: total / data.train.len() as f64,
            val_metric: score(task, &outputs, &val_targets),
        };
        log::info!("finetune epoch {epoch}: train {:.5} val {:.5}", record.train_loss, record.val_metric);
        history.push(record);
    }
    Ok(Finetuned { model, head, history, normalizer: data.normalizer })
}
