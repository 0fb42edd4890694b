use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{split, submask, Dataset, NormalizerState, Sample};
use crate::error::{DmaeError, Result};
use crate::model::{dmae_loss, visible_loss, DmaeModel};
use crate::nn::{Mode, Module, Tensor};
use crate::train::config::TrainConfig;
use crate::train::metrics::{masked_ratio, missing_weights};
use crate::train::optim::Adam;

/// Loss growth over the first batch that aborts training.
pub const DIVERGENCE_FACTOR: f64 = 10.0;
const EVAL_BATCH: usize = 64;

pub(crate) const SPLIT_STREAM: u64 = 0;
pub(crate) const INIT_STREAM: u64 = 1;
pub(crate) const TRAIN_STREAM: u64 = 2;
pub(crate) const VAL_STREAM: u64 = 3;

pub(crate) fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Normalized train/validation samples.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub normalizer: NormalizerState,
}

/// Seeded 9:1 split; statistics from the training part only. A supplied
/// normalizer (e.g. from a checkpoint) is reused instead of refitting.
pub fn prepare(dataset: &Dataset, seed: u64, normalizer: Option<&NormalizerState>) -> Result<Prepared> {
    let parts = split(dataset.samples.clone(), &mut stream(seed, SPLIT_STREAM))?;
    let normalizer = match normalizer {
        Some(n) if n.mean.len() == dataset.num_attributes() => n.clone(),
        Some(n) => return Err(DmaeError::dim("normalizer", n.mean.len(), dataset.num_attributes())),
        None => NormalizerState::fit(parts.train.iter().map(|s| &s.window))?,
    };
    let norm = |v: Vec<Sample>| v.iter().map(|s| normalizer.apply_sample(s)).collect::<Result<Vec<_>>>();
    Ok(Prepared { train: norm(parts.train)?, val: norm(parts.val)?, normalizer })
}

/// `[B, n, T]` stacks of values, masks, ground truth and its availability.
pub struct Batch {
    pub x: Tensor<f32>,
    pub mask: Tensor<f32>,
    pub truth: Tensor<f64>,
    pub known: Tensor<f64>,
}

pub fn batch(samples: &[&Sample]) -> Batch {
    let (n, len) = (samples[0].window.num_attributes(), samples[0].window.len());
    let shape = [samples.len(), n, len];
    let stack = |f: &dyn Fn(&Sample) -> &Tensor<f64>| {
        let mut d = Vec::with_capacity(samples.len() * n * len);
        for s in samples {
            d.extend_from_slice(f(s).data());
        }
        Tensor::from_vec(&shape, d).expect("uniform windows")
    };
    Batch {
        x: stack(&|s| s.window.values()).cast(),
        mask: stack(&|s| s.window.mask()).cast(),
        truth: stack(&|s| &s.truth),
        known: stack(&|s| &s.known),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_mse_v: f64,
    pub val_mse_m: f64,
    pub val_loss: f64,
    pub warm_up: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalReport {
    pub mse_v: f64,
    pub mse_m: f64,
    pub loss: f64,
}

/// Reconstructs `samples` in evaluation mode from their own masks.
pub fn reconstruct(model: &mut DmaeModel<f32>, samples: &[Sample]) -> Result<Vec<Tensor<f64>>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(EVAL_BATCH) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let b = batch(&refs);
        let (y, _) = model.forward(&b.x, &b.mask, None, Mode::Eval)?;
        for i in 0..chunk.len() {
            let shape = &y.shape()[1..];
            out.push(Tensor::from_vec(shape, y.slab(i).iter().map(|&v| v as f64).collect())?);
        }
    }
    Ok(out)
}

/// Validation metrics plus the pretraining objective under a fixed,
/// seeded artificial mask.
pub fn evaluate(model: &mut DmaeModel<f32>, samples: &[Sample], config: &TrainConfig) -> Result<EvalReport> {
    // In eval mode the unmasked path of the dual pass is exactly the plain
    // reconstruction, so one pass serves both the metrics and the loss.
    let mut rng = stream(config.seed, VAL_STREAM);
    let mut recon = Vec::with_capacity(samples.len());
    let mut loss = 0.0;
    for chunk in samples.chunks(EVAL_BATCH) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let b = batch(&refs);
        let (full, part) = if config.ablate.rm {
            let (y, _) = model.forward(&b.x, &b.mask, None, Mode::Eval)?;
            let part = visible_loss(&y, &b.x, &b.mask)?.0;
            (y, part)
        } else {
            let mask_r = draw_submasks(&b.mask, config, &mut rng)?;
            let (pair, _) = model.forward_dual(&b.x, &b.mask, &mask_r, None, Mode::Eval)?;
            let part = dmae_loss(&pair.full, &pair.masked, &b.x, &b.mask, &mask_r, config.mask_ratio)?.value;
            (pair.full, part)
        };
        for i in 0..chunk.len() {
            recon.push(Tensor::from_vec(&full.shape()[1..], full.slab(i).iter().map(|&v| v as f64).collect())?);
        }
        loss += part * chunk.len() as f64;
    }
    let (mse_v, mse_m) = reconstruction_metrics(samples, &recon);
    Ok(EvalReport { mse_v, mse_m, loss: loss / samples.len().max(1) as f64 })
}

/// `(MSE_v, MSE_m)` of reconstructions against each sample's ground truth.
/// A metric with no contributing window is NaN.
pub fn reconstruction_metrics(samples: &[Sample], recon: &[Tensor<f64>]) -> (f64, f64) {
    let weights: Vec<Vec<f64>> = samples.iter().map(|s| missing_weights(s.window.mask().data(), s.known.data())).collect();
    let v = masked_ratio(samples.iter().zip(recon).map(|(s, r)| (s.truth.data(), s.window.mask().data(), r.data())));
    let m = masked_ratio(samples.iter().zip(recon).zip(&weights).map(|((s, r), w)| (s.truth.data(), w.as_slice(), r.data())));
    (v.unwrap_or(f64::NAN), m.unwrap_or(f64::NAN))
}

/// Fills every missing entry with the mean of that attribute's observed
/// values in the same window.
pub fn mean_imputation(samples: &[Sample]) -> Vec<Tensor<f64>> {
    samples
        .iter()
        .map(|s| {
            let (v, m) = (s.window.values(), s.window.mask());
            let len = v.dim(1);
            let mut out = v.clone();
            for a in 0..v.dim(0) {
                let row = a * len..(a + 1) * len;
                let count: f64 = m.data()[row.clone()].iter().sum();
                let mean = if count > 0.0 { v.data()[row.clone()].iter().sum::<f64>() / count } else { 0.0 };
                for i in row {
                    if m.data()[i] == 0.0 {
                        out.data_mut()[i] = mean;
                    }
                }
            }
            out
        })
        .collect()
}

fn draw_submasks(mask: &Tensor<f32>, config: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<Tensor<f32>> {
    let (n, len) = (mask.dim(1), mask.dim(2));
    let mut out = Tensor::zeros(mask.shape());
    for b in 0..mask.dim(0) {
        let m = Tensor::from_vec(&[n, len], mask.slab(b).iter().map(|&v| v as f64).collect())?;
        let r = submask(&m, config.mask_ratio, config.mask_pattern, config.mask_span, rng)?;
        out.slab_mut(b).iter_mut().zip(r.data()).for_each(|(o, &v)| *o = v as f32);
    }
    Ok(out)
}

pub struct Pretrained {
    pub model: DmaeModel<f32>,
    pub normalizer: NormalizerState,
    pub history: Vec<EpochRecord>,
    pub config: TrainConfig,
}

pub fn pretrain(dataset: &Dataset, config: &TrainConfig) -> Result<Pretrained> {
    pretrain_with(dataset, config, |_, _, _| Ok(()))
}

/// Pretraining with a hook called after every epoch.
pub fn pretrain_with(
    dataset: &Dataset,
    config: &TrainConfig,
    mut observe: impl FnMut(&EpochRecord, &mut DmaeModel<f32>, &Prepared) -> Result<()>,
) -> Result<Pretrained> {
    config.validate()?;
    let data = prepare(dataset, config.seed, None)?;
    let model_config = config.model_config(dataset.num_attributes(), dataset.window_len());
    let mut model = DmaeModel::<f32>::new(model_config, &mut stream(config.seed, INIT_STREAM))?;
    let mut rng = stream(config.seed, TRAIN_STREAM);
    let mut opt = Adam::new(config.learning_rate);
    let mut history = Vec::with_capacity(config.epochs);
    let mut initial: Option<f64> = None;
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    for epoch in 0..config.epochs {
        let warm_up = config.warm_up_active(epoch);
        model.set_warm_up(warm_up);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for idx in order.chunks(config.batch_size) {
            let refs: Vec<&Sample> = idx.iter().map(|&i| &data.train[i]).collect();
            let b = batch(&refs);
            model.zero_grad();
            let loss = if config.ablate.rm {
                let noise = model.dpe.draw_noise(b.x.shape(), &mut rng);
                let (y, cache) = model.forward(&b.x, &b.mask, noise.as_ref(), Mode::Train)?;
                let (loss, grad) = visible_loss(&y, &b.x, &b.mask)?;
                model.backward(&cache, &grad);
                loss
            } else {
                let mask_r = draw_submasks(&b.mask, config, &mut rng)?;
                let noise = model.dpe.draw_noise(b.x.shape(), &mut rng);
                let (pair, cache) = model.forward_dual(&b.x, &b.mask, &mask_r, noise.as_ref(), Mode::Train)?;
                let out = dmae_loss(&pair.full, &pair.masked, &b.x, &b.mask, &mask_r, config.mask_ratio)?;
                model.backward_dual(&cache, &out.grad_full, &out.grad_masked);
                out.value
            };
            let first = *initial.get_or_insert(loss);
            if !loss.is_finite() || loss > DIVERGENCE_FACTOR * first {
                return Err(DmaeError::Divergence { epoch, loss, initial: first });
            }
            opt.step(model.params_mut());
            total += loss * idx.len() as f64;
        }
        let eval = evaluate(&mut model, &data.val, config)?;
        let record = EpochRecord {
            epoch,
            train_loss: total / data.train.len() as f64,
            val_mse_v: eval.mse_v,
            val_mse_m: eval.mse_m,
            val_loss: eval.loss,
            warm_up,
        };
        log::info!(
            "epoch {epoch}: train {:.5} val_loss {:.5} mse_v {:.5} mse_m {:.5}{}",
            record.train_loss,
            record.val_loss,
            record.val_mse_v,
            record.val_mse_m,
            if warm_up { " (warm-up)" } else { "" }
        );
        observe(&record, &mut model, &data)?;
        history.push(record);
    }
    Ok(Pretrained { model, normalizer: data.normalizer, history, config: config.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Dataset, MtsWindow};

    #[test]
    fn mean_imputation_fills_row_means() {
        let v = Tensor::from_vec(&[1, 4], vec![1.0, 0.0, 3.0, 5.0]).unwrap();
        let m = Tensor::from_vec(&[1, 4], vec![1.0, 0.0, 1.0, 1.0]).unwrap();
        let s = Sample::from_window(MtsWindow::new(v, m, 0).unwrap());
        assert_eq!(mean_imputation(&[s])[0].data(), &[1.0, 3.0, 3.0, 5.0]);
    }

    #[test]
    fn prepare_splits_and_normalizes() {
        let d: Dataset = crate::data::make_synthetic(&crate::data::SyntheticSpec { count: 20, len: 8, ..Default::default() }).unwrap();
        let p = prepare(&d, 3, None).unwrap();
        assert_eq!((p.train.len(), p.val.len()), (18, 2));
        let q = prepare(&d, 3, Some(&p.normalizer)).unwrap();
        assert_eq!(p.val, q.val);
    }
}
