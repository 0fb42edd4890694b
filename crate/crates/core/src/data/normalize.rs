use serde::{Deserialize, Serialize};

use crate::data::{MtsWindow, Sample};
use crate::error::{DmaeError, Result};
use crate::nn::Tensor;

/// Lower bound applied to the per-attribute standard deviation.
pub const NORM_EPS: f64 = 1e-8;

/// Per-attribute z-score statistics over observed training entries
/// (population standard deviation).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizerState {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormalizerState {
    pub fn fit<'a>(windows: impl IntoIterator<Item = &'a MtsWindow>) -> Result<Self> {
        let mut sum: Vec<f64> = Vec::new();
        let mut sq: Vec<f64> = Vec::new();
        let mut count: Vec<f64> = Vec::new();
        for w in windows {
            let (n, len) = (w.num_attributes(), w.len());
            if sum.is_empty() {
                sum = vec![0.0; n];
                sq = vec![0.0; n];
                count = vec![0.0; n];
            } else if sum.len() != n {
                return Err(DmaeError::dim("normalizer window", sum.len(), n));
            }
            for a in 0..n {
                for t in 0..len {
                    if w.mask().at2(a, t) == 1.0 {
                        let v = w.values().at2(a, t);
                        sum[a] += v;
                        sq[a] += v * v;
                        count[a] += 1.0;
                    }
                }
            }
        }
        if sum.is_empty() {
            return Err(DmaeError::Data("cannot fit a normalizer on zero windows".into()));
        }
        let mut mean = Vec::with_capacity(sum.len());
        let mut std = Vec::with_capacity(sum.len());
        for a in 0..sum.len() {
            if count[a] < 2.0 {
                log::warn!("attribute {a} has {} observed entries; using identity scaling", count[a]);
            }
            let m = if count[a] > 0.0 { sum[a] / count[a] } else { 0.0 };
            let var = if count[a] > 0.0 { (sq[a] / count[a] - m * m).max(0.0) } else { 1.0 };
            mean.push(m);
            std.push(var.sqrt().max(NORM_EPS));
        }
        Ok(NormalizerState { mean, std })
    }

    fn transform(&self, t: &Tensor<f64>, mask: Option<&Tensor<f64>>, f: impl Fn(f64, f64, f64) -> f64) -> Tensor<f64> {
        let len = t.dim(1);
        let mut out = t.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            let a = i / len;
            if mask.is_none_or(|m| m.data()[i] == 1.0) {
                *v = f(*v, self.mean[a], self.std[a]);
            }
        }
        out
    }

    /// Normalizes an `[n, T]` tensor at every entry.
    pub fn apply_tensor(&self, t: &Tensor<f64>) -> Tensor<f64> {
        self.transform(t, None, |v, m, s| (v - m) / s)
    }

    pub fn invert_tensor(&self, t: &Tensor<f64>) -> Tensor<f64> {
        self.transform(t, None, |v, m, s| v * s + m)
    }

    /// Observed entries are normalized; missing ones stay 0.
    pub fn apply(&self, w: &MtsWindow) -> Result<MtsWindow> {
        let v = self.transform(w.values(), Some(w.mask()), |v, m, s| (v - m) / s);
        MtsWindow::new(v, w.mask().clone(), w.origin)
    }

    pub fn invert(&self, w: &MtsWindow) -> Result<MtsWindow> {
        let v = self.transform(w.values(), Some(w.mask()), |v, m, s| v * s + m);
        MtsWindow::new(v, w.mask().clone(), w.origin)
    }

    pub fn apply_sample(&self, s: &Sample) -> Result<Sample> {
        Ok(Sample {
            window: self.apply(&s.window)?,
            truth: self.transform(&s.truth, Some(&s.known), |v, m, sd| (v - m) / sd),
            known: s.known.clone(),
            label: s.label,
            future: s.future.as_ref().map(|f| self.apply_tensor(f)),
        })
    }
}
