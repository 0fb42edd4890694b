use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{MtsWindow, Sample};
use crate::error::{DmaeError, Result};
use crate::nn::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    pub len: usize,
    pub count: usize,
    pub classes: usize,
    /// Standard deviation of the additive Gaussian noise.
    pub noise: f64,
    /// Steps generated past each window for prediction targets.
    pub horizon: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec { n: 5, len: 64, count: 2000, classes: 3, noise: 0.1, horizon: 5, seed: 0 }
    }
}

/// Windows paired with everything the fine-tune tasks need.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub names: Vec<String>,
    pub samples: Vec<Sample>,
    pub num_classes: Option<usize>,
    pub horizon: usize,
}

impl Dataset {
    pub fn num_attributes(&self) -> usize {
        self.names.len()
    }

    pub fn window_len(&self) -> usize {
        self.samples.first().map_or(0, |s| s.window.len())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

pub fn attribute_names(n: usize) -> Vec<String> {
    (0..n).map(|a| format!("x{a}")).collect()
}

/// Cycles per window of the base component for class `c`, attribute `a`.
fn base_frequency(class: usize, attribute: usize) -> f64 {
    (1 + class + attribute % 2) as f64
}

/// Sums of two sinusoids whose frequencies encode the class. Frequencies are
/// whole cycles per window, so with zero noise every series has period `len`.
pub fn make_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    if spec.n == 0 || spec.len == 0 || spec.count == 0 || spec.classes == 0 {
        return Err(DmaeError::Config("synthetic n, T, count and classes must be positive".into()));
    }
    if !(spec.noise >= 0.0) {
        return Err(DmaeError::Config(format!("noise must be >= 0, got {}", spec.noise)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise.max(f64::MIN_POSITIVE)).expect("valid normal");
    let total = spec.len + spec.horizon;
    let mut samples = Vec::with_capacity(spec.count);
    for i in 0..spec.count {
        let label = i % spec.classes;
        let mut data = vec![0.0; spec.n * total];
        for a in 0..spec.n {
            let f = base_frequency(label, a);
            let amp = rng.random_range(0.8..1.2);
            let (p1, p2) = (rng.random_range(0.0..TAU), rng.random_range(0.0..TAU));
            for t in 0..total {
                let x = t as f64 / spec.len as f64;
                let mut v = amp * ((TAU * f * x + p1).sin() + 0.5 * (TAU * 2.0 * f * x + p2).sin());
                if spec.noise > 0.0 {
                    v += noise.sample(&mut rng);
                }
                data[a * total + t] = v;
            }
        }
        let full = Tensor::from_vec(&[spec.n, total], data)?;
        let window = MtsWindow::complete(super::window::cols(&full, 0, spec.len), i * total)?;
        let mut sample = Sample::from_window(window);
        sample.label = Some(label);
        sample.future = (spec.horizon > 0).then(|| super::window::cols(&full, spec.len, spec.horizon));
        samples.push(sample);
    }
    Ok(Dataset {
        names: attribute_names(spec.n),
        samples,
        num_classes: Some(spec.classes),
        horizon: spec.horizon,
    })
}
