use crate::error::{DmaeError, Result};
use crate::nn::Tensor;

/// A full multivariate series: `[n, L]` values with its observation mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub names: Vec<String>,
    pub values: Tensor<f64>,
    pub mask: Tensor<f64>,
}

impl Series {
    pub fn new(names: Vec<String>, values: Tensor<f64>, mask: Tensor<f64>) -> Result<Self> {
        validate_pair(&values, &mask)?;
        if names.len() != values.dim(0) {
            return Err(DmaeError::dim("series names", values.dim(0), names.len()));
        }
        let values = canonicalize(values, &mask);
        Ok(Series { names, values, mask })
    }

    pub fn num_attributes(&self) -> usize {
        self.values.dim(0)
    }

    pub fn len(&self) -> usize {
        self.values.dim(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Columns `[start, start + len)` as a `[n, len]` tensor pair.
    pub fn slice(&self, start: usize, len: usize) -> (Tensor<f64>, Tensor<f64>) {
        (cols(&self.values, start, len), cols(&self.mask, start, len))
    }
}

pub(crate) fn cols(t: &Tensor<f64>, start: usize, len: usize) -> Tensor<f64> {
    let (n, total) = (t.dim(0), t.dim(1));
    let mut out = Vec::with_capacity(n * len);
    for a in 0..n {
        out.extend_from_slice(&t.data()[a * total + start..a * total + start + len]);
    }
    Tensor::from_vec(&[n, len], out).expect("slice shape")
}

fn validate_pair(values: &Tensor<f64>, mask: &Tensor<f64>) -> Result<()> {
    if values.ndim() != 2 {
        return Err(DmaeError::dim("window values", "[n, T]", format!("{:?}", values.shape())));
    }
    mask.expect_shape("window mask", values.shape())?;
    if mask.data().iter().any(|&m| m != 0.0 && m != 1.0) {
        return Err(DmaeError::Contract("mask entries must be 0 or 1".into()));
    }
    Ok(())
}

fn canonicalize(mut values: Tensor<f64>, mask: &Tensor<f64>) -> Tensor<f64> {
    for (v, &m) in values.data_mut().iter_mut().zip(mask.data()) {
        if m == 0.0 {
            *v = 0.0;
        }
    }
    values
}

/// Fixed-length slice `X` with binary mask `M` (1 observed, 0 missing).
/// Values at missing positions are always 0.
#[derive(Clone, Debug, PartialEq)]
pub struct MtsWindow {
    values: Tensor<f64>,
    mask: Tensor<f64>,
    pub origin: usize,
}

impl MtsWindow {
    pub fn new(values: Tensor<f64>, mask: Tensor<f64>, origin: usize) -> Result<Self> {
        validate_pair(&values, &mask)?;
        Ok(MtsWindow {
            values: canonicalize(values, &mask),
            mask,
            origin,
        })
    }

    /// A window with every entry observed.
    pub fn complete(values: Tensor<f64>, origin: usize) -> Result<Self> {
        let mask = Tensor::full(values.shape(), 1.0);
        Self::new(values, mask, origin)
    }

    pub fn values(&self) -> &Tensor<f64> {
        &self.values
    }

    pub fn mask(&self) -> &Tensor<f64> {
        &self.mask
    }

    pub fn num_attributes(&self) -> usize {
        self.values.dim(0)
    }

    pub fn len(&self) -> usize {
        self.values.dim(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn observed_fraction(&self) -> f64 {
        self.mask.sum() / self.mask.len() as f64
    }

    /// Same values under a reduced mask.
    pub fn with_mask(&self, mask: Tensor<f64>) -> Result<Self> {
        Self::new(self.values.clone(), mask, self.origin)
    }
}

/// Windows starting at `0, stride, 2*stride, ...`.
pub fn window(series: &Series, len: usize, stride: usize) -> Result<Vec<MtsWindow>> {
    let starts = window_origins(series.len(), len, stride)?;
    starts
        .into_iter()
        .map(|s| {
            let (v, m) = series.slice(s, len);
            MtsWindow::new(v, m, s)
        })
        .collect()
}

pub fn window_origins(total: usize, len: usize, stride: usize) -> Result<Vec<usize>> {
    if stride == 0 {
        return Err(DmaeError::Config("window stride must be >= 1".into()));
    }
    if len == 0 || len > total {
        return Err(DmaeError::Config(format!("window length {len} exceeds series length {total}")));
    }
    Ok((0..=(total - len) / stride).map(|i| i * stride).collect())
}

/// A window plus everything downstream evaluation needs.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub window: MtsWindow,
    /// Ground-truth values `[n, T]`; meaningful where `known` is 1.
    pub truth: Tensor<f64>,
    pub known: Tensor<f64>,
    pub label: Option<usize>,
    /// Values after the window, `[n, H]`, when available.
    pub future: Option<Tensor<f64>>,
}

impl Sample {
    /// Sample whose ground truth is exactly what the window observes.
    pub fn from_window(window: MtsWindow) -> Self {
        Sample {
            truth: window.values().clone(),
            known: window.mask().clone(),
            window,
            label: None,
            future: None,
        }
    }
}
