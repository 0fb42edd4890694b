use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{DmaeError, Result};
use crate::nn::param::scoped;
use crate::nn::{gemm, Module, Param, Real, Tensor, Trans};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Kaiming-style normal initialisation with fan-in scaling.
pub fn kaiming<S: Real, R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<S> {
    let std = (2.0 / fan_in.max(1) as f64).sqrt();
    normal(shape, std, rng)
}

pub fn normal<S: Real, R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Tensor<S> {
    let dist = Normal::new(0.0, std).expect("finite std");
    Tensor::from_fn(shape, |_| S::of(dist.sample(rng)))
}

/// Dense layer with weight `[d_in, d_out]`, applied per time step to
/// channel-major `[d_in, T]` slabs.
#[derive(Clone, Debug)]
pub struct Linear<S> {
    pub weight: Param<S>,
    pub bias: Param<S>,
}

impl<S: Real> Linear<S> {
    pub fn new<R: Rng + ?Sized>(prefix: &str, d_in: usize, d_out: usize, rng: &mut R) -> Self {
        Linear {
            weight: Param::new(scoped(prefix, "weight"), kaiming(&[d_in, d_out], d_in, rng)),
            bias: Param::new(scoped(prefix, "bias"), Tensor::zeros(&[d_out])),
        }
    }

    pub fn from_parts(weight: Param<S>, bias: Param<S>) -> Self {
        Linear { weight, bias }
    }

    pub fn d_in(&self) -> usize {
        self.weight.value.dim(0)
    }

    pub fn d_out(&self) -> usize {
        self.weight.value.dim(1)
    }

    /// `y[o, t] = sum_i W[i, o] x[i, t] + b[o]`.
    pub fn forward_cm(&self, x: &[S], len: usize) -> Vec<S> {
        let (d_in, d_out) = (self.d_in(), self.d_out());
        debug_assert_eq!(x.len(), d_in * len);
        let mut y = Vec::with_capacity(d_out * len);
        for &b in self.bias.value.data() {
            y.extend(std::iter::repeat_n(b, len));
        }
        gemm(Trans::Yes, Trans::No, d_out, d_in, len, S::one(), self.weight.value.data(), x, S::one(), &mut y);
        y
    }

    /// Accumulates parameter gradients; returns the input gradient.
    pub fn backward_cm(&mut self, x: &[S], grad_y: &[S], len: usize) -> Vec<S> {
        let (d_in, d_out) = (self.d_in(), self.d_out());
        gemm(Trans::No, Trans::Yes, d_in, len, d_out, S::one(), x, grad_y, S::one(), self.weight.grad.data_mut());
        for (gb, row) in self.bias.grad.data_mut().iter_mut().zip(grad_y.chunks(len)) {
            *gb += row.iter().copied().sum();
        }
        let mut gx = vec![S::zero(); d_in * len];
        gemm(Trans::No, Trans::No, d_in, d_out, len, S::one(), self.weight.value.data(), grad_y, S::zero(), &mut gx);
        gx
    }

    /// Row vector form: `y = x W + b` for a single `[d_in]` input.
    pub fn forward_vec(&self, x: &[S]) -> Vec<S> {
        let mut y = self.bias.value.data().to_vec();
        gemm(Trans::No, Trans::No, 1, self.d_in(), self.d_out(), S::one(), x, self.weight.value.data(), S::one(), &mut y);
        y
    }

    pub fn backward_vec(&mut self, x: &[S], grad_y: &[S]) -> Vec<S> {
        let (d_in, d_out) = (self.d_in(), self.d_out());
        gemm(Trans::No, Trans::No, d_in, 1, d_out, S::one(), x, grad_y, S::one(), self.weight.grad.data_mut());
        for (gb, &g) in self.bias.grad.data_mut().iter_mut().zip(grad_y) {
            *gb += g;
        }
        let mut gx = vec![S::zero(); d_in];
        gemm(Trans::No, Trans::No, d_in, d_out, 1, S::one(), self.weight.value.data(), grad_y, S::zero(), &mut gx);
        gx
    }
}

impl<S: Real> Module<S> for Linear<S> {
    fn params(&self) -> Vec<&Param<S>> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<S>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Batch normalisation over `[B, c, T]`, statistics per channel across batch and time.
#[derive(Clone, Debug)]
pub struct BatchNorm1d<S> {
    pub gamma: Param<S>,
    pub beta: Param<S>,
    pub running_mean: Param<S>,
    pub running_var: Param<S>,
}

#[derive(Clone, Debug)]
pub struct BatchNormCache<S> {
    mode: Mode,
    normalized: Vec<S>,
    inv_std: Vec<S>,
}

impl<S: Real> BatchNorm1d<S> {
    pub fn new(prefix: &str, channels: usize) -> Self {
        BatchNorm1d {
            gamma: Param::new(scoped(prefix, "gamma"), Tensor::full(&[channels], S::one())),
            beta: Param::new(scoped(prefix, "beta"), Tensor::zeros(&[channels])),
            running_mean: Param::buffer(scoped(prefix, "running_mean"), Tensor::zeros(&[channels])),
            running_var: Param::buffer(scoped(prefix, "running_var"), Tensor::full(&[channels], S::one())),
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn forward(&mut self, x: &Tensor<S>, mode: Mode) -> Result<(Tensor<S>, BatchNormCache<S>)> {
        if x.ndim() != 3 || x.dim(1) != self.channels() {
            return Err(DmaeError::dim(
                "batch norm input",
                format!("[B, {}, T]", self.channels()),
                format!("{:?}", x.shape()),
            ));
        }
        let (batch, c, len) = (x.dim(0), x.dim(1), x.dim(2));
        let eps = S::of(BN_EPS);
        let (mean, var) = match mode {
            Mode::Train => {
                let count = S::of((batch * len) as f64);
                let mut mean = vec![S::zero(); c];
                let mut var = vec![S::zero(); c];
                for ch in 0..c {
                    let mut acc = S::zero();
                    for b in 0..batch {
                        acc += x.data()[(b * c + ch) * len..(b * c + ch + 1) * len].iter().copied().sum();
                    }
                    mean[ch] = acc / count;
                    let mut sq = S::zero();
                    for b in 0..batch {
                        for &v in &x.data()[(b * c + ch) * len..(b * c + ch + 1) * len] {
                            sq += (v - mean[ch]) * (v - mean[ch]);
                        }
                    }
                    var[ch] = sq / count;
                }
                let m = S::of(BN_MOMENTUM);
                for ch in 0..c {
                    let rm = &mut self.running_mean.value.data_mut()[ch];
                    *rm = (S::one() - m) * *rm + m * mean[ch];
                    let rv = &mut self.running_var.value.data_mut()[ch];
                    *rv = (S::one() - m) * *rv + m * var[ch];
                }
                (mean, var)
            }
            Mode::Eval => (
                self.running_mean.value.data().to_vec(),
                self.running_var.value.data().to_vec(),
            ),
        };
        let inv_std: Vec<S> = var.iter().map(|&v| S::one() / (v + eps).sqrt()).collect();
        let mut normalized = vec![S::zero(); x.len()];
        let mut y = Tensor::zeros(x.shape());
        let (g, bt) = (self.gamma.value.data(), self.beta.value.data());
        for b in 0..batch {
            for ch in 0..c {
                let off = (b * c + ch) * len;
                for t in 0..len {
                    let z = (x.data()[off + t] - mean[ch]) * inv_std[ch];
                    normalized[off + t] = z;
                    y.data_mut()[off + t] = g[ch] * z + bt[ch];
                }
            }
        }
        Ok((y, BatchNormCache { mode, normalized, inv_std }))
    }

    pub fn backward(&mut self, cache: &BatchNormCache<S>, grad_y: &Tensor<S>) -> Tensor<S> {
        let (batch, c, len) = (grad_y.dim(0), grad_y.dim(1), grad_y.dim(2));
        let gy = grad_y.data();
        let xhat = &cache.normalized;
        let mut gx = Tensor::zeros(grad_y.shape());
        let count = S::of((batch * len) as f64);
        for ch in 0..c {
            let gamma = self.gamma.value.data()[ch];
            let mut sum_g = S::zero();
            let mut sum_gx = S::zero();
            for b in 0..batch {
                let off = (b * c + ch) * len;
                for t in 0..len {
                    sum_g += gy[off + t];
                    sum_gx += gy[off + t] * xhat[off + t];
                }
            }
            self.gamma.grad.data_mut()[ch] += sum_gx;
            self.beta.grad.data_mut()[ch] += sum_g;
            let inv = cache.inv_std[ch];
            for b in 0..batch {
                let off = (b * c + ch) * len;
                for t in 0..len {
                    gx.data_mut()[off + t] = match cache.mode {
                        Mode::Eval => gy[off + t] * gamma * inv,
                        Mode::Train => {
                            gamma * inv * (gy[off + t] - sum_g / count - xhat[off + t] * sum_gx / count)
                        }
                    };
                }
            }
        }
        gx
    }
}

impl<S: Real> Module<S> for BatchNorm1d<S> {
    fn params(&self) -> Vec<&Param<S>> {
        vec![&self.gamma, &self.beta, &self.running_mean, &self.running_var]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<S>> {
        vec![&mut self.gamma, &mut self.beta, &mut self.running_mean, &mut self.running_var]
    }
}
