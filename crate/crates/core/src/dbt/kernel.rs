use rand::Rng;

use crate::error::{DmaeError, Result};
use crate::nn::layers::{kaiming, normal};
use crate::nn::ops::{axpy_dot, softmax_tempered_backward, softmax_unchecked};
use crate::nn::{gemm, scoped, Module, Param, Real, Tensor, Trans};

/// Std of the near-zero initialisation of the attention projection.
const PROJ_INIT_STD: f64 = 0.01;
const COMBINE_TILE: usize = 1024;

/// `K` candidate kernels mixed by an input-conditioned attention.
///
/// The pooled statistics vector is `[mean over time per channel (c_in) ;
/// mean over channels per time step (T)]`, projected to `K` scores whose
/// tempered softmax weights the candidates.
#[derive(Clone, Debug)]
pub struct DynamicKernelBank<S> {
    /// `[K, c_out, c_in, k]`
    pub candidates: Param<S>,
    /// `[c_in + T, K]`
    pub proj_weight: Param<S>,
    /// `[K]`
    pub proj_bias: Param<S>,
    pub temperature: f64,
    pub warm_up: bool,
}

#[derive(Clone, Debug)]
pub struct KernelCache<S> {
    pub pooled: Vec<S>,
    pub alpha: Vec<S>,
}

impl<S: Real> DynamicKernelBank<S> {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        prefix: &str,
        num_kernels: usize,
        c_out: usize,
        c_in: usize,
        kernel_size: usize,
        len: usize,
        temperature: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if num_kernels == 0 {
            return Err(DmaeError::Config("candidate kernel count K must be >= 1".into()));
        }
        if !(temperature > 1.0) {
            return Err(DmaeError::Config(format!("kernel temperature must be > 1, got {temperature}")));
        }
        let mut cands = Vec::with_capacity(num_kernels * c_out * c_in * kernel_size);
        for _ in 0..num_kernels {
            cands.extend(kaiming::<S, _>(&[c_out, c_in, kernel_size], c_in * kernel_size, rng).into_data());
        }
        Ok(DynamicKernelBank {
            candidates: Param::new(
                scoped(prefix, "candidates"),
                Tensor::from_vec(&[num_kernels, c_out, c_in, kernel_size], cands)?,
            ),
            proj_weight: Param::new(
                scoped(prefix, "proj_weight"),
                normal(&[c_in + len, num_kernels], PROJ_INIT_STD, rng),
            ),
            proj_bias: Param::new(scoped(prefix, "proj_bias"), Tensor::zeros(&[num_kernels])),
            temperature,
            warm_up: false,
        })
    }

    pub fn num_kernels(&self) -> usize {
        self.candidates.value.dim(0)
    }

    /// `[c_out, c_in, k]`
    pub fn kernel_shape(&self) -> [usize; 3] {
        let s = self.candidates.value.shape();
        [s[1], s[2], s[3]]
    }

    pub fn kernel_len(&self) -> usize {
        let [o, i, k] = self.kernel_shape();
        o * i * k
    }

    pub fn input_len(&self) -> usize {
        self.proj_weight.value.dim(0) - self.kernel_shape()[1]
    }

    /// Pooled statistics and candidate weights for a `[c_in, T]` slab.
    pub fn attention(&self, x: &[S]) -> KernelCache<S> {
        let c_in = self.kernel_shape()[1];
        let len = self.input_len();
        debug_assert_eq!(x.len(), c_in * len);
        let k = self.num_kernels();
        let mut pooled = vec![S::zero(); c_in + len];
        let inv_t = S::one() / S::of(len as f64);
        let inv_c = S::one() / S::of(c_in as f64);
        for c in 0..c_in {
            let row = &x[c * len..(c + 1) * len];
            pooled[c] = row.iter().copied().sum::<S>() * inv_t;
            for (t, &v) in row.iter().enumerate() {
                pooled[c_in + t] += v * inv_c;
            }
        }
        let alpha = if self.warm_up || k == 1 {
            vec![S::one() / S::of(k as f64); k]
        } else {
            let mut scores = self.proj_bias.value.data().to_vec();
            gemm(Trans::No, Trans::No, 1, c_in + len, k, S::one(), &pooled, self.proj_weight.value.data(), S::one(), &mut scores);
            softmax_unchecked(&scores, S::of(self.temperature))
        };
        KernelCache { pooled, alpha }
    }

    /// Convex combination of the candidates for this input.
    pub fn aggregate(&self, x: &[S]) -> (Vec<S>, KernelCache<S>) {
        let cache = self.attention(x);
        (self.combine(&cache.alpha), cache)
    }

    /// `sum_i alpha[i] W_i`.
    pub fn combine(&self, alpha: &[S]) -> Vec<S> {
        let klen = self.kernel_len();
        let cands = self.candidates.value.data();
        let mut kernel = vec![S::zero(); klen];
        // Tiled so each output tile stays in L1 across the K candidates.
        for (t, tile) in kernel.chunks_mut(COMBINE_TILE).enumerate() {
            let start = t * COMBINE_TILE;
            for (i, &a) in alpha.iter().enumerate() {
                let src = &cands[i * klen + start..i * klen + start + tile.len()];
                for (w, &c) in tile.iter_mut().zip(src) {
                    *w += a * c;
                }
            }
        }
        kernel
    }

    /// Tensor-level entry point: `layer_input` is `[c_in, T]`.
    pub fn aggregate_kernel(&self, layer_input: &Tensor<S>) -> Result<Tensor<S>> {
        let c_in = self.kernel_shape()[1];
        let len = self.input_len();
        if layer_input.shape() != [c_in, len] {
            return Err(DmaeError::Config(format!(
                "kernel bank built for input [{c_in}, {len}], got {:?}",
                layer_input.shape()
            )));
        }
        let (kernel, _) = self.aggregate(layer_input.data());
        Tensor::from_vec(&self.kernel_shape(), kernel)
    }

    /// Accumulates parameter gradients and adds the input gradient into `grad_x`.
    ///
    /// Works one sample at a time so the candidates and their gradients stay
    /// cache-resident across the combine, the conv, and this update.
    pub fn backward(&mut self, cache: &KernelCache<S>, grad_kernel: &[S], grad_x: &mut [S]) {
        let (k, klen) = (self.num_kernels(), self.kernel_len());
        let need_alpha = !(self.warm_up || k == 1);
        let values = self.candidates.value.data().chunks(klen);
        let grads = self.candidates.grad.data_mut().chunks_mut(klen);
        let mut grad_alpha = Vec::with_capacity(k);
        for ((g, c), &a) in grads.zip(values).zip(&cache.alpha) {
            if need_alpha {
                grad_alpha.push(axpy_dot(g, a, grad_kernel, c));
            } else {
                for (g, &v) in g.iter_mut().zip(grad_kernel) {
                    *g += a * v;
                }
            }
        }
        if !need_alpha {
            return;
        }
        self.attention_backward(cache, &grad_alpha, grad_x);
    }

    fn attention_backward(&mut self, cache: &KernelCache<S>, grad_alpha: &[S], grad_x: &mut [S]) {
        let k = self.num_kernels();
        let grad_scores = softmax_tempered_backward(&cache.alpha, grad_alpha, S::of(self.temperature));
        let plen = cache.pooled.len();
        gemm(Trans::No, Trans::No, plen, 1, k, S::one(), &cache.pooled, &grad_scores, S::one(), self.proj_weight.grad.data_mut());
        for (g, &v) in self.proj_bias.grad.data_mut().iter_mut().zip(&grad_scores) {
            *g += v;
        }
        let mut grad_pooled = vec![S::zero(); plen];
        gemm(Trans::No, Trans::No, plen, k, 1, S::one(), self.proj_weight.value.data(), &grad_scores, S::zero(), &mut grad_pooled);
        let c_in = self.kernel_shape()[1];
        let len = self.input_len();
        let inv_t = S::one() / S::of(len as f64);
        let inv_c = S::one() / S::of(c_in as f64);
        for c in 0..c_in {
            let row = &mut grad_x[c * len..(c + 1) * len];
            for (t, g) in row.iter_mut().enumerate() {
                *g += grad_pooled[c] * inv_t + grad_pooled[c_in + t] * inv_c;
            }
        }
    }
}

impl<S: Real> Module<S> for DynamicKernelBank<S> {
    fn params(&self) -> Vec<&Param<S>> {
        vec![&self.candidates, &self.proj_weight, &self.proj_bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<S>> {
        vec![&mut self.candidates, &mut self.proj_weight, &mut self.proj_bias]
    }
}
