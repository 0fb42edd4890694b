use rand::Rng;

use crate::error::{DmaeError, Result};
use crate::nn::layers::normal;
use crate::nn::ops::{softmax_tempered_backward, softmax_unchecked};
use crate::nn::{gemm, scoped, Module, Param, Real, Tensor, Trans};

pub const NUM_SCALES: usize = 3;

const SCORE_INIT_STD: f64 = 0.01;

/// Attention over the three kernel-size scales, per time step.
///
/// `e[i,t] = v . tanh(h_g W_g + H[i,:,t] W_H)`, `alpha[:,t] = softmax(e[:,t] / gamma)`,
/// `S[:,t] = sum_i alpha[i,t] H[i,:,t]`, where `h_g` is the mean of `H`
/// over scales and time.
#[derive(Clone, Debug)]
pub struct AttentionScaleFusion<S> {
    /// `[h_s, h_a]`
    pub w_global: Param<S>,
    /// `[h_s, h_a]`
    pub w_local: Param<S>,
    /// `[h_a]`
    pub v: Param<S>,
    pub temperature: f64,
    pub warm_up: bool,
}

#[derive(Clone, Debug)]
pub struct AsfCache<S> {
    global: Vec<S>,
    /// `[scale, h_a, T]`
    activations: Vec<S>,
    /// `[T, scale]`
    pub alpha: Vec<S>,
}

impl<S: Real> AttentionScaleFusion<S> {
    pub fn new<R: Rng + ?Sized>(prefix: &str, width: usize, hidden: usize, temperature: f64, rng: &mut R) -> Result<Self> {
        if !(temperature > 1.0) {
            return Err(DmaeError::Config(format!("fusion temperature must be > 1, got {temperature}")));
        }
        let std = 1.0 / (width as f64).sqrt();
        Ok(AttentionScaleFusion {
            w_global: Param::new(scoped(prefix, "w_global"), normal(&[width, hidden], std, rng)),
            w_local: Param::new(scoped(prefix, "w_local"), normal(&[width, hidden], std, rng)),
            v: Param::new(scoped(prefix, "v"), normal(&[hidden], SCORE_INIT_STD, rng)),
            temperature,
            warm_up: false,
        })
    }

    pub fn width(&self) -> usize {
        self.w_global.value.dim(0)
    }

    pub fn hidden(&self) -> usize {
        self.w_global.value.dim(1)
    }

    /// `stacked` is one `[3, h_s, T]` slab; returns `[h_s, T]`.
    pub fn fuse(&self, stacked: &[S], len: usize) -> (Vec<S>, AsfCache<S>) {
        let (h, ha) = (self.width(), self.hidden());
        let hl = h * len;
        debug_assert_eq!(stacked.len(), NUM_SCALES * hl);
        let mut global = vec![S::zero(); h];
        let inv = S::one() / S::of((NUM_SCALES * len) as f64);
        for i in 0..NUM_SCALES {
            for c in 0..h {
                global[c] += stacked[i * hl + c * len..i * hl + (c + 1) * len].iter().copied().sum::<S>();
            }
        }
        global.iter_mut().for_each(|g| *g *= inv);

        let mut alpha = vec![S::one() / S::of(NUM_SCALES as f64); len * NUM_SCALES];
        let mut activations = Vec::new();
        if !self.warm_up {
            let mut g_proj = vec![S::zero(); ha];
            gemm(Trans::No, Trans::No, 1, h, ha, S::one(), &global, self.w_global.value.data(), S::zero(), &mut g_proj);
            activations = vec![S::zero(); NUM_SCALES * ha * len];
            let mut scores = vec![S::zero(); NUM_SCALES * len];
            let v = self.v.value.data();
            for i in 0..NUM_SCALES {
                let u = &mut activations[i * ha * len..(i + 1) * ha * len];
                for a in 0..ha {
                    u[a * len..(a + 1) * len].iter_mut().for_each(|x| *x = g_proj[a]);
                }
                gemm(Trans::Yes, Trans::No, ha, h, len, S::one(), self.w_local.value.data(), &stacked[i * hl..(i + 1) * hl], S::one(), u);
                u.iter_mut().for_each(|x| *x = x.tanh());
                for a in 0..ha {
                    for t in 0..len {
                        scores[i * len + t] += v[a] * u[a * len + t];
                    }
                }
            }
            let temp = S::of(self.temperature);
            for t in 0..len {
                let e = [scores[t], scores[len + t], scores[2 * len + t]];
                alpha[t * NUM_SCALES..(t + 1) * NUM_SCALES].copy_from_slice(&softmax_unchecked(&e, temp));
            }
        }

        let mut out = vec![S::zero(); hl];
        for i in 0..NUM_SCALES {
            for c in 0..h {
                for t in 0..len {
                    out[c * len + t] += alpha[t * NUM_SCALES + i] * stacked[i * hl + c * len + t];
                }
            }
        }
        (out, AsfCache { global, activations, alpha })
    }

    /// Tensor entry point: `stacked` is `[3, h_s, T]`.
    pub fn asf_fuse(&self, stacked: &Tensor<S>) -> Result<Tensor<S>> {
        if stacked.ndim() != 3 || stacked.dim(0) != NUM_SCALES {
            return Err(DmaeError::Config(format!(
                "scale fusion expects exactly {NUM_SCALES} scales, got shape {:?}",
                stacked.shape()
            )));
        }
        if stacked.dim(1) != self.width() {
            return Err(DmaeError::dim("fusion input", self.width(), stacked.dim(1)));
        }
        let len = stacked.dim(2);
        let (out, _) = self.fuse(stacked.data(), len);
        Tensor::from_vec(&[self.width(), len], out)
    }

    pub fn backward(&mut self, stacked: &[S], cache: &AsfCache<S>, grad_out: &[S], len: usize) -> Vec<S> {
        let (h, ha) = (self.width(), self.hidden());
        let hl = h * len;
        let mut grad_stacked = vec![S::zero(); NUM_SCALES * hl];
        let mut grad_alpha = vec![S::zero(); NUM_SCALES * len];
        for i in 0..NUM_SCALES {
            for c in 0..h {
                for t in 0..len {
                    let g = grad_out[c * len + t];
                    grad_stacked[i * hl + c * len + t] += cache.alpha[t * NUM_SCALES + i] * g;
                    grad_alpha[t * NUM_SCALES + i] += stacked[i * hl + c * len + t] * g;
                }
            }
        }
        if self.warm_up {
            return grad_stacked;
        }
        let temp = S::of(self.temperature);
        let mut grad_scores = vec![S::zero(); NUM_SCALES * len];
        for t in 0..len {
            let ge = softmax_tempered_backward(
                &cache.alpha[t * NUM_SCALES..(t + 1) * NUM_SCALES],
                &grad_alpha[t * NUM_SCALES..(t + 1) * NUM_SCALES],
                temp,
            );
            for i in 0..NUM_SCALES {
                grad_scores[i * len + t] = ge[i];
            }
        }
        let v = self.v.value.data().to_vec();
        let mut grad_g = vec![S::zero(); ha];
        let mut grad_u = vec![S::zero(); ha * len];
        for i in 0..NUM_SCALES {
            let u = &cache.activations[i * ha * len..(i + 1) * ha * len];
            let gv = self.v.grad.data_mut();
            for a in 0..ha {
                for t in 0..len {
                    let ge = grad_scores[i * len + t];
                    let th = u[a * len + t];
                    gv[a] += ge * th;
                    let gu = ge * v[a] * (S::one() - th * th);
                    grad_u[a * len + t] = gu;
                    grad_g[a] += gu;
                }
            }
            let x = &stacked[i * hl..(i + 1) * hl];
            gemm(Trans::No, Trans::Yes, h, len, ha, S::one(), x, &grad_u, S::one(), self.w_local.grad.data_mut());
            gemm(Trans::No, Trans::No, h, ha, len, S::one(), self.w_local.value.data(), &grad_u, S::one(), &mut grad_stacked[i * hl..(i + 1) * hl]);
        }
        gemm(Trans::No, Trans::No, h, 1, ha, S::one(), &cache.global, &grad_g, S::one(), self.w_global.grad.data_mut());
        let mut grad_global = vec![S::zero(); h];
        gemm(Trans::No, Trans::No, h, ha, 1, S::one(), self.w_global.value.data(), &grad_g, S::zero(), &mut grad_global);
        let inv = S::one() / S::of((NUM_SCALES * len) as f64);
        for i in 0..NUM_SCALES {
            for c in 0..h {
                let add = grad_global[c] * inv;
                grad_stacked[i * hl + c * len..i * hl + (c + 1) * len].iter_mut().for_each(|g| *g += add);
            }
        }
        grad_stacked
    }
}

impl<S: Real> Module<S> for AttentionScaleFusion<S> {
    fn params(&self) -> Vec<&Param<S>> {
        vec![&self.w_global, &self.w_local, &self.v]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<S>> {
        vec![&mut self.w_global, &mut self.w_local, &mut self.v]
    }
}
