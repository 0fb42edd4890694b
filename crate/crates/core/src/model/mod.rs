//! The masked auto-encoder: embedding front end, three stacked DBT blocks
//! with dilations 1/2/4, and a per-timestep feedforward decoder.

pub mod loss;
pub mod trace;

pub use loss::{dmae_loss, loss_weights, norm_ratio, visible_loss, LossOutput};
pub use trace::Trace;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::random_submask;
use crate::dbt::{BlockCache, BlockSpec, DbtBlock, FusionKind};
use crate::dpe::{Dpe, DpeCache};
use crate::error::{DmaeError, Result};
use crate::nn::ops::relu_in_place;
use crate::nn::{Linear, Mode, Module, Param, Real, Tensor};

pub const NUM_BLOCKS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingKind {
    Dynamic,
    /// Constant token in place of the learned embedding (ablation).
    HardCode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub n: usize,
    pub len: usize,
    pub hidden: usize,
    pub kernel_sizes: [usize; 3],
    pub num_kernels: usize,
    pub kernel_temperature: f64,
    pub fusion_temperature: f64,
    /// ASF hidden size; `None` means `hidden`.
    pub attention_hidden: Option<usize>,
    pub noise_std: f64,
    pub embedding: EmbeddingKind,
    pub token: f64,
    pub fusion: FusionKind,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n: 5,
            len: 64,
            hidden: 64,
            kernel_sizes: [3, 5, 7],
            num_kernels: 4,
            kernel_temperature: 4.0,
            fusion_temperature: 4.0,
            attention_hidden: None,
            noise_std: 0.01,
            embedding: EmbeddingKind::Dynamic,
            token: 0.0,
            fusion: FusionKind::Attention,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DmaeError::Config(m));
        if self.n == 0 || self.len == 0 || self.hidden == 0 {
            return bad("n, T and hidden width must be positive".into());
        }
        if self.kernel_sizes.contains(&0) {
            return bad("kernel sizes must be positive".into());
        }
        if self.num_kernels == 0 {
            return bad("at least one candidate kernel is required".into());
        }
        if !(self.kernel_temperature > 1.0) || !(self.fusion_temperature > 1.0) {
            return bad("temperatures must exceed 1".into());
        }
        if self.attention_hidden == Some(0) {
            return bad("attention hidden size must be positive".into());
        }
        if !(self.noise_std >= 0.0) {
            return bad(format!("noise scale must be >= 0, got {}", self.noise_std));
        }
        Ok(())
    }

    fn block_spec(&self, c_in: usize, width: usize, dilation: usize) -> BlockSpec {
        BlockSpec {
            c_in,
            width,
            len: self.len,
            kernel_sizes: self.kernel_sizes,
            dilation,
            num_kernels: self.num_kernels,
            kernel_temperature: self.kernel_temperature,
            fusion_temperature: self.fusion_temperature,
            attention_hidden: if width == self.hidden { self.attention_hidden.unwrap_or(width) } else { width },
            fusion: self.fusion,
        }
    }
}

pub struct DmaeModel<S> {
    pub dpe: Dpe<S>,
    pub blocks: Vec<DbtBlock<S>>,
    pub dec_hidden: Linear<S>,
    pub dec_out: Linear<S>,
    config: ModelConfig,
}

pub struct EncodeCache<S> {
    pub dpe: DpeCache<S>,
    pub blocks: Vec<BlockCache<S>>,
    pub embedded: Tensor<S>,
}

pub struct DecodeCache<S> {
    features: Tensor<S>,
    hidden: Tensor<S>,
}

pub struct ForwardCache<S> {
    pub encode: EncodeCache<S>,
    decode: DecodeCache<S>,
}

/// Reconstructions from the unmasked and the randomly masked path.
pub struct ReconstructionPair<S> {
    pub full: Tensor<S>,
    pub masked: Tensor<S>,
    pub mask: Tensor<S>,
    pub mask_r: Tensor<S>,
}

impl<S: Real> DmaeModel<S> {
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let dpe = match config.embedding {
            EmbeddingKind::Dynamic => Dpe::dynamic("dpe", config.block_spec(config.n, config.n, 1), config.noise_std, rng)?,
            EmbeddingKind::HardCode => Dpe::hard_code(config.token, config.noise_std)?,
        };
        let mut blocks = Vec::with_capacity(NUM_BLOCKS);
        for j in 0..NUM_BLOCKS {
            let c_in = if j == 0 { config.n } else { config.hidden };
            let spec = config.block_spec(c_in, config.hidden, 1 << j);
            blocks.push(DbtBlock::new(&format!("enc.block{j}"), spec, rng)?);
        }
        let dec_hidden = Linear::new("dec.hidden", config.hidden, config.hidden, rng);
        let dec_out = Linear::new("dec.out", config.hidden, config.n, rng);
        Ok(DmaeModel { dpe, blocks, dec_hidden, dec_out, config })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn set_warm_up(&mut self, on: bool) {
        self.dpe.set_warm_up(on);
        for b in &mut self.blocks {
            b.set_warm_up(on);
        }
    }

    fn check_input(&self, x: &Tensor<S>) -> Result<()> {
        let (n, len) = (self.config.n, self.config.len);
        if x.ndim() != 3 || x.dim(1) != n || x.dim(2) != len {
            return Err(DmaeError::Config(format!(
                "model built for [B, {n}, {len}] windows, got {:?}",
                x.shape()
            )));
        }
        Ok(())
    }

    /// `x`, `keep`: `[B, n, T]` → features `[B, h_s, T]`.
    pub fn encode(
        &mut self,
        x: &Tensor<S>,
        keep: &Tensor<S>,
        noise: Option<&Tensor<S>>,
        mode: Mode,
    ) -> Result<(Tensor<S>, EncodeCache<S>)> {
        self.check_input(x)?;
        let (embedded, dpe) = self.dpe.forward(x, keep, noise, mode)?;
        let mut h = embedded.clone();
        let mut blocks = Vec::with_capacity(NUM_BLOCKS);
        for b in &mut self.blocks {
            let (y, c) = b.forward(&h, mode)?;
            blocks.push(c);
            h = y;
        }
        Ok((h, EncodeCache { dpe, blocks, embedded }))
    }

    pub fn encode_backward(&mut self, cache: &EncodeCache<S>, grad_features: &Tensor<S>) {
        let mut g = grad_features.clone();
        for (b, c) in self.blocks.iter_mut().zip(&cache.blocks).rev() {
            g = b.backward(c, &g);
        }
        self.dpe.backward(&cache.dpe, &g);
    }

    /// Per-timestep map `[B, h_s, T]` → `[B, n, T]`.
    pub fn decode(&self, features: &Tensor<S>) -> (Tensor<S>, DecodeCache<S>) {
        let (batch, len) = (features.dim(0), features.dim(2));
        let (h, n) = (self.config.hidden, self.config.n);
        let mut hidden = Tensor::zeros(&[batch, h, len]);
        let mut out = Tensor::zeros(&[batch, n, len]);
        for b in 0..batch {
            let mut z = self.dec_hidden.forward_cm(features.slab(b), len);
            relu_in_place(&mut z);
            out.slab_mut(b).copy_from_slice(&self.dec_out.forward_cm(&z, len));
            hidden.slab_mut(b).copy_from_slice(&z);
        }
        (out, DecodeCache { features: features.clone(), hidden })
    }

    pub fn decode_backward(&mut self, cache: &DecodeCache<S>, grad_out: &Tensor<S>) -> Tensor<S> {
        let len = grad_out.dim(2);
        let mut grad = Tensor::zeros(cache.features.shape());
        for b in 0..grad_out.dim(0) {
            let mut gz = self.dec_out.backward_cm(cache.hidden.slab(b), grad_out.slab(b), len);
            for (g, &z) in gz.iter_mut().zip(cache.hidden.slab(b)) {
                if z <= S::zero() {
                    *g = S::zero();
                }
            }
            let gf = self.dec_hidden.backward_cm(cache.features.slab(b), &gz, len);
            grad.slab_mut(b).copy_from_slice(&gf);
        }
        grad
    }

    pub fn forward(
        &mut self,
        x: &Tensor<S>,
        keep: &Tensor<S>,
        noise: Option<&Tensor<S>>,
        mode: Mode,
    ) -> Result<(Tensor<S>, ForwardCache<S>)> {
        let (features, encode) = self.encode(x, keep, noise, mode)?;
        let (out, decode) = self.decode(&features);
        Ok((out, ForwardCache { encode, decode }))
    }

    pub fn backward(&mut self, cache: &ForwardCache<S>, grad_out: &Tensor<S>) {
        let g = self.decode_backward(&cache.decode, grad_out);
        self.encode_backward(&cache.encode, &g);
    }

    /// Both paths in one pass over a `2B` batch (the first half sees `mask`,
    /// the second `mask_r`); the noise draw is shared between halves.
    pub fn forward_dual(
        &mut self,
        x: &Tensor<S>,
        mask: &Tensor<S>,
        mask_r: &Tensor<S>,
        noise: Option<&Tensor<S>>,
        mode: Mode,
    ) -> Result<(ReconstructionPair<S>, ForwardCache<S>)> {
        mask.expect_shape("mask", x.shape())?;
        mask_r.expect_shape("submask", x.shape())?;
        if mask_r.data().iter().zip(mask.data()).any(|(r, m)| r > m) {
            return Err(DmaeError::Contract("random-masking submask exceeds the observation mask".into()));
        }
        let xx = concat_batch(x, x);
        let keep = concat_batch(mask, mask_r);
        let nn = noise.map(|z| concat_batch(z, z));
        let (out, cache) = self.forward(&xx, &keep, nn.as_ref(), mode)?;
        let (full, masked) = split_batch(&out);
        Ok((ReconstructionPair { full, masked, mask: mask.clone(), mask_r: mask_r.clone() }, cache))
    }

    /// Draws the submask and noise, then runs [`Self::forward_dual`].
    pub fn forward_dual_sampled<R: Rng + ?Sized>(
        &mut self,
        x: &Tensor<S>,
        mask: &Tensor<S>,
        m_r: f64,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(ReconstructionPair<S>, ForwardCache<S>)> {
        let mask_r = random_submask(&mask.cast::<f64>(), m_r, rng)?.cast::<S>();
        let noise = match mode {
            Mode::Train => self.dpe.draw_noise(x.shape(), rng),
            Mode::Eval => None,
        };
        self.forward_dual(x, mask, &mask_r, noise.as_ref(), mode)
    }

    /// Back-propagates gradients of both halves of a dual pass.
    pub fn backward_dual(&mut self, cache: &ForwardCache<S>, grad_full: &Tensor<S>, grad_masked: &Tensor<S>) {
        self.backward(cache, &concat_batch(grad_full, grad_masked));
    }

    pub fn encoder_params(&self) -> Vec<&Param<S>> {
        let mut v = self.dpe.params();
        for b in &self.blocks {
            v.extend(b.params());
        }
        v
    }

    pub fn encoder_params_mut(&mut self) -> Vec<&mut Param<S>> {
        let mut v = self.dpe.params_mut();
        for b in &mut self.blocks {
            v.extend(b.params_mut());
        }
        v
    }
}

impl<S: Real> Module<S> for DmaeModel<S> {
    fn params(&self) -> Vec<&Param<S>> {
        let mut v = self.encoder_params();
        v.extend(self.dec_hidden.params());
        v.extend(self.dec_out.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param<S>> {
        let mut v = self.dpe.params_mut();
        for b in &mut self.blocks {
            v.extend(b.params_mut());
        }
        v.extend(self.dec_hidden.params_mut());
        v.extend(self.dec_out.params_mut());
        v
    }
}

/// Mean over time: `[h_s, T]` → `[h_s]`.
pub fn head_pool<S: Real>(features: &[S], len: usize) -> Vec<S> {
    let inv = S::one() / S::of(len as f64);
    features.chunks(len).map(|row| row.iter().copied().sum::<S>() * inv).collect()
}

pub fn concat_batch<S: Real>(a: &Tensor<S>, b: &Tensor<S>) -> Tensor<S> {
    let mut shape = a.shape().to_vec();
    shape[0] += b.dim(0);
    let mut data = a.data().to_vec();
    data.extend_from_slice(b.data());
    Tensor::from_vec(&shape, data).expect("matching trailing dims")
}

fn split_batch<S: Real>(t: &Tensor<S>) -> (Tensor<S>, Tensor<S>) {
    let mut shape = t.shape().to_vec();
    shape[0] /= 2;
    let half = t.len() / 2;
    (
        Tensor::from_vec(&shape, t.data()[..half].to_vec()).expect("half batch"),
        Tensor::from_vec(&shape, t.data()[half..].to_vec()).expect("half batch"),
    )
}
