use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dbt::asf::{AsfCache, AttentionScaleFusion, NUM_SCALES};
use crate::dbt::unit::{DbtUnit, UnitCache, UnitSpec};
use crate::error::{DmaeError, Result};
use crate::nn::layers::BatchNormCache;
use crate::nn::{scoped, BatchNorm1d, Linear, Mode, Module, Param, Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionKind {
    Attention,
    /// Dense map over the concatenated scales (ablation).
    Concat,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockSpec {
    pub c_in: usize,
    pub width: usize,
    pub len: usize,
    pub kernel_sizes: [usize; NUM_SCALES],
    pub dilation: usize,
    pub num_kernels: usize,
    pub kernel_temperature: f64,
    pub fusion_temperature: f64,
    pub attention_hidden: usize,
    pub fusion: FusionKind,
}

#[derive(Clone, Debug)]
pub enum ScaleFusion<S> {
    Attention(AttentionScaleFusion<S>),
    Concat(Linear<S>),
}

/// Three parallel DBT units (one per kernel size) with batch norm, fused
/// across scales.
#[derive(Clone, Debug)]
pub struct DbtBlock<S> {
    pub units: Vec<DbtUnit<S>>,
    pub norms: Vec<BatchNorm1d<S>>,
    pub fusion: ScaleFusion<S>,
    spec: BlockSpec,
}

#[derive(Clone, Debug)]
pub struct BlockCache<S> {
    input: Tensor<S>,
    pub units: Vec<UnitCache<S>>,
    norms: Vec<BatchNormCache<S>>,
    /// Per-sample `[3, h, T]` after batch norm.
    stacked: Vec<Vec<S>>,
    /// Per-sample attention caches (empty for concat fusion).
    pub fusion: Vec<AsfCache<S>>,
}

impl<S: Real> DbtBlock<S> {
    pub fn new<R: Rng + ?Sized>(prefix: &str, spec: BlockSpec, rng: &mut R) -> Result<Self> {
        if spec.dilation == 0 {
            return Err(DmaeError::Config("dilation must be a positive integer".into()));
        }
        let mut units = Vec::with_capacity(NUM_SCALES);
        let mut norms = Vec::with_capacity(NUM_SCALES);
        for (i, &k) in spec.kernel_sizes.iter().enumerate() {
            let unit_spec = UnitSpec {
                c_in: spec.c_in,
                width: spec.width,
                len: spec.len,
                kernel_size: k,
                dilation: spec.dilation,
                num_kernels: spec.num_kernels,
                temperature: spec.kernel_temperature,
            };
            units.push(DbtUnit::new(&scoped(prefix, &format!("unit{i}")), unit_spec, rng)?);
            norms.push(BatchNorm1d::new(&scoped(prefix, &format!("norm{i}")), spec.width));
        }
        let fusion = match spec.fusion {
            FusionKind::Attention => ScaleFusion::Attention(AttentionScaleFusion::new(
                &scoped(prefix, "asf"),
                spec.width,
                spec.attention_hidden,
                spec.fusion_temperature,
                rng,
            )?),
            FusionKind::Concat => {
                ScaleFusion::Concat(Linear::new(&scoped(prefix, "concat"), NUM_SCALES * spec.width, spec.width, rng))
            }
        };
        Ok(DbtBlock {
            units,
            norms,
            fusion,
            spec,
        })
    }

    pub fn spec(&self) -> &BlockSpec {
        &self.spec
    }

    pub fn set_warm_up(&mut self, on: bool) {
        for u in &mut self.units {
            u.set_warm_up(on);
        }
        if let ScaleFusion::Attention(a) = &mut self.fusion {
            a.warm_up = on;
        }
    }

    /// `x` is `[B, c_in, T]`; returns `[B, width, T]`.
    pub fn forward(&mut self, x: &Tensor<S>, mode: Mode) -> Result<(Tensor<S>, BlockCache<S>)> {
        let (c_in, width, len) = (self.spec.c_in, self.spec.width, self.spec.len);
        if x.ndim() != 3 || x.dim(1) != c_in || x.dim(2) != len {
            return Err(DmaeError::dim("block input", format!("[B, {c_in}, {len}]"), format!("{:?}", x.shape())));
        }
        let batch = x.dim(0);
        let hl = width * len;
        let mut unit_caches = Vec::with_capacity(NUM_SCALES);
        let mut norm_caches = Vec::with_capacity(NUM_SCALES);
        let mut stacked = vec![vec![S::zero(); NUM_SCALES * hl]; batch];
        for (i, unit) in self.units.iter().enumerate() {
            let (y, caches) = unit.forward(x.data(), batch);
            let out = Tensor::from_vec(&[batch, width, len], y)?;
            let (normed, nc) = self.norms[i].forward(&out, mode)?;
            for (b, s) in stacked.iter_mut().enumerate() {
                s[i * hl..(i + 1) * hl].copy_from_slice(normed.slab(b));
            }
            unit_caches.push(caches);
            norm_caches.push(nc);
        }
        let mut out = Tensor::zeros(&[batch, width, len]);
        let mut fusion_caches = Vec::new();
        for (b, s) in stacked.iter().enumerate() {
            let y = match &self.fusion {
                ScaleFusion::Attention(asf) => {
                    let (y, c) = asf.fuse(s, len);
                    fusion_caches.push(c);
                    y
                }
                ScaleFusion::Concat(lin) => lin.forward_cm(s, len),
            };
            out.slab_mut(b).copy_from_slice(&y);
        }
        Ok((
            out,
            BlockCache {
                input: x.clone(),
                units: unit_caches,
                norms: norm_caches,
                stacked,
                fusion: fusion_caches,
            },
        ))
    }

    pub fn backward(&mut self, cache: &BlockCache<S>, grad_out: &Tensor<S>) -> Tensor<S> {
        let (width, len) = (self.spec.width, self.spec.len);
        let batch = grad_out.dim(0);
        let hl = width * len;
        let mut grad_stacked = Vec::with_capacity(batch);
        for b in 0..batch {
            let g = match &mut self.fusion {
                ScaleFusion::Attention(asf) => asf.backward(&cache.stacked[b], &cache.fusion[b], grad_out.slab(b), len),
                ScaleFusion::Concat(lin) => lin.backward_cm(&cache.stacked[b], grad_out.slab(b), len),
            };
            grad_stacked.push(g);
        }
        let mut grad_x = Tensor::zeros(cache.input.shape());
        for i in 0..NUM_SCALES {
            let mut g_norm = Tensor::zeros(&[batch, width, len]);
            for (b, gs) in grad_stacked.iter().enumerate() {
                g_norm.slab_mut(b).copy_from_slice(&gs[i * hl..(i + 1) * hl]);
            }
            let g_unit = self.norms[i].backward(&cache.norms[i], &g_norm);
            let gx = self.units[i].backward(cache.input.data(), batch, &cache.units[i], g_unit.data());
            grad_x.data_mut().iter_mut().zip(&gx).for_each(|(a, v)| *a += *v);
        }
        grad_x
    }
}

impl<S: Real> Module<S> for DbtBlock<S> {
    fn params(&self) -> Vec<&Param<S>> {
        let mut v = Vec::new();
        for (u, n) in self.units.iter().zip(&self.norms) {
            v.extend(u.params());
            v.extend(n.params());
        }
        match &self.fusion {
            ScaleFusion::Attention(a) => v.extend(a.params()),
            ScaleFusion::Concat(l) => v.extend(l.params()),
        }
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param<S>> {
        let mut v = Vec::new();
        for (u, n) in self.units.iter_mut().zip(self.norms.iter_mut()) {
            v.extend(u.params_mut());
            v.extend(n.params_mut());
        }
        match &mut self.fusion {
            ScaleFusion::Attention(a) => v.extend(a.params_mut()),
            ScaleFusion::Concat(l) => v.extend(l.params_mut()),
        }
        v
    }
}
