use rand::Rng;

use crate::dbt::kernel::{DynamicKernelBank, KernelCache};
use crate::error::Result;
use crate::nn::ops::{conv1d_backward, conv1d_forward, relu_in_place, relu_mask_grad, ConvGeometry};
use crate::nn::{flip_time, scoped, Linear, Module, Param, Real};

/// Construction parameters shared by every layer of a unit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UnitSpec {
    pub c_in: usize,
    pub width: usize,
    pub len: usize,
    pub kernel_size: usize,
    pub dilation: usize,
    pub num_kernels: usize,
    pub temperature: f64,
}

/// One bidirectional CDC layer: a forward and a time-flipped dynamic-kernel
/// convolution, concatenated, merged by a per-step dense map, then ReLU.
#[derive(Clone, Debug)]
pub struct BiLayer<S> {
    pub forward_bank: DynamicKernelBank<S>,
    pub backward_bank: DynamicKernelBank<S>,
    pub fusion: Linear<S>,
    geometry: ConvGeometry,
}

#[derive(Clone, Debug)]
pub struct BiLayerCache<S> {
    flipped: Vec<S>,
    /// One entry per sample.
    pub forward_attention: Vec<KernelCache<S>>,
    pub backward_attention: Vec<KernelCache<S>>,
    concat: Vec<S>,
    activation: Vec<S>,
}

impl<S: Real> BiLayer<S> {
    fn new<R: Rng + ?Sized>(prefix: &str, spec: &UnitSpec, c_in: usize, rng: &mut R) -> Result<Self> {
        let geometry = ConvGeometry {
            c_in,
            c_out: spec.width,
            kernel_size: spec.kernel_size,
            dilation: spec.dilation,
            len: spec.len,
        };
        geometry.validate()?;
        let bank = |name: &str, rng: &mut R| {
            DynamicKernelBank::new(
                &scoped(prefix, name),
                spec.num_kernels,
                spec.width,
                c_in,
                spec.kernel_size,
                spec.len,
                spec.temperature,
                rng,
            )
        };
        Ok(BiLayer {
            forward_bank: bank("fwd", rng)?,
            backward_bank: bank("bwd", rng)?,
            fusion: Linear::new(&scoped(prefix, "fusion"), 2 * spec.width, spec.width, rng),
            geometry,
        })
    }

    /// Branch outputs `(forward, backward)`; the backward one is in flipped time.
    pub fn branches(&self, x: &[S]) -> (Vec<S>, Vec<S>) {
        let g = self.geometry;
        let (kf, _) = self.forward_bank.aggregate(x);
        let mut yf = vec![S::zero(); g.c_out * g.len];
        conv1d_forward(g, x, &kf, &mut yf);
        let mut flipped = vec![S::zero(); x.len()];
        flip_time(x, g.c_in, g.len, &mut flipped);
        let (kb, _) = self.backward_bank.aggregate(&flipped);
        let mut yb = vec![S::zero(); g.c_out * g.len];
        conv1d_forward(g, &flipped, &kb, &mut yb);
        (yf, yb)
    }

    /// `x` holds `batch` stacked `[c_in, T]` slabs.
    fn forward(&self, x: &[S], batch: usize) -> (Vec<S>, BiLayerCache<S>) {
        let g = self.geometry;
        let (slab, hl) = (g.c_in * g.len, g.c_out * g.len);
        let mut flipped = vec![S::zero(); x.len()];
        for (src, dst) in x.chunks(slab).zip(flipped.chunks_mut(slab)) {
            flip_time(src, g.c_in, g.len, dst);
        }
        let mut forward_attention = Vec::with_capacity(batch);
        let mut backward_attention = Vec::with_capacity(batch);
        let mut concat = vec![S::zero(); batch * 2 * hl];
        let mut activation = Vec::with_capacity(batch * hl);
        let mut yb = vec![S::zero(); hl];
        for b in 0..batch {
            let c = &mut concat[b * 2 * hl..(b + 1) * 2 * hl];
            let (xs, fs) = (&x[b * slab..(b + 1) * slab], &flipped[b * slab..(b + 1) * slab]);
            let (kf, af) = self.forward_bank.aggregate(xs);
            conv1d_forward(g, xs, &kf, &mut c[..hl]);
            let (kb, ab) = self.backward_bank.aggregate(fs);
            conv1d_forward(g, fs, &kb, &mut yb);
            flip_time(&yb, g.c_out, g.len, &mut c[hl..]);
            forward_attention.push(af);
            backward_attention.push(ab);
            let mut a = self.fusion.forward_cm(c, g.len);
            relu_in_place(&mut a);
            activation.extend_from_slice(&a);
        }
        (
            activation.clone(),
            BiLayerCache {
                flipped,
                forward_attention,
                backward_attention,
                concat,
                activation,
            },
        )
    }

    fn backward(&mut self, x: &[S], batch: usize, cache: &BiLayerCache<S>, grad_out: &[S]) -> Vec<S> {
        let g = self.geometry;
        let (slab, hl) = (g.c_in * g.len, g.c_out * g.len);
        let mut grad_kernel = vec![S::zero(); self.forward_bank.kernel_len()];
        let mut grad_x = vec![S::zero(); x.len()];
        let mut grad_flipped = vec![S::zero(); x.len()];
        let mut grad_yb = vec![S::zero(); hl];
        for b in 0..batch {
            let (sl, hs) = (b * slab..(b + 1) * slab, b * hl..(b + 1) * hl);
            let mut grad_z = grad_out[hs.clone()].to_vec();
            relu_mask_grad(&cache.activation[hs], &mut grad_z);
            let grad_concat = self.fusion.backward_cm(&cache.concat[b * 2 * hl..(b + 1) * 2 * hl], &grad_z, g.len);

            let att = &cache.forward_attention[b];
            let kernel = self.forward_bank.combine(&att.alpha);
            conv1d_backward(g, &x[sl.clone()], &kernel, &grad_concat[..hl], &mut grad_kernel, &mut grad_x[sl.clone()]);
            self.forward_bank.backward(att, &grad_kernel, &mut grad_x[sl.clone()]);

            let att = &cache.backward_attention[b];
            let kernel = self.backward_bank.combine(&att.alpha);
            flip_time(&grad_concat[hl..], g.c_out, g.len, &mut grad_yb);
            conv1d_backward(g, &cache.flipped[sl.clone()], &kernel, &grad_yb, &mut grad_kernel, &mut grad_flipped[sl.clone()]);
            self.backward_bank.backward(att, &grad_kernel, &mut grad_flipped[sl]);
        }
        let mut unflipped = vec![S::zero(); slab];
        for (gx, gf) in grad_x.chunks_mut(slab).zip(grad_flipped.chunks(slab)) {
            flip_time(gf, g.c_in, g.len, &mut unflipped);
            gx.iter_mut().zip(&unflipped).for_each(|(a, b)| *a += *b);
        }
        grad_x
    }
}

impl<S: Real> Module<S> for BiLayer<S> {
    fn params(&self) -> Vec<&Param<S>> {
        let mut v = self.forward_bank.params();
        v.extend(self.backward_bank.params());
        v.extend(self.fusion.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param<S>> {
        let mut v = self.forward_bank.params_mut();
        v.extend(self.backward_bank.params_mut());
        v.extend(self.fusion.params_mut());
        v
    }
}

/// Dynamic bidirectional TCN unit: two bidirectional layers wrapped by a
/// residual connection (dense projection when the widths differ).
#[derive(Clone, Debug)]
pub struct DbtUnit<S> {
    pub layers: [BiLayer<S>; 2],
    pub residual: Option<Linear<S>>,
    spec: UnitSpec,
}

#[derive(Clone, Debug)]
pub struct UnitCache<S> {
    pub layers: [BiLayerCache<S>; 2],
}

impl<S: Real> DbtUnit<S> {
    pub fn new<R: Rng + ?Sized>(prefix: &str, spec: UnitSpec, rng: &mut R) -> Result<Self> {
        let first = BiLayer::new(&scoped(prefix, "layer0"), &spec, spec.c_in, rng)?;
        let second = BiLayer::new(&scoped(prefix, "layer1"), &spec, spec.width, rng)?;
        let residual =
            (spec.c_in != spec.width).then(|| Linear::new(&scoped(prefix, "residual"), spec.c_in, spec.width, rng));
        Ok(DbtUnit {
            layers: [first, second],
            residual,
            spec,
        })
    }

    pub fn spec(&self) -> &UnitSpec {
        &self.spec
    }

    pub fn set_warm_up(&mut self, on: bool) {
        for layer in &mut self.layers {
            layer.forward_bank.warm_up = on;
            layer.backward_bank.warm_up = on;
        }
    }

    pub fn banks(&self) -> impl Iterator<Item = &DynamicKernelBank<S>> {
        self.layers.iter().flat_map(|l| [&l.forward_bank, &l.backward_bank])
    }

    /// `x` holds `batch` stacked `[c_in, T]` slabs; returns `batch` stacked
    /// `[width, T]` slabs.
    pub fn forward(&self, x: &[S], batch: usize) -> (Vec<S>, UnitCache<S>) {
        let (h1, c1) = self.layers[0].forward(x, batch);
        let (mut out, c2) = self.layers[1].forward(&h1, batch);
        let len = self.spec.len;
        match &self.residual {
            Some(proj) => {
                let (slab, hl) = (self.spec.c_in * len, self.spec.width * len);
                for (o, xs) in out.chunks_mut(hl).zip(x.chunks(slab)) {
                    let r = proj.forward_cm(xs, len);
                    o.iter_mut().zip(&r).for_each(|(o, v)| *o += *v);
                }
            }
            None => out.iter_mut().zip(x).for_each(|(o, v)| *o += *v),
        }
        (out, UnitCache { layers: [c1, c2] })
    }

    pub fn backward(&mut self, x: &[S], batch: usize, cache: &UnitCache<S>, grad_out: &[S]) -> Vec<S> {
        let len = self.spec.len;
        let h1 = &cache.layers[0].activation;
        let grad_h1 = self.layers[1].backward(h1, batch, &cache.layers[1], grad_out);
        let mut grad_x = self.layers[0].backward(x, batch, &cache.layers[0], &grad_h1);
        match &mut self.residual {
            Some(proj) => {
                let (slab, hl) = (self.spec.c_in * len, self.spec.width * len);
                for ((gx, xs), go) in grad_x.chunks_mut(slab).zip(x.chunks(slab)).zip(grad_out.chunks(hl)) {
                    let g = proj.backward_cm(xs, go, len);
                    gx.iter_mut().zip(&g).for_each(|(a, b)| *a += *b);
                }
            }
            None => grad_x.iter_mut().zip(grad_out).for_each(|(a, b)| *a += *b),
        }
        grad_x
    }
}

impl<S: Real> Module<S> for DbtUnit<S> {
    fn params(&self) -> Vec<&Param<S>> {
        let mut v = self.layers[0].params();
        v.extend(self.layers[1].params());
        if let Some(r) = &self.residual {
            v.extend(r.params());
        }
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param<S>> {
        let [a, b] = &mut self.layers;
        let mut v = a.params_mut();
        v.extend(b.params_mut());
        if let Some(r) = &mut self.residual {
            v.extend(r.params_mut());
        }
        v
    }
}
