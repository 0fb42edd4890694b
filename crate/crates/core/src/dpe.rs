//! Dynamic positional embedding: masked or missing entries are filled by a
//! DBT block that reads the surviving observations.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::data::MtsWindow;
use crate::dbt::{BlockCache, BlockSpec, DbtBlock};
use crate::error::{DmaeError, Result};
use crate::nn::{Mode, Module, Param, Real, Tensor};

#[derive(Clone, Debug)]
pub enum Embedding<S> {
    /// Learned, input-dependent embedding.
    Dynamic(DbtBlock<S>),
    /// Ablation: every masked entry gets the same constant.
    HardCode(f64),
}

#[derive(Clone, Debug)]
pub struct Dpe<S> {
    pub embedding: Embedding<S>,
    pub noise_std: f64,
}

pub struct DpeCache<S> {
    mask: Tensor<S>,
    block: Option<BlockCache<S>>,
}

impl<S: Real> Dpe<S> {
    /// Embedding block of width `spec.c_in` built from `spec`'s scales.
    pub fn dynamic<R: Rng + ?Sized>(prefix: &str, spec: BlockSpec, noise_std: f64, rng: &mut R) -> Result<Self> {
        check_noise(noise_std)?;
        if spec.width != spec.c_in {
            return Err(DmaeError::Config("embedding block width must equal the attribute count".into()));
        }
        Ok(Dpe { embedding: Embedding::Dynamic(DbtBlock::new(prefix, spec, rng)?), noise_std })
    }

    pub fn hard_code(token: f64, noise_std: f64) -> Result<Self> {
        check_noise(noise_std)?;
        Ok(Dpe { embedding: Embedding::HardCode(token), noise_std })
    }

    pub fn block(&self) -> Option<&DbtBlock<S>> {
        match &self.embedding {
            Embedding::Dynamic(b) => Some(b),
            Embedding::HardCode(_) => None,
        }
    }

    pub fn set_warm_up(&mut self, on: bool) {
        if let Embedding::Dynamic(b) = &mut self.embedding {
            b.set_warm_up(on);
        }
    }

    /// Gaussian noise of this state's scale, or `None` when it is zero.
    pub fn draw_noise<R: Rng + ?Sized>(&self, shape: &[usize], rng: &mut R) -> Option<Tensor<S>> {
        if self.noise_std == 0.0 {
            return None;
        }
        let normal = Normal::new(0.0, self.noise_std).expect("checked noise scale");
        Some(Tensor::from_fn(shape, |_| S::of(normal.sample(rng))))
    }

    /// `x` and `keep` are `[B, n, T]`; `noise`, if given, is added to every
    /// entry before masking.
    pub fn forward(
        &mut self,
        x: &Tensor<S>,
        keep: &Tensor<S>,
        noise: Option<&Tensor<S>>,
        mode: Mode,
    ) -> Result<(Tensor<S>, DpeCache<S>)> {
        keep.expect_shape("dpe mask", x.shape())?;
        let mut xp = x.clone();
        if let Some(noise) = noise {
            noise.expect_shape("dpe noise", x.shape())?;
            xp.add_assign(noise);
        }
        let kept = xp.zip_map(keep, |v, m| v * m)?;
        let (filler, block) = match &mut self.embedding {
            Embedding::Dynamic(b) => {
                let (y, c) = b.forward(&kept, mode)?;
                (y, Some(c))
            }
            Embedding::HardCode(token) => (Tensor::full(x.shape(), S::of(*token)), None),
        };
        let out = compose(&xp, &filler, keep);
        Ok((out, DpeCache { mask: keep.clone(), block }))
    }

    /// Accumulates parameter gradients and returns the gradient w.r.t. `x`.
    pub fn backward(&mut self, cache: &DpeCache<S>, grad_out: &Tensor<S>) -> Tensor<S> {
        let keep = &cache.mask;
        let mut grad_x = grad_out.zip_map(keep, |g, m| g * m).expect("shapes fixed at forward");
        if let (Embedding::Dynamic(b), Some(bc)) = (&mut self.embedding, &cache.block) {
            let g_fill = grad_out.zip_map(keep, |g, m| g * (S::one() - m)).expect("shapes fixed at forward");
            let g_kept = b.backward(bc, &g_fill);
            for ((gx, gk), m) in grad_x.data_mut().iter_mut().zip(g_kept.data()).zip(keep.data()) {
                *gx += *gk * *m;
            }
        }
        grad_x
    }

    pub fn block_cache<'a>(&self, cache: &'a DpeCache<S>) -> Option<&'a BlockCache<S>> {
        cache.block.as_ref()
    }
}

impl<S: Real> Module<S> for Dpe<S> {
    fn params(&self) -> Vec<&Param<S>> {
        self.block().map_or_else(Vec::new, |b| b.params())
    }

    fn params_mut(&mut self) -> Vec<&mut Param<S>> {
        match &mut self.embedding {
            Embedding::Dynamic(b) => b.params_mut(),
            Embedding::HardCode(_) => Vec::new(),
        }
    }
}

fn check_noise(std: f64) -> Result<()> {
    if !(std >= 0.0 && std.is_finite()) {
        return Err(DmaeError::Config(format!("noise scale must be >= 0, got {std}")));
    }
    Ok(())
}

fn compose<S: Real>(data: &Tensor<S>, filler: &Tensor<S>, keep: &Tensor<S>) -> Tensor<S> {
    let mut out = data.clone();
    for ((o, f), m) in out.data_mut().iter_mut().zip(filler.data()).zip(keep.data()) {
        if *m == S::zero() {
            *o = *f;
        }
    }
    out
}

fn check_submask(window: &MtsWindow, keep: &Tensor<f64>) -> Result<()> {
    keep.expect_shape("dpe mask", window.mask().shape())?;
    if keep.data().iter().zip(window.mask().data()).any(|(&k, &m)| k > m || (k != 0.0 && k != 1.0)) {
        return Err(DmaeError::Contract("embedding mask must be a binary submask of the window mask".into()));
    }
    Ok(())
}

/// Single-window embedding `X' = M_m * X_p + (1 - M_m) * DBT(X_p * M_m)`.
/// Noise is drawn only in training mode.
pub fn dpe_apply<R: Rng + ?Sized>(
    state: &mut Dpe<f64>,
    window: &MtsWindow,
    keep: &Tensor<f64>,
    mode: Mode,
    rng: &mut R,
) -> Result<Tensor<f64>> {
    check_submask(window, keep)?;
    let (n, len) = (window.num_attributes(), window.len());
    let x = window.values().clone().reshape(&[1, n, len])?;
    let keep3 = keep.clone().reshape(&[1, n, len])?;
    let noise = match mode {
        Mode::Train => state.draw_noise(&[1, n, len], rng),
        Mode::Eval => None,
    };
    let (out, _) = state.forward(&x, &keep3, noise.as_ref(), mode)?;
    out.reshape(&[n, len])
}

/// Ablation substitute: masked entries become `token`.
pub fn hard_code_embedding(window: &MtsWindow, keep: &Tensor<f64>, token: f64) -> Result<Tensor<f64>> {
    check_submask(window, keep)?;
    Ok(compose(window.values(), &Tensor::full(keep.shape(), token), keep))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dbt::FusionKind;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec(n: usize, len: usize) -> BlockSpec {
        BlockSpec {
            c_in: n,
            width: n,
            len,
            kernel_sizes: [3, 5, 7],
            dilation: 1,
            num_kernels: 2,
            kernel_temperature: 4.0,
            fusion_temperature: 4.0,
            attention_hidden: n,
            fusion: FusionKind::Attention,
        }
    }

    fn window(n: usize, len: usize) -> MtsWindow {
        MtsWindow::complete(Tensor::from_fn(&[n, len], |i| (i as f64 * 0.7).sin()), 0).unwrap()
    }

    #[test]
    fn all_kept_eval_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut dpe = Dpe::dynamic("dpe", spec(2, 6), 0.01, &mut rng).unwrap();
        let w = window(2, 6);
        let out = dpe_apply(&mut dpe, &w, w.mask(), Mode::Eval, &mut rng).unwrap();
        assert_eq!(out, *w.values());
    }

    #[test]
    fn stubbed_block_composition() {
        let w = window(2, 3);
        let keep = Tensor::from_vec(&[2, 3], vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0]).unwrap();
        let out = hard_code_embedding(&w, &keep, 7.0).unwrap();
        for i in 0..6 {
            let expected = if keep.data()[i] == 1.0 { w.values().data()[i] } else { 7.0 };
            assert_eq!(out.data()[i], expected);
        }
        let zero = Tensor::zeros(&[2, 3]);
        assert!(hard_code_embedding(&w, &zero, 0.0).unwrap().data().iter().all(|&v| v == 0.0));
        assert_eq!(hard_code_embedding(&w, w.mask(), 0.0).unwrap(), *w.values());
    }

    #[test]
    fn superset_mask_rejected() {
        let v = Tensor::zeros(&[1, 2]);
        let w = MtsWindow::new(v, Tensor::from_vec(&[1, 2], vec![1.0, 0.0]).unwrap(), 0).unwrap();
        let keep = Tensor::full(&[1, 2], 1.0);
        assert!(matches!(hard_code_embedding(&w, &keep, 0.0), Err(DmaeError::Contract(_))));
    }

    #[test]
    fn embeddings_vary_with_position() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut dpe = Dpe::dynamic("dpe", spec(2, 12), 0.0, &mut rng).unwrap();
        let w = window(2, 12);
        let mut keep = Tensor::full(&[2, 12], 1.0);
        keep.set2(0, 3, 0.0);
        keep.set2(0, 8, 0.0);
        let out = dpe_apply(&mut dpe, &w, &keep, Mode::Eval, &mut rng).unwrap();
        assert!((out.at2(0, 3) - out.at2(0, 8)).abs() > 1e-9);
    }
}
