use crate::dbt::{BlockCache, NUM_SCALES};
use crate::error::Result;
use crate::model::{DmaeModel, EncodeCache};
use crate::nn::{Mode, Real, Tensor};

/// Per-time-step view of one window's dynamic behaviour: embedded values at
/// masked entries, dynamic-kernel weights, and scale-fusion weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Trace {
    pub len: usize,
    /// Per attribute; `None` where the entry was kept.
    pub embedding: Vec<(String, Vec<Option<f64>>)>,
    /// Per bank; one weight vector for the whole window.
    pub kernel_alpha: Vec<(String, Vec<f64>)>,
    /// Per block; `[T, 3]` row-major.
    pub scale_alpha: Vec<(String, Vec<f64>)>,
}

fn block_alphas<S: Real>(name: &str, cache: &BlockCache<S>, sample: usize, trace: &mut Trace) {
    for (u, unit) in cache.units.iter().enumerate() {
        for (l, layer) in unit.layers.iter().enumerate() {
            for (dir, k) in [("fwd", &layer.forward_attention), ("bwd", &layer.backward_attention)] {
                let alpha = k[sample].alpha.iter().map(|a| a.f64()).collect();
                trace.kernel_alpha.push((format!("{name}_u{u}_l{l}_{dir}"), alpha));
            }
        }
    }
    if let Some(f) = cache.fusion.get(sample) {
        trace.scale_alpha.push((name.to_string(), f.alpha.iter().map(|a| a.f64()).collect()));
    }
}

impl Trace {
    pub fn from_cache<S: Real>(
        model: &DmaeModel<S>,
        cache: &EncodeCache<S>,
        keep: &Tensor<S>,
        names: &[String],
    ) -> Self {
        let len = keep.dim(2);
        let mut trace = Trace { len, embedding: Vec::new(), kernel_alpha: Vec::new(), scale_alpha: Vec::new() };
        for (a, name) in names.iter().enumerate() {
            let col = (0..len)
                .map(|t| (keep.at3(0, a, t) == S::zero()).then(|| cache.embedded.at3(0, a, t).f64()))
                .collect();
            trace.embedding.push((name.clone(), col));
        }
        if let Some(bc) = model.dpe.block_cache(&cache.dpe) {
            block_alphas("dpe", bc, 0, &mut trace);
        }
        for (j, bc) in cache.blocks.iter().enumerate() {
            block_alphas(&format!("enc{j}"), bc, 0, &mut trace);
        }
        trace
    }

    pub fn header(&self) -> Vec<String> {
        let mut h = vec!["t".to_string()];
        h.extend(self.embedding.iter().map(|(n, _)| format!("emb_{n}")));
        for (n, a) in &self.kernel_alpha {
            h.extend((0..a.len()).map(|k| format!("dk_{n}_k{k}")));
        }
        for (n, _) in &self.scale_alpha {
            h.extend((0..NUM_SCALES).map(|i| format!("asf_{n}_s{i}")));
        }
        h
    }

    /// One row per time step; kept entries render as NaN.
    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.len)
            .map(|t| {
                let mut row = vec![t as f64];
                row.extend(self.embedding.iter().map(|(_, c)| c[t].unwrap_or(f64::NAN)));
                for (_, a) in &self.kernel_alpha {
                    row.extend_from_slice(a);
                }
                for (_, a) in &self.scale_alpha {
                    row.extend_from_slice(&a[t * NUM_SCALES..(t + 1) * NUM_SCALES]);
                }
                row
            })
            .collect()
    }
}

impl<S: Real> DmaeModel<S> {
    /// Evaluation-mode trace of a single `[n, T]` window.
    pub fn trace(&mut self, x: &Tensor<S>, keep: &Tensor<S>, names: &[String]) -> Result<Trace> {
        let shape = [1, x.dim(0), x.dim(1)];
        let x = x.clone().reshape(&shape)?;
        let keep = keep.clone().reshape(&shape)?;
        let (_, cache) = self.encode(&x, &keep, None, Mode::Eval)?;
        Ok(Trace::from_cache(self, &cache, &keep, names))
    }
}
