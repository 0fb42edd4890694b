use crate::error::Result;
use crate::nn::{Real, Tensor};

/// Weights of the (masked, visible) terms: `1/(m_r+1)` and `m_r/(m_r+1)`.
pub fn loss_weights(m_r: f64) -> (f64, f64) {
    (1.0 / (m_r + 1.0), m_r / (m_r + 1.0))
}

/// `||(pred - x) * w||_2 / ||w||_2` over one window, and its gradient
/// w.r.t. `pred` scaled by `scale`, accumulated into `grad`. An empty mask
/// contributes 0.
pub fn norm_ratio<S: Real>(pred: &[S], x: &[S], w: &[S], scale: f64, grad: Option<&mut [S]>) -> f64 {
    let mut rr = 0.0;
    let mut ww = 0.0;
    for ((&p, &v), &m) in pred.iter().zip(x).zip(w) {
        let r = (p - v).f64() * m.f64();
        rr += r * r;
        ww += m.f64() * m.f64();
    }
    if ww == 0.0 {
        return 0.0;
    }
    let (num, den) = (rr.sqrt(), ww.sqrt());
    if let Some(grad) = grad {
        if num > 0.0 {
            let k = scale / (num * den);
            for (((g, &p), &v), &m) in grad.iter_mut().zip(pred).zip(x).zip(w) {
                *g += S::of(k * (p - v).f64() * m.f64() * m.f64());
            }
        }
    }
    num / den
}

/// Loss value with gradients w.r.t. both reconstructions.
#[derive(Clone, Debug)]
pub struct LossOutput<S> {
    pub value: f64,
    /// Batch mean of the artificially masked term (before weighting).
    pub masked_term: f64,
    /// Batch mean of the visible term (before weighting).
    pub visible_term: f64,
    pub grad_full: Tensor<S>,
    pub grad_masked: Tensor<S>,
}

/// Batched masked-reconstruction objective, averaged over windows. All
/// tensors are `[B, n, T]`; `mask_r` is the artificial submask of `mask`.
pub fn dmae_loss<S: Real>(
    x_hat: &Tensor<S>,
    x_hat_r: &Tensor<S>,
    x: &Tensor<S>,
    mask: &Tensor<S>,
    mask_r: &Tensor<S>,
    m_r: f64,
) -> Result<LossOutput<S>> {
    for (name, t) in [("reconstruction", x_hat), ("masked reconstruction", x_hat_r), ("mask", mask), ("submask", mask_r)] {
        t.expect_shape(name, x.shape())?;
    }
    let batch = x.dim(0);
    let (w1, w2) = loss_weights(m_r);
    let scale = 1.0 / batch as f64;
    let diff = mask.zip_map(mask_r, |m, r| m - r)?;
    let mut grad_full = Tensor::zeros(x.shape());
    let mut grad_masked = Tensor::zeros(x.shape());
    let (mut t1, mut t2) = (0.0, 0.0);
    let mut empty = 0;
    for b in 0..batch {
        if diff.slab(b).iter().all(|&d| d == S::zero()) {
            empty += 1;
        }
        t1 += norm_ratio(x_hat_r.slab(b), x.slab(b), diff.slab(b), w1 * scale, Some(grad_masked.slab_mut(b)));
        t2 += norm_ratio(x_hat.slab(b), x.slab(b), mask.slab(b), w2 * scale, Some(grad_full.slab_mut(b)));
    }
    if empty > 0 && m_r > 0.0 {
        log::warn!("{empty} of {batch} windows have no artificially masked entries; their masked term is 0");
    }
    let (t1, t2) = (t1 * scale, t2 * scale);
    Ok(LossOutput {
        value: w1 * t1 + w2 * t2,
        masked_term: t1,
        visible_term: t2,
        grad_full,
        grad_masked,
    })
}

/// Objective without random masking: the visible term alone, weight 1.
pub fn visible_loss<S: Real>(x_hat: &Tensor<S>, x: &Tensor<S>, mask: &Tensor<S>) -> Result<(f64, Tensor<S>)> {
    x_hat.expect_shape("reconstruction", x.shape())?;
    mask.expect_shape("mask", x.shape())?;
    let batch = x.dim(0);
    let scale = 1.0 / batch as f64;
    let mut grad = Tensor::zeros(x.shape());
    let mut total = 0.0;
    for b in 0..batch {
        total += norm_ratio(x_hat.slab(b), x.slab(b), mask.slab(b), scale, Some(grad.slab_mut(b)));
    }
    Ok((total * scale, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(&[1, 1, v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn hand_example() {
        let out = dmae_loss(&t(&[1.0, 2.0]), &t(&[1.0, 4.0]), &t(&[1.0, 2.0]), &t(&[1.0, 1.0]), &t(&[1.0, 0.0]), 0.5).unwrap();
        assert!((out.value - 4.0 / 3.0).abs() < 1e-12);
        assert_eq!(out.visible_term, 0.0);
    }

    #[test]
    fn perfect_reconstruction() {
        let x = t(&[0.3, -1.0, 2.0]);
        let out = dmae_loss(&x, &x, &x, &t(&[1.0, 1.0, 1.0]), &t(&[0.0, 1.0, 1.0]), 0.2).unwrap();
        assert_eq!(out.value, 0.0);
    }

    #[test]
    fn no_masked_entries_gives_zero_first_term() {
        let m = t(&[1.0, 1.0]);
        let out = dmae_loss(&t(&[0.0, 0.0]), &t(&[5.0, 5.0]), &t(&[1.0, 1.0]), &m, &m, 0.2).unwrap();
        assert_eq!(out.masked_term, 0.0);
        assert!(out.grad_masked.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn weights_sum_to_one() {
        for m_r in [0.0, 0.05, 0.2, 0.5, 0.99] {
            let (a, b) = loss_weights(m_r);
            assert!((a + b - 1.0).abs() < 1e-15);
        }
    }
}
