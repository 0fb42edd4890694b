use crate::nn::{Param, Real};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adaptive moment estimation with bias correction. Buffers follow the
/// order in which trainable parameters are passed to [`Adam::step`].
#[derive(Clone, Debug, Default)]
pub struct Adam {
    pub lr: f64,
    pub steps: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam { lr, ..Default::default() }
    }

    pub fn step<S: Real>(&mut self, params: Vec<&mut Param<S>>) {
        let params: Vec<_> = params.into_iter().filter(|p| p.is_trainable()).collect();
        if self.first.is_empty() {
            self.first = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.second = self.first.clone();
        }
        assert_eq!(self.first.len(), params.len(), "optimizer parameter set changed");
        self.steps += 1;
        let c1 = 1.0 - BETA1.powi(self.steps as i32);
        let c2 = 1.0 - BETA2.powi(self.steps as i32);
        for ((p, m), v) in params.into_iter().zip(&mut self.first).zip(&mut self.second) {
            let Param { value, grad, .. } = p;
            for (((w, g), m), v) in value.data_mut().iter_mut().zip(grad.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                let g = g.f64();
                *m = BETA1 * *m + (1.0 - BETA1) * g;
                *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                let update = self.lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
                if update != 0.0 {
                    *w = S::of(w.f64() - update);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = Param::new("w", Tensor::<f64>::full(&[3], 0.7));
        let mut opt = Adam::new(0.1);
        opt.step(vec![&mut p]);
        assert_eq!(p.value.data(), &[0.7; 3]);
    }

    #[test]
    fn first_step_on_square() {
        let mut p = Param::new("w", Tensor::<f64>::full(&[1], 1.0));
        p.grad = Tensor::full(&[1], 2.0);
        let mut opt = Adam::new(0.1);
        opt.step(vec![&mut p]);
        assert!((p.value.data()[0] - 0.9).abs() < 1e-7);
    }
}
