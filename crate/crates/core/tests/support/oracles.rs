//! Reference values and brute-force oracles.

use dmae::model::dmae_loss;
use dmae::nn::ops::causal_dilated_conv1d;
use dmae::nn::Tensor;
use dmae::train::mae_p;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const CONV_TOL: f64 = 1e-10;
pub const LOSS_TOL: f64 = 1e-6;
pub const DILATIONS: [usize; 3] = [1, 2, 4];
pub const KERNEL_SIZES: [usize; 4] = [2, 3, 5, 7];
pub const CONV_DRAWS: u64 = 5;

/// `y[o, t] = sum_i sum_j w[o, i, j] x[i, t - (k-1-j) d]`, zero before 0.
pub fn direct_conv(x: &[f64], w: &[f64], c_in: usize, c_out: usize, k: usize, len: usize, d: usize) -> Vec<f64> {
    let mut y = vec![0.0; c_out * len];
    for o in 0..c_out {
        for t in 0..len {
            let mut acc = 0.0;
            for i in 0..c_in {
                for j in 0..k {
                    let back = (k - 1 - j) * d;
                    if back <= t {
                        acc += w[(o * c_in + i) * k + j] * x[i * len + t - back];
                    }
                }
            }
            y[o * len + t] = acc;
        }
    }
    y
}

/// Largest deviation from the oracle over every dilation and kernel size,
/// `CONV_DRAWS` random draws each with up to 3 channels and `T = 12`.
pub fn conv_oracle_deviation() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let len = 12;
    let mut worst: f64 = 0.0;
    for &d in &DILATIONS {
        for &k in &KERNEL_SIZES {
            for _ in 0..CONV_DRAWS {
                let c_in = rng.random_range(1..=3);
                let c_out = rng.random_range(1..=3);
                let x: Vec<f64> = (0..c_in * len).map(|_| rng.random_range(-2.0..2.0)).collect();
                let w: Vec<f64> = (0..c_out * c_in * k).map(|_| rng.random_range(-1.0..1.0)).collect();
                let got = causal_dilated_conv1d(
                    &Tensor::from_vec(&[c_in, len], x.clone()).unwrap(),
                    &Tensor::from_vec(&[c_out, c_in, k], w.clone()).unwrap(),
                    d,
                )
                .unwrap();
                let want = direct_conv(&x, &w, c_in, c_out, k, len, d);
                for (a, b) in got.data().iter().zip(&want) {
                    worst = worst.max((a - b).abs());
                }
            }
        }
    }
    worst
}

/// X=(1,2), M=(1,1), M^r=(1,0), m_r=0.5, X̂^r=(1,4), X̂=(1,2).
pub fn loss_example() -> f64 {
    let t = |v: [f64; 2]| Tensor::from_vec(&[1, 1, 2], v.to_vec()).unwrap();
    dmae_loss(&t([1.0, 2.0]), &t([1.0, 4.0]), &t([1.0, 2.0]), &t([1.0, 1.0]), &t([1.0, 0.0]), 0.5)
        .unwrap()
        .value
}

pub const LOSS_EXAMPLE: f64 = 4.0 / 3.0;

/// One sample, s=3, target (1,2,3), prediction (1.5,2,2).
pub fn mae_example() -> f64 {
    mae_p(&[vec![1.0, 2.0, 3.0]], &[vec![1.5, 2.0, 2.0]])
}
