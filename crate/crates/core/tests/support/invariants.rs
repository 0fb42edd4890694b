//! Structural invariants, each checked on one seeded random configuration.

use dmae::data::{inject_mask, random_submask, MissingPattern};
use dmae::dbt::{AttentionScaleFusion, DbtUnit, DynamicKernelBank, UnitSpec};
use dmae::model::{dmae_loss, loss_weights, visible_loss};
use dmae::nn::ops::causal_dilated_conv1d;
use dmae::nn::Tensor;
use dmae::train::{mse_m, mse_v};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const CONFIGS: u64 = 100;
pub const WEIGHT_SUM_TOL: f64 = 1e-10;
/// Rounding slack for the convex-combination bounds.
pub const CONVEX_SLACK: f64 = 1e-12;
pub const IDENTITY_TOL: f64 = 4.0 * f64::EPSILON;

pub type Check = fn(u64) -> Result<(), String>;

pub const CHECKS: &[(&str, Check)] = &[
    ("mask annihilation", mask_annihilation),
    ("convex kernel bounds", convex_kernel_bounds),
    ("attention weight normalization", weight_normalization),
    ("directional causality", directional_causality),
    ("submask within mask", submask_within_mask),
    ("loss weight identity", loss_weight_identity),
];

fn rng(check: u64, seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(0x1_0000 * check + seed)
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

fn bernoulli(rng: &mut ChaCha8Rng, shape: &[usize], p: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| if rng.random_bool(p) { 1.0 } else { 0.0 })
}

/// Overwrites entries where `keep` is 0 with fresh noise.
fn scramble_outside(t: &Tensor<f64>, keep: &Tensor<f64>, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(t.shape(), |i| if keep.data()[i] == 0.0 { rng.random_range(-50.0..50.0) } else { t.data()[i] })
}

fn same(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

/// Loss, its gradients and both metrics depend only on entries inside
/// their masks; gradients vanish outside them.
pub fn mask_annihilation(seed: u64) -> Result<(), String> {
    let mut rng = rng(1, seed);
    let shape = [rng.random_range(1..4), rng.random_range(1..5), rng.random_range(2..12)];
    let size: usize = shape.iter().product();
    let m_r = rng.random_range(0.05..0.9);
    let mask = bernoulli(&mut rng, &shape, 0.8);
    let mask_r = random_submask(&mask, 0.5, &mut rng).unwrap();
    let diff = mask.zip_map(&mask_r, |m, r| m - r).unwrap();
    let x = Tensor::from_vec(&shape, uniform(&mut rng, size, 1.0)).unwrap();
    let full = Tensor::from_vec(&shape, uniform(&mut rng, size, 1.0)).unwrap();
    let masked = Tensor::from_vec(&shape, uniform(&mut rng, size, 1.0)).unwrap();

    let base = dmae_loss(&full, &masked, &x, &mask, &mask_r, m_r).unwrap();
    let full2 = scramble_outside(&full, &mask, &mut rng);
    let masked2 = scramble_outside(&masked, &diff, &mut rng);
    let x2 = scramble_outside(&x, &mask, &mut rng);
    let moved = dmae_loss(&full2, &masked2, &x2, &mask, &mask_r, m_r).unwrap();
    if base.value.to_bits() != moved.value.to_bits()
        || !same(base.grad_full.data(), moved.grad_full.data())
        || !same(base.grad_masked.data(), moved.grad_masked.data())
    {
        return Err(format!("loss moved with values outside its masks: {} vs {}", base.value, moved.value));
    }
    for (g, m, name) in [(&base.grad_full, &mask, "reconstruction"), (&base.grad_masked, &diff, "masked reconstruction")] {
        if g.data().iter().zip(m.data()).any(|(&g, &m)| m == 0.0 && g != 0.0) {
            return Err(format!("{name} gradient nonzero outside its mask"));
        }
    }
    let (v1, g1) = visible_loss(&full, &x, &mask).unwrap();
    let (v2, g2) = visible_loss(&full2, &x2, &mask).unwrap();
    if v1.to_bits() != v2.to_bits() || !same(g1.data(), g2.data()) {
        return Err("visible loss moved with values outside the mask".into());
    }

    let win = shape[1] * shape[2];
    let known = bernoulli(&mut rng, &[win], 0.7);
    let missing: Vec<f64> = mask.data()[..win].iter().zip(known.data()).map(|(&m, &k)| if m == 0.0 && k == 1.0 { 1.0 } else { 0.0 }).collect();
    let m0 = Tensor::from_vec(&[win], mask.data()[..win].to_vec()).unwrap();
    let (xw, fw) = (&x.data()[..win], &full.data()[..win]);
    let fw_v = scramble_outside(&Tensor::from_vec(&[win], fw.to_vec()).unwrap(), &m0, &mut rng);
    let fw_m = scramble_outside(&Tensor::from_vec(&[win], fw.to_vec()).unwrap(), &Tensor::from_vec(&[win], missing).unwrap(), &mut rng);
    if mse_v(xw, m0.data(), fw) != mse_v(xw, m0.data(), fw_v.data()) {
        return Err("MSE_v moved with values outside the mask".into());
    }
    if mse_m(xw, m0.data(), known.data(), fw) != mse_m(xw, m0.data(), known.data(), fw_m.data()) {
        return Err("MSE_m moved with values outside the missing-with-truth set".into());
    }
    Ok(())
}

fn random_bank(rng: &mut ChaCha8Rng) -> DynamicKernelBank<f64> {
    let k = rng.random_range(1..6);
    let (c_out, c_in, ks, len) = (rng.random_range(1..4), rng.random_range(1..4), rng.random_range(1..8), rng.random_range(2..12));
    let temperature = rng.random_range(1.01..8.0);
    let mut bank = DynamicKernelBank::<f64>::new("dk", k, c_out, c_in, ks, len, temperature, rng).unwrap();
    let pw = uniform(rng, bank.proj_weight.len(), 5.0);
    bank.proj_weight.value.data_mut().copy_from_slice(&pw);
    let pb = uniform(rng, k, 5.0);
    bank.proj_bias.value.data_mut().copy_from_slice(&pb);
    bank
}

pub fn convex_kernel_bounds(seed: u64) -> Result<(), String> {
    let mut rng = rng(2, seed);
    let bank = random_bank(&mut rng);
    let [_, c_in, _] = bank.kernel_shape();
    let x = uniform(&mut rng, c_in * bank.input_len(), 3.0);
    let (kernel, _) = bank.aggregate(&x);
    let klen = bank.kernel_len();
    let c = bank.candidates.value.data();
    for (j, &w) in kernel.iter().enumerate() {
        let vals = (0..bank.num_kernels()).map(|i| c[i * klen + j]);
        let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
        if w < lo - CONVEX_SLACK || w > hi + CONVEX_SLACK {
            return Err(format!("entry {j} = {w} outside [{lo}, {hi}]"));
        }
    }
    Ok(())
}

fn check_simplex(alpha: &[f64], what: &str) -> Result<(), String> {
    let sum: f64 = alpha.iter().sum();
    if (sum - 1.0).abs() > WEIGHT_SUM_TOL || alpha.iter().any(|&a| !(a > 0.0)) {
        return Err(format!("{what} weights {alpha:?} sum to {sum}"));
    }
    Ok(())
}

/// DK weights per window and ASF weights per time step lie on the simplex.
pub fn weight_normalization(seed: u64) -> Result<(), String> {
    let mut rng = rng(3, seed);
    let bank = random_bank(&mut rng);
    let x = uniform(&mut rng, bank.kernel_shape()[1] * bank.input_len(), 3.0);
    check_simplex(&bank.attention(&x).alpha, "kernel")?;

    let (h, len) = (rng.random_range(1..5), rng.random_range(1..10));
    let mut asf = AttentionScaleFusion::<f64>::new("asf", h, rng.random_range(1..5), rng.random_range(1.01..8.0), &mut rng).unwrap();
    let v = uniform(&mut rng, asf.v.len(), 5.0);
    asf.v.value.data_mut().copy_from_slice(&v);
    let stacked = uniform(&mut rng, 3 * h * len, 3.0);
    let (_, cache) = asf.fuse(&stacked, len);
    for (t, a) in cache.alpha.chunks(3).enumerate() {
        check_simplex(a, &format!("scale (t={t})"))?;
    }
    Ok(())
}

/// With the kernel fixed, the forward branch at `t` ignores inputs after
/// `t` and the backward branch ignores inputs before `t`. The bare
/// convolution is causal unconditionally.
pub fn directional_causality(seed: u64) -> Result<(), String> {
    let mut rng = rng(4, seed);
    let len = rng.random_range(4..16);
    let spec = UnitSpec {
        c_in: rng.random_range(1..4),
        width: rng.random_range(1..4),
        len,
        kernel_size: rng.random_range(2..6),
        dilation: [1, 2, 4][rng.random_range(0..3)],
        num_kernels: rng.random_range(1..4),
        temperature: 2.0,
    };
    let mut unit = DbtUnit::<f64>::new("u", spec, &mut rng).unwrap();
    unit.set_warm_up(true);
    let layer = &unit.layers[0];
    let x = uniform(&mut rng, spec.c_in * len, 1.0);
    let (yf, yb) = layer.branches(&x);
    let kernel = Tensor::from_vec(&[spec.width, spec.c_in, spec.kernel_size], uniform(&mut rng, spec.width * spec.c_in * spec.kernel_size, 1.0)).unwrap();
    let y = causal_dilated_conv1d(&Tensor::from_vec(&[spec.c_in, len], x.clone()).unwrap(), &kernel, spec.dilation).unwrap();
    let w = spec.width;
    for t in 0..len {
        let mut xp = x.clone();
        let c = rng.random_range(0..spec.c_in);
        xp[c * len + t] += 1.0 + rng.random::<f64>();
        let (pf, pb) = layer.branches(&xp);
        let py = causal_dilated_conv1d(&Tensor::from_vec(&[spec.c_in, len], xp).unwrap(), &kernel, spec.dilation).unwrap();
        for o in 0..w {
            for s in 0..t {
                if pf[o * len + s] != yf[o * len + s] || py.data()[o * len + s] != y.data()[o * len + s] {
                    return Err(format!("forward output at {s} moved after perturbing {t}"));
                }
            }
            // the backward branch is in flipped time: index r is time len-1-r
            for s in t + 1..len {
                let r = len - 1 - s;
                if pb[o * len + r] != yb[o * len + r] {
                    return Err(format!("backward output at {s} moved after perturbing {t}"));
                }
            }
        }
    }
    Ok(())
}

pub fn submask_within_mask(seed: u64) -> Result<(), String> {
    let mut rng = rng(5, seed);
    let shape = [rng.random_range(1..6), rng.random_range(4..40)];
    let pattern = [MissingPattern::Point, MissingPattern::Line, MissingPattern::Block][rng.random_range(0..3)];
    let ones = Tensor::full(&shape, 1.0);
    let mask = inject_mask(&ones, rng.random_range(0.0..0.6), pattern, rng.random_range(1..6), &mut rng).unwrap();
    let sub = random_submask(&mask, rng.random_range(0.0..0.99), &mut rng).unwrap();
    if sub.data().iter().zip(mask.data()).any(|(s, m)| s > m) {
        return Err("submask exceeds mask".into());
    }
    Ok(())
}

pub fn loss_weight_identity(seed: u64) -> Result<(), String> {
    let m_r = rng(6, seed).random_range(0.0..1.0);
    let (a, b) = loss_weights(m_r);
    if (a + b - 1.0).abs() > IDENTITY_TOL {
        return Err(format!("m_r={m_r}: weights sum to {}", a + b));
    }
    Ok(())
}

/// Failing seeds of `check` over `CONFIGS` configurations.
pub fn run_check(check: Check) -> Vec<(u64, String)> {
    (0..CONFIGS).filter_map(|s| check(s).err().map(|e| (s, e))).collect()
}
