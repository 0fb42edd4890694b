//! One finite-difference case per differentiable operation, in 64-bit.
//! Every case draws its shapes, parameters and inputs from `seed` and
//! checks the gradient of `<output, r>` for a random probe `r`.

use dmae::dbt::{AttentionScaleFusion, BlockSpec, DbtBlock, DbtUnit, DynamicKernelBank, FusionKind, UnitSpec};
use dmae::dpe::Dpe;
use dmae::model::loss::{dmae_loss, visible_loss};
use dmae::nn::gradcheck::{set_trainable_values, trainable_grads, trainable_values};
use dmae::nn::ops::{
    causal_dilated_conv1d, causal_dilated_conv1d_backward, softmax_tempered, softmax_tempered_backward,
};
use dmae::nn::{check_gradients, BatchNorm1d, FnOp, GradCheckReport, Linear, Mode, Module, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TOL: f64 = 1e-4;
pub const POINTS: u64 = 20;

pub type Case = fn(u64) -> GradCheckReport;

pub const CASES: &[(&str, Case)] = &[
    ("linear", linear),
    ("causal dilated conv", causal_conv),
    ("tempered softmax", tempered_softmax),
    ("batch norm", batch_norm),
    ("dynamic kernel aggregation", dynamic_kernel),
    ("attention scale fusion", attention_scale_fusion),
    ("dbt unit", dbt_unit),
    ("dbt block", dbt_block),
    ("dpe composite", dpe_composite),
    ("reconstruction loss", reconstruction_loss),
];

fn rng(case: u64, seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(case * 1000 + seed)
}

fn randn(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Current parameters jittered so no pre-activation sits exactly on a ReLU kink
/// (zero-initialised biases can otherwise produce exact zeros).
fn jittered<M: Module<f64>>(m: &M, rng: &mut ChaCha8Rng) -> Vec<f64> {
    trainable_values(m).into_iter().map(|v| v + 0.1 * rng.random_range(-1.0..1.0)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check(value: impl Fn(&[f64]) -> f64, gradient: impl Fn(&[f64]) -> Vec<f64>, point: &[f64]) -> GradCheckReport {
    check_gradients(&FnOp { value, gradient }, point, TOL)
}

/// Module parameters followed by the input, probed through `run`, which
/// returns the output and (when asked) the input gradient after
/// accumulating parameter gradients.
fn module_case<M: Module<f64> + Clone>(
    module: &M,
    input: &[f64],
    probe: &[f64],
    rng: &mut ChaCha8Rng,
    run: impl Fn(&mut M, &[f64], Option<&[f64]>) -> (Vec<f64>, Vec<f64>),
) -> GradCheckReport {
    let np = trainable_values(module).len();
    let mut point = jittered(module, rng);
    point.extend(input);
    let value = |p: &[f64]| {
        let mut m = module.clone();
        set_trainable_values(&mut m, &p[..np]);
        dot(&run(&mut m, &p[np..], None).0, probe)
    };
    let gradient = |p: &[f64]| {
        let mut m = module.clone();
        set_trainable_values(&mut m, &p[..np]);
        m.zero_grad();
        let (_, gx) = run(&mut m, &p[np..], Some(probe));
        let mut g = trainable_grads(&m);
        g.extend(gx);
        g
    };
    check(value, gradient, &point)
}

pub fn linear(seed: u64) -> GradCheckReport {
    let mut rng = rng(1, seed);
    let (d_in, d_out, len) = (3, 2, 1 + seed as usize % 8);
    let lin = Linear::<f64>::new("lin", d_in, d_out, &mut rng);
    let x = randn(&mut rng, d_in * len);
    let r = randn(&mut rng, d_out * len);
    module_case(&lin, &x, &r, &mut rng, |m, x, probe| {
        let y = m.forward_cm(x, len);
        let gx = probe.map_or_else(Vec::new, |g| m.backward_cm(x, g, len));
        (y, gx)
    })
}

pub fn causal_conv(seed: u64) -> GradCheckReport {
    let mut rng = rng(2, seed);
    let (c_in, c_out, len) = (3, 2, 8);
    let k = [2, 3, 5][seed as usize % 3];
    let dilation = [1, 2, 4][(seed as usize / 3) % 3];
    let nk = c_out * c_in * k;
    let mut point = randn(&mut rng, nk);
    point.extend(randn(&mut rng, c_in * len));
    let r = randn(&mut rng, c_out * len);
    let split = |p: &[f64]| {
        (
            Tensor::from_vec(&[c_out, c_in, k], p[..nk].to_vec()).unwrap(),
            Tensor::from_vec(&[c_in, len], p[nk..].to_vec()).unwrap(),
        )
    };
    let value = |p: &[f64]| {
        let (w, x) = split(p);
        dot(causal_dilated_conv1d(&x, &w, dilation).unwrap().data(), &r)
    };
    let gradient = |p: &[f64]| {
        let (w, x) = split(p);
        let gy = Tensor::from_vec(&[c_out, len], r.clone()).unwrap();
        let (gx, gk) = causal_dilated_conv1d_backward(&x, &w, dilation, &gy).unwrap();
        let mut g = gk.into_data();
        g.extend(gx.data());
        g
    };
    check(value, gradient, &point)
}

pub fn tempered_softmax(seed: u64) -> GradCheckReport {
    let mut rng = rng(3, seed);
    let k = 2 + seed as usize % 4;
    let temperature = rng.random_range(1.1..6.0);
    let point = randn(&mut rng, k).iter().map(|v| 3.0 * v).collect::<Vec<_>>();
    let r = randn(&mut rng, k);
    let value = |p: &[f64]| dot(&softmax_tempered(p, temperature).unwrap(), &r);
    let gradient = |p: &[f64]| softmax_tempered_backward(&softmax_tempered(p, temperature).unwrap(), &r, temperature);
    check(value, gradient, &point)
}

pub fn batch_norm(seed: u64) -> GradCheckReport {
    let mut rng = rng(4, seed);
    let (batch, c, len) = (2, 3, 5);
    let mode = if seed % 2 == 0 { Mode::Train } else { Mode::Eval };
    let mut bn = BatchNorm1d::<f64>::new("bn", c);
    for v in bn.running_mean.value.data_mut() {
        *v = rng.random_range(-0.5..0.5);
    }
    for v in bn.running_var.value.data_mut() {
        *v = rng.random_range(0.5..2.0);
    }
    let x = randn(&mut rng, batch * c * len);
    let r = randn(&mut rng, batch * c * len);
    module_case(&bn, &x, &r, &mut rng, |m, x, probe| {
        let xt = Tensor::from_vec(&[batch, c, len], x.to_vec()).unwrap();
        let (y, cache) = m.forward(&xt, mode).unwrap();
        let gx = probe.map_or_else(Vec::new, |g| {
            m.backward(&cache, &Tensor::from_vec(y.shape(), g.to_vec()).unwrap()).into_data()
        });
        (y.into_data(), gx)
    })
}

pub fn dynamic_kernel(seed: u64) -> GradCheckReport {
    let mut rng = rng(5, seed);
    let (c_in, len) = (2, 6);
    let mut bank = DynamicKernelBank::<f64>::new("dk", 3, 2, c_in, 3, len, 1.5, &mut rng).unwrap();
    // non-trivial attention so the softmax path is exercised
    let pw = randn(&mut rng, bank.proj_weight.len());
    bank.proj_weight.value.data_mut().copy_from_slice(&pw);
    let x = randn(&mut rng, c_in * len);
    let r = randn(&mut rng, bank.kernel_len());
    module_case(&bank, &x, &r, &mut rng, |b, x, probe| {
        let (k, cache) = b.aggregate(x);
        let gx = probe.map_or_else(Vec::new, |g| {
            let mut gx = vec![0.0; x.len()];
            b.backward(&cache, g, &mut gx);
            gx
        });
        (k, gx)
    })
}

pub fn attention_scale_fusion(seed: u64) -> GradCheckReport {
    let mut rng = rng(6, seed);
    let (h, len) = (3, 5);
    let mut asf = AttentionScaleFusion::<f64>::new("asf", h, 4, 1.5, &mut rng).unwrap();
    let v = randn(&mut rng, 4);
    asf.v.value.data_mut().copy_from_slice(&v);
    let stacked = randn(&mut rng, 3 * h * len);
    let r = randn(&mut rng, h * len);
    module_case(&asf, &stacked, &r, &mut rng, |a, x, probe| {
        let (y, cache) = a.fuse(x, len);
        let gx = probe.map_or_else(Vec::new, |g| a.backward(x, &cache, g, len));
        (y, gx)
    })
}

pub fn dbt_unit(seed: u64) -> GradCheckReport {
    let mut rng = rng(7, seed);
    let c_in = if seed % 2 == 0 { 2 } else { 3 };
    let spec = UnitSpec {
        c_in,
        width: 3,
        len: 8,
        kernel_size: 2 + seed as usize % 2,
        dilation: 1 + seed as usize % 3,
        num_kernels: 2,
        temperature: 1.5,
    };
    let mut unit = DbtUnit::<f64>::new("u", spec, &mut rng).unwrap();
    for layer in &mut unit.layers {
        for bank in [&mut layer.forward_bank, &mut layer.backward_bank] {
            let pw = randn(&mut rng, bank.proj_weight.len());
            bank.proj_weight.value.data_mut().copy_from_slice(&pw);
        }
    }
    let batch = 2;
    let x = randn(&mut rng, batch * c_in * spec.len);
    let r = randn(&mut rng, batch * spec.width * spec.len);
    module_case(&unit, &x, &r, &mut rng, |u, x, probe| {
        let (y, cache) = u.forward(x, batch);
        let gx = probe.map_or_else(Vec::new, |g| u.backward(x, batch, &cache, g));
        (y, gx)
    })
}

fn block_spec(c: usize, width: usize, len: usize, seed: u64) -> BlockSpec {
    BlockSpec {
        c_in: c,
        width,
        len,
        kernel_sizes: [2, 3, 2],
        dilation: 1 + seed as usize % 2,
        num_kernels: 2,
        kernel_temperature: 1.5,
        fusion_temperature: 1.5,
        attention_hidden: 3,
        fusion: if seed % 3 == 2 { FusionKind::Concat } else { FusionKind::Attention },
    }
}

pub fn dbt_block(seed: u64) -> GradCheckReport {
    let mut rng = rng(8, seed);
    let spec = block_spec(2, 3, 6, seed);
    let mode = if seed % 2 == 0 { Mode::Train } else { Mode::Eval };
    let block = DbtBlock::<f64>::new("blk", spec.clone(), &mut rng).unwrap();
    let batch = 2;
    let shape = [batch, spec.c_in, spec.len];
    let x = randn(&mut rng, batch * spec.c_in * spec.len);
    let r = randn(&mut rng, batch * spec.width * spec.len);
    module_case(&block, &x, &r, &mut rng, |b, x, probe| {
        let (y, cache) = b.forward(&Tensor::from_vec(&shape, x.to_vec()).unwrap(), mode).unwrap();
        let gx = probe.map_or_else(Vec::new, |g| {
            b.backward(&cache, &Tensor::from_vec(y.shape(), g.to_vec()).unwrap()).into_data()
        });
        (y.into_data(), gx)
    })
}

/// Observed values pass through, missing ones come from the embedding block
/// applied to the kept input.
pub fn dpe_composite(seed: u64) -> GradCheckReport {
    let mut rng = rng(9, seed);
    let (batch, n, len) = (2, 3, 6);
    let spec = block_spec(n, n, len, seed);
    let mode = if seed % 2 == 0 { Mode::Train } else { Mode::Eval };
    let dpe = Dpe::<f64>::dynamic("dpe", spec, 0.0, &mut rng).unwrap();
    let shape = [batch, n, len];
    let keep = Tensor::from_fn(&shape, |_| if rng.random_bool(0.7) { 1.0 } else { 0.0 });
    let x = randn(&mut rng, batch * n * len);
    let r = randn(&mut rng, batch * n * len);
    module_case(&dpe, &x, &r, &mut rng, |d, x, probe| {
        let (y, cache) = d.forward(&Tensor::from_vec(&shape, x.to_vec()).unwrap(), &keep, None, mode).unwrap();
        let gx = probe.map_or_else(Vec::new, |g| {
            d.backward(&cache, &Tensor::from_vec(&shape, g.to_vec()).unwrap()).into_data()
        });
        (y.into_data(), gx)
    })
}

/// Both reconstructions are variables; odd seeds check the visible-only
/// objective used without random masking.
pub fn reconstruction_loss(seed: u64) -> GradCheckReport {
    let mut rng = rng(10, seed);
    let (batch, n, len) = (2, 3, 4);
    let shape = [batch, n, len];
    let size = batch * n * len;
    let m_r = rng.random_range(0.1..0.9);
    let mask = Tensor::from_fn(&shape, |_| if rng.random_bool(0.8) { 1.0 } else { 0.0 });
    let mask_r = Tensor::from_fn(&shape, |i| if mask.data()[i] == 1.0 && rng.random_bool(0.5) { 1.0 } else { 0.0 });
    let x = Tensor::from_vec(&shape, randn(&mut rng, size)).unwrap();
    let point = randn(&mut rng, 2 * size);
    let tensors = |p: &[f64]| {
        (
            Tensor::from_vec(&shape, p[..size].to_vec()).unwrap(),
            Tensor::from_vec(&shape, p[size..].to_vec()).unwrap(),
        )
    };
    let visible_only = seed % 2 == 1;
    let value = |p: &[f64]| {
        let (full, masked) = tensors(p);
        if visible_only {
            visible_loss(&full, &x, &mask).unwrap().0
        } else {
            dmae_loss(&full, &masked, &x, &mask, &mask_r, m_r).unwrap().value
        }
    };
    let gradient = |p: &[f64]| {
        let (full, masked) = tensors(p);
        if visible_only {
            let mut g = visible_loss(&full, &x, &mask).unwrap().1.into_data();
            g.extend(vec![0.0; size]);
            g
        } else {
            let out = dmae_loss(&full, &masked, &x, &mask, &mask_r, m_r).unwrap();
            let mut g = out.grad_full.into_data();
            g.extend(out.grad_masked.data());
            g
        }
    };
    check(value, gradient, &point)
}

/// Runs `case` on seeds `0..POINTS`; returns the failing seeds with reports.
pub fn run_case(case: Case) -> Vec<(u64, GradCheckReport)> {
    (0..POINTS).map(|s| (s, case(s))).filter(|(_, r)| !r.passed).collect()
}
