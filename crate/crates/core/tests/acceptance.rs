//! Acceptance criteria 1–9, run in order on one thread so the timed
//! pretraining has the CPU to itself. Prints one PASS/FAIL line per
//! criterion and exits non-zero if any fails.

mod support;

use std::process::ExitCode;
use std::time::Instant;

use dmae::cli::{pretrain_metrics_csv, pretrained_meta};
use dmae::data::{make_synthetic, mask_dataset, Dataset, MaskPlan, MissingPattern, Sample, SyntheticSpec, DEFAULT_SPAN};
use dmae::model::DmaeModel;
use dmae::nn::Mode;
use dmae::train::pretrain::batch;
use dmae::train::{
    decode_checkpoint, encode_checkpoint, finetune, mean_imputation, persistence_mae, prepare, pretrain_with,
    reconstruction_metrics, Ablations, EpochRecord, Pooling, Task, TrainConfig,
};
use support::{checkpoints, grad_cases, invariants, oracles};

const GRAD_SUITE_BUDGET_S: f64 = 120.0;
const PRETRAIN_EPOCHS: usize = 16;
const MAX_EPOCHS: usize = 50;
const WARM_UP_EPOCHS: usize = 10;
/// Criterion 4 compares validation loss at these epochs.
const EPOCH_AFTER: usize = 15;
const EPOCH_BEFORE: usize = 9;
/// Smallest max deviation from uniform that counts as non-uniform attention.
const NON_UNIFORM_MIN: f64 = 1e-6;
/// Windows inspected for attention weights after each epoch.
const PROBE_WINDOWS: usize = 8;
const MSE_M_RATIO_MAX: f64 = 0.8;
const PRETRAIN_BUDGET_S: f64 = 600.0;
const MSE_V_BAND: f64 = 0.5;
const FINETUNE_EPOCHS: usize = 20;
const FINETUNE_LR: f64 = 1e-3;
const FREEZE_ENCODER: bool = true;
const PREDICT_POOLING: Pooling = Pooling::MeanLast;
const PRECISION_MIN: f64 = 0.95;
const HORIZONS: [usize; 3] = [1, 3, 5];
const SEED: u64 = 0;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn dataset() -> Dataset {
    let raw = make_synthetic(&SyntheticSpec { seed: SEED, ..Default::default() }).unwrap();
    mask_dataset(&raw, &MaskPlan::new(0.2, MissingPattern::Point, DEFAULT_SPAN, SEED).unwrap()).unwrap()
}

fn config(ablate: Ablations) -> TrainConfig {
    TrainConfig {
        epochs: PRETRAIN_EPOCHS,
        warm_up_epochs: WARM_UP_EPOCHS,
        seed: SEED,
        ablate,
        ..Default::default()
    }
}

/// Largest deviation from uniform of the kernel and scale attention weights
/// of the encoder blocks on a few validation windows.
fn attention_deviation(model: &mut DmaeModel<f32>, samples: &[Sample]) -> (f64, f64) {
    let refs: Vec<&Sample> = samples.iter().take(PROBE_WINDOWS).collect();
    let b = batch(&refs);
    let (_, cache) = model.encode(&b.x, &b.mask, None, Mode::Eval).unwrap();
    let dev = |alpha: &[f32], k: usize| {
        let u = 1.0f32 / k as f32;
        alpha.iter().map(|&a| (a as f64 - u as f64).abs()).fold(0.0, f64::max)
    };
    let (mut dk, mut asf) = (0.0f64, 0.0f64);
    for block in &cache.blocks {
        for unit in &block.units {
            for layer in &unit.layers {
                for kc in layer.forward_attention.iter().chain(&layer.backward_attention) {
                    dk = dk.max(dev(&kc.alpha, kc.alpha.len()));
                }
            }
        }
        for fc in &block.fusion {
            asf = asf.max(dev(&fc.alpha, 3));
        }
    }
    (dk, asf)
}

struct Run {
    seconds: f64,
    history: Vec<EpochRecord>,
    /// Per epoch: (kernel, scale) attention deviation from uniform.
    attention: Vec<(f64, f64)>,
    checkpoint: Vec<u8>,
    metrics_csv: String,
    /// Mean-imputation `(MSE_v, MSE_m)` on the validation windows.
    baseline: (f64, f64),
    val: Vec<Sample>,
}

fn run(data: &Dataset, ablate: Ablations) -> Run {
    let config = config(ablate);
    let mut attention = Vec::new();
    let start = Instant::now();
    let trained = pretrain_with(data, &config, |_, model, prepared| {
        attention.push(attention_deviation(model, &prepared.val));
        Ok(())
    })
    .unwrap();
    let seconds = start.elapsed().as_secs_f64();
    let val = prepare(data, config.seed, Some(&trained.normalizer)).unwrap().val;
    let baseline = reconstruction_metrics(&val, &mean_imputation(&val));
    Run {
        seconds,
        checkpoint: encode_checkpoint(&trained.model, None, &pretrained_meta(&trained)),
        metrics_csv: pretrain_metrics_csv(&trained.history),
        history: trained.history,
        attention,
        baseline,
        val,
    }
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut failed = Vec::new();
    for (name, case) in grad_cases::CASES {
        let failures = grad_cases::run_case(*case);
        if !failures.is_empty() {
            failed.push(format!("{name} ({} of {} points)", failures.len(), grad_cases::POINTS));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let ok = failed.is_empty() && secs < GRAD_SUITE_BUDGET_S;
    outcome(
        ok,
        format!(
            "{} operations x {} points at rel tol {:e}; failing: [{}]; {secs:.1} s (budget {GRAD_SUITE_BUDGET_S} s)",
            grad_cases::CASES.len(),
            grad_cases::POINTS,
            grad_cases::TOL,
            failed.join(", ")
        ),
    )
}

fn criterion_2() -> Outcome {
    let conv = oracles::conv_oracle_deviation();
    let loss = oracles::loss_example();
    let mae = oracles::mae_example();
    let ok = conv <= oracles::CONV_TOL && (loss - oracles::LOSS_EXAMPLE).abs() <= oracles::LOSS_TOL && mae == 0.5;
    outcome(
        ok,
        format!(
            "conv max deviation {conv:.3e} (tol {:e}, d {:?}, k {:?}); loss example {loss:.9} (want 4/3 within {:e}); MAE example {mae}",
            oracles::CONV_TOL,
            oracles::DILATIONS,
            oracles::KERNEL_SIZES,
            oracles::LOSS_TOL
        ),
    )
}

fn criterion_3() -> Outcome {
    let mut failed = Vec::new();
    for (name, check) in invariants::CHECKS {
        let failures = invariants::run_check(*check);
        if let Some((seed, why)) = failures.first() {
            failed.push(format!("{name}: {} configs, first seed {seed}: {why}", failures.len()));
        }
    }
    outcome(
        failed.is_empty(),
        format!("{} invariants x {} configurations; failing: [{}]", invariants::CHECKS.len(), invariants::CONFIGS, failed.join("; ")),
    )
}

fn criterion_4(full: &Run) -> Outcome {
    let warm_uniform = full.attention[..WARM_UP_EPOCHS].iter().all(|&(dk, asf)| dk == 0.0 && asf == 0.0);
    let after = &full.attention[WARM_UP_EPOCHS..];
    let later_varied = after.iter().all(|&(dk, asf)| dk > NON_UNIFORM_MIN && asf > NON_UNIFORM_MIN);
    let min_after = after.iter().fold((f64::INFINITY, f64::INFINITY), |(a, b), &(dk, asf)| (a.min(dk), b.min(asf)));
    let (l9, l15) = (full.history[EPOCH_BEFORE].val_loss, full.history[EPOCH_AFTER].val_loss);
    outcome(
        warm_uniform && later_varied && l15 < l9,
        format!(
            "epochs 0-{} exactly uniform: {warm_uniform}; epochs {WARM_UP_EPOCHS}+ min deviation kernel {:.3e} scale {:.3e} (> {NON_UNIFORM_MIN:e}); val loss epoch {EPOCH_AFTER} {l15:.6} vs epoch {EPOCH_BEFORE} {l9:.6}",
            WARM_UP_EPOCHS - 1,
            min_after.0,
            min_after.1
        ),
    )
}

fn criterion_5(full: &Run) -> Outcome {
    let last = full.history.last().unwrap();
    let ratio = last.val_mse_m / full.baseline.1;
    let quality = ratio <= MSE_M_RATIO_MAX && full.history.len() <= MAX_EPOCHS;
    let fast = full.seconds <= PRETRAIN_BUDGET_S;
    outcome(
        quality && fast,
        format!(
            "{} epochs: val MSE_m {:.4} vs mean imputation {:.4} (ratio {ratio:.3}, need <= {MSE_M_RATIO_MAX}); runtime {:.0} s (budget {PRETRAIN_BUDGET_S} s)",
            full.history.len(),
            last.val_mse_m,
            full.baseline.1,
            full.seconds
        ),
    )
}

fn criterion_6(full: &Run, no_rm: &Run) -> Outcome {
    let (f, r) = (full.history.last().unwrap(), no_rm.history.last().unwrap());
    let worse_m = r.val_mse_m > f.val_mse_m;
    let close_v = (r.val_mse_v - f.val_mse_v).abs() <= MSE_V_BAND * f.val_mse_v;
    outcome(
        worse_m && close_v,
        format!(
            "w/o RM MSE_m {:.4} vs full {:.4}; MSE_v {:.4} vs full {:.4} (band {:.0}%)",
            r.val_mse_m,
            f.val_mse_m,
            r.val_mse_v,
            f.val_mse_v,
            MSE_V_BAND * 100.0
        ),
    )
}

fn tune(full: &Run, data: &Dataset, task: Task, pooling: Pooling) -> f64 {
    let ck = decode_checkpoint(&full.checkpoint).unwrap();
    let config = TrainConfig {
        finetune_epochs: FINETUNE_EPOCHS,
        finetune_learning_rate: FINETUNE_LR,
        freeze_encoder: FREEZE_ENCODER,
        pooling,
        ..ck.meta.train.clone()
    };
    finetune(ck.model, &ck.meta.normalizer, data, task, &config).unwrap().final_metric()
}

fn criterion_7(full: &Run, data: &Dataset) -> Outcome {
    let precision = tune(full, data, Task::Classify { classes: 3 }, Pooling::Mean);
    let maes: Vec<f64> = HORIZONS.iter().map(|&s| tune(full, data, Task::Predict { steps: s, target: 0 }, PREDICT_POOLING)).collect();
    let persistence = persistence_mae(&full.val, 1, 0).unwrap();
    let ok = precision >= PRECISION_MIN && maes.iter().all(|m| m.is_finite()) && maes[0] <= persistence;
    outcome(
        ok,
        format!(
            "precision {precision:.4} (need >= {PRECISION_MIN}); MAE_p(s) for s={HORIZONS:?}: {:?}; persistence MAE(1) {persistence:.4}",
            maes.iter().map(|m| format!("{m:.4}")).collect::<Vec<_>>()
        ),
    )
}

fn criterion_8(full: &Run, again: &Run) -> Outcome {
    let same_ck = full.checkpoint == again.checkpoint;
    let same_csv = full.metrics_csv == again.metrics_csv;
    outcome(
        same_ck && same_csv,
        format!("checkpoints identical: {same_ck} ({} bytes); metric CSVs identical: {same_csv}", full.checkpoint.len()),
    )
}

fn criterion_9(full: &Run) -> Outcome {
    let mut problems = Vec::new();
    for seed in 0..3 {
        if let Err(e) = checkpoints::round_trip(seed) {
            problems.push(format!("seed {seed}: {e}"));
        }
    }
    match decode_checkpoint(&full.checkpoint) {
        Ok(ck) if encode_checkpoint(&ck.model, None, &ck.meta) == full.checkpoint => {}
        Ok(_) => problems.push("trained checkpoint changed on reload".into()),
        Err(e) => problems.push(format!("trained checkpoint rejected: {e}")),
    }
    if let Err(e) = checkpoints::corrupted_containers() {
        problems.push(e);
    }
    outcome(
        problems.is_empty(),
        format!(
            "round trips bit-exact, {} corruption cases with distinct codes; problems: [{}]",
            checkpoints::corruptions(&checkpoints::sample(0).3).len(),
            problems.join("; ")
        ),
    )
}

fn report(id: usize, title: &str, o: Outcome) -> bool {
    println!("criterion {id} [{title}]: {} - {}", if o.passed { "PASS" } else { "FAIL" }, o.detail);
    o.passed
}

fn main() -> ExitCode {
    let mut all = true;
    all &= report(1, "gradient suite", criterion_1());
    all &= report(2, "oracle equivalence", criterion_2());
    all &= report(3, "invariant suite", criterion_3());
    let data = dataset();
    let full = run(&data, Ablations::default());
    all &= report(4, "warm-up behaviour", criterion_4(&full));
    all &= report(5, "desk-scale pretraining", criterion_5(&full));
    let no_rm = run(&data, Ablations { rm: true, ..Default::default() });
    all &= report(6, "ablation direction", criterion_6(&full, &no_rm));
    all &= report(7, "fine-tuning", criterion_7(&full, &data));
    let again = run(&data, Ablations::default());
    all &= report(8, "determinism", criterion_8(&full, &again));
    all &= report(9, "checkpoint round trip", criterion_9(&full));
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
