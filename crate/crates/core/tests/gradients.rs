//! Finite-difference checks of every differentiable operation, 64-bit.

mod support;

use support::grad_cases::{self, run_case, Case};

fn assert_case(case: Case) {
    let failures = run_case(case);
    assert!(failures.is_empty(), "{}", failures.iter().map(|(s, r)| format!("seed {s}: {r}")).collect::<Vec<_>>().join("\n"));
}

#[test]
fn linear() {
    assert_case(grad_cases::linear);
}

#[test]
fn causal_dilated_conv() {
    assert_case(grad_cases::causal_conv);
}

#[test]
fn tempered_softmax() {
    assert_case(grad_cases::tempered_softmax);
}

#[test]
fn batch_norm_train_and_eval() {
    assert_case(grad_cases::batch_norm);
}

#[test]
fn dynamic_kernel_aggregation() {
    assert_case(grad_cases::dynamic_kernel);
}

#[test]
fn attention_scale_fusion() {
    assert_case(grad_cases::attention_scale_fusion);
}

#[test]
fn dbt_unit() {
    assert_case(grad_cases::dbt_unit);
}

#[test]
fn dbt_block_train_and_eval() {
    assert_case(grad_cases::dbt_block);
}

#[test]
fn dpe_composite() {
    assert_case(grad_cases::dpe_composite);
}

#[test]
fn reconstruction_loss() {
    assert_case(grad_cases::reconstruction_loss);
}

#[test]
fn every_case_is_listed() {
    assert_eq!(grad_cases::CASES.len(), 10);
}
