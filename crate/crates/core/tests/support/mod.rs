//! Shared by the focused test targets and the acceptance suite.
#![allow(dead_code)]

pub mod checkpoints;
pub mod grad_cases;
pub mod invariants;
pub mod oracles;
