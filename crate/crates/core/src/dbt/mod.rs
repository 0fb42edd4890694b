//! Dynamic bidirectional TCN units and blocks.

mod asf;
mod block;
mod kernel;
mod unit;

pub use asf::{AsfCache, AttentionScaleFusion, NUM_SCALES};
pub use block::{BlockCache, BlockSpec, DbtBlock, FusionKind, ScaleFusion};
pub use kernel::{DynamicKernelBank, KernelCache};
pub use unit::{BiLayer, BiLayerCache, DbtUnit, UnitCache, UnitSpec};
