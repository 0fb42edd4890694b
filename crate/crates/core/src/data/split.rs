use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{DmaeError, Result};

pub const TRAIN_FRACTION: f64 = 0.9;
pub const MIN_WINDOWS: usize = 10;

/// Disjoint, exhaustive train/validation partition.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit<T> {
    pub train: Vec<T>,
    pub val: Vec<T>,
    pub ratio: f64,
}

/// Shuffles `items` and keeps `ceil(0.9 N)` of them for training.
pub fn split<T, R: Rng + ?Sized>(items: Vec<T>, rng: &mut R) -> Result<DatasetSplit<T>> {
    let n = items.len();
    if n < MIN_WINDOWS {
        return Err(DmaeError::Config(format!("need at least {MIN_WINDOWS} windows to split, got {n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let n_train = (TRAIN_FRACTION * n as f64 - 1e-9).ceil() as usize;
    let mut slots: Vec<Option<T>> = items.into_iter().map(Some).collect();
    let mut take = |i: &usize| slots[*i].take().expect("index used once");
    let train = order[..n_train].iter().map(&mut take).collect();
    let val = order[n_train..].iter().map(&mut take).collect();
    Ok(DatasetSplit { train, val, ratio: TRAIN_FRACTION })
}
