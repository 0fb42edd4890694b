use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::MtsWindow;
use crate::error::{DmaeError, Result};
use crate::nn::Tensor;

/// Default span, in time steps, of line and block missingness.
pub const DEFAULT_SPAN: usize = 5;

const PLACEMENT_ATTEMPTS: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum MissingPattern {
    /// Independent Bernoulli per entry.
    Point,
    /// One attribute over a contiguous time span.
    Line,
    /// Every attribute over a contiguous time span.
    Block,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskPlan {
    pub ratio: f64,
    pub pattern: MissingPattern,
    pub span: usize,
    pub seed: u64,
}

impl MaskPlan {
    pub fn new(ratio: f64, pattern: MissingPattern, span: usize, seed: u64) -> Result<Self> {
        check_ratio(ratio)?;
        if span == 0 {
            return Err(DmaeError::Config("span length must be >= 1".into()));
        }
        Ok(MaskPlan { ratio, pattern, span, seed })
    }
}

pub(crate) fn check_ratio(ratio: f64) -> Result<()> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(DmaeError::Config(format!("ratio must lie in [0, 1), got {ratio}")));
    }
    Ok(())
}

/// Removes observations from `window` following `pattern` until roughly
/// `ratio` of all entries are covered. Missing entries never come back.
pub fn inject_missing<R: Rng + ?Sized>(
    window: &MtsWindow,
    ratio: f64,
    pattern: MissingPattern,
    span: usize,
    rng: &mut R,
) -> Result<MtsWindow> {
    let mask = inject_mask(window.mask(), ratio, pattern, span, rng)?;
    window.with_mask(mask)
}

/// Mask-level form of [`inject_missing`] on an `[n, L]` mask.
pub fn inject_mask<R: Rng + ?Sized>(
    mask: &Tensor<f64>,
    ratio: f64,
    pattern: MissingPattern,
    span: usize,
    rng: &mut R,
) -> Result<Tensor<f64>> {
    check_ratio(ratio)?;
    let mut out = mask.clone();
    if ratio == 0.0 {
        return Ok(out);
    }
    let (n, len) = (mask.dim(0), mask.dim(1));
    match pattern {
        MissingPattern::Point => {
            for m in out.data_mut() {
                if *m == 1.0 && rng.random::<f64>() < ratio {
                    *m = 0.0;
                }
            }
        }
        MissingPattern::Line | MissingPattern::Block => {
            let span = span.clamp(1, len);
            let target = (ratio * (n * len) as f64).round() as usize;
            let rows = if pattern == MissingPattern::Line { n } else { 1 };
            let per_cell = if pattern == MissingPattern::Line { 1 } else { n };
            let mut covered = vec![false; rows * len];
            let mut count = 0;
            while count < target {
                let row = rng.random_range(0..rows);
                let start = place_span(&covered[row * len..(row + 1) * len], span, rng);
                for t in start..start + span {
                    if !covered[row * len + t] {
                        covered[row * len + t] = true;
                        count += per_cell;
                    }
                }
            }
            for r in 0..rows {
                for t in 0..len {
                    if covered[r * len + t] {
                        if pattern == MissingPattern::Line {
                            out.set2(r, t, 0.0);
                        } else {
                            (0..n).for_each(|a| out.set2(a, t, 0.0));
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Start of a span that neither overlaps nor touches covered cells, when
/// one can be found; otherwise any start.
fn place_span<R: Rng + ?Sized>(covered: &[bool], span: usize, rng: &mut R) -> usize {
    let len = covered.len();
    let last = len - span;
    for _ in 0..PLACEMENT_ATTEMPTS {
        let s = rng.random_range(0..=last);
        let lo = s.saturating_sub(1);
        let hi = (s + span + 1).min(len);
        if covered[lo..hi].iter().all(|c| !c) {
            return s;
        }
    }
    rng.random_range(0..=last)
}

/// Artificial masking: every observed entry independently drops to 0 with
/// probability `m_r`.
pub fn random_submask<R: Rng + ?Sized>(mask: &Tensor<f64>, m_r: f64, rng: &mut R) -> Result<Tensor<f64>> {
    check_ratio(m_r)?;
    if m_r == 0.0 {
        return Ok(mask.clone());
    }
    let mut out = mask.clone();
    for m in out.data_mut() {
        if *m == 1.0 && rng.random::<f64>() < m_r {
            *m = 0.0;
        }
    }
    Ok(out)
}

/// Artificial mask of the given pattern; point-wise falls back to
/// [`random_submask`].
pub fn submask<R: Rng + ?Sized>(
    mask: &Tensor<f64>,
    m_r: f64,
    pattern: MissingPattern,
    span: usize,
    rng: &mut R,
) -> Result<Tensor<f64>> {
    match pattern {
        MissingPattern::Point => random_submask(mask, m_r, rng),
        _ => inject_mask(mask, m_r, pattern, span, rng),
    }
}
