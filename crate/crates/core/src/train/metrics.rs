use crate::model::norm_ratio;

/// Batch average of `||w * (x - x_hat)||_2 / ||w||_2`; windows whose mask is
/// empty are skipped. Inputs are per-window flat slices.
pub fn masked_ratio<'a>(windows: impl IntoIterator<Item = (&'a [f64], &'a [f64], &'a [f64])>) -> Option<f64> {
    let mut total = 0.0;
    let mut counted = 0usize;
    let mut skipped = 0usize;
    for (x, w, x_hat) in windows {
        if w.iter().all(|&m| m == 0.0) {
            skipped += 1;
            continue;
        }
        total += norm_ratio(x_hat, x, w, 0.0, None);
        counted += 1;
    }
    if skipped > 0 {
        log::warn!("{skipped} windows skipped: empty metric mask");
    }
    (counted > 0).then(|| total / counted as f64)
}

/// Error on observed entries of one window.
pub fn mse_v(x: &[f64], mask: &[f64], x_hat: &[f64]) -> Option<f64> {
    masked_ratio([(x, mask, x_hat)])
}

/// Error on entries that are missing in the input but have ground truth.
pub fn missing_weights(mask: &[f64], known: &[f64]) -> Vec<f64> {
    mask.iter().zip(known).map(|(&m, &k)| if m == 0.0 && k == 1.0 { 1.0 } else { 0.0 }).collect()
}

pub fn mse_m(truth: &[f64], mask: &[f64], known: &[f64], x_hat: &[f64]) -> Option<f64> {
    let w = missing_weights(mask, known);
    masked_ratio([(truth, w.as_slice(), x_hat)])
}

/// `(1/N) sum ||target - prediction||_1 / s`.
pub fn mae_p(targets: &[Vec<f64>], predictions: &[Vec<f64>]) -> f64 {
    let n = targets.len().max(1) as f64;
    targets
        .iter()
        .zip(predictions)
        .map(|(t, p)| t.iter().zip(p).map(|(a, b)| (a - b).abs()).sum::<f64>() / t.len() as f64)
        .sum::<f64>()
        / n
}

pub fn argmax(scores: &[f64]) -> usize {
    scores
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}

/// Fraction of windows whose arg-max class equals the label.
pub fn precision(labels: &[usize], scores: &[Vec<f64>]) -> f64 {
    let hits = labels.iter().zip(scores).filter(|(&l, s)| argmax(s) == l).count();
    hits as f64 / labels.len().max(1) as f64
}
