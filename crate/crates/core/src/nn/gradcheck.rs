//! Central finite-difference verification of analytic gradients.

use std::fmt;

/// Step used for central differences.
pub const FD_STEP: f64 = 1e-5;
/// Coordinates whose gradient magnitude is below this are not rated: with
/// O(1) values, central-difference roundoff is ~1e-11, so smaller
/// gradients cannot be rated at a 1e-4 relative tolerance.
pub const MAGNITUDE_FLOOR: f64 = 1e-6;

/// A scalar function of a flat point with an analytic gradient.
pub trait Differentiable {
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Vec<f64>;
}

/// Adapter for a pair of closures.
pub struct FnOp<F, G> {
    pub value: F,
    pub gradient: G,
}

impl<F, G> Differentiable for FnOp<F, G>
where
    F: Fn(&[f64]) -> f64,
    G: Fn(&[f64]) -> Vec<f64>,
{
    fn value(&self, x: &[f64]) -> f64 {
        (self.value)(x)
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        (self.gradient)(x)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoordinateError {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub passed: bool,
    pub tolerance: f64,
    pub checked: usize,
    /// Coordinate with the largest relative error among rated coordinates.
    pub worst: Option<CoordinateError>,
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.passed { "pass" } else { "FAIL" };
        write!(f, "{verdict}: {} coordinates rated at tol {:e}", self.checked, self.tolerance)?;
        if let Some(w) = &self.worst {
            write!(
                f,
                "; worst coordinate {} analytic {:.9e} numeric {:.9e} rel {:.3e}",
                w.index, w.analytic, w.numeric, w.rel_error
            )?;
        }
        Ok(())
    }
}

pub fn numeric_gradient(op: &impl Differentiable, point: &[f64]) -> Vec<f64> {
    let mut x = point.to_vec();
    (0..point.len())
        .map(|i| {
            x[i] = point[i] + FD_STEP;
            let plus = op.value(&x);
            x[i] = point[i] - FD_STEP;
            let minus = op.value(&x);
            x[i] = point[i];
            (plus - minus) / (2.0 * FD_STEP)
        })
        .collect()
}

/// Compares analytic and central-difference gradients coordinate by coordinate.
pub fn check_gradients(op: &impl Differentiable, point: &[f64], rel_tol: f64) -> GradCheckReport {
    let analytic = op.gradient(point);
    assert_eq!(analytic.len(), point.len(), "gradient length must match the point");
    let numeric = numeric_gradient(op, point);
    let mut worst: Option<CoordinateError> = None;
    let mut checked = 0;
    for (index, (&a, &n)) in analytic.iter().zip(&numeric).enumerate() {
        let scale = a.abs().max(n.abs());
        if scale <= MAGNITUDE_FLOOR {
            continue;
        }
        checked += 1;
        let rel_error = (a - n).abs() / scale;
        if worst.as_ref().is_none_or(|w| rel_error > w.rel_error) {
            worst = Some(CoordinateError {
                index,
                analytic: a,
                numeric: n,
                rel_error,
            });
        }
    }
    let passed = worst.as_ref().is_none_or(|w| w.rel_error <= rel_tol);
    GradCheckReport {
        passed,
        tolerance: rel_tol,
        checked,
        worst,
    }
}


/// Trainable parameters flattened in visiting order.
pub fn trainable_values<S: crate::nn::Real, M: crate::nn::Module<S> + ?Sized>(module: &M) -> Vec<f64> {
    module
        .params()
        .into_iter()
        .filter(|p| p.is_trainable())
        .flat_map(|p| p.value.to_f64_vec())
        .collect()
}

/// Gradients of the trainable parameters, flattened in visiting order.
pub fn trainable_grads<S: crate::nn::Real, M: crate::nn::Module<S> + ?Sized>(module: &M) -> Vec<f64> {
    module
        .params()
        .into_iter()
        .filter(|p| p.is_trainable())
        .flat_map(|p| p.grad.to_f64_vec())
        .collect()
}

/// Inverse of [`trainable_values`].
pub fn set_trainable_values<S: crate::nn::Real, M: crate::nn::Module<S> + ?Sized>(module: &mut M, values: &[f64]) {
    let mut offset = 0;
    for p in module.params_mut().into_iter().filter(|p| p.is_trainable()) {
        let n = p.len();
        for (dst, &src) in p.value.data_mut().iter_mut().zip(&values[offset..offset + n]) {
            *dst = S::of(src);
        }
        offset += n;
    }
    assert_eq!(offset, values.len(), "flat parameter vector length mismatch");
}
