//! Central finite-difference gradient checking.

use crate::error::Result;
use crate::params::ParamStore;

/// Outcome of comparing analytic and numeric gradients.
#[derive(Clone, Copy, Debug)]
pub struct GradCheck {
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub checked: usize,
}

/// Relative error with a floor on the denominator so that near-zero pairs compare absolutely.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Compares `analytic` with central differences of `f` at every coordinate of `x`.
pub fn check_fn(
    x: &[f64],
    analytic: &[f64],
    h: f64,
    mut f: impl FnMut(&[f64]) -> Result<f64>,
) -> Result<GradCheck> {
    let mut probe = x.to_vec();
    let mut out = GradCheck { max_rel_err: 0.0, max_abs_err: 0.0, checked: 0 };
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f(&probe)?;
        probe[i] = x[i] - h;
        let down = f(&probe)?;
        probe[i] = x[i];
        let numeric = (up - down) / (2.0 * h);
        out.max_rel_err = out.max_rel_err.max(rel_err(analytic[i], numeric));
        out.max_abs_err = out.max_abs_err.max((analytic[i] - numeric).abs());
        out.checked += 1;
    }
    Ok(out)
}

/// Gradient check over all parameters of a store.
///
/// `loss` evaluates the scalar loss for the current parameter values;
/// `grad` returns the analytic gradient flattened in store order.
pub fn check_store(
    store: &mut ParamStore,
    h: f64,
    mut loss: impl FnMut(&ParamStore) -> Result<f64>,
    grad: impl FnOnce(&ParamStore) -> Result<Vec<f64>>,
) -> Result<GradCheck> {
    let x = store.flat_values();
    let analytic = grad(store)?;
    let mut scratch = store.clone();
    let res = check_fn(&x, &analytic, h, |p| {
        scratch.set_flat_values(p)?;
        loss(&scratch)
    });
    res
}
