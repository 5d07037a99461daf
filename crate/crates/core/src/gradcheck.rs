//! Central finite differences, used as the independent gradient oracle.

use crate::error::{Error, Result};
use crate::param::{Gradient, GradientSource, ParamVector};

pub const DEFAULT_STEP: f64 = 1e-5;

/// `(loss(w + h e_j) - loss(w - h e_j)) / 2h` for every coordinate `j`.
pub fn finite_difference_gradient<F>(mut loss: F, w: &ParamVector, h: f64) -> Result<Gradient>
where
    F: FnMut(&ParamVector) -> f64,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidArgument(format!("step must be positive, got {h}")));
    }
    let mut probe = w.clone();
    let mut out = Vec::with_capacity(w.len());
    for j in 0..w.len() {
        let orig = probe.as_slice()[j];
        probe.as_mut_slice()[j] = orig + h;
        let up = loss(&probe);
        probe.as_mut_slice()[j] = orig - h;
        let down = loss(&probe);
        probe.as_mut_slice()[j] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite(format!("loss at coordinate {j}")));
        }
        out.push((up - down) / (2.0 * h));
    }
    Ok(Gradient::new(
        w.with_values(out)?,
        GradientSource::FiniteDifference,
    ))
}

/// Coordinate-wise agreement: `|a - n| <= max(rel * max(|a|, |n|), abs)`.
/// Returns a description of the first failing coordinate.
pub fn gradients_agree(
    analytic: &[f64],
    numeric: &[f64],
    rel: f64,
    abs: f64,
) -> std::result::Result<(), String> {
    if analytic.len() != numeric.len() {
        return Err(format!(
            "length mismatch {} vs {}",
            analytic.len(),
            numeric.len()
        ));
    }
    for (j, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        let tol = (rel * a.abs().max(n.abs())).max(abs);
        if (a - n).abs() > tol || !a.is_finite() {
            return Err(format!("coordinate {j}: analytic {a:e} vs numeric {n:e}"));
        }
    }
    Ok(())
}
