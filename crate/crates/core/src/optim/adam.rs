//! Adam with bias-corrected moment estimates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::param::{Gradient, Layout, ParamVector};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamHyper {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            alpha: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("adam.alpha must be > 0, got {}", self.alpha)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("adam.{name} must be in [0, 1), got {b}")));
            }
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!(
                "adam.epsilon must be >= 0, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    /// First moment.
    pub m: ParamVector,
    /// Second raw moment; never negative.
    pub v: ParamVector,
    /// Completed steps.
    pub t: u64,
    pub hyper: AdamHyper,
}

impl AdamState {
    pub fn new(layout: Layout, hyper: AdamHyper) -> Result<Self> {
        hyper.validate()?;
        Ok(Self {
            m: ParamVector::zeros(layout.clone()),
            v: ParamVector::zeros(layout),
            t: 0,
            hyper,
        })
    }
}

/// One Adam update. Returns the new parameters and the advanced state.
pub fn adam_step(
    state: &AdamState,
    w: &ParamVector,
    g: &Gradient,
) -> Result<(ParamVector, AdamState)> {
    w.check_compatible(&state.m)?;
    w.check_compatible(&g.values)?;
    let AdamHyper {
        alpha,
        beta1,
        beta2,
        epsilon,
    } = state.hyper;
    let t = state.t + 1;
    let exp = i32::try_from(t).unwrap_or(i32::MAX);
    let c1 = 1.0 - beta1.powi(exp);
    let c2 = 1.0 - beta2.powi(exp);

    let mut m = state.m.clone();
    let mut v = state.v.clone();
    let mut out = w.clone();
    let (ms, vs, ws) = (m.as_mut_slice(), v.as_mut_slice(), out.as_mut_slice());
    for (i, &gi) in g.as_slice().iter().enumerate() {
        ms[i] = beta1 * ms[i] + (1.0 - beta1) * gi;
        vs[i] = beta2 * vs[i] + (1.0 - beta2) * gi * gi;
        let m_hat = ms[i] / c1;
        let v_hat = vs[i] / c2;
        let denom = v_hat.sqrt() + epsilon;
        // 0/0 only arises with epsilon = 0 and a zero moment; no movement then
        if m_hat != 0.0 {
            ws[i] -= alpha * m_hat / denom;
        }
    }
    out.ensure_finite("adam step")?;
    Ok((
        out,
        AdamState {
            m,
            v,
            t,
            hyper: state.hyper,
        },
    ))
}
