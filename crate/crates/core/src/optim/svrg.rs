//! SVRG inner loop and the variance-reduced Adam outer step.
//!
//! One outer step:
//! 1. draw an anchor batch of `B` sample ids without replacement and
//!    average the per-sample gradients at the snapshot `w~` (`mu~`);
//! 2. run `m` inner steps from `w~`, each on a minibatch of `b` ids drawn
//!    uniformly with replacement from the anchor batch, moving along
//!    `mean grad(w) - mean grad(w~) + mu~`;
//! 3. hand `w~ - w_m` to Adam as the gradient surrogate. The inner loop
//!    descends, so `w_m - w~` points downhill and its negation is what a
//!    subtracting Adam update needs.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::SampleGradients;
use crate::optim::adam::{adam_step, AdamState};
use crate::param::{Gradient, GradientSource, ParamVector};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSvrgConfig", into = "RawSvrgConfig")]
pub struct SvrgConfig {
    anchor_batch: usize,
    minibatch: usize,
    inner_steps: usize,
    eta: f64,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSvrgConfig {
    #[serde(rename = "B")]
    anchor_batch: usize,
    b: usize,
    m: usize,
    eta: f64,
}

impl TryFrom<RawSvrgConfig> for SvrgConfig {
    type Error = Error;

    fn try_from(r: RawSvrgConfig) -> Result<Self> {
        SvrgConfig::new(r.anchor_batch, r.b, r.m, r.eta)
    }
}

impl From<SvrgConfig> for RawSvrgConfig {
    fn from(c: SvrgConfig) -> Self {
        Self {
            anchor_batch: c.anchor_batch,
            b: c.minibatch,
            m: c.inner_steps,
            eta: c.eta,
        }
    }
}

impl SvrgConfig {
    /// `anchor_batch` = B, `minibatch` = b, `inner_steps` = m.
    pub fn new(anchor_batch: usize, minibatch: usize, inner_steps: usize, eta: f64) -> Result<Self> {
        if anchor_batch == 0 || minibatch == 0 || inner_steps == 0 {
            return Err(Error::Config("svrg B, b and m must all be >= 1".into()));
        }
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::Config(format!("svrg.eta must be > 0, got {eta}")));
        }
        if minibatch > anchor_batch {
            return Err(Error::Config(format!(
                "svrg minibatch b={minibatch} exceeds anchor batch B={anchor_batch}"
            )));
        }
        if minibatch * inner_steps < anchor_batch {
            return Err(Error::Config(format!(
                "svrg requires b*m >= B, got {minibatch}*{inner_steps} < {anchor_batch}"
            )));
        }
        Ok(Self {
            anchor_batch,
            minibatch,
            inner_steps,
            eta,
        })
    }

    /// B=512, b=32, m=32, eta=0.01.
    pub fn atari_scale() -> Self {
        Self::new(512, 32, 32, 0.01).unwrap()
    }

    pub fn anchor_batch(&self) -> usize {
        self.anchor_batch
    }

    pub fn minibatch(&self) -> usize {
        self.minibatch
    }

    pub fn inner_steps(&self) -> usize {
        self.inner_steps
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }
}

/// Anchor parameters and the mean gradient over the anchor batch there.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvrgSnapshot {
    pub anchor: ParamVector,
    pub mu: Gradient,
    /// Sample ids `mu` was averaged over.
    pub batch: Vec<usize>,
}

pub fn svrg_anchor<O: SampleGradients + ?Sized>(
    objective: &O,
    anchor: &ParamVector,
    batch: Vec<usize>,
) -> Result<SvrgSnapshot> {
    let mut mu = objective.mean_gradient(anchor, &batch)?;
    mu.source = GradientSource::Anchor;
    mu.values.ensure_finite("anchor gradient")?;
    Ok(SvrgSnapshot {
        anchor: anchor.clone(),
        mu,
        batch,
    })
}

/// `(1/b) sum grad f_i(w) - (1/b) sum grad f_i(w~) + mu~` over `minibatch`.
pub fn svrg_direction<O: SampleGradients + ?Sized>(
    objective: &O,
    w: &ParamVector,
    snapshot: &SvrgSnapshot,
    minibatch: &[usize],
) -> Result<Gradient> {
    if minibatch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    w.check_compatible(&snapshot.anchor)?;
    let scale = 1.0 / minibatch.len() as f64;
    let mut dir = ParamVector::zeros(w.layout().clone());
    {
        let out = dir.as_mut_slice();
        for &i in minibatch {
            objective.accumulate_gradient(w, i, scale, out)?;
            objective.accumulate_gradient(&snapshot.anchor, i, -scale, out)?;
        }
    }
    dir.axpy(1.0, &snapshot.mu.values)?;
    Ok(Gradient::new(dir, GradientSource::SvrgCorrected))
}

pub fn svrg_inner_step<O: SampleGradients + ?Sized>(
    w: &ParamVector,
    snapshot: &SvrgSnapshot,
    minibatch: &[usize],
    eta: f64,
    objective: &O,
) -> Result<ParamVector> {
    let dir = svrg_direction(objective, w, snapshot, minibatch)?;
    let mut out = w.clone();
    out.axpy(-eta, &dir.values)?;
    out.ensure_finite("svrg inner iterate")?;
    Ok(out)
}

/// `k` distinct ids from `0..n`.
pub fn sample_without_replacement<R: Rng + ?Sized>(rng: &mut R, n: usize, k: usize) -> Result<Vec<usize>> {
    if k > n {
        return Err(Error::InvalidArgument(format!(
            "cannot draw {k} distinct samples from {n}"
        )));
    }
    Ok(index::sample(rng, n, k).into_vec())
}

/// `k` uniform draws from `pool`, with replacement.
pub fn sample_with_replacement<R: Rng + ?Sized>(rng: &mut R, pool: &[usize], k: usize) -> Result<Vec<usize>> {
    if pool.is_empty() {
        return Err(Error::EmptyBatch);
    }
    Ok((0..k).map(|_| pool[rng.gen_range(0..pool.len())]).collect())
}

/// Record of one run of the inner loop.
#[derive(Clone, Debug)]
pub struct InnerLoop {
    pub snapshot: SvrgSnapshot,
    pub minibatches: Vec<Vec<usize>>,
    /// `w_0 = w~, w_1, ..., w_m`.
    pub iterates: Vec<ParamVector>,
}

impl InnerLoop {
    pub fn last(&self) -> &ParamVector {
        self.iterates.last().unwrap()
    }

    /// `w_m - w~`, the descent displacement.
    pub fn displacement(&self) -> Result<ParamVector> {
        self.last().sub(&self.snapshot.anchor)
    }
}

/// Anchor computation plus `m` inner steps from a given anchor batch.
pub fn svrg_inner_loop_on_batch<O, R>(
    objective: &O,
    anchor: &ParamVector,
    batch: Vec<usize>,
    cfg: &SvrgConfig,
    rng: &mut R,
) -> Result<InnerLoop>
where
    O: SampleGradients + ?Sized,
    R: Rng + ?Sized,
{
    let snapshot = svrg_anchor(objective, anchor, batch)?;
    let mut iterates = Vec::with_capacity(cfg.inner_steps + 1);
    let mut minibatches = Vec::with_capacity(cfg.inner_steps);
    iterates.push(anchor.clone());
    for _ in 0..cfg.inner_steps {
        let mb = sample_with_replacement(rng, &snapshot.batch, cfg.minibatch)?;
        let next = svrg_inner_step(iterates.last().unwrap(), &snapshot, &mb, cfg.eta, objective)?;
        iterates.push(next);
        minibatches.push(mb);
    }
    Ok(InnerLoop {
        snapshot,
        minibatches,
        iterates,
    })
}

/// Draws the anchor batch from all samples, then runs the inner loop.
pub fn svrg_inner_loop<O, R>(
    objective: &O,
    anchor: &ParamVector,
    cfg: &SvrgConfig,
    rng: &mut R,
) -> Result<InnerLoop>
where
    O: SampleGradients + ?Sized,
    R: Rng + ?Sized,
{
    let n = objective.num_samples();
    if n < cfg.anchor_batch {
        return Err(Error::InsufficientBuffer {
            have: n,
            need: cfg.anchor_batch,
        });
    }
    let batch = sample_without_replacement(rng, n, cfg.anchor_batch)?;
    svrg_inner_loop_on_batch(objective, anchor, batch, cfg, rng)
}

/// Result of one variance-reduced Adam step.
#[derive(Clone, Debug)]
pub struct OuterStep {
    pub params: ParamVector,
    pub adam: AdamState,
    /// The surrogate gradient fed to Adam.
    pub surrogate: Gradient,
    pub inner: InnerLoop,
}

/// Passes `g` through untouched: the displacement surrogate is fed to Adam
/// at its natural scale.
pub fn composite_gradient_no_rescale_check(g: Gradient) -> Gradient {
    g
}

pub fn svr_dqn_outer_step<O, R>(
    anchor: &ParamVector,
    cfg: &SvrgConfig,
    adam: &AdamState,
    objective: &O,
    rng: &mut R,
) -> Result<OuterStep>
where
    O: SampleGradients + ?Sized,
    R: Rng + ?Sized,
{
    anchor.ensure_finite("outer step anchor")?;
    let inner = svrg_inner_loop(objective, anchor, cfg, rng)?;
    finish_outer_step(inner, adam)
}

/// Outer step on a caller-chosen anchor batch.
pub fn svr_dqn_outer_step_on_batch<O, R>(
    anchor: &ParamVector,
    batch: Vec<usize>,
    cfg: &SvrgConfig,
    adam: &AdamState,
    objective: &O,
    rng: &mut R,
) -> Result<OuterStep>
where
    O: SampleGradients + ?Sized,
    R: Rng + ?Sized,
{
    anchor.ensure_finite("outer step anchor")?;
    let inner = svrg_inner_loop_on_batch(objective, anchor, batch, cfg, rng)?;
    finish_outer_step(inner, adam)
}

fn finish_outer_step(inner: InnerLoop, adam: &AdamState) -> Result<OuterStep> {
    let surrogate = inner.snapshot.anchor.sub(inner.last())?;
    let surrogate =
        composite_gradient_no_rescale_check(Gradient::new(surrogate, GradientSource::Composite));
    let (params, adam) = adam_step(adam, &inner.snapshot.anchor, &surrogate)?;
    Ok(OuterStep {
        params,
        adam,
        surrogate,
        inner,
    })
}
