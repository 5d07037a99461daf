//! Gradient-estimator variance measurement and the AGE variance bounds.
//!
//! "Variance" of a vector estimator is the trace of its covariance: the
//! sum over coordinates of the unbiased per-coordinate sample variances.

use std::io::Write;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::env::FiniteSumProblem;
use crate::error::{Error, Result};
use crate::objective::SampleGradients;
use crate::optim::{
    sample_with_replacement, svr_dqn_outer_step, svrg_inner_loop, AdamHyper, AdamState,
    SvrgConfig,
};
use crate::param::ParamVector;
use crate::stats::{compensated_sum, sample_variance};

/// Slack, in standard errors, allowed when comparing an empirical variance
/// with its theoretical bound.
pub const BOUND_SLACK_SE: f64 = 3.0;

/// Absolute slack on the Lipschitz-suboptimality inequality.
pub const EQ10_SLACK: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EstimatorTag {
    #[serde(rename = "double-dqn-minibatch")]
    DoubleDqnMinibatch,
    #[serde(rename = "svr-dqn")]
    SvrDqn,
    #[serde(rename = "minibatch")]
    Minibatch,
    #[serde(rename = "full-batch")]
    FullBatch,
}

impl EstimatorTag {
    pub fn name(self) -> &'static str {
        match self {
            EstimatorTag::DoubleDqnMinibatch => "double-dqn-minibatch",
            EstimatorTag::SvrDqn => "svr-dqn",
            EstimatorTag::Minibatch => "minibatch",
            EstimatorTag::FullBatch => "full-batch",
        }
    }
}

/// A randomized procedure producing one gradient-direction estimate at `w`.
pub trait GradientEstimator {
    fn tag(&self) -> EstimatorTag;

    fn draw(&self, w: &ParamVector, rng: &mut dyn RngCore) -> Result<Vec<f64>>;
}

/// `w_m - w~` from a fresh anchor batch and inner loop.
pub struct SvrDqnEstimator<'a, O: ?Sized> {
    pub objective: &'a O,
    pub cfg: SvrgConfig,
}

impl<O: SampleGradients + ?Sized> GradientEstimator for SvrDqnEstimator<'_, O> {
    fn tag(&self) -> EstimatorTag {
        EstimatorTag::SvrDqn
    }

    fn draw(&self, w: &ParamVector, rng: &mut dyn RngCore) -> Result<Vec<f64>> {
        let inner = svrg_inner_loop(self.objective, w, &self.cfg, rng)?;
        Ok(inner.displacement()?.into_vec())
    }
}

/// Mean gradient over `size` samples.
pub struct MinibatchEstimator<'a, O: ?Sized> {
    pub objective: &'a O,
    pub size: usize,
    pub replacement: bool,
}

impl<O: SampleGradients + ?Sized> GradientEstimator for MinibatchEstimator<'_, O> {
    fn tag(&self) -> EstimatorTag {
        EstimatorTag::Minibatch
    }

    fn draw(&self, w: &ParamVector, rng: &mut dyn RngCore) -> Result<Vec<f64>> {
        let n = self.objective.num_samples();
        let ids = if self.replacement {
            let all: Vec<usize> = (0..n).collect();
            sample_with_replacement(rng, &all, self.size)?
        } else {
            crate::optim::sample_without_replacement(rng, n, self.size)?
        };
        Ok(self.objective.mean_gradient(w, &ids)?.values.into_vec())
    }
}

/// Mean over `size` uniformly drawn samples (with replacement) of the
/// approximation gradient error `grad f_i(w) - grad f_i(w*)`.
pub struct AgeMinibatchEstimator<'a, O: ?Sized> {
    pub objective: &'a O,
    pub optimum: &'a ParamVector,
    pub size: usize,
}

impl<O: SampleGradients + ?Sized> GradientEstimator for AgeMinibatchEstimator<'_, O> {
    fn tag(&self) -> EstimatorTag {
        EstimatorTag::DoubleDqnMinibatch
    }

    fn draw(&self, w: &ParamVector, rng: &mut dyn RngCore) -> Result<Vec<f64>> {
        let n = self.objective.num_samples();
        let all: Vec<usize> = (0..n).collect();
        let ids = sample_with_replacement(rng, &all, self.size)?;
        let scale = 1.0 / self.size as f64;
        let mut out = vec![0.0; w.len()];
        for i in ids {
            self.objective.accumulate_gradient(w, i, scale, &mut out)?;
            self.objective.accumulate_gradient(self.optimum, i, -scale, &mut out)?;
        }
        Ok(out)
    }
}

pub struct FullBatchEstimator<'a, O: ?Sized> {
    pub objective: &'a O,
}

impl<O: SampleGradients + ?Sized> GradientEstimator for FullBatchEstimator<'_, O> {
    fn tag(&self) -> EstimatorTag {
        EstimatorTag::FullBatch
    }

    fn draw(&self, w: &ParamVector, _rng: &mut dyn RngCore) -> Result<Vec<f64>> {
        Ok(self.objective.full_gradient(w)?.values.into_vec())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VarianceStats {
    pub trace_variance: f64,
    /// Standard error of `trace_variance`.
    pub standard_error: f64,
    pub trials: usize,
    pub mean: Vec<f64>,
}

/// Trace-variance and its standard error from a set of draws.
pub fn trace_variance(draws: &[Vec<f64>]) -> Result<VarianceStats> {
    let n = draws.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 draws, got {n}")));
    }
    let dim = draws[0].len();
    if draws.iter().any(|d| d.len() != dim) {
        return Err(Error::InvalidArgument("draws differ in dimension".into()));
    }
    let mean: Vec<f64> = (0..dim)
        .map(|j| compensated_sum(draws.iter().map(|d| d[j])) / n as f64)
        .collect();
    // per-draw squared distance to the mean; their sum / (n-1) is the trace
    let z: Vec<f64> = draws
        .iter()
        .map(|d| compensated_sum(d.iter().zip(&mean).map(|(x, m)| (x - m) * (x - m))))
        .collect();
    let nf = n as f64;
    let trace = compensated_sum(z.iter().copied()) / (nf - 1.0);
    let se = (nf * sample_variance(&z)).sqrt() / (nf - 1.0);
    Ok(VarianceStats {
        trace_variance: trace,
        standard_error: se,
        trials: n,
        mean,
    })
}

/// Runs `estimator` `trials` times at `w` with independent randomness.
pub fn empirical_gradient_variance<E: GradientEstimator + ?Sized>(
    estimator: &E,
    w: &ParamVector,
    trials: usize,
    rng: &mut dyn RngCore,
) -> Result<VarianceStats> {
    if trials < 2 {
        return Err(Error::InvalidArgument(format!("trials must be >= 2, got {trials}")));
    }
    let draws = (0..trials)
        .map(|_| estimator.draw(w, rng))
        .collect::<Result<Vec<_>>>()?;
    trace_variance(&draws)
}

fn check_bound_inputs(lipschitz: f64, subopt: f64) -> Result<()> {
    if !(lipschitz > 0.0 && lipschitz.is_finite()) {
        return Err(Error::InvalidArgument(format!("L must be > 0, got {lipschitz}")));
    }
    if !(subopt >= 0.0 && subopt.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "suboptimality must be >= 0, got {subopt}"
        )));
    }
    Ok(())
}

/// `8 L m eta^2 / b * (f(w~) - f(w*))`.
pub fn svr_dqn_variance_bound(cfg: &SvrgConfig, lipschitz: f64, subopt: f64) -> Result<f64> {
    check_bound_inputs(lipschitz, subopt)?;
    let m = cfg.inner_steps() as f64;
    let b = cfg.minibatch() as f64;
    Ok(8.0 * lipschitz * m * cfg.eta() * cfg.eta() * subopt / b)
}

/// `2 L / B * (f(w~) - f(w*))`.
pub fn double_dqn_variance_bound(anchor_batch: usize, lipschitz: f64, subopt: f64) -> Result<f64> {
    check_bound_inputs(lipschitz, subopt)?;
    if anchor_batch == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    Ok(2.0 * lipschitz * subopt / anchor_batch as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LipschitzCheck {
    /// `(1/n) sum |grad f_i(w) - grad f_i(w*)|^2`
    pub lhs: f64,
    /// `2 L (f(w) - f(w*))`
    pub rhs: f64,
    pub margin: f64,
    pub holds: bool,
}

pub fn lipschitz_suboptimality_bound_check<P: FiniteSumProblem + ?Sized>(
    problem: &P,
    w: &ParamVector,
) -> Result<LipschitzCheck> {
    let (optimum, lipschitz) = known_optimum(problem)?;
    let n = problem.num_samples();
    let mut terms = Vec::with_capacity(n);
    for i in 0..n {
        let mut diff = vec![0.0; w.len()];
        problem.accumulate_gradient(w, i, 1.0, &mut diff)?;
        problem.accumulate_gradient(optimum, i, -1.0, &mut diff)?;
        terms.push(diff.iter().map(|x| x * x).sum::<f64>());
    }
    let lhs = compensated_sum(terms) / n as f64;
    let rhs = 2.0 * lipschitz * (problem.loss(w)? - problem.loss(optimum)?);
    let margin = rhs - lhs;
    Ok(LipschitzCheck {
        lhs,
        rhs,
        margin,
        holds: lhs <= rhs + EQ10_SLACK,
    })
}

fn known_optimum<P: FiniteSumProblem + ?Sized>(problem: &P) -> Result<(&ParamVector, f64)> {
    let optimum = problem
        .optimum()
        .ok_or_else(|| Error::Unsupported("problem has no known optimum".into()))?;
    let lipschitz = problem
        .lipschitz()
        .ok_or_else(|| Error::Unsupported("problem has no known Lipschitz constant".into()))?;
    Ok((optimum, lipschitz))
}

/// `f(w) - f(w*)`, with round-off below zero clamped away.
fn clamped_suboptimality<P: FiniteSumProblem + ?Sized>(problem: &P, w: &ParamVector) -> Result<f64> {
    let s = problem.suboptimality(w)?;
    let scale = problem.optimal_value().unwrap_or(0.0).abs().max(1.0);
    if s < 0.0 && s > -1e-12 * scale {
        Ok(0.0)
    } else {
        Ok(s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    pub iteration: usize,
    pub estimator: EstimatorTag,
    pub empirical_variance: f64,
    pub standard_error: f64,
    pub bound: f64,
    pub suboptimality: f64,
    pub trials: usize,
    /// `bound - empirical_variance`
    pub margin: f64,
}

impl VarianceReport {
    pub fn new(iteration: usize, estimator: EstimatorTag, stats: &VarianceStats, bound: f64, subopt: f64) -> Self {
        Self {
            iteration,
            estimator,
            empirical_variance: stats.trace_variance,
            standard_error: stats.standard_error,
            bound,
            suboptimality: subopt,
            trials: stats.trials,
            margin: bound - stats.trace_variance,
        }
    }

    /// Empirical variance within the bound plus the statistical slack.
    pub fn pass(&self) -> bool {
        self.empirical_variance <= self.bound + BOUND_SLACK_SE * self.standard_error
    }
}

/// At each point: empirical variance of the variance-reduced estimator and
/// of the minibatch AGE estimator, each against its bound.
pub fn bound_verification_sweep<P: FiniteSumProblem + ?Sized>(
    problem: &P,
    cfg: &SvrgConfig,
    trials: usize,
    points: &[ParamVector],
    rng: &mut dyn RngCore,
) -> Result<Vec<VarianceReport>> {
    let (optimum, lipschitz) = known_optimum(problem)?;
    let svr = SvrDqnEstimator {
        objective: problem,
        cfg: *cfg,
    };
    let age = AgeMinibatchEstimator {
        objective: problem,
        optimum,
        size: cfg.anchor_batch(),
    };
    let mut reports = Vec::with_capacity(2 * points.len());
    for (k, w) in points.iter().enumerate() {
        let subopt = clamped_suboptimality(problem, w)?;
        let s = empirical_gradient_variance(&svr, w, trials, rng)?;
        reports.push(VarianceReport::new(
            k,
            EstimatorTag::SvrDqn,
            &s,
            svr_dqn_variance_bound(cfg, lipschitz, subopt)?,
            subopt,
        ));
        let s = empirical_gradient_variance(&age, w, trials, rng)?;
        reports.push(VarianceReport::new(
            k,
            EstimatorTag::DoubleDqnMinibatch,
            &s,
            double_dqn_variance_bound(cfg.anchor_batch(), lipschitz, subopt)?,
            subopt,
        ));
    }
    Ok(reports)
}

/// Gradient evaluations consumed by one variance-reduced draw:
/// `B` for the anchor plus two per minibatch sample per inner step.
pub fn per_draw_sample_budget(cfg: &SvrgConfig) -> usize {
    cfg.anchor_batch() + 2 * cfg.inner_steps() * cfg.minibatch()
}

/// Anchor iterates `w~_0, ..., w~_steps` of repeated outer steps from `w0`.
pub fn svr_dqn_trajectory<O: SampleGradients + ?Sized>(
    objective: &O,
    cfg: &SvrgConfig,
    hyper: AdamHyper,
    w0: &ParamVector,
    steps: usize,
    rng: &mut dyn RngCore,
) -> Result<Vec<ParamVector>> {
    let mut adam = AdamState::new(w0.layout().clone(), hyper)?;
    let mut w = w0.clone();
    let mut out = vec![w.clone()];
    for _ in 0..steps {
        let step = svr_dqn_outer_step(&w, cfg, &adam, objective, rng)?;
        w = step.params;
        adam = step.adam;
        out.push(w.clone());
    }
    Ok(out)
}

/// Variance of the displacement against the sum of the per-step variances
/// of `tau_i = w_i - w_{i+1}`.
#[derive(Clone, Debug, PartialEq)]
pub struct TelescopeReport {
    pub total_variance: f64,
    pub sum_term_variances: f64,
    /// `total - sum`: twice the summed cross-covariances.
    pub cross_covariance: f64,
    pub trials: usize,
}

pub fn telescoping_decomposition<O: SampleGradients + ?Sized>(
    objective: &O,
    cfg: &SvrgConfig,
    w: &ParamVector,
    trials: usize,
    rng: &mut dyn RngCore,
) -> Result<TelescopeReport> {
    if trials < 2 {
        return Err(Error::InvalidArgument(format!("trials must be >= 2, got {trials}")));
    }
    let m = cfg.inner_steps();
    let mut totals = Vec::with_capacity(trials);
    let mut terms: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(trials); m];
    for _ in 0..trials {
        let inner = svrg_inner_loop(objective, w, cfg, rng)?;
        totals.push(inner.displacement()?.into_vec());
        for (i, pair) in inner.iterates.windows(2).enumerate() {
            terms[i].push(pair[0].sub(&pair[1])?.into_vec());
        }
    }
    let total = trace_variance(&totals)?.trace_variance;
    let sum = compensated_sum(
        terms
            .iter()
            .map(|t| trace_variance(t).map(|s| s.trace_variance))
            .collect::<Result<Vec<_>>>()?,
    );
    Ok(TelescopeReport {
        total_variance: total,
        sum_term_variances: sum,
        cross_covariance: total - sum,
        trials,
    })
}

pub const VARIANCE_CSV_HEADER: [&str; 7] = [
    "iteration",
    "estimator",
    "empirical_var",
    "bound",
    "subopt",
    "trials",
    "pass",
];

pub fn write_variance_csv<W: Write>(out: W, reports: &[VarianceReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(VARIANCE_CSV_HEADER)?;
    for r in reports {
        w.write_record([
            r.iteration.to_string(),
            r.estimator.name().to_string(),
            format!("{:e}", r.empirical_variance),
            format!("{:e}", r.bound),
            format!("{:e}", r.suboptimality),
            r.trials.to_string(),
            r.pass().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
