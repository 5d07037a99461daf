//! Variance-bound sweep on synthetic problems with known `w*` and `L`.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{FiniteSumProblem, LogisticFiniteSum, QuadraticFiniteSum};
use crate::error::{Error, Result};
use crate::instrument::{
    bound_verification_sweep, empirical_gradient_variance, lipschitz_suboptimality_bound_check,
    per_draw_sample_budget, svr_dqn_trajectory, telescoping_decomposition, MinibatchEstimator,
    SvrDqnEstimator, TelescopeReport, VarianceReport,
};
use crate::optim::{AdamHyper, SvrgConfig};
use crate::param::ParamVector;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default)]
    pub problem: ProblemSpec,
    #[serde(default = "super::config::desk_svrg")]
    pub svrg: SvrgConfig,
    #[serde(default = "sweep_adam")]
    pub adam: AdamHyper,
    #[serde(default)]
    pub sweep: SweepSpec,
}

fn sweep_adam() -> AdamHyper {
    AdamHyper {
        alpha: 0.05,
        ..AdamHyper::default()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemKind {
    Quadratic,
    Logistic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProblemSpec {
    pub kind: ProblemKind,
    /// Number of per-sample terms `n`.
    pub samples: usize,
    pub dim: usize,
    /// Centres or features are drawn uniformly from `[-spread, spread]`.
    pub spread: f64,
    /// Ridge weight for the logistic problem.
    pub lambda: f64,
    pub seed: u64,
}

impl Default for ProblemSpec {
    fn default() -> Self {
        Self {
            kind: ProblemKind::Quadratic,
            samples: 64,
            dim: 5,
            spread: 2.0,
            lambda: 0.1,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSpec {
    /// Estimator draws per point.
    pub trials: usize,
    /// Points taken evenly along the descent trajectory.
    pub points: usize,
    pub outer_steps: usize,
    /// Distance of the starting point from `w*`.
    pub start_distance: f64,
    pub seed: u64,
    pub output: PathBuf,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            trials: 10_000,
            points: 5,
            outer_steps: 100,
            start_distance: 2.0,
            seed: 1,
            output: PathBuf::from("variance.csv"),
        }
    }
}

impl SweepConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.problem;
        if p.samples == 0 || p.dim == 0 {
            return Err(Error::Config("problem.samples and problem.dim must be positive".into()));
        }
        if p.samples < self.svrg.anchor_batch() {
            return Err(Error::Config(format!(
                "problem.samples {} is smaller than svrg.B {}",
                p.samples,
                self.svrg.anchor_batch()
            )));
        }
        if !(p.spread > 0.0 && p.spread.is_finite()) || !(p.lambda >= 0.0) {
            return Err(Error::Config("problem.spread must be > 0 and lambda >= 0".into()));
        }
        self.adam.validate()?;
        let s = &self.sweep;
        if s.trials < 2 || s.points == 0 {
            return Err(Error::Config("sweep.trials must be >= 2 and sweep.points >= 1".into()));
        }
        if !(s.start_distance >= 0.0 && s.start_distance.is_finite()) {
            return Err(Error::Config("sweep.start_distance must be >= 0".into()));
        }
        Ok(())
    }
}

/// A sweep problem of either kind.
pub enum SweepProblem {
    Quadratic(QuadraticFiniteSum),
    Logistic(LogisticFiniteSum),
}

impl SweepProblem {
    pub fn as_problem(&self) -> &dyn FiniteSumProblem {
        match self {
            SweepProblem::Quadratic(p) => p,
            SweepProblem::Logistic(p) => p,
        }
    }
}

pub fn build_problem(spec: &ProblemSpec) -> Result<SweepProblem> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let point = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..spec.dim).map(|_| rng.gen_range(-spec.spread..=spec.spread)).collect()
    };
    match spec.kind {
        ProblemKind::Quadratic => {
            let centers = (0..spec.samples).map(|_| point(&mut rng)).collect();
            Ok(SweepProblem::Quadratic(QuadraticFiniteSum::new(centers)?))
        }
        ProblemKind::Logistic => {
            let truth = point(&mut rng);
            let features: Vec<Vec<f64>> = (0..spec.samples).map(|_| point(&mut rng)).collect();
            let labels = features
                .iter()
                .map(|x| {
                    let margin: f64 = x.iter().zip(&truth).map(|(a, b)| a * b).sum::<f64>();
                    if margin + rng.gen_range(-1.0..1.0) >= 0.0 {
                        1.0
                    } else {
                        -1.0
                    }
                })
                .collect();
            Ok(SweepProblem::Logistic(LogisticFiniteSum::new(features, labels, spec.lambda)?))
        }
    }
}

/// Variance of the variance-reduced estimator against plain minibatch
/// averaging with the same number of per-sample gradient evaluations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetComparison {
    pub budget: usize,
    pub svr_variance: f64,
    pub svr_standard_error: f64,
    pub minibatch_variance: f64,
    pub minibatch_standard_error: f64,
    /// `|w - w*| / |w_0 - w*|` at the comparison point.
    pub relative_distance: f64,
}

#[derive(Clone, Debug)]
pub struct SweepOutcome {
    pub points: Vec<ParamVector>,
    pub reports: Vec<VarianceReport>,
    pub comparison: BudgetComparison,
    /// At the starting point.
    pub telescoping: TelescopeReport,
    /// Lipschitz-suboptimality inequality held at every sweep point.
    pub lipschitz_holds: bool,
}

impl SweepOutcome {
    pub fn all_pass(&self) -> bool {
        self.reports.iter().all(VarianceReport::pass)
    }
}

/// Starting point at `start_distance` from `w*` in a random direction.
pub fn starting_point<P: FiniteSumProblem + ?Sized>(problem: &P, distance: f64, rng: &mut ChaCha8Rng) -> Result<ParamVector> {
    let optimum = problem
        .optimum()
        .ok_or_else(|| Error::Unsupported("problem has no known optimum".into()))?;
    let dir: Vec<f64> = (0..optimum.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    let offset = ParamVector::from_flat(dir.iter().map(|x| x * distance / norm).collect())?;
    let mut w = optimum.clone();
    w.axpy(1.0, &offset)?;
    Ok(w)
}

pub fn run_variance_sweep(cfg: &SweepConfig) -> Result<SweepOutcome> {
    cfg.validate()?;
    let problem = build_problem(&cfg.problem)?;
    let p = problem.as_problem();
    let optimum = p.optimum().ok_or_else(|| Error::Unsupported("problem has no known optimum".into()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.sweep.seed);
    let w0 = starting_point(p, cfg.sweep.start_distance, &mut rng)?;
    let traj = svr_dqn_trajectory(p, &cfg.svrg, cfg.adam, &w0, cfg.sweep.outer_steps, &mut rng)?;
    let k = cfg.sweep.points;
    let points: Vec<ParamVector> = (0..k)
        .map(|i| {
            let idx = if k == 1 { 0 } else { i * (traj.len() - 1) / (k - 1) };
            traj[idx].clone()
        })
        .collect();

    let mut lipschitz_holds = true;
    for w in &points {
        lipschitz_holds &= lipschitz_suboptimality_bound_check(p, w)?.holds;
    }
    let reports = bound_verification_sweep(p, &cfg.svrg, cfg.sweep.trials, &points, &mut rng)?;

    let last = points.last().expect("at least one point");
    let budget = per_draw_sample_budget(&cfg.svrg);
    let svr = empirical_gradient_variance(
        &SvrDqnEstimator {
            objective: p,
            cfg: cfg.svrg,
        },
        last,
        cfg.sweep.trials,
        &mut rng,
    )?;
    let mb = empirical_gradient_variance(
        &MinibatchEstimator {
            objective: p,
            size: budget,
            replacement: true,
        },
        last,
        cfg.sweep.trials,
        &mut rng,
    )?;
    let start_dist = w0.sub(optimum)?.norm_sq().sqrt();
    let relative_distance = if start_dist > 0.0 {
        last.sub(optimum)?.norm_sq().sqrt() / start_dist
    } else {
        0.0
    };
    let telescoping = telescoping_decomposition(p, &cfg.svrg, &w0, cfg.sweep.trials.min(2000), &mut rng)?;
    Ok(SweepOutcome {
        points,
        reports,
        comparison: BudgetComparison {
            budget,
            svr_variance: svr.trace_variance,
            svr_standard_error: svr.standard_error,
            minibatch_variance: mb.trace_variance,
            minibatch_standard_error: mb.standard_error,
            relative_distance,
        },
        telescoping,
        lipschitz_holds,
    })
}
