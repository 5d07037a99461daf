use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::{FiniteSumObjective, SampleGradients};
use crate::optim::{adam_step, svr_dqn_outer_step_on_batch, AdamState, SvrgConfig};
use crate::rl::learner::{QLearner, TargetRule};
use crate::rl::replay::ReplayBuffer;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OptimizerKind {
    /// Adam on the mean minibatch gradient.
    #[serde(rename = "adam")]
    Adam,
    /// Adam on the SVRG displacement surrogate.
    #[serde(rename = "svr-dqn")]
    SvrDqn,
}

impl OptimizerKind {
    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::SvrDqn => "svr-dqn",
        }
    }
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    /// Both paths draw `svrg.anchor_batch()` transitions per iteration.
    pub svrg: SvrgConfig,
    pub target_rule: TargetRule,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum IterationOutcome {
    /// Not enough transitions stored yet.
    Skipped { have: usize, need: usize },
    /// Mean Bellman loss on the sampled batch before the update.
    Updated { loss: f64 },
}

/// One optimizer update of the online network. The batch is drawn
/// uniformly without replacement from the buffer; targets are frozen at
/// the current networks for the whole update. The learner and Adam state
/// are only modified on success.
pub fn train_iteration<R: Rng + ?Sized>(
    learner: &mut QLearner,
    buffer: &ReplayBuffer,
    adam: &mut AdamState,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<IterationOutcome> {
    let need = cfg.svrg.anchor_batch();
    if buffer.len() < need {
        return Ok(IterationOutcome::Skipped {
            have: buffer.len(),
            need,
        });
    }
    let batch = buffer.sample_distinct(need, rng)?;
    let objective = learner.bellman_objective(&batch, cfg.target_rule)?;
    let w = learner.online().weights();
    let loss = objective.loss(w)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite("bellman loss".into()));
    }

    let (params, next_adam) = match cfg.optimizer {
        OptimizerKind::Adam => {
            let g = objective.full_gradient(w)?;
            adam_step(adam, w, &g)?
        }
        OptimizerKind::SvrDqn => {
            let all: Vec<usize> = (0..objective.num_samples()).collect();
            let step = svr_dqn_outer_step_on_batch(w, all, &cfg.svrg, adam, &objective, rng)?;
            (step.params, step.adam)
        }
    };
    learner.set_online_weights(params)?;
    *adam = next_adam;
    learner.record_update();
    Ok(IterationOutcome::Updated { loss })
}
