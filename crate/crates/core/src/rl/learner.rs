//! Online/target network pair, bootstrapped targets, and the Bellman loss.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mlp::{Architecture, MlpNetwork};
use crate::objective::{check_sample, FiniteSumObjective, SampleGradients};
use crate::param::{Gradient, Layout, ParamVector};
use crate::rl::policy::argmax;
use crate::rl::replay::Transition;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetRule {
    Dqn,
    Double,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct QLearner {
    online: MlpNetwork,
    target: MlpNetwork,
    gamma: f64,
    sync_period: u64,
    steps_since_sync: u64,
}

impl QLearner {
    /// The target network starts as an exact copy of `online`.
    pub fn new(online: MlpNetwork, gamma: f64, sync_period: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&gamma) {
            return Err(Error::InvalidArgument(format!("gamma must be in [0, 1], got {gamma}")));
        }
        if sync_period == 0 {
            return Err(Error::InvalidArgument("sync_period must be positive".into()));
        }
        Ok(Self {
            target: online.clone(),
            online,
            gamma,
            sync_period,
            steps_since_sync: 0,
        })
    }

    /// Replaces the target network; the architecture must match.
    pub fn with_target(mut self, target: MlpNetwork) -> Result<Self> {
        if target.architecture() != self.online.architecture() {
            return Err(Error::LayoutMismatch);
        }
        self.target = target;
        Ok(self)
    }

    pub fn online(&self) -> &MlpNetwork {
        &self.online
    }

    pub fn target(&self) -> &MlpNetwork {
        &self.target
    }

    pub fn architecture(&self) -> &Architecture {
        self.online.architecture()
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn sync_period(&self) -> u64 {
        self.sync_period
    }

    pub fn steps_since_sync(&self) -> u64 {
        self.steps_since_sync
    }

    pub fn set_online_weights(&mut self, w: ParamVector) -> Result<()> {
        self.online.set_weights(w)
    }

    /// Copies the online weights into the target network.
    pub fn sync(&mut self) {
        self.target = self.online.clone();
        self.steps_since_sync = 0;
    }

    /// Counts one optimizer update and syncs when the period is reached.
    /// Returns whether a sync happened.
    pub fn record_update(&mut self) -> bool {
        self.steps_since_sync += 1;
        if self.steps_since_sync >= self.sync_period {
            self.sync();
            true
        } else {
            false
        }
    }

    pub fn q_values(&self, state: &[f64]) -> Result<Vec<f64>> {
        self.online.forward(state)
    }

    pub fn dqn_target(&self, tr: &Transition) -> Result<f64> {
        if tr.terminal {
            return Ok(tr.reward);
        }
        let q_next = self.target.forward(&tr.next_state)?;
        let best = q_next.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(tr.reward + self.gamma * best)
    }

    /// Action chosen by the online network, valued by the target network.
    pub fn double_q_target(&self, tr: &Transition) -> Result<f64> {
        if tr.terminal {
            return Ok(tr.reward);
        }
        let select = self.online.forward(&tr.next_state)?;
        let a = argmax(&select).ok_or(Error::EmptyBatch)?;
        let value = self.target.forward(&tr.next_state)?[a];
        Ok(tr.reward + self.gamma * value)
    }

    pub fn target_value(&self, tr: &Transition, rule: TargetRule) -> Result<f64> {
        match rule {
            TargetRule::Dqn => self.dqn_target(tr),
            TargetRule::Double => self.double_q_target(tr),
        }
    }

    /// Freezes targets for `batch` at the current networks.
    pub fn bellman_objective(&self, batch: &[Transition], rule: TargetRule) -> Result<BellmanObjective> {
        let samples = batch
            .iter()
            .map(|tr| {
                if tr.action >= self.architecture().output_dim() {
                    return Err(Error::InvalidArgument(format!("action {} out of range", tr.action)));
                }
                Ok(BellmanSample {
                    state: tr.state.clone(),
                    action: tr.action,
                    target: self.target_value(tr, rule)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        BellmanObjective::new(self.architecture().clone(), samples)
    }
}

pub fn target_sync(learner: &mut QLearner) {
    learner.sync();
}

pub fn dqn_target(learner: &QLearner, tr: &Transition) -> Result<f64> {
    learner.dqn_target(tr)
}

pub fn double_q_target(learner: &QLearner, tr: &Transition) -> Result<f64> {
    learner.double_q_target(tr)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BellmanSample {
    pub state: Vec<f64>,
    pub action: usize,
    /// Treated as a constant: no gradient flows into it.
    pub target: f64,
}

/// `f_i(theta) = (y_i - Q(s_i, a_i; theta))^2` over a fixed batch.
#[derive(Clone, Debug)]
pub struct BellmanObjective {
    arch: Architecture,
    layout: Layout,
    samples: Vec<BellmanSample>,
}

impl BellmanObjective {
    pub fn new(arch: Architecture, samples: Vec<BellmanSample>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyBatch);
        }
        Ok(Self {
            layout: arch.layout(),
            arch,
            samples,
        })
    }

    pub fn samples(&self) -> &[BellmanSample] {
        &self.samples
    }

    fn residual(&self, w: &ParamVector, sample: usize) -> Result<f64> {
        let s = &self.samples[sample];
        let q = self.arch.forward(w.as_slice(), &s.state)?;
        Ok(q[s.action] - s.target)
    }
}

impl SampleGradients for BellmanObjective {
    fn num_samples(&self) -> usize {
        self.samples.len()
    }

    fn layout(&self) -> &Layout {
        &self.layout
    }

    fn accumulate_gradient(&self, w: &ParamVector, sample: usize, scale: f64, out: &mut [f64]) -> Result<()> {
        check_sample(sample, self.samples.len())?;
        let residual = self.residual(w, sample)?;
        let s = &self.samples[sample];
        let mut upstream = vec![0.0; self.arch.output_dim()];
        upstream[s.action] = 2.0 * residual;
        self.arch.backward_into(w.as_slice(), &s.state, &upstream, scale, out)
    }
}

impl FiniteSumObjective for BellmanObjective {
    fn sample_loss(&self, w: &ParamVector, sample: usize) -> Result<f64> {
        check_sample(sample, self.samples.len())?;
        let r = self.residual(w, sample)?;
        Ok(r * r)
    }
}

/// Mean squared Bellman error over `batch` and the per-sample gradients
/// with respect to the online weights.
pub fn bellman_loss_and_grads(
    learner: &QLearner,
    batch: &[Transition],
    rule: TargetRule,
) -> Result<(f64, Vec<Gradient>)> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let objective = learner.bellman_objective(batch, rule)?;
    let w = learner.online().weights();
    let loss = objective.loss(w)?;
    let grads = (0..batch.len())
        .map(|i| objective.sample_gradient(w, i))
        .collect::<Result<Vec<_>>>()?;
    Ok((loss, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{finite_difference_gradient, gradients_agree};
    use crate::mlp::Activation;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// 1-input linear net whose outputs are exactly its biases when fed 0.
    fn bias_net(q: &[f64]) -> MlpNetwork {
        let arch = Architecture::new(vec![1, q.len()], Activation::Relu).unwrap();
        let mut data = vec![0.0; q.len()];
        data.extend_from_slice(q);
        MlpNetwork::from_weights(arch.clone(), ParamVector::new(arch.layout(), data).unwrap()).unwrap()
    }

    fn transition(r: f64, terminal: bool) -> Transition {
        Transition {
            state: vec![0.0],
            action: 0,
            reward: r,
            next_state: vec![0.0],
            terminal,
        }
    }

    fn random_learner(seed: u64) -> (QLearner, Vec<Transition>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let arch = Architecture::new(vec![3, 6, 2], Activation::Tanh).unwrap();
        let online = MlpNetwork::init(arch.clone(), &mut rng);
        let target = MlpNetwork::init(arch, &mut rng);
        let learner = QLearner::new(online, 0.9, 10).unwrap().with_target(target).unwrap();
        let batch = (0..8)
            .map(|i| Transition {
                state: (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                action: i % 2,
                reward: rng.gen_range(-1.0..1.0),
                next_state: (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                terminal: i == 5,
            })
            .collect();
        (learner, batch)
    }

    #[test]
    fn gamma_zero_and_terminal_give_reward() {
        let l = QLearner::new(bias_net(&[4.0, 9.0]), 0.0, 1).unwrap();
        assert_eq!(l.dqn_target(&transition(1.5, false)).unwrap(), 1.5);
        assert_eq!(l.double_q_target(&transition(1.5, false)).unwrap(), 1.5);
        let l = QLearner::new(bias_net(&[4.0, 9.0]), 0.9, 1).unwrap();
        assert_eq!(l.dqn_target(&transition(-2.0, true)).unwrap(), -2.0);
        assert_eq!(l.double_q_target(&transition(-2.0, true)).unwrap(), -2.0);
    }

    #[test]
    fn dqn_target_takes_max_of_target_net() {
        let l = QLearner::new(bias_net(&[0.0, 0.0]), 0.5, 1)
            .unwrap()
            .with_target(bias_net(&[1.0, 3.0]))
            .unwrap();
        assert_eq!(l.dqn_target(&transition(1.0, false)).unwrap(), 2.5);
    }

    #[test]
    fn double_target_selects_online_values_target() {
        let l = QLearner::new(bias_net(&[5.0, 4.0]), 1.0, 1)
            .unwrap()
            .with_target(bias_net(&[1.0, 9.0]))
            .unwrap();
        let tr = transition(0.0, false);
        assert_eq!(l.double_q_target(&tr).unwrap(), 1.0);
        assert_eq!(l.dqn_target(&tr).unwrap(), 9.0);
    }

    #[test]
    fn sync_makes_targets_agree_and_is_idempotent() {
        let (mut l, batch) = random_learner(1);
        l.sync();
        let after_one = l.target().weights().clone();
        l.sync();
        assert_eq!(l.target().weights(), &after_one);
        assert_eq!(l.target().weights(), l.online().weights());
        for tr in &batch {
            assert_eq!(l.dqn_target(tr).unwrap(), l.double_q_target(tr).unwrap());
        }
    }

    #[test]
    fn record_update_syncs_on_period() {
        let (mut l, _) = random_learner(2);
        let synced: Vec<bool> = (0..25).map(|_| l.record_update()).collect();
        let at: Vec<usize> = synced.iter().enumerate().filter(|(_, &s)| s).map(|(i, _)| i + 1).collect();
        assert_eq!(at, vec![10, 20]);
    }

    #[test]
    fn exact_network_has_zero_loss() {
        // Q == 2 everywhere, terminal transitions with reward 2
        let l = QLearner::new(bias_net(&[2.0, 2.0]), 0.9, 1).unwrap();
        let batch = vec![transition(2.0, true); 3];
        let (loss, grads) = bellman_loss_and_grads(&l, &batch, TargetRule::Double).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grads.iter().all(|g| g.as_slice().iter().all(|&x| x == 0.0)));
        assert!(matches!(bellman_loss_and_grads(&l, &[], TargetRule::Dqn), Err(Error::EmptyBatch)));
    }

    #[test]
    fn per_sample_mean_equals_batch_gradient() {
        let (l, batch) = random_learner(3);
        let (_, grads) = bellman_loss_and_grads(&l, &batch, TargetRule::Double).unwrap();
        let obj = l.bellman_objective(&batch, TargetRule::Double).unwrap();
        let full = obj.full_gradient(l.online().weights()).unwrap();
        for j in 0..full.len() {
            let mean = grads.iter().map(|g| g.as_slice()[j]).sum::<f64>() / grads.len() as f64;
            assert!((mean - full.as_slice()[j]).abs() < 1e-14);
        }
    }

    #[test]
    fn gradient_matches_finite_differences_with_frozen_targets() {
        for seed in 0..5 {
            let (l, batch) = random_learner(seed);
            for rule in [TargetRule::Dqn, TargetRule::Double] {
                let obj = l.bellman_objective(&batch, rule).unwrap();
                let w = l.online().weights();
                let analytic = obj.full_gradient(w).unwrap();
                // the oracle moves only the online weights; targets stay as frozen
                let numeric = finite_difference_gradient(|v| obj.loss(v).unwrap(), w, 1e-5).unwrap();
                gradients_agree(analytic.as_slice(), numeric.as_slice(), 1e-5, 1e-7).unwrap();
            }
        }
    }

    #[test]
    fn perturbing_target_net_changes_gradient_only_through_residual() {
        let (l, batch) = random_learner(4);
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let other = MlpNetwork::init(l.architecture().clone(), &mut rng);
        let l2 = l.clone().with_target(other).unwrap();
        let obj = l.bellman_objective(&batch, TargetRule::Dqn).unwrap();
        let obj2 = l2.bellman_objective(&batch, TargetRule::Dqn).unwrap();
        let w = l.online().weights();
        for i in 0..batch.len() {
            // gradient = 2 (Q - y) dQ/dtheta, so the ratio of the two gradients
            // is the ratio of residuals on every coordinate
            let g1 = obj.sample_gradient(w, i).unwrap();
            let g2 = obj2.sample_gradient(w, i).unwrap();
            let r1 = obj.residual(w, i).unwrap();
            let r2 = obj2.residual(w, i).unwrap();
            for (a, b) in g1.as_slice().iter().zip(g2.as_slice()) {
                assert!((a * r2 - b * r1).abs() < 1e-12);
            }
        }
    }
}
