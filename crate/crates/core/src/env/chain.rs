use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{one_hot, Environment, StepOutcome, TabularModel, EPISODE_CAP};
use crate::error::{Error, Result};

/// Reward for stepping off the left end.
pub const LEFT_REWARD: f64 = 0.1;
/// Mean reward for reaching the right end.
pub const RIGHT_REWARD: f64 = 1.0;

/// 1-D chain of `length` cells, starting at cell 1. Action 0 moves left,
/// 1 moves right. Cell 0 is terminal with reward [`LEFT_REWARD`]; cell
/// `length - 1` is terminal with reward [`RIGHT_REWARD`] plus zero-mean
/// uniform noise of standard deviation `noise`. Other moves pay 0.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StochasticChain {
    length: usize,
    noise: f64,
    pos: usize,
    steps: usize,
    done: bool,
    rng: ChaCha8Rng,
}

pub const START: usize = 1;

impl StochasticChain {
    pub fn new(length: usize, noise: f64, seed: u64) -> Result<Self> {
        if length < 3 {
            return Err(Error::InvalidArgument(format!("chain length must be >= 3, got {length}")));
        }
        if !(noise >= 0.0 && noise.is_finite()) {
            return Err(Error::InvalidArgument(format!("noise must be >= 0, got {noise}")));
        }
        Ok(Self {
            length,
            noise,
            pos: START,
            steps: 0,
            done: false,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    /// Discounted value from the start of always moving right.
    pub fn always_right_value(&self, gamma: f64) -> f64 {
        // reward arrives on move number length - 2
        gamma.powi(self.length as i32 - 3) * RIGHT_REWARD
    }

    /// Discounted value from the start of always moving left.
    pub fn always_left_value(&self, _gamma: f64) -> f64 {
        LEFT_REWARD
    }
}

pub fn stochastic_chain(length: usize, noise: f64, seed: u64) -> Result<StochasticChain> {
    StochasticChain::new(length, noise, seed)
}

impl Environment for StochasticChain {
    fn state_dim(&self) -> usize {
        self.length
    }

    fn action_count(&self) -> usize {
        2
    }

    fn reset(&mut self) -> Vec<f64> {
        self.pos = START;
        self.steps = 0;
        self.done = false;
        one_hot(self.length, self.pos)
    }

    fn step(&mut self, action: usize) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::EpisodeOver);
        }
        let reward = match action {
            0 => {
                self.pos -= 1;
                if self.pos == 0 {
                    LEFT_REWARD
                } else {
                    0.0
                }
            }
            1 => {
                self.pos += 1;
                if self.pos == self.length - 1 {
                    let half_width = 3f64.sqrt() * self.noise;
                    let eps = if half_width > 0.0 {
                        self.rng.gen_range(-half_width..=half_width)
                    } else {
                        0.0
                    };
                    RIGHT_REWARD + eps
                } else {
                    0.0
                }
            }
            _ => return Err(Error::InvalidArgument(format!("action {action} out of range"))),
        };
        self.steps += 1;
        let terminal = self.pos == 0 || self.pos == self.length - 1;
        let truncated = !terminal && self.steps >= EPISODE_CAP;
        self.done = terminal || truncated;
        Ok(StepOutcome {
            state: one_hot(self.length, self.pos),
            reward,
            terminal,
            truncated,
        })
    }

    fn tabular_model(&self) -> TabularModel {
        let n = self.length;
        let mut terminal = vec![false; n];
        terminal[0] = true;
        terminal[n - 1] = true;
        let reward_at = |s: usize| {
            if s == 0 {
                LEFT_REWARD
            } else if s == n - 1 {
                RIGHT_REWARD
            } else {
                0.0
            }
        };
        let transitions = (0..n)
            .map(|s| {
                if terminal[s] {
                    vec![Vec::new(), Vec::new()]
                } else {
                    vec![
                        vec![(1.0, s - 1, reward_at(s - 1))],
                        vec![(1.0, s + 1, reward_at(s + 1))],
                    ]
                }
            })
            .collect();
        TabularModel {
            n_states: n,
            n_actions: 2,
            start: START,
            terminal,
            transitions,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rollout(env: &mut StochasticChain, action: usize, gamma: f64) -> f64 {
        env.reset();
        let mut ret = 0.0;
        let mut disc = 1.0;
        loop {
            let o = env.step(action).unwrap();
            ret += disc * o.reward;
            disc *= gamma;
            if o.done() {
                return ret;
            }
        }
    }

    #[test]
    fn validation() {
        assert!(stochastic_chain(2, 0.0, 0).is_err());
        assert!(stochastic_chain(3, -1.0, 0).is_err());
    }

    #[test]
    fn noiseless_returns_are_deterministic_and_closed_form() {
        let gamma = 0.9;
        let mut env = stochastic_chain(8, 0.0, 3).unwrap();
        let right = rollout(&mut env, 1, gamma);
        assert_eq!(right, rollout(&mut env, 1, gamma));
        assert!((right - gamma.powi(5)).abs() < 1e-15);
        assert!((right - env.always_right_value(gamma)).abs() < 1e-15);
        assert_eq!(rollout(&mut env, 0, gamma), env.always_left_value(gamma));
    }

    #[test]
    fn closed_forms_match_policy_evaluation() {
        let env = stochastic_chain(10, 0.5, 0).unwrap();
        let model = env.tabular_model();
        for gamma in [0.5, 0.9, 0.99] {
            let right = model.policy_value(&vec![1; 10], gamma);
            let left = model.policy_value(&vec![0; 10], gamma);
            assert!((right[START] - env.always_right_value(gamma)).abs() < 1e-12);
            assert!((left[START] - env.always_left_value(gamma)).abs() < 1e-12);
        }
    }

    #[test]
    fn noise_is_bounded_and_zero_mean() {
        let mut env = stochastic_chain(3, 0.5, 11).unwrap();
        let half = 3f64.sqrt() * 0.5;
        let mut sum = 0.0;
        let n = 20_000;
        for _ in 0..n {
            env.reset();
            let r = env.step(1).unwrap().reward;
            assert!((r - 1.0).abs() <= half);
            sum += r;
        }
        // std of the mean is 0.5 / sqrt(n) ~ 0.0035
        assert!((sum / n as f64 - 1.0).abs() < 0.02);
    }
}
