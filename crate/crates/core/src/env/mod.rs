//! Desk-scale decision problems and synthetic finite sums.

pub mod chain;
pub mod finite_sum;
pub mod gridworld;
pub mod tabular;

use serde::{Deserialize, Serialize};

use crate::error::Result;

pub use chain::{stochastic_chain, StochasticChain};
pub use finite_sum::{
    logistic_finite_sum, quadratic_finite_sum, FiniteSumProblem, LogisticFiniteSum,
    QuadraticFiniteSum,
};
pub use gridworld::{gridworld, GridWorld};
pub use tabular::TabularModel;

/// Hard cap on episode length for every environment here.
pub const EPISODE_CAP: usize = 200;

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub state: Vec<f64>,
    pub reward: f64,
    /// Reached a terminal state; bootstrapping stops here.
    pub terminal: bool,
    /// Hit the episode cap without terminating.
    pub truncated: bool,
}

impl StepOutcome {
    pub fn done(&self) -> bool {
        self.terminal || self.truncated
    }
}

pub trait Environment {
    fn state_dim(&self) -> usize;

    fn action_count(&self) -> usize;

    fn reset(&mut self) -> Vec<f64>;

    /// Errors with [`crate::Error::EpisodeOver`] once the episode has ended.
    fn step(&mut self, action: usize) -> Result<StepOutcome>;

    fn episode_cap(&self) -> usize {
        EPISODE_CAP
    }

    /// Exact transition model, for value-iteration oracles.
    fn tabular_model(&self) -> TabularModel;
}

/// Closed set of environments so trial state can be checkpointed.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnyEnv {
    Gridworld(GridWorld),
    Chain(StochasticChain),
}

impl AnyEnv {
    fn inner(&self) -> &dyn Environment {
        match self {
            AnyEnv::Gridworld(e) => e,
            AnyEnv::Chain(e) => e,
        }
    }

    fn inner_mut(&mut self) -> &mut dyn Environment {
        match self {
            AnyEnv::Gridworld(e) => e,
            AnyEnv::Chain(e) => e,
        }
    }
}

impl Environment for AnyEnv {
    fn state_dim(&self) -> usize {
        self.inner().state_dim()
    }

    fn action_count(&self) -> usize {
        self.inner().action_count()
    }

    fn reset(&mut self) -> Vec<f64> {
        self.inner_mut().reset()
    }

    fn step(&mut self, action: usize) -> Result<StepOutcome> {
        self.inner_mut().step(action)
    }

    fn episode_cap(&self) -> usize {
        self.inner().episode_cap()
    }

    fn tabular_model(&self) -> TabularModel {
        self.inner().tabular_model()
    }
}

pub(crate) fn one_hot(n: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[i] = 1.0;
    v
}
