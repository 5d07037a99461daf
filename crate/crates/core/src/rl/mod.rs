//! Q-learning machinery: replay, exploration, targets, and training steps.

pub mod learner;
pub mod policy;
pub mod replay;
pub mod train;

pub use learner::{
    bellman_loss_and_grads, double_q_target, dqn_target, target_sync, BellmanObjective,
    BellmanSample, QLearner, TargetRule,
};
pub use policy::{argmax, epsilon_greedy_action, EpsilonSchedule};
pub use replay::{buffer_push, buffer_sample, BufferMeta, ReplayBuffer, Transition};
pub use train::{train_iteration, IterationOutcome, OptimizerKind, TrainConfig};
