//! Variance-reduced Adam for deep Q-learning.
//!
//! The crate bundles a small fully-connected Q-network with exact
//! backpropagation, the optimizer suite (minibatch SGD, Adam, SVRG and the
//! SVRG-inside-Adam outer step), a Double-DQN training stack, desk-scale
//! environments with exact oracles, gradient-variance instrumentation, and
//! the experiment harness that drives seeded multi-trial comparisons.

pub mod env;
pub mod error;
pub mod gradcheck;
pub mod harness;
pub mod instrument;
pub mod mlp;
pub mod objective;
pub mod optim;
pub mod param;
pub mod rl;
pub mod stats;

pub use error::{Error, Result};
pub use mlp::{Activation, Architecture, MlpNetwork};
pub use objective::{FiniteSumObjective, SampleGradients};
pub use param::{Gradient, GradientSource, Layout, ParamVector};
