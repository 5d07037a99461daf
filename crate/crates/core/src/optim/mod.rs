//! Minibatch SGD, Adam, SVRG, and the variance-reduced Adam outer step.

pub mod adam;
pub mod sgd;
pub mod svrg;

pub use adam::{adam_step, AdamHyper, AdamState};
pub use sgd::sgd_minibatch_step;
pub use svrg::{
    composite_gradient_no_rescale_check, sample_with_replacement, sample_without_replacement,
    svr_dqn_outer_step, svr_dqn_outer_step_on_batch, svrg_anchor, svrg_direction,
    svrg_inner_loop, svrg_inner_loop_on_batch, svrg_inner_step, InnerLoop, OuterStep, SvrgConfig,
    SvrgSnapshot,
};
