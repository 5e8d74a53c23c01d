//! Small fixed-topology networks with hand-written reverse mode.
//!
//! Everything the learners need is a stack of dense layers: the VAE encoder
//! and decoder and the goal-conditioned Q-network. [`Mlp`] keeps weights as
//! `in x out` matrices so a batch forward pass is a single `X·W + b` per layer.

mod adam;
mod gradcheck;
mod mlp;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport, KinkProbe};
pub use mlp::{Activation, ForwardCache, Layer, Mlp, MlpGrads};
