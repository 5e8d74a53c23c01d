//! Goal-conditioned block MDP laboratory: procedurally generated environment
//! families, alignment-regularized representation learning, a latent-space
//! goal-conditioned agent, and exact checks of occupancy-measure bounds on
//! small finite instances.

pub mod agent;
pub mod alignment;
pub mod error;
pub mod experiment;
pub mod gbmdp;
pub mod losses;
pub mod nn;
pub mod theory;
pub mod vae;

pub use error::{Error, Result};
pub use experiment::config::ExperimentConfig;
pub use experiment::report::{EpochRecord, EvalRecord, TrainingReport};
pub use gbmdp::{FamilyConfig, GbmdpFamily};
