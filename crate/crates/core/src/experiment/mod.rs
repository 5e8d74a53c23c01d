//! Experiment plumbing: configuration, metric logs, checkpoints, ablations
//! and latent dumps.

pub mod ablation;
pub mod checkpoint;
pub mod config;
pub mod latents;
pub mod report;
pub mod run;
