//! Goal-conditioned agent: replay, skewed goal sampling, hindsight
//! relabeling, latent-space Q-learning and the full training loop.

mod hindsight;
mod qnet;
mod replay;
mod skew;
mod trainer;

pub use hindsight::{relabel_indices, RelabelStrategy};
pub use qnet::{greedy, latent_reward, td_loss, QBatch, QNetwork};
pub use replay::{ObservationStore, ReplayBuffer, Transition};
pub use skew::{sample_index, skewed_weights, skewed_weights_counted, GaussianKde, SkewTable};
pub use trainer::{evaluate, run_pasf, EvalResult, Trainer};
