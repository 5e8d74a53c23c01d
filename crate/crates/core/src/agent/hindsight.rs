use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RelabelStrategy {
    /// `h` uniform on `t+1 ..= H-1`.
    #[default]
    Future,
    /// `h = H-1`.
    Final,
}

/// For a trajectory with steps `0..horizon`, returns `(t, h)` pairs: step
/// `t` gets goal observation `x_h`. Each step with a later step available
/// receives `per_step` relabels; the last step receives none.
pub fn relabel_indices<R: Rng + ?Sized>(
    horizon: usize,
    per_step: usize,
    strategy: RelabelStrategy,
    rng: &mut R,
) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for t in 0..horizon.saturating_sub(1) {
        for _ in 0..per_step {
            let h = match strategy {
                RelabelStrategy::Future => rng.random_range(t + 1..horizon),
                RelabelStrategy::Final => horizon - 1,
            };
            out.push((t, h));
        }
    }
    out
}
