//! Aligned sampling: one action sequence replayed in every training
//! environment, so that step `t` of each replay shows (nearly) the same state
//! under a different rendering.

use std::collections::VecDeque;

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gbmdp::GbmdpFamily;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitialSharing {
    /// Share one start state when dynamics are deterministic, otherwise
    /// sample per environment.
    #[default]
    Auto,
    Shared,
    Independent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignedRecord {
    pub id: u64,
    pub actions: Vec<usize>,
    /// `observations[i][t]` is step `t` in the `i`-th training environment.
    pub observations: Vec<Vec<Array1<f64>>>,
    /// Hidden states matching `observations`, kept for diagnostics only.
    pub states: Vec<Vec<usize>>,
}

impl AlignedRecord {
    pub fn len(&self) -> usize {
        self.actions.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Rolls out `policy` for `horizon` steps in a random training environment,
/// then replays the same actions from reset in every other training
/// environment. The returned record has `id` 0; [`AlignedBuffer::push`]
/// assigns the real one.
pub fn collect_aligned<R, P>(
    family: &GbmdpFamily,
    horizon: usize,
    sharing: InitialSharing,
    mut policy: P,
    rng: &mut R,
) -> Result<AlignedRecord>
where
    R: Rng + ?Sized,
    P: FnMut(&Array1<f64>, usize, &mut R) -> Result<usize>,
{
    let n = family.n_train();
    if horizon == 0 {
        return Err(Error::Config("aligned path length must be >= 1".into()));
    }
    if n < 2 {
        return Err(Error::Config("aligned sampling needs at least two training envs".into()));
    }
    let shared = match sharing {
        InitialSharing::Auto => family.spec.slip == 0.0,
        InitialSharing::Shared => true,
        InitialSharing::Independent => false,
    };
    let source = rng.random_range(0..n);
    let s0 = family.spec.sample_initial(rng);
    let mut observations = vec![Vec::new(); n];
    let mut states = vec![Vec::new(); n];

    let (mut x, mut h) = family.reset_to(source, s0, rng)?;
    let mut actions = Vec::with_capacity(horizon);
    observations[source].push(x.clone());
    states[source].push(h.s);
    for _ in 0..horizon {
        let a = policy(&x, source, rng)?;
        (x, h) = family.step(source, &h, a, rng)?;
        actions.push(a);
        observations[source].push(x.clone());
        states[source].push(h.s);
    }

    for e in (0..n).filter(|&e| e != source) {
        let start = if shared { s0 } else { family.spec.sample_initial(rng) };
        let (mut x, mut h) = family.reset_to(e, start, rng)?;
        observations[e].push(x);
        states[e].push(h.s);
        for &a in &actions {
            (x, h) = family.step(e, &h, a, rng)?;
            observations[e].push(x);
            states[e].push(h.s);
        }
    }
    Ok(AlignedRecord { id: 0, actions, observations, states })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignedBuffer {
    capacity: usize,
    records: VecDeque<AlignedRecord>,
    inserted: u64,
}

/// `obs[i]` is a `B x obs_dim` matrix for training env `i`; row `b` of every
/// matrix comes from the same `(record id, step)` in `keys[b]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignedBatch {
    pub obs: Vec<Array2<f64>>,
    pub keys: Vec<(u64, usize)>,
}

impl AlignedBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("aligned buffer capacity must be >= 1".into()));
        }
        Ok(AlignedBuffer { capacity, records: VecDeque::new(), inserted: 0 })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn records(&self) -> impl Iterator<Item = &AlignedRecord> {
        self.records.iter()
    }

    /// Appends, evicting the oldest record when full. Returns the assigned id.
    pub fn push(&mut self, mut record: AlignedRecord) -> u64 {
        record.id = self.inserted;
        self.inserted += 1;
        if self.records.len() == self.capacity {
            self.records.pop_front();
        }
        self.records.push_back(record);
        self.inserted - 1
    }

    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<AlignedBatch> {
        let first = self.records.front().ok_or(Error::Empty("aligned buffer"))?;
        let n_env = first.observations.len();
        let dim = first.observations[0][0].len();
        let mut obs = vec![Array2::zeros((batch, dim)); n_env];
        let mut keys = Vec::with_capacity(batch);
        for b in 0..batch {
            let rec = &self.records[rng.random_range(0..self.records.len())];
            let t = rng.random_range(0..rec.len());
            for (e, m) in obs.iter_mut().enumerate() {
                m.row_mut(b).assign(&rec.observations[e][t]);
            }
            keys.push((rec.id, t));
        }
        Ok(AlignedBatch { obs, keys })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gbmdp::{FamilyConfig, InitialDist};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_policy(na: usize) -> impl FnMut(&Array1<f64>, usize, &mut ChaCha8Rng) -> Result<usize> {
        move |_, _, rng| Ok(rng.random_range(0..na))
    }

    #[test]
    fn deterministic_replay_shares_states() {
        let mut cfg = FamilyConfig::grid(4, 4, 3, 0);
        cfg.initial = InitialDist::Point { state: 0 };
        let fam = GbmdpFamily::generate(&cfg, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let rec = collect_aligned(&fam, 50, InitialSharing::Auto, random_policy(5), &mut rng).unwrap();
            assert_eq!(rec.len(), 51);
            for e in 0..3 {
                assert_eq!(rec.observations[e].len(), 51);
                assert_eq!(rec.states[e], rec.states[0]);
            }
        }
    }

    #[test]
    fn needs_two_envs() {
        let fam = GbmdpFamily::generate(&FamilyConfig::grid(2, 2, 1, 0), 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(collect_aligned(&fam, 3, InitialSharing::Auto, random_policy(5), &mut rng).is_err());
    }

    fn dummy(t: usize) -> AlignedRecord {
        AlignedRecord {
            id: 0,
            actions: vec![0; t],
            observations: vec![vec![Array1::from_elem(1, t as f64); t + 1]; 2],
            states: vec![vec![0; t + 1]; 2],
        }
    }

    #[test]
    fn fifo_and_ids() {
        let mut buf = AlignedBuffer::new(2).unwrap();
        assert_eq!(buf.push(dummy(1)), 0);
        assert_eq!(buf.len(), 1);
        buf.push(dummy(2));
        buf.push(dummy(3));
        let ids: Vec<u64> = buf.records().map(|r| r.id).collect();
        assert_eq!(ids, vec![1, 2]);
    }

    #[test]
    fn empty_buffer_cannot_sample() {
        let buf = AlignedBuffer::new(4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(buf.sample(4, &mut rng), Err(Error::Empty(_))));
    }

    #[test]
    fn single_step_record_gives_identical_tuples() {
        let mut buf = AlignedBuffer::new(4).unwrap();
        let mut r = dummy(0);
        r.observations[1][0] = Array1::from_elem(1, 9.0);
        buf.push(r);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let batch = buf.sample(32, &mut rng).unwrap();
        assert_eq!(batch.obs.len(), 2);
        assert_eq!(batch.obs[0].nrows(), 32);
        assert!(batch.obs[1].iter().all(|&v| v == 9.0));
        assert!(batch.keys.iter().all(|&k| k == (0, 0)));
    }
}
