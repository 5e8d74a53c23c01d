use std::collections::HashMap;

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Interned observations. Identical vectors (bit for bit) share one id, so
/// static-factor environments only ever store one row per state.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<Array1<f64>>", into = "Vec<Array1<f64>>")]
pub struct ObservationStore {
    rows: Vec<Array1<f64>>,
    index: HashMap<Vec<u64>, u32>,
}

fn key(x: &Array1<f64>) -> Vec<u64> {
    x.iter().map(|v| v.to_bits()).collect()
}

impl From<Vec<Array1<f64>>> for ObservationStore {
    fn from(rows: Vec<Array1<f64>>) -> Self {
        let index = rows.iter().enumerate().map(|(i, x)| (key(x), i as u32)).collect();
        ObservationStore { rows, index }
    }
}

impl From<ObservationStore> for Vec<Array1<f64>> {
    fn from(store: ObservationStore) -> Self {
        store.rows
    }
}

impl ObservationStore {
    pub fn intern(&mut self, x: &Array1<f64>) -> u32 {
        let k = key(x);
        if let Some(&id) = self.index.get(&k) {
            return id;
        }
        let id = self.rows.len() as u32;
        self.rows.push(x.clone());
        self.index.insert(k, id);
        id
    }

    pub fn get(&self, id: u32) -> &Array1<f64> {
        &self.rows[id as usize]
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Rows `from..` stacked into a matrix.
    pub fn matrix_from(&self, from: usize) -> Array2<f64> {
        let dim = self.rows.first().map_or(0, |r| r.len());
        let mut m = Array2::zeros((self.rows.len().saturating_sub(from), dim));
        for (i, r) in self.rows[from.min(self.rows.len())..].iter().enumerate() {
            m.row_mut(i).assign(r);
        }
        m
    }

    pub fn gather(&self, ids: &[u32]) -> Array2<f64> {
        let dim = self.rows.first().map_or(0, |r| r.len());
        let mut m = Array2::zeros((ids.len(), dim));
        for (i, &id) in ids.iter().enumerate() {
            m.row_mut(i).assign(self.get(id));
        }
        m
    }
}

/// `(x_t, a_t, x_{t+1}, x(g))` with observations referenced by store id.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub obs: u32,
    pub action: u8,
    pub next_obs: u32,
    pub goal: u32,
}

/// Fixed-capacity FIFO ring of transitions for one environment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayBuffer {
    capacity: usize,
    data: Vec<Transition>,
    head: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("replay capacity must be >= 1".into()));
        }
        Ok(ReplayBuffer { capacity, data: Vec::new(), head: 0 })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.data.len() < self.capacity {
            self.data.push(t);
        } else {
            self.data[self.head] = t;
        }
        self.head = (self.head + 1) % self.capacity;
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Transition> {
        if self.data.is_empty() {
            return Err(Error::Empty("replay buffer"));
        }
        Ok(self.data[rng.random_range(0..self.data.len())])
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.data.iter()
    }

    /// Oldest first.
    pub fn ordered(&self) -> Vec<Transition> {
        if self.data.len() < self.capacity {
            self.data.clone()
        } else {
            let mut v = self.data[self.head..].to_vec();
            v.extend_from_slice(&self.data[..self.head]);
            v
        }
    }
}
