//! Fixed-capacity FIFO transition store with uniform sampling, plus the
//! warmup disagreement buffer used for percentile calibration.

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::highway::{Action, FullState};
use crate::pomdp::{ObservationHistory, NEIGHBOR_ROWS};

/// One stored step. Keeping the full state alongside the history is what
/// lets the critic and guiding actor train on privileged input while the
/// control actor and ensemble see only observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub full_state: FullState,
    pub history: ObservationHistory,
    pub action: Action,
    pub reward: f64,
    pub next_full_state: FullState,
    pub next_history: ObservationHistory,
    /// Terminal flag (collision), not horizon truncation.
    pub done: bool,
    /// Which neighbor rows were occluded at t+1; drives the
    /// observability-blindness diagnostic.
    pub occlusion_mask: [bool; NEIGHBOR_ROWS],
}

/// FIFO replay buffer; sampling is uniform with replacement.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    items: VecDeque<Transition>,
    capacity: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidArg("replay capacity must be >= 1".into()));
        }
        Ok(Self {
            items: VecDeque::with_capacity(capacity.min(1 << 20)),
            capacity,
        })
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn get(&self, index: usize) -> &Transition {
        &self.items[index]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    /// `batch` indices drawn uniformly with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(
        &self,
        batch: usize,
        rng: &mut R,
    ) -> Result<Vec<usize>> {
        if self.items.is_empty() {
            return Err(Error::Contract("cannot sample from an empty buffer".into()));
        }
        Ok((0..batch)
            .map(|_| rng.gen_range(0..self.items.len()))
            .collect())
    }
}

/// Disagreement values collected during the warmup phase; bounded by the
/// warmup length W.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WarmupBuffer {
    values: Vec<f64>,
    capacity: usize,
}

impl WarmupBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            values: Vec::with_capacity(capacity),
            capacity,
        }
    }

    /// Accepts values until the capacity is reached; later pushes are
    /// ignored (calibration freezes at step W anyway).
    pub fn push(&mut self, u: f64) {
        if self.values.len() < self.capacity && u >= 0.0 && u.is_finite() {
            self.values.push(u);
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}
