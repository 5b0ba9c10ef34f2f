//! Partial observability: per-vehicle occlusion, sensor noise, and
//! fixed-window observation histories.
//!
//! The observation is the full state with each neighbor row independently
//! zeroed (presence included) with the level's occlusion probability, and
//! i.i.d. Gaussian noise added to the continuous features of every row
//! still carrying a vehicle. Noise is applied after masking so occluded
//! rows stay exactly zero — downstream diagnostics rely on that literal
//! zero structure. Presence flags never carry noise.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::highway::{FullState, FEATURES_PER_ROW, STATE_DIM, STATE_ROWS};

pub const NEIGHBOR_ROWS: usize = STATE_ROWS - 1;

/// Observation degradation level: Gaussian sensor noise std and
/// per-vehicle per-step occlusion probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PomdpLevel {
    pub name: LevelName,
    pub noise_sigma: f64,
    pub occlusion_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LevelName {
    None,
    Mild,
    Moderate,
    Severe,
    Custom,
}

impl std::fmt::Display for LevelName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            LevelName::None => "none",
            LevelName::Mild => "mild",
            LevelName::Moderate => "moderate",
            LevelName::Severe => "severe",
            LevelName::Custom => "custom",
        };
        f.write_str(s)
    }
}

impl PomdpLevel {
    pub fn none() -> Self {
        Self {
            name: LevelName::None,
            noise_sigma: 0.0,
            occlusion_rate: 0.0,
        }
    }

    pub fn mild() -> Self {
        Self {
            name: LevelName::Mild,
            noise_sigma: 0.02,
            occlusion_rate: 0.10,
        }
    }

    pub fn moderate() -> Self {
        Self {
            name: LevelName::Moderate,
            noise_sigma: 0.05,
            occlusion_rate: 0.25,
        }
    }

    pub fn severe() -> Self {
        Self {
            name: LevelName::Severe,
            noise_sigma: 0.10,
            occlusion_rate: 0.50,
        }
    }

    pub fn custom(noise_sigma: f64, occlusion_rate: f64) -> Result<Self> {
        if !(noise_sigma.is_finite() && noise_sigma >= 0.0) {
            return Err(Error::InvalidArg("noise_sigma must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&occlusion_rate) {
            return Err(Error::InvalidArg("occlusion_rate must be in [0, 1]".into()));
        }
        Ok(Self {
            name: LevelName::Custom,
            noise_sigma,
            occlusion_rate,
        })
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "none" => Ok(Self::none()),
            "mild" => Ok(Self::mild()),
            "moderate" => Ok(Self::moderate()),
            "severe" => Ok(Self::severe()),
            other => Err(Error::Config(format!(
                "unknown pomdp level '{other}' (expected none|mild|moderate|severe)"
            ))),
        }
    }
}

/// A 25-dim observation with the same layout as [`FullState`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    features: [f64; STATE_DIM],
}

impl Observation {
    pub fn zeros() -> Self {
        Self {
            features: [0.0; STATE_DIM],
        }
    }

    pub fn flat(&self) -> &[f64; STATE_DIM] {
        &self.features
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.features[r * FEATURES_PER_ROW..(r + 1) * FEATURES_PER_ROW]
    }
}

/// Applies the observation function: independent per-neighbor-row occlusion
/// then additive noise on visible vehicles. Returns the observation and the
/// occlusion events (true where a present neighbor row was zeroed).
///
/// The ego row is proprioceptive and never occluded; rows without a vehicle
/// stay exactly zero rather than acquiring phantom noise.
pub fn observe<R: Rng + ?Sized>(
    state: &FullState,
    level: &PomdpLevel,
    rng: &mut R,
) -> (Observation, [bool; NEIGHBOR_ROWS]) {
    let src = state.sensor_view();
    let mut features = *src;
    let mut occluded = [false; NEIGHBOR_ROWS];
    for n in 0..NEIGHBOR_ROWS {
        let hit: f64 = rng.gen();
        let base = (n + 1) * FEATURES_PER_ROW;
        let present = src[base] == 1.0;
        if hit < level.occlusion_rate {
            features[base..base + FEATURES_PER_ROW].fill(0.0);
            occluded[n] = present;
        }
    }
    if level.noise_sigma > 0.0 {
        for r in 0..STATE_ROWS {
            let base = r * FEATURES_PER_ROW;
            if features[base] == 1.0 {
                for f in 1..FEATURES_PER_ROW {
                    let eps: f64 = rng.sample(StandardNormal);
                    features[base + f] += level.noise_sigma * eps;
                }
            }
        }
    }
    (Observation { features }, occluded)
}

/// Sliding window of the `K` most recent observations, oldest first.
/// Missing slots (before `K` pushes) flatten as zeros.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationHistory {
    k: usize,
    window: VecDeque<Observation>,
}

impl ObservationHistory {
    /// All-zero history of capacity `k`; rejects `k = 0`.
    pub fn new(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidArg("history length K must be >= 1".into()));
        }
        Ok(Self {
            k,
            window: VecDeque::with_capacity(k),
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn flat_len(&self) -> usize {
        self.k * STATE_DIM
    }

    pub fn push(&mut self, obs: Observation) {
        if self.window.len() == self.k {
            self.window.pop_front();
        }
        self.window.push_back(obs);
    }

    pub fn newest(&self) -> Option<&Observation> {
        self.window.back()
    }

    /// Flattens to `(oldest .. newest)`, each row-major, zero-padded at the
    /// front while fewer than `K` observations exist.
    pub fn write_flat(&self, out: &mut [f64]) {
        assert_eq!(out.len(), self.flat_len(), "flatten buffer size");
        let missing = self.k - self.window.len();
        out[..missing * STATE_DIM].fill(0.0);
        for (i, obs) in self.window.iter().enumerate() {
            let base = (missing + i) * STATE_DIM;
            out[base..base + STATE_DIM].copy_from_slice(obs.flat());
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.flat_len()];
        self.write_flat(&mut out);
        out
    }
}
