//! Deterministic named RNG streams.
//!
//! Every source of randomness in a run is a ChaCha stream keyed by
//! SHA-256 of `(run_seed, tag, indices...)`. Streams never share state, so
//! the guidance method in use can never perturb the environment draw
//! sequence, and evaluation episodes are pinned independently of training
//! progress.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// 32-byte seed for `(run_seed, tag, indices)`.
pub fn derive_seed(run_seed: u64, tag: &str, indices: &[u64]) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(run_seed.to_le_bytes());
    hasher.update([0x1f]);
    hasher.update(tag.as_bytes());
    for ix in indices {
        hasher.update([0x1f]);
        hasher.update(ix.to_le_bytes());
    }
    hasher.finalize().into()
}

/// Stream RNG for `(run_seed, tag, indices)`.
pub fn derive_rng(run_seed: u64, tag: &str, indices: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(derive_seed(run_seed, tag, indices))
}

/// A u64 drawn from the derived seed, for components that take plain seeds.
pub fn derive_u64(run_seed: u64, tag: &str, indices: &[u64]) -> u64 {
    let bytes = derive_seed(run_seed, tag, indices);
    u64::from_le_bytes(bytes[..8].try_into().expect("seed has 32 bytes"))
}

/// The per-run streams used by the training loop.
///
/// `env` seeds episode layouts, `obs` drives occlusion masks and sensor
/// noise, `agent` drives rollout action sampling, `update` drives RL
/// minibatch draws and reparameterization noise, and `ensemble` drives the
/// dynamics ensemble's independent minibatch draws. Keeping `update` and
/// `ensemble` apart from `agent` keeps the first-W stored transitions
/// identical across guided methods regardless of whether an ensemble is
/// training during warmup.
pub struct RngHub {
    pub env: ChaCha8Rng,
    pub obs: ChaCha8Rng,
    pub agent: ChaCha8Rng,
    pub update: ChaCha8Rng,
    pub ensemble: ChaCha8Rng,
}

impl RngHub {
    pub fn new(run_seed: u64) -> Self {
        Self {
            env: derive_rng(run_seed, "env", &[]),
            obs: derive_rng(run_seed, "observation", &[]),
            agent: derive_rng(run_seed, "agent", &[]),
            update: derive_rng(run_seed, "update", &[]),
            ensemble: derive_rng(run_seed, "ensemble", &[]),
        }
    }
}
