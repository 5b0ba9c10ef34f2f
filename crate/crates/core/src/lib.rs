//! Teacher-student soft actor-critic under partial observability.
//!
//! A privileged guiding actor sees the full kinematic state of a multi-lane
//! highway; a deployable control actor sees only a stacked window of masked,
//! noisy observations. A distillation network transfers the teacher's actions
//! to the student with a coefficient that can be fixed, linearly decayed,
//! threshold-gated, or modulated online by the disagreement of a forward
//! dynamics ensemble. The [`experiment`] module runs seeded, reproducible
//! training campaigns and emits CSV/JSON traces for analysis.

pub mod error;
pub mod experiment;
pub mod guidance;
pub mod guided;
pub mod highway;
pub mod numerics;
pub mod pomdp;
pub mod replay;
pub mod rng;
pub mod sac;
pub mod uncertainty;

pub use error::{Error, Result};
