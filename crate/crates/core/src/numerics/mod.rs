//! Minimal dense neural-network kernel.
//!
//! Everything learned in this crate — actors, critics, the distillation net
//! and the dynamics ensemble — is a plain dense MLP trained with Adam in
//! 64-bit floats. Forward passes record a tape sufficient for exact
//! backpropagation; all functions are pure apart from the explicitly
//! mutated optimizer/network state, so gradients can be checked against
//! finite differences.

mod adam;
mod gaussian;
mod mlp;

pub use adam::{polyak_update, AdamState};
pub use gaussian::{
    squash_batch, squashed_log_prob, squashed_sample, SquashBatch, SquashedGaussianParams,
    LOG_STD_MAX, LOG_STD_MIN,
};
pub use mlp::{Activation, Gradients, Mlp, Tape};
