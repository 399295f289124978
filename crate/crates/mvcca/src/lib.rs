//! Multiview generalized canonical correlation analysis toolkit.
//!
//! The crate estimates a latent factor shared by K jointly observed views.
//! It provides the closed-form linear baselines (two-view CCA and MAX-VAR
//! GCCA), deep variants that train per-view MLP encoders against an
//! orthogonal shared target, a cross-reconstruction objective that keeps
//! strong view-private components out of the shared estimate, a synthetic
//! multiview benchmark generator, clustering/classification evaluation, and
//! a reproducible experiment sweep harness.

pub mod dataset;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod linear_cca;
pub mod nn;
pub mod numerics;
pub mod objectives;
pub mod synthgen;
pub mod trainer;

pub use error::{Error, Result};
pub use numerics::Matrix;

/// splitmix64 step, used to derive independent RNG streams from one seed.
///
/// Every subsystem that needs randomness (network init, batch shuffling,
/// k-means restarts, ...) seeds its own ChaCha generator from a chain of
/// these mixes, so adding or removing one consumer never shifts another
/// consumer's stream.
pub fn mix_seed(state: u64, salt: u64) -> u64 {
    let mut z = state
        .wrapping_add(0x9e3779b97f4a7c15)
        .wrapping_add(salt.wrapping_mul(0xbf58476d1ce4e5b9));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}
