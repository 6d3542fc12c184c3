//! Deterministic simulator for asynchronous data-parallel gradient descent
//! against a central parameter server.
//!
//! The crate implements accumulated gradient normalization (AGN), where a
//! worker commits the *mean* of its `lambda` local updates, together with the
//! baselines it is usually compared against: DOWNPOUR, DOWNPOUR with
//! accumulated commits, asynchronous elastic averaging (AEASGD) and
//! staleness-damped DynSGD.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod data;
pub mod error;
pub mod grid;
pub mod metrics;
pub mod models;
pub mod optim;
pub mod params;
pub mod server;
pub mod sim;

pub use error::{Error, Result};
pub use params::ParamVector;

/// Derives an independent 64-bit seed for stream `tag`, index `index` of `seed`
/// (SplitMix64 finalizer over the combined words).
pub fn substream(seed: u64, tag: u64, index: u64) -> u64 {
    let mut z = seed
        ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03).rotate_left(17);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
