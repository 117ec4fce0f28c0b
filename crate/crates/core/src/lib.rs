//! World–action model: a query-bottleneck transformer backbone whose depth,
//! video and action query groups condition three flow-matching experts,
//! together with a procedural 2D driving world used for data and scoring.

pub mod backbone;
pub mod config;
pub mod experts;
pub mod flowmatch;
pub mod metrics;
pub mod microworld;
pub mod model;
mod nn;
pub mod numerics;
pub mod optim;
pub mod trainer;

pub use config::{Heads, RunConfig};
pub use model::WorldActionModel;
pub use numerics::NumericsError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("input error: {0}")]
    Input(String),
    #[error("numeric failure at step {step} ({context})")]
    Numeric { step: usize, context: String },
    #[error("format error: {0}")]
    Format(String),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Deterministic seed derived from a sequence of integers (splitmix64 chain).
pub fn mix_seed(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x243f_6a88_85a3_08d3;
    for &p in parts {
        h = h.wrapping_add(p).wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = h;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        h = z ^ (z >> 31);
    }
    h
}
