//! Dictionary-anchored unsupervised machine translation.

pub mod baselines;
pub mod corpus;
pub mod dictionary;
pub mod eval;
mod error;
pub mod model;
pub mod noise;
pub mod pretraining;
pub mod rng;
pub mod subword;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
