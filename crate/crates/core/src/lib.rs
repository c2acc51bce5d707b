//! Non-autoregressive coarse-to-fine captioning.

pub mod corpus;
pub mod decoding;
pub mod error;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod pipeline;
pub mod rng;
pub mod training;

pub use error::{Error, Result};
