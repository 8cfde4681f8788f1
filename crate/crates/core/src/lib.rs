//! Cross-domain recommendation with embedding attribution alignment.
//!
//! Collaborative-filtering towers for a source and a target domain are
//! trained jointly with two alignment penalties on their embeddings:
//! per-attribution optimal transport between typical samples
//! ([`ot`], [`typical`]) and a Gaussian Wasserstein distance between
//! attribution graphs built from self-expressive coefficients
//! ([`subspace`]).

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod ndmath;
pub mod model;
pub mod ot;
pub mod pipeline;
pub mod subspace;
pub mod typical;

pub use error::{Error, Result};
