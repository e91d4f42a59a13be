//! Reliable label propagation on noisy affinity graphs.
//!
//! Labels spread from a few seeds over a KNN graph patch by patch: a local
//! graph-convolutional predictor labels each patch, multi-view agreement and
//! a learned confidence network decide which vertices are trusted, and
//! low-confidence vertices are finally reported as out-of-class outliers.

pub mod baseline;
pub mod bench;
pub mod cli;
pub mod confidence;
pub mod config;
pub mod error;
pub mod graph;
pub mod model;
pub mod nn;
pub mod patch;
pub mod pipeline;
pub mod predictor;
pub mod proofs;
pub mod scheduler;

pub use error::{Error, Result};
