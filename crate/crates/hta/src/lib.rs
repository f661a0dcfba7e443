//! Homotopy training for fully connected neural networks.
//!
//! A small network is grown into a larger one (wider layers, extra layers)
//! and the two are blended as `H(x; t) = (1-t)*small(x) + t*large(x)`.
//! Training sweeps `t` from 0 to 1, warm-starting each stage from the
//! previous one, so the optimizer tracks a solution path instead of
//! starting the large model cold.
//!
//! Modules:
//! - [`linalg`]: dense matrices/vectors and a seeded counter RNG.
//! - [`network`]: MLPs, analytic backprop, squared-error and cross-entropy
//!   losses, plain-text serialization.
//! - [`homotopy`]: subnet views, blend evaluation, widen/add-layer growth
//!   operators, and the continuation training loop.
//! - [`optim`]: mini-batch SGD with constant/diminishing step schedules,
//!   restart sweeps, and convergence diagnostics.
//! - [`data`]: uniform and sparse grids, Van der Pol datasets, CSV I/O.
//! - [`experiments`]: paired HTA-vs-baseline harnesses and report emission.

pub mod data;
pub mod experiments;
pub mod homotopy;
pub mod linalg;
pub mod network;
pub mod optim;

use thiserror::Error;

/// Crate-wide error type. Shape mismatches on hot paths are treated as
/// programmer error and panic via `assert!`; everything user- or
/// file-driven comes through here.
#[derive(Debug, Error)]
pub enum HtaError {
    #[error("invalid config: {0}")]
    Config(String),

    #[error("growth op rejected: {0}")]
    Growth(String),

    #[error("training diverged at step {step}: loss = {loss}")]
    Diverged { step: usize, loss: f64 },

    #[error("dataset error: {0}")]
    Data(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, HtaError>;
