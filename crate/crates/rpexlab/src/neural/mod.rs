//! Minimal from-scratch function approximators: multilayer perceptrons with
//! hand-coded backpropagation, Adam optimization, Polyak target tracking,
//! and Gaussian / deterministic policy heads.
//!
//! Networks are single-writer objects: the training loop mutates them from
//! one logical thread; read-only snapshots may be shared for evaluation.

mod checkpoint;
mod critic;
mod mlp;
mod policy;

pub use checkpoint::{
    read_critic, read_f64_vec, read_magic, read_mlp, read_norm_stats, read_policy, read_u32,
    read_u64, read_u8, write_critic, write_f64_vec, write_magic, write_mlp, write_norm_stats,
    write_policy, write_u32, write_u64, write_u8, CHECKPOINT_MAGIC,
};
pub use critic::{CriticEnsemble, ValueNet};
pub use mlp::{AdamState, ForwardCache, Gradients, Mlp, OptimConfig};
pub use policy::{
    ActionBounds, DeterministicPolicy, GaussianPolicy, Policy, LOG_STD_MAX, LOG_STD_MIN,
};

use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("architecture mismatch between networks")]
    ArchitectureMismatch,
    #[error("non-finite gradient; update skipped")]
    NonFiniteGradient,
    #[error("stale forward cache: parameters changed since the forward pass")]
    StaleCache,
    #[error("invalid configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed checkpoint: {0}")]
    Corrupt(&'static str),
    #[error(transparent)]
    Math(#[from] crate::math::MathError),
}

pub type Result<T> = std::result::Result<T, NeuralError>;

/// Content hash of a parameter vector (hex SHA-256 over the little-endian
/// float bytes). Used to assert that frozen networks stay frozen.
pub fn param_hash(params: &[f64]) -> String {
    let mut hasher = Sha256::new();
    for p in params {
        hasher.update(p.to_le_bytes());
    }
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for byte in digest {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}
