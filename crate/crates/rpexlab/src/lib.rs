//! Desk-scale laboratory for robust offline-to-online reinforcement learning
//! under data corruption.
//!
//! The crate is organized as a stack of small, testable layers:
//!
//! * [`math`] — pure numerical kernels: expectile and Huber losses, selection
//!   weights (softmax / IPW-augmented), kurtosis and quantile statistics,
//!   state-normalization statistics.
//! * [`neural`] — from-scratch multilayer perceptrons with hand-coded
//!   backpropagation, Adam, Polyak target tracking, and Gaussian /
//!   deterministic policy heads.
//! * [`envs`] — the grid maze and point-mass environments plus offline
//!   dataset collection and a text dataset format.
//! * [`corruption`] — random element-wise attacks, the PGD adversarial
//!   dynamics attack, and statistical validators.
//! * [`replay`] — FIFO replay buffers and mixed offline/online sampling.
//! * [`agents`] — IQL/RIQL updates, AWR / alignment policy extraction,
//!   composite-policy action selection, and the offline and online
//!   training loops.
//! * [`harness`] — experiment orchestration: config files, seed sweeps,
//!   metrics CSVs, diagnostics, and manifests.

pub mod agents;
pub mod corruption;
pub mod envs;
pub mod harness;
pub mod math;
pub mod neural;
pub mod replay;
