//! Policy heads over [`Mlp`] trunks: a diagonal Gaussian with a bounded
//! mean and state-independent learnable log-std, and a deterministic
//! bounded-action head.
//!
//! Density convention: the log-density reported for a sampled action is the
//! plain diagonal-Gaussian log-density evaluated at the emitted (clipped)
//! action; no squashing correction is applied.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::mlp::{AdamState, ForwardCache, Gradients, Mlp, OptimConfig};
use super::{NeuralError, Result};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

const LN_2PI: f64 = 1.8378770664093453;

/// Per-dimension action interval.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionBounds {
    pub low: Vec<f64>,
    pub high: Vec<f64>,
}

impl ActionBounds {
    pub fn new(low: Vec<f64>, high: Vec<f64>) -> Result<Self> {
        if low.len() != high.len() {
            return Err(NeuralError::InvalidConfig("action bound dimensions differ"));
        }
        for (l, h) in low.iter().zip(&high) {
            if !(l.is_finite() && h.is_finite() && l < h) {
                return Err(NeuralError::InvalidConfig("action bounds must satisfy low < high"));
            }
        }
        Ok(Self { low, high })
    }

    pub fn symmetric(dim: usize, magnitude: f64) -> Self {
        Self { low: vec![-magnitude; dim], high: vec![magnitude; dim] }
    }

    pub fn dim(&self) -> usize {
        self.low.len()
    }

    pub fn clamp(&self, v: &[f64]) -> Vec<f64> {
        v.iter()
            .zip(self.low.iter().zip(&self.high))
            .map(|(x, (l, h))| x.clamp(*l, *h))
            .collect()
    }

    pub fn contains(&self, v: &[f64]) -> bool {
        v.len() == self.dim()
            && v.iter()
                .zip(self.low.iter().zip(&self.high))
                .all(|(x, (l, h))| *x >= *l && *x <= *h)
    }

    fn center(&self, d: usize) -> f64 {
        0.5 * (self.low[d] + self.high[d])
    }

    fn half_range(&self, d: usize) -> f64 {
        0.5 * (self.high[d] - self.low[d])
    }
}

fn squash(raw: &[f64], bounds: &ActionBounds) -> Vec<f64> {
    raw.iter()
        .enumerate()
        .map(|(d, r)| bounds.center(d) + bounds.half_range(d) * r.tanh())
        .collect()
}

/// Diagonal of the squashing Jacobian: d squashed / d raw.
fn squash_jacobian(raw: &[f64], bounds: &ActionBounds) -> Vec<f64> {
    raw.iter()
        .enumerate()
        .map(|(d, r)| {
            let t = r.tanh();
            bounds.half_range(d) * (1.0 - t * t)
        })
        .collect()
}

/// Stochastic policy: bounded mean from an MLP trunk, state-independent
/// learnable log-std clamped to `[LOG_STD_MIN, LOG_STD_MAX]`.
#[derive(Debug, Clone)]
pub struct GaussianPolicy {
    pub mean_net: Mlp,
    log_std: Vec<f64>,
    log_std_adam: AdamState,
    bounds: ActionBounds,
}

impl GaussianPolicy {
    pub fn new(state_dim: usize, hidden: &[usize], bounds: ActionBounds, rng: &mut impl Rng) -> Self {
        let mut widths = Vec::with_capacity(hidden.len() + 2);
        widths.push(state_dim);
        widths.extend_from_slice(hidden);
        widths.push(bounds.dim());
        let mut mean_net = Mlp::new(&widths, rng);
        // Start near the action-space center to keep early extraction
        // targets stable.
        mean_net.scale_output_layer(1e-2);
        let dim = bounds.dim();
        Self { mean_net, log_std: vec![0.0; dim], log_std_adam: AdamState::new(dim), bounds }
    }

    pub fn from_parts(
        mean_net: Mlp,
        log_std: Vec<f64>,
        log_std_adam: AdamState,
        bounds: ActionBounds,
    ) -> Result<Self> {
        if mean_net.output_dim() != bounds.dim() || log_std.len() != bounds.dim() {
            return Err(NeuralError::Corrupt("gaussian policy part sizes disagree"));
        }
        Ok(Self { mean_net, log_std, log_std_adam, bounds })
    }

    pub fn bounds(&self) -> &ActionBounds {
        &self.bounds
    }

    pub fn state_dim(&self) -> usize {
        self.mean_net.input_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.bounds.dim()
    }

    pub fn log_std(&self) -> &[f64] {
        &self.log_std
    }

    pub fn log_std_adam(&self) -> &AdamState {
        &self.log_std_adam
    }

    fn raw_mean(&self, state: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        let cache = self.mean_net.forward(state)?;
        Ok((cache.output().to_vec(), cache))
    }

    /// Bounded mean action (also the distribution mode).
    pub fn mean(&self, state: &[f64]) -> Result<Vec<f64>> {
        let (raw, _) = self.raw_mean(state)?;
        Ok(squash(&raw, &self.bounds))
    }

    /// Sample `clip(mean + sigma * z, bounds)` and report the diagonal
    /// Gaussian log-density at the emitted action.
    pub fn sample(&self, state: &[f64], rng: &mut impl Rng) -> Result<(Vec<f64>, f64)> {
        let (raw, _) = self.raw_mean(state)?;
        let mean = squash(&raw, &self.bounds);
        let mut pre = Vec::with_capacity(mean.len());
        for (d, m) in mean.iter().enumerate() {
            let z: f64 = StandardNormal.sample(rng);
            pre.push(m + self.log_std[d].exp() * z);
        }
        let action = self.bounds.clamp(&pre);
        let logp = self.log_density_at(&mean, &action);
        Ok((action, logp))
    }

    fn log_density_at(&self, mean: &[f64], action: &[f64]) -> f64 {
        let mut logp = 0.0;
        for d in 0..mean.len() {
            let sigma = self.log_std[d].exp();
            let z = (action[d] - mean[d]) / sigma;
            logp += -0.5 * z * z - self.log_std[d] - 0.5 * LN_2PI;
        }
        logp
    }

    /// Diagonal-Gaussian log-density of `action` under the policy at `state`.
    pub fn log_density(&self, state: &[f64], action: &[f64]) -> Result<f64> {
        if action.len() != self.action_dim() {
            return Err(NeuralError::DimensionMismatch { expected: self.action_dim(), got: action.len() });
        }
        let (raw, _) = self.raw_mean(state)?;
        let mean = squash(&raw, &self.bounds);
        Ok(self.log_density_at(&mean, action))
    }

    /// Log-density plus its exact gradient with respect to the mean-net
    /// parameters and the log-std vector.
    pub fn log_density_grad(&self, state: &[f64], action: &[f64]) -> Result<(f64, Gradients, Vec<f64>)> {
        if action.len() != self.action_dim() {
            return Err(NeuralError::DimensionMismatch { expected: self.action_dim(), got: action.len() });
        }
        let (raw, cache) = self.raw_mean(state)?;
        let mean = squash(&raw, &self.bounds);
        let jac = squash_jacobian(&raw, &self.bounds);
        let logp = self.log_density_at(&mean, action);

        let mut upstream = Vec::with_capacity(mean.len());
        let mut log_std_grad = Vec::with_capacity(mean.len());
        for d in 0..mean.len() {
            let sigma = self.log_std[d].exp();
            let diff = action[d] - mean[d];
            // d logp / d mean, then through the squashing nonlinearity.
            upstream.push(diff / (sigma * sigma) * jac[d]);
            // d logp / d log_std.
            log_std_grad.push(diff * diff / (sigma * sigma) - 1.0);
        }
        let grads = self.mean_net.backward(&cache, &upstream)?;
        Ok((logp, grads, log_std_grad))
    }

    /// One Adam step on the mean net and log-std, then re-clamp log-std.
    pub fn adam_step(&mut self, mean_grads: &[f64], log_std_grads: &[f64], cfg: &OptimConfig) -> Result<()> {
        self.mean_net.adam_step(mean_grads, cfg)?;
        self.log_std_adam.apply(&mut self.log_std, log_std_grads, cfg)?;
        for s in &mut self.log_std {
            *s = s.clamp(LOG_STD_MIN, LOG_STD_MAX);
        }
        Ok(())
    }

    /// All learnable parameters, mean net first then log-std.
    pub fn param_vector(&self) -> Vec<f64> {
        let mut v = self.mean_net.params().to_vec();
        v.extend_from_slice(&self.log_std);
        v
    }
}

/// Deterministic policy: a bounded action straight from the trunk.
#[derive(Debug, Clone)]
pub struct DeterministicPolicy {
    pub net: Mlp,
    bounds: ActionBounds,
}

impl DeterministicPolicy {
    pub fn new(state_dim: usize, hidden: &[usize], bounds: ActionBounds, rng: &mut impl Rng) -> Self {
        let mut widths = Vec::with_capacity(hidden.len() + 2);
        widths.push(state_dim);
        widths.extend_from_slice(hidden);
        widths.push(bounds.dim());
        let mut net = Mlp::new(&widths, rng);
        net.scale_output_layer(1e-2);
        Self { net, bounds }
    }

    pub fn from_parts(net: Mlp, bounds: ActionBounds) -> Result<Self> {
        if net.output_dim() != bounds.dim() {
            return Err(NeuralError::Corrupt("deterministic policy part sizes disagree"));
        }
        Ok(Self { net, bounds })
    }

    pub fn bounds(&self) -> &ActionBounds {
        &self.bounds
    }

    pub fn action_dim(&self) -> usize {
        self.bounds.dim()
    }

    pub fn action(&self, state: &[f64]) -> Result<Vec<f64>> {
        let raw = self.net.output(state)?;
        Ok(squash(&raw, &self.bounds))
    }

    /// Action with the forward cache and squash Jacobian needed to push an
    /// action-space gradient back into the trunk.
    pub fn action_with_cache(&self, state: &[f64]) -> Result<(Vec<f64>, Vec<f64>, ForwardCache)> {
        let cache = self.net.forward(state)?;
        let raw = cache.output().to_vec();
        let action = squash(&raw, &self.bounds);
        let jac = squash_jacobian(&raw, &self.bounds);
        Ok((action, jac, cache))
    }
}

/// A policy of either parameterization.
#[derive(Debug, Clone)]
pub enum Policy {
    Gaussian(GaussianPolicy),
    Deterministic(DeterministicPolicy),
}

impl Policy {
    /// Sampled action plus its log-density when the policy has one.
    pub fn sample(&self, state: &[f64], rng: &mut impl Rng) -> Result<(Vec<f64>, Option<f64>)> {
        match self {
            Policy::Gaussian(p) => {
                let (a, logp) = p.sample(state, rng)?;
                Ok((a, Some(logp)))
            }
            Policy::Deterministic(p) => Ok((p.action(state)?, None)),
        }
    }

    /// Distribution mode: the Gaussian mean, or the deterministic output.
    pub fn mode(&self, state: &[f64]) -> Result<Vec<f64>> {
        match self {
            Policy::Gaussian(p) => p.mean(state),
            Policy::Deterministic(p) => p.action(state),
        }
    }

    pub fn bounds(&self) -> &ActionBounds {
        match self {
            Policy::Gaussian(p) => p.bounds(),
            Policy::Deterministic(p) => p.bounds(),
        }
    }

    pub fn action_dim(&self) -> usize {
        self.bounds().dim()
    }

    pub fn param_vector(&self) -> Vec<f64> {
        match self {
            Policy::Gaussian(p) => p.param_vector(),
            Policy::Deterministic(p) => p.net.params().to_vec(),
        }
    }
}
