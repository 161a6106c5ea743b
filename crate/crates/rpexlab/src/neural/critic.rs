//! Q-function ensembles with Polyak-tracked target copies, and the scalar
//! state-value network.

use rand::Rng;

use crate::math::quantile;

use super::mlp::Mlp;
use super::{NeuralError, Result};

/// `n >= 1` Q-networks mapping (state, action) to a scalar, with matching
/// target copies and an ensemble quantile level used to aggregate target
/// predictions into a single robust estimate.
#[derive(Debug, Clone)]
pub struct CriticEnsemble {
    pub members: Vec<Mlp>,
    pub targets: Vec<Mlp>,
    quantile_level: f64,
    state_dim: usize,
    action_dim: usize,
}

impl CriticEnsemble {
    pub fn new(
        state_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        size: usize,
        quantile_level: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if size == 0 {
            return Err(NeuralError::InvalidConfig("ensemble size must be at least 1"));
        }
        if !(0.0..=1.0).contains(&quantile_level) {
            return Err(NeuralError::InvalidConfig("ensemble quantile level must lie in [0,1]"));
        }
        let mut widths = Vec::with_capacity(hidden.len() + 2);
        widths.push(state_dim + action_dim);
        widths.extend_from_slice(hidden);
        widths.push(1);
        let members: Vec<Mlp> = (0..size).map(|_| Mlp::new(&widths, rng)).collect();
        // Targets start as exact copies.
        let targets = members.clone();
        Ok(Self { members, targets, quantile_level, state_dim, action_dim })
    }

    pub fn from_parts(
        members: Vec<Mlp>,
        targets: Vec<Mlp>,
        quantile_level: f64,
        state_dim: usize,
        action_dim: usize,
    ) -> Result<Self> {
        if members.is_empty() || members.len() != targets.len() {
            return Err(NeuralError::Corrupt("critic ensemble member/target counts disagree"));
        }
        for net in members.iter().chain(&targets) {
            if net.input_dim() != state_dim + action_dim || net.output_dim() != 1 {
                return Err(NeuralError::Corrupt("critic network dimensions disagree"));
            }
        }
        Ok(Self { members, targets, quantile_level, state_dim, action_dim })
    }

    pub fn size(&self) -> usize {
        self.members.len()
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn quantile_level(&self) -> f64 {
        self.quantile_level
    }

    pub fn input(&self, state: &[f64], action: &[f64]) -> Result<Vec<f64>> {
        if state.len() != self.state_dim {
            return Err(NeuralError::DimensionMismatch { expected: self.state_dim, got: state.len() });
        }
        if action.len() != self.action_dim {
            return Err(NeuralError::DimensionMismatch { expected: self.action_dim, got: action.len() });
        }
        let mut v = Vec::with_capacity(state.len() + action.len());
        v.extend_from_slice(state);
        v.extend_from_slice(action);
        Ok(v)
    }

    /// Per-member online-network predictions.
    pub fn q_values(&self, state: &[f64], action: &[f64]) -> Result<Vec<f64>> {
        let input = self.input(state, action)?;
        self.members.iter().map(|m| m.scalar(&input)).collect()
    }

    /// Per-member target-network predictions.
    pub fn q_target_values(&self, state: &[f64], action: &[f64]) -> Result<Vec<f64>> {
        let input = self.input(state, action)?;
        self.targets.iter().map(|m| m.scalar(&input)).collect()
    }

    /// Quantile aggregate over target predictions. With a single member
    /// this is just that member's prediction.
    pub fn q_target_aggregate(&self, state: &[f64], action: &[f64]) -> Result<f64> {
        let values = self.q_target_values(state, action)?;
        Ok(quantile(&values, self.quantile_level)?)
    }

    /// Mean over the online members and the gradient of that mean with
    /// respect to the state and action inputs.
    pub fn mean_q_with_input_grad(&self, state: &[f64], action: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
        let input = self.input(state, action)?;
        let mut q_sum = 0.0;
        let mut grad = vec![0.0; input.len()];
        for member in &self.members {
            let cache = member.forward(&input)?;
            q_sum += cache.output()[0];
            let g = member.backward(&cache, &[1.0])?;
            for (acc, gi) in grad.iter_mut().zip(&g.input) {
                *acc += gi;
            }
        }
        let n = self.members.len() as f64;
        for g in grad.iter_mut() {
            *g /= n;
        }
        let state_grad = grad[..self.state_dim].to_vec();
        let action_grad = grad[self.state_dim..].to_vec();
        Ok((q_sum / n, state_grad, action_grad))
    }

    /// Polyak-update every target toward its online member.
    pub fn polyak_update(&mut self, rho: f64) -> Result<()> {
        for (target, online) in self.targets.iter_mut().zip(&self.members) {
            target.polyak_from(online, rho)?;
        }
        Ok(())
    }

    /// Concatenated online-member parameters.
    pub fn param_vector(&self) -> Vec<f64> {
        let mut v = Vec::new();
        for m in &self.members {
            v.extend_from_slice(m.params());
        }
        v
    }
}

/// State-value network: an MLP mapping state to a scalar.
#[derive(Debug, Clone)]
pub struct ValueNet {
    pub net: Mlp,
}

impl ValueNet {
    pub fn new(state_dim: usize, hidden: &[usize], rng: &mut impl Rng) -> Self {
        let mut widths = Vec::with_capacity(hidden.len() + 2);
        widths.push(state_dim);
        widths.extend_from_slice(hidden);
        widths.push(1);
        Self { net: Mlp::new(&widths, rng) }
    }

    pub fn value(&self, state: &[f64]) -> Result<f64> {
        self.net.scalar(state)
    }
}
