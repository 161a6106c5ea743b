//! Desk-scale environments and offline dataset generation.
//!
//! Environments are value-like and cheap to clone; each rollout owns its
//! instance, and all dynamics are deterministic given the seed.

mod dataset;
mod gridmaze;
mod pointmass;

pub use dataset::{read_dataset, read_dataset_file, write_dataset, write_dataset_file};
pub use gridmaze::{GridMaze, GRIDMAZE_DIRECTIONS};
pub use pointmass::PointMass;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::neural::ActionBounds;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("invalid action: {0}")]
    InvalidAction(&'static str),
    #[error("invalid maze layout: {0}")]
    InvalidLayout(String),
    #[error("unknown environment id: {0}")]
    UnknownEnv(String),
    #[error("malformed dataset: {0}")]
    MalformedDataset(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, EnvError>;

/// One (s, a, r, s', done) record — the unit of datasets and streams.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub done: bool,
}

impl Transition {
    pub fn is_finite(&self) -> bool {
        self.state.iter().chain(&self.action).chain(&self.next_state).all(|x| x.is_finite())
            && self.reward.is_finite()
    }
}

/// Result of one environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub next_state: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

/// Dataset provenance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetMeta {
    pub env_id: String,
    pub behavior_id: String,
    pub seed: u64,
}

/// An ordered sequence of transitions plus collection metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionDataset {
    pub meta: DatasetMeta,
    pub transitions: Vec<Transition>,
}

impl TransitionDataset {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.transitions.first().map_or(0, |t| t.state.len())
    }

    pub fn action_dim(&self) -> usize {
        self.transitions.first().map_or(0, |t| t.action.len())
    }

    pub fn states(&self) -> Vec<Vec<f64>> {
        self.transitions.iter().map(|t| t.state.clone()).collect()
    }

    pub fn next_states(&self) -> Vec<Vec<f64>> {
        self.transitions.iter().map(|t| t.next_state.clone()).collect()
    }

    /// Population standard deviation per state dimension, floored at 1e-8.
    pub fn state_std(&self) -> Vec<f64> {
        per_dim_std(self.transitions.iter().map(|t| t.state.as_slice()))
    }

    pub fn action_std(&self) -> Vec<f64> {
        per_dim_std(self.transitions.iter().map(|t| t.action.as_slice()))
    }

    pub fn next_state_std(&self) -> Vec<f64> {
        per_dim_std(self.transitions.iter().map(|t| t.next_state.as_slice()))
    }
}

fn per_dim_std<'a>(rows: impl Iterator<Item = &'a [f64]> + Clone) -> Vec<f64> {
    let mut count = 0usize;
    let mut mean: Vec<f64> = Vec::new();
    for row in rows.clone() {
        if mean.is_empty() {
            mean = vec![0.0; row.len()];
        }
        for (m, x) in mean.iter_mut().zip(row) {
            *m += x;
        }
        count += 1;
    }
    if count == 0 {
        return mean;
    }
    for m in mean.iter_mut() {
        *m /= count as f64;
    }
    let mut var = vec![0.0; mean.len()];
    for row in rows {
        for ((v, x), m) in var.iter_mut().zip(row).zip(&mean) {
            let d = x - m;
            *v += d * d;
        }
    }
    var.iter().map(|v| (v / count as f64).sqrt().max(1e-8)).collect()
}

/// Common environment interface. State and step bookkeeping live inside the
/// instance; `reset` must be called before `step`.
pub trait Env {
    fn id(&self) -> &str;
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn action_bounds(&self) -> ActionBounds;
    fn horizon(&self) -> usize;
    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Vec<f64>;
    fn step(&mut self, action: &[f64], rng: &mut ChaCha8Rng) -> Result<Step>;
    /// Near-optimal scripted action for the given state.
    fn scripted_action(&self, state: &[f64]) -> Vec<f64>;
    /// Uniform random action.
    fn random_action(&self, rng: &mut ChaCha8Rng) -> Vec<f64>;
}

/// Either built-in environment, resolved by id.
#[derive(Debug, Clone)]
pub enum EnvKind {
    GridMaze(GridMaze),
    PointMass(PointMass),
}

impl EnvKind {
    pub fn from_id(id: &str) -> Result<Self> {
        match id {
            "gridmaze" => Ok(EnvKind::GridMaze(GridMaze::default_layout())),
            "pointmass" => Ok(EnvKind::PointMass(PointMass::new())),
            other => Err(EnvError::UnknownEnv(other.to_string())),
        }
    }

    fn inner(&self) -> &dyn Env {
        match self {
            EnvKind::GridMaze(e) => e,
            EnvKind::PointMass(e) => e,
        }
    }

    fn inner_mut(&mut self) -> &mut dyn Env {
        match self {
            EnvKind::GridMaze(e) => e,
            EnvKind::PointMass(e) => e,
        }
    }
}

impl Env for EnvKind {
    fn id(&self) -> &str {
        self.inner().id()
    }
    fn state_dim(&self) -> usize {
        self.inner().state_dim()
    }
    fn action_dim(&self) -> usize {
        self.inner().action_dim()
    }
    fn action_bounds(&self) -> ActionBounds {
        self.inner().action_bounds()
    }
    fn horizon(&self) -> usize {
        self.inner().horizon()
    }
    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.inner_mut().reset(rng)
    }
    fn step(&mut self, action: &[f64], rng: &mut ChaCha8Rng) -> Result<Step> {
        self.inner_mut().step(action, rng)
    }
    fn scripted_action(&self, state: &[f64]) -> Vec<f64> {
        self.inner().scripted_action(state)
    }
    fn random_action(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.inner().random_action(rng)
    }
}

/// Mixture behavior for dataset collection: follow the scripted policy with
/// probability `p_opt`, otherwise act uniformly at random.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BehaviorSpec {
    pub p_opt: f64,
}

impl BehaviorSpec {
    pub fn id(&self) -> String {
        format!("mixture_p{:03}", (self.p_opt * 100.0).round() as u32)
    }
}

/// Roll the mixture behavior until `n` transitions are stored. Episodes
/// reset on termination; states are recorded exactly as emitted by the
/// environment (pre-corruption).
pub fn collect_dataset(
    env: &mut impl Env,
    behavior: BehaviorSpec,
    n: usize,
    seed: u64,
    rng: &mut ChaCha8Rng,
) -> Result<TransitionDataset> {
    assert!(n > 0, "dataset size must be positive");
    let mut transitions = Vec::with_capacity(n);
    let mut state = env.reset(rng);
    while transitions.len() < n {
        let action = if rng.gen::<f64>() < behavior.p_opt {
            env.scripted_action(&state)
        } else {
            env.random_action(rng)
        };
        let step = env.step(&action, rng)?;
        transitions.push(Transition {
            state: state.clone(),
            action,
            reward: step.reward,
            next_state: step.next_state.clone(),
            done: step.done,
        });
        state = if step.done { env.reset(rng) } else { step.next_state };
    }
    Ok(TransitionDataset {
        meta: DatasetMeta { env_id: env.id().to_string(), behavior_id: behavior.id(), seed },
        transitions,
    })
}
