use serde::{Deserialize, Serialize};

use crate::agents::network::Activation;
use crate::error::{Error, Result};

/// PPO settings. Algorithmic constants follow the usual large-scale profile;
/// network and batch sizes are scaled down for small control tasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoConfig {
    pub hidden_units: Vec<usize>,
    pub activation: Activation,
    pub horizon: usize,
    pub minibatch_size: usize,
    pub epochs: usize,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_eps: f64,
    pub initial_lr: f64,
    /// Multiplicative LR adaptation gain K_η.
    pub lr_gain: f64,
    pub lr_min: f64,
    pub lr_max: f64,
    pub value_coeff: f64,
    /// Global gradient-norm clip; 0 disables.
    pub max_grad_norm: f64,
    /// Multiplier applied to rewards before advantage estimation.
    pub reward_scale: f64,
    /// Add `γ·V(s_final)` to the last reward of time-limit truncated episodes.
    pub bootstrap_on_timeout: bool,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            hidden_units: vec![64, 64],
            activation: Activation::Tanh,
            horizon: 32,
            minibatch_size: 64,
            epochs: 8,
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_eps: 0.2,
            initial_lr: 5e-4,
            lr_gain: 1.5,
            lr_min: 1e-6,
            lr_max: 1e-2,
            value_coeff: 0.5,
            max_grad_norm: 1.0,
            reward_scale: 1.0,
            bootstrap_on_timeout: true,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("ppo.horizon", self.horizon > 0),
            ("ppo.minibatch_size", self.minibatch_size > 0),
            ("ppo.epochs", self.epochs > 0),
            ("ppo.gamma", (0.0..=1.0).contains(&self.gamma)),
            ("ppo.gae_lambda", (0.0..=1.0).contains(&self.gae_lambda)),
            ("ppo.clip_eps", self.clip_eps > 0.0),
            ("ppo.initial_lr", self.initial_lr > 0.0),
            ("ppo.lr_gain", self.lr_gain > 1.0),
            ("ppo.lr_min", self.lr_min > 0.0 && self.lr_min <= self.lr_max),
            ("ppo.hidden_units", !self.hidden_units.is_empty() && !self.hidden_units.contains(&0)),
        ];
        first_failure(&checks)
    }
}

/// Shared settings for SAC and DDPG.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OffPolicyConfig {
    pub hidden_units: Vec<usize>,
    pub activation: Activation,
    pub horizon: usize,
    pub batch_size: usize,
    /// Gradient updates per vectorized env step.
    pub updates_per_step: usize,
    pub gamma: f64,
    pub n_step: usize,
    pub tau: f64,
    pub replay_capacity: usize,
    /// Stored transitions required before the first update.
    pub warmup: usize,
    pub initial_alpha: f64,
    pub reward_scale: f64,
    pub max_grad_norm: f64,
}

impl Default for OffPolicyConfig {
    fn default() -> Self {
        Self {
            hidden_units: vec![64, 64],
            activation: Activation::Relu,
            horizon: 1,
            batch_size: 128,
            updates_per_step: 4,
            gamma: 0.99,
            n_step: 3,
            tau: 5e-2,
            replay_capacity: 1_000_000,
            warmup: 1000,
            initial_alpha: 1.0,
            reward_scale: 1.0,
            max_grad_norm: 0.0,
        }
    }
}

impl OffPolicyConfig {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("offpolicy.horizon", self.horizon > 0),
            ("offpolicy.batch_size", self.batch_size > 0),
            ("offpolicy.updates_per_step", self.updates_per_step > 0),
            ("offpolicy.gamma", (0.0..=1.0).contains(&self.gamma)),
            ("offpolicy.n_step", self.n_step > 0),
            ("offpolicy.tau", (0.0..=1.0).contains(&self.tau)),
            ("offpolicy.replay_capacity", self.replay_capacity > 0),
            ("offpolicy.initial_alpha", self.initial_alpha > 0.0),
            ("offpolicy.hidden_units", !self.hidden_units.is_empty() && !self.hidden_units.contains(&0)),
        ];
        first_failure(&checks)
    }
}

/// Gradient ascent on the surrogate landscape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SurrogateConfig {
    pub lr: f64,
    pub theta_init: [f64; 2],
    /// Gradient steps per iteration; each counts as one finished episode.
    pub horizon: usize,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        Self {
            lr: 0.05,
            theta_init: [0.9, 0.9],
            horizon: 1,
        }
    }
}

impl SurrogateConfig {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("surrogate.lr", self.lr > 0.0),
            ("surrogate.horizon", self.horizon > 0),
            ("surrogate.theta_init", self.theta_init.iter().all(|t| t.is_finite())),
        ];
        first_failure(&checks)
    }
}

fn first_failure(checks: &[(&str, bool)]) -> Result<()> {
    match checks.iter().find(|(_, ok)| !ok) {
        Some((key, _)) => Err(Error::config(*key, "value out of range")),
        None => Ok(()),
    }
}
