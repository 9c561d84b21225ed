//! Vectorized control tasks and the synthetic surrogate landscape.

pub mod pendulum;
pub mod pointmass;
mod surrogate;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds::Stream;

pub use surrogate::{surrogate_gradient, surrogate_landscape_eval};

/// Environment names accepted in configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvName {
    Pendulum,
    Pointmass,
    Surrogate,
}

impl EnvName {
    pub fn as_str(self) -> &'static str {
        match self {
            EnvName::Pendulum => "pendulum",
            EnvName::Pointmass => "pointmass",
            EnvName::Surrogate => "surrogate",
        }
    }

    /// The stepped task behind this name; `None` for the surrogate landscape.
    pub fn kind(self) -> Option<EnvKind> {
        match self {
            EnvName::Pendulum => Some(EnvKind::Pendulum),
            EnvName::Pointmass => Some(EnvKind::Pointmass),
            EnvName::Surrogate => None,
        }
    }
}

impl fmt::Display for EnvName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EnvName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pendulum" => Ok(EnvName::Pendulum),
            "pointmass" => Ok(EnvName::Pointmass),
            "surrogate" => Ok(EnvName::Surrogate),
            other => Err(Error::config(
                "env",
                format!("unknown environment `{other}` (expected pendulum, pointmass or surrogate)"),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvKind {
    Pendulum,
    Pointmass,
}

impl EnvKind {
    pub fn obs_dim(self) -> usize {
        match self {
            EnvKind::Pendulum => 3,
            EnvKind::Pointmass => 6,
        }
    }

    pub fn act_dim(self) -> usize {
        match self {
            EnvKind::Pendulum => 1,
            EnvKind::Pointmass => 2,
        }
    }

    pub fn state_dim(self) -> usize {
        match self {
            EnvKind::Pendulum => 2,
            EnvKind::Pointmass => pointmass::STATE_DIM,
        }
    }

    /// Symmetric action bound: actions are clipped to `[-bound, bound]`.
    pub fn action_bound(self) -> f64 {
        match self {
            EnvKind::Pendulum => pendulum::MAX_TORQUE,
            EnvKind::Pointmass => pointmass::MAX_ACCEL,
        }
    }

    pub fn max_episode_length(self) -> u32 {
        match self {
            EnvKind::Pendulum => pendulum::HORIZON,
            EnvKind::Pointmass => pointmass::HORIZON,
        }
    }

    fn observe(self, state: &[f64], obs: &mut [f64]) {
        match self {
            EnvKind::Pendulum => pendulum::observe(state, obs),
            EnvKind::Pointmass => pointmass::observe(state, obs),
        }
    }

    fn sample_initial(self, rng: &mut Stream, state: &mut [f64]) {
        match self {
            EnvKind::Pendulum => pendulum::sample_initial(rng, state),
            EnvKind::Pointmass => pointmass::sample_initial(rng, state),
        }
    }

    /// Advances one env row in place. Returns `(reward, terminated)`.
    fn advance(self, state: &mut [f64], action: &[f64]) -> (f64, bool) {
        let b = self.action_bound();
        match self {
            EnvKind::Pendulum => {
                let u = action[0].clamp(-b, b);
                let (t, d, r) = pendulum::pendulum_dynamics(state[0], state[1], u);
                state[0] = t;
                state[1] = d;
                (r, false)
            }
            EnvKind::Pointmass => {
                let a = [action[0].clamp(-b, b), action[1].clamp(-b, b)];
                pointmass::pointmass_dynamics(state, a)
            }
        }
    }
}

/// Row-major state of `num_envs` parallel copies of one task.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvBatchState {
    pub num_envs: usize,
    pub obs: Vec<f64>,
    pub internal_state: Vec<f64>,
    pub step_counts: Vec<u32>,
    pub episode_returns_accum: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    /// Observations after the step; rows of finished envs already hold the next episode's start.
    pub next_obs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    /// True-terminal flags (as opposed to time-limit truncation).
    pub terminated: Vec<bool>,
    /// Final observation of each finished episode, before the automatic reset.
    pub terminal_obs: Vec<Option<Vec<f64>>>,
    pub completed_episode_returns: Vec<(usize, f64)>,
}

/// A batch of environments with one reset stream per row.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvBatch {
    kind: EnvKind,
    pub state: EnvBatchState,
    rngs: Vec<Stream>,
}

impl EnvBatch {
    /// Builds a batch with one env per stream and resets every env.
    pub fn new(kind: EnvKind, rngs: Vec<Stream>) -> Result<Self> {
        let n = rngs.len();
        if n == 0 {
            return Err(Error::contract("an env batch needs at least one env"));
        }
        let state = EnvBatchState {
            num_envs: n,
            obs: vec![0.0; n * kind.obs_dim()],
            internal_state: vec![0.0; n * kind.state_dim()],
            step_counts: vec![0; n],
            episode_returns_accum: vec![0.0; n],
        };
        let mut batch = Self { kind, state, rngs };
        batch.reset(&vec![true; n])?;
        Ok(batch)
    }

    /// Rebuilds a batch from saved parts.
    pub fn from_parts(kind: EnvKind, state: EnvBatchState, rngs: Vec<Stream>) -> Result<Self> {
        let n = state.num_envs;
        let consistent = rngs.len() == n
            && state.obs.len() == n * kind.obs_dim()
            && state.internal_state.len() == n * kind.state_dim()
            && state.step_counts.len() == n
            && state.episode_returns_accum.len() == n;
        if !consistent {
            return Err(Error::contract("env batch parts have inconsistent lengths"));
        }
        Ok(Self { kind, state, rngs })
    }

    pub fn kind(&self) -> EnvKind {
        self.kind
    }

    pub fn num_envs(&self) -> usize {
        self.state.num_envs
    }

    pub fn obs(&self) -> &[f64] {
        &self.state.obs
    }

    pub fn rngs(&self) -> &[Stream] {
        &self.rngs
    }

    /// Sets an env's internal state directly and refreshes its observation.
    pub fn set_internal_state(&mut self, env: usize, values: &[f64]) -> Result<()> {
        let sd = self.kind.state_dim();
        if values.len() != sd || env >= self.state.num_envs {
            return Err(Error::contract(format!(
                "set_internal_state: env {env} with {} values",
                values.len()
            )));
        }
        self.state.internal_state[env * sd..(env + 1) * sd].copy_from_slice(values);
        let od = self.kind.obs_dim();
        let (st, ob) = (&self.state.internal_state, &mut self.state.obs);
        self.kind
            .observe(&st[env * sd..(env + 1) * sd], &mut ob[env * od..(env + 1) * od]);
        Ok(())
    }

    /// Draws fresh initial states for masked envs; others are untouched.
    pub fn reset(&mut self, mask: &[bool]) -> Result<()> {
        if mask.len() != self.state.num_envs {
            return Err(Error::contract(format!(
                "reset mask has {} entries for {} envs",
                mask.len(),
                self.state.num_envs
            )));
        }
        for (i, _) in mask.iter().enumerate().filter(|(_, m)| **m) {
            self.reset_row(i);
        }
        Ok(())
    }

    fn reset_row(&mut self, i: usize) {
        let (sd, od) = (self.kind.state_dim(), self.kind.obs_dim());
        let st = &mut self.state.internal_state[i * sd..(i + 1) * sd];
        self.kind.sample_initial(&mut self.rngs[i], st);
        self.kind.observe(st, &mut self.state.obs[i * od..(i + 1) * od]);
        self.state.step_counts[i] = 0;
        self.state.episode_returns_accum[i] = 0.0;
    }

    /// Steps every env with its row of `actions` (clipped to bounds), auto-resetting finished envs.
    pub fn step(&mut self, actions: &[f64]) -> Result<StepResult> {
        let n = self.state.num_envs;
        let (ad, sd, od) = (self.kind.act_dim(), self.kind.state_dim(), self.kind.obs_dim());
        if actions.len() != n * ad {
            return Err(Error::Dimension {
                op: "env step",
                lhs: vec![n, ad],
                rhs: vec![actions.len()],
            });
        }
        if let Some(pos) = actions.iter().position(|a| a.is_nan()) {
            return Err(Error::contract(format!(
                "NaN action for env {} (component {})",
                pos / ad,
                pos % ad
            )));
        }
        let horizon = self.kind.max_episode_length();
        let mut rewards = vec![0.0; n];
        let mut dones = vec![false; n];
        let mut terminated = vec![false; n];
        let mut terminal_obs = vec![None; n];
        let mut completed = Vec::new();
        for i in 0..n {
            let st = &mut self.state.internal_state[i * sd..(i + 1) * sd];
            let (r, term) = self.kind.advance(st, &actions[i * ad..(i + 1) * ad]);
            self.kind.observe(st, &mut self.state.obs[i * od..(i + 1) * od]);
            self.state.step_counts[i] += 1;
            self.state.episode_returns_accum[i] += r;
            rewards[i] = r;
            terminated[i] = term;
            if term || self.state.step_counts[i] >= horizon {
                dones[i] = true;
                terminal_obs[i] = Some(self.state.obs[i * od..(i + 1) * od].to_vec());
                completed.push((i, self.state.episode_returns_accum[i]));
                self.reset_row(i);
            }
        }
        Ok(StepResult {
            next_obs: self.state.obs.clone(),
            rewards,
            dones,
            terminated,
            terminal_obs,
            completed_episode_returns: completed,
        })
    }
}
