use std::collections::VecDeque;

use rand::Rng;

use crate::error::{Error, Result};
use crate::seeds::Stream;

/// One not-yet-complete step waiting for its n-step segment to fill.
#[derive(Debug, Clone, PartialEq)]
pub struct PendingStep {
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
}

/// Ring buffer of n-step transition segments.
///
/// Each stored segment starts at `s_t`, carries up to `n` rewards and the
/// observation reached after them. Segments are cut at episode ends: a cut by a
/// true terminal suppresses bootstrapping, a cut by the time limit bootstraps
/// from the final observation with the shortened discount `γ^k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayStore {
    pub capacity: usize,
    pub obs_dim: usize,
    pub act_dim: usize,
    pub n_step: usize,
    pub obs: Vec<f64>,
    pub actions: Vec<f64>,
    /// `capacity × n_step`, zero padded past `reward_counts`.
    pub rewards: Vec<f64>,
    pub reward_counts: Vec<u32>,
    pub next_obs: Vec<f64>,
    pub terminal: Vec<bool>,
    pub cursor: usize,
    pub fill: usize,
    /// Per-env queue of steps whose segments are still open.
    pub pending: Vec<VecDeque<PendingStep>>,
}

/// Minibatch drawn from a [`ReplayStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBatch {
    pub size: usize,
    pub obs: Vec<f64>,
    pub actions: Vec<f64>,
    pub rewards: Vec<f64>,
    pub reward_counts: Vec<u32>,
    pub next_obs: Vec<f64>,
    pub terminal: Vec<bool>,
    pub n_step: usize,
}

impl ReplayStore {
    pub fn new(capacity: usize, obs_dim: usize, act_dim: usize, n_step: usize, num_envs: usize) -> Result<Self> {
        if capacity == 0 || n_step == 0 {
            return Err(Error::contract("replay capacity and n_step must be positive"));
        }
        Ok(Self {
            capacity,
            obs_dim,
            act_dim,
            n_step,
            obs: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            reward_counts: Vec::new(),
            next_obs: Vec::new(),
            terminal: Vec::new(),
            cursor: 0,
            fill: 0,
            pending: vec![VecDeque::new(); num_envs],
        })
    }

    /// An empty store with the same geometry.
    pub fn cleared(&self) -> Self {
        Self::new(self.capacity, self.obs_dim, self.act_dim, self.n_step, self.pending.len())
            .expect("geometry already validated")
    }

    pub fn len(&self) -> usize {
        self.fill
    }

    pub fn is_empty(&self) -> bool {
        self.fill == 0
    }

    fn write(&mut self, obs: &[f64], action: &[f64], rewards: &[f64], next_obs: &[f64], terminal: bool) {
        let (od, ad, n) = (self.obs_dim, self.act_dim, self.n_step);
        let mut padded = vec![0.0; n];
        padded[..rewards.len()].copy_from_slice(rewards);
        if self.fill < self.capacity && self.cursor == self.fill {
            self.obs.extend_from_slice(obs);
            self.actions.extend_from_slice(action);
            self.rewards.extend_from_slice(&padded);
            self.reward_counts.push(rewards.len() as u32);
            self.next_obs.extend_from_slice(next_obs);
            self.terminal.push(terminal);
        } else {
            let c = self.cursor;
            self.obs[c * od..(c + 1) * od].copy_from_slice(obs);
            self.actions[c * ad..(c + 1) * ad].copy_from_slice(action);
            self.rewards[c * n..(c + 1) * n].copy_from_slice(&padded);
            self.reward_counts[c] = rewards.len() as u32;
            self.next_obs[c * od..(c + 1) * od].copy_from_slice(next_obs);
            self.terminal[c] = terminal;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
        self.fill = (self.fill + 1).min(self.capacity);
    }

    /// Records one step of env `env`. `next_obs` is the observation reached by
    /// this step (the terminal observation when `done`).
    pub fn push_step(
        &mut self,
        env: usize,
        obs: &[f64],
        action: &[f64],
        reward: f64,
        next_obs: &[f64],
        done: bool,
        terminated: bool,
    ) -> Result<()> {
        if obs.len() != self.obs_dim || next_obs.len() != self.obs_dim || action.len() != self.act_dim {
            return Err(Error::Dimension {
                op: "replay push",
                lhs: vec![self.obs_dim, self.act_dim],
                rhs: vec![obs.len(), action.len()],
            });
        }
        if env >= self.pending.len() {
            return Err(Error::contract(format!("replay: env {env} out of range")));
        }
        self.pending[env].push_back(PendingStep {
            obs: obs.to_vec(),
            action: action.to_vec(),
            reward,
        });
        if done {
            let queue: Vec<PendingStep> = self.pending[env].drain(..).collect();
            for start in 0..queue.len() {
                let rewards: Vec<f64> = queue[start..].iter().map(|p| p.reward).collect();
                self.write(&queue[start].obs, &queue[start].action, &rewards, next_obs, terminated);
            }
        } else if self.pending[env].len() == self.n_step {
            let head = self.pending[env].pop_front().expect("queue is full");
            let mut rewards = vec![head.reward];
            rewards.extend(self.pending[env].iter().map(|p| p.reward));
            self.write(&head.obs, &head.action, &rewards, next_obs, false);
        }
        Ok(())
    }

    /// Uniform sample with replacement over the filled region.
    pub fn sample(&self, batch_size: usize, rng: &mut Stream) -> Result<ReplayBatch> {
        if self.fill == 0 {
            return Err(Error::contract("cannot sample from an empty replay store"));
        }
        let (od, ad, n) = (self.obs_dim, self.act_dim, self.n_step);
        let mut b = ReplayBatch {
            size: batch_size,
            obs: Vec::with_capacity(batch_size * od),
            actions: Vec::with_capacity(batch_size * ad),
            rewards: Vec::with_capacity(batch_size * n),
            reward_counts: Vec::with_capacity(batch_size),
            next_obs: Vec::with_capacity(batch_size * od),
            terminal: Vec::with_capacity(batch_size),
            n_step: n,
        };
        for _ in 0..batch_size {
            let i = rng.random_range(0..self.fill);
            b.obs.extend_from_slice(&self.obs[i * od..(i + 1) * od]);
            b.actions.extend_from_slice(&self.actions[i * ad..(i + 1) * ad]);
            b.rewards.extend_from_slice(&self.rewards[i * n..(i + 1) * n]);
            b.reward_counts.push(self.reward_counts[i]);
            b.next_obs.extend_from_slice(&self.next_obs[i * od..(i + 1) * od]);
            b.terminal.push(self.terminal[i]);
        }
        Ok(b)
    }
}

/// Discounted n-step return of one segment.
///
/// `G = Σ_{k<K} γ^k r_k + γ^K · bootstrap · (1 − terminal)` with `K = rewards.len()`.
pub fn nstep_return(rewards: &[f64], gamma: f64, bootstrap: f64, terminal: bool) -> f64 {
    let mut g = 0.0;
    let mut disc = 1.0;
    for r in rewards {
        g += disc * r;
        disc *= gamma;
    }
    if !terminal {
        g += disc * bootstrap;
    }
    g
}

/// n-step targets for a sampled batch given the bootstrap value at each segment's end.
pub fn nstep_targets(batch: &ReplayBatch, gamma: f64, bootstrap: &[f64]) -> Vec<f64> {
    let n = batch.n_step;
    (0..batch.size)
        .map(|i| {
            let k = batch.reward_counts[i] as usize;
            nstep_return(&batch.rewards[i * n..i * n + k], gamma, bootstrap[i], batch.terminal[i])
        })
        .collect()
}
