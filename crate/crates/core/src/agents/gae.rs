use crate::error::{Error, Result};

/// On-policy rollout of `horizon` steps over `num_envs` envs, stored time-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryBatch {
    pub horizon: usize,
    pub num_envs: usize,
    pub obs_dim: usize,
    pub act_dim: usize,
    /// `T×N×obs_dim`
    pub obs: Vec<f64>,
    /// `T×N×act_dim`
    pub actions: Vec<f64>,
    /// `T×N`
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub dones: Vec<bool>,
    /// `V(s_T)` per env.
    pub bootstrap_values: Vec<f64>,
}

impl TrajectoryBatch {
    pub fn with_capacity(horizon: usize, num_envs: usize, obs_dim: usize, act_dim: usize) -> Self {
        let n = horizon * num_envs;
        Self {
            horizon: 0,
            num_envs,
            obs_dim,
            act_dim,
            obs: Vec::with_capacity(n * obs_dim),
            actions: Vec::with_capacity(n * act_dim),
            log_probs: Vec::with_capacity(n),
            rewards: Vec::with_capacity(n),
            values: Vec::with_capacity(n),
            dones: Vec::with_capacity(n),
            bootstrap_values: vec![0.0; num_envs],
        }
    }

    pub fn len(&self) -> usize {
        self.horizon * self.num_envs
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        let ok = self.obs.len() == n * self.obs_dim
            && self.actions.len() == n * self.act_dim
            && self.log_probs.len() == n
            && self.rewards.len() == n
            && self.values.len() == n
            && self.dones.len() == n
            && self.bootstrap_values.len() == self.num_envs;
        if ok {
            Ok(())
        } else {
            Err(Error::contract(format!(
                "trajectory arrays disagree with horizon {} × envs {}",
                self.horizon, self.num_envs
            )))
        }
    }

    pub fn advantages(&self, gamma: f64, lambda: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        self.validate()?;
        gae_advantages(
            &self.rewards,
            &self.values,
            &self.dones,
            &self.bootstrap_values,
            self.num_envs,
            gamma,
            lambda,
        )
    }
}

/// Generalized advantage estimation over time-major `T×N` arrays.
///
/// Returns `(advantages, returns)` with `returns = advantages + values`.
pub fn gae_advantages(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap_values: &[f64],
    num_envs: usize,
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = num_envs;
    if n == 0 || !rewards.len().is_multiple_of(n) || values.len() != rewards.len() || dones.len() != rewards.len() || bootstrap_values.len() != n {
        return Err(Error::contract("gae: inconsistent array lengths"));
    }
    let t_len = rewards.len() / n;
    let mut adv = vec![0.0; rewards.len()];
    for e in 0..n {
        let mut next_adv = 0.0;
        for t in (0..t_len).rev() {
            let i = t * n + e;
            let next_v = if t + 1 == t_len {
                bootstrap_values[e]
            } else {
                values[i + n]
            };
            let live = if dones[i] { 0.0 } else { 1.0 };
            let delta = rewards[i] + gamma * next_v * live - values[i];
            next_adv = delta + gamma * lambda * live * next_adv;
            adv[i] = next_adv;
        }
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, ret))
}

/// Shifts and scales to zero mean, unit (population) standard deviation; std floored at 1e-8.
pub fn normalize(xs: &mut [f64]) {
    if xs.is_empty() {
        return;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-8);
    xs.iter_mut().for_each(|x| *x = (*x - mean) / std);
}
