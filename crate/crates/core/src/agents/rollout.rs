//! Experience collection for each inner-loop algorithm.

use rand_distr::{Distribution, StandardNormal};

use crate::agents::config::PpoConfig;
use crate::agents::gae::TrajectoryBatch;
use crate::agents::ppo::{PpoLearner, STD_FLOOR};
use crate::agents::replay::ReplayStore;
use crate::envpack::{EnvBatch, StepResult};
use crate::error::{Error, Result};
use crate::ndmath::gaussian_log_prob;
use crate::seeds::Stream;

/// How actions are drawn while collecting experience.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RolloutMode {
    PpoStochastic,
    DdpgNoisy,
    SacStochastic,
}

/// Episode returns finished during a collection, in completion order.
pub type CompletedReturns = Vec<f64>;

fn check_rngs(env: &EnvBatch, rngs: &[Stream]) -> Result<()> {
    if rngs.len() != env.num_envs() {
        return Err(Error::contract(format!(
            "{} action streams for {} envs",
            rngs.len(),
            env.num_envs()
        )));
    }
    Ok(())
}

/// One standard-normal draw per action component, row `i` from stream `i`.
pub fn per_env_normals(rngs: &mut [Stream], act_dim: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(rngs.len() * act_dim);
    for rng in rngs.iter_mut() {
        for _ in 0..act_dim {
            out.push(StandardNormal.sample(rng));
        }
    }
    out
}

/// Collects `horizon` vectorized steps with Gaussian actions of fixed `std`.
pub fn collect_ppo(
    learner: &PpoLearner,
    env: &mut EnvBatch,
    rngs: &mut [Stream],
    horizon: usize,
    std: f64,
    cfg: &PpoConfig,
) -> Result<(TrajectoryBatch, CompletedReturns)> {
    check_rngs(env, rngs)?;
    let n = env.num_envs();
    let (od, ad) = (env.kind().obs_dim(), env.kind().act_dim());
    let std = std.max(STD_FLOOR);
    let stds = vec![std; ad];
    let mut traj = TrajectoryBatch::with_capacity(horizon, n, od, ad);
    let mut completed = Vec::new();
    for _ in 0..horizon {
        let obs = env.obs().to_vec();
        let means = learner.mean_actions(&obs, n);
        let values = learner.values(&obs, n);
        let eps = per_env_normals(rngs, ad);
        let actions: Vec<f64> = means.iter().zip(&eps).map(|(m, e)| m + std * e).collect();
        for i in 0..n {
            let r = i * ad..(i + 1) * ad;
            traj.log_probs.push(gaussian_log_prob(&actions[r.clone()], &means[r], &stds));
        }
        let step = env.step(&actions)?;
        let mut rewards: Vec<f64> = step.rewards.iter().map(|r| r * cfg.reward_scale).collect();
        if cfg.bootstrap_on_timeout {
            for i in 0..n {
                if let (true, false, Some(last)) = (step.dones[i], step.terminated[i], &step.terminal_obs[i]) {
                    rewards[i] += cfg.gamma * learner.values(last, 1)[0];
                }
            }
        }
        traj.obs.extend_from_slice(&obs);
        traj.actions.extend_from_slice(&actions);
        traj.values.extend_from_slice(&values);
        traj.rewards.extend_from_slice(&rewards);
        traj.dones.extend_from_slice(&step.dones);
        traj.horizon += 1;
        completed.extend(step.completed_episode_returns.iter().map(|(_, g)| *g));
    }
    traj.bootstrap_values = learner.values(env.obs(), n);
    Ok((traj, completed))
}

/// Steps every env once with `actions` and files the transitions into `replay`.
pub fn step_into_replay(env: &mut EnvBatch, replay: &mut ReplayStore, actions: &[f64]) -> Result<StepResult> {
    let n = env.num_envs();
    let (od, ad) = (env.kind().obs_dim(), env.kind().act_dim());
    let obs = env.obs().to_vec();
    let step = env.step(actions)?;
    for i in 0..n {
        let next = match &step.terminal_obs[i] {
            Some(last) => last.as_slice(),
            None => &step.next_obs[i * od..(i + 1) * od],
        };
        replay.push_step(
            i,
            &obs[i * od..(i + 1) * od],
            &actions[i * ad..(i + 1) * ad],
            step.rewards[i],
            next,
            step.dones[i],
            step.terminated[i],
        )?;
    }
    Ok(step)
}

/// Deterministic action plus per-env Gaussian noise of std `sigmas[i]`, clipped to `±bound`.
pub fn noisy_actions(mean: &[f64], sigmas: &[f64], rngs: &mut [Stream], bound: f64) -> Vec<f64> {
    let ad = mean.len() / sigmas.len();
    let eps = per_env_normals(rngs, ad);
    mean.iter()
        .zip(&eps)
        .enumerate()
        .map(|(k, (m, e))| (m + sigmas[k / ad] * e).clamp(-bound, bound))
        .collect()
}
