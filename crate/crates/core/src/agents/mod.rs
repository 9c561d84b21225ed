//! Inner-loop actor-critic learners and the per-agent training state.

pub mod config;
pub mod critic;
pub mod ddpg;
pub mod exploration;
pub mod gae;
pub mod hypers;
pub mod network;
pub mod ppo;
pub mod replay;
pub mod rollout;
pub mod sac;
pub mod surrogate;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use config::{OffPolicyConfig, PpoConfig, SurrogateConfig};
pub use ddpg::DdpgLearner;
pub use exploration::{kl_adapt_lr, mixed_exploration_stds};
pub use gae::{gae_advantages, TrajectoryBatch};
pub use hypers::HyperSet;
pub use network::{Activation, Mlp, PolicyNetConfig};
pub use ppo::{ppo_update, PpoLearner, PpoStats};
pub use replay::{nstep_return, nstep_targets, ReplayBatch, ReplayStore};
pub use rollout::RolloutMode;
pub use sac::{OffPolicyStats, SacLearner};
pub use surrogate::SurrogateLearner;

use crate::envpack::{EnvBatch, EnvKind, EnvName};
use crate::error::{Error, Result};
use crate::ndmath::ParamTensor;
use crate::seeds::{seed_stream, Stream};
use hypers::{ACTOR_LR, ACTOR_STD, SIGMA_MAX, SIGMA_MIN};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Ppo,
    Sac,
    Ddpg,
    /// Plain gradient ascent, only for the surrogate landscape.
    Surrogate,
}

impl Algorithm {
    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Ppo => "ppo",
            Algorithm::Sac => "sac",
            Algorithm::Ddpg => "ddpg",
            Algorithm::Surrogate => "surrogate",
        }
    }

    pub fn rollout_mode(self) -> Option<RolloutMode> {
        match self {
            Algorithm::Ppo => Some(RolloutMode::PpoStochastic),
            Algorithm::Sac => Some(RolloutMode::SacStochastic),
            Algorithm::Ddpg => Some(RolloutMode::DdpgNoisy),
            Algorithm::Surrogate => None,
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ppo" => Ok(Algorithm::Ppo),
            "sac" => Ok(Algorithm::Sac),
            "ddpg" => Ok(Algorithm::Ddpg),
            "surrogate" => Ok(Algorithm::Surrogate),
            other => Err(Error::config("algorithm", format!("unknown algorithm `{other}`"))),
        }
    }
}

/// Everything needed to build and train one agent.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentSpec {
    pub algorithm: Algorithm,
    pub env: EnvName,
    pub envs_per_agent: usize,
    pub ppo: PpoConfig,
    pub off_policy: OffPolicyConfig,
    pub surrogate: SurrogateConfig,
}

impl AgentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.envs_per_agent == 0 {
            return Err(Error::config("envs_per_agent", "must be at least 1"));
        }
        match (self.algorithm, self.env.kind()) {
            (Algorithm::Surrogate, None) => self.surrogate.validate(),
            (Algorithm::Surrogate, Some(_)) | (_, None) => Err(Error::config(
                "algorithm",
                format!("`{}` cannot run on env `{}`", self.algorithm, self.env),
            )),
            (Algorithm::Ppo, Some(_)) => self.ppo.validate(),
            (_, Some(_)) => self.off_policy.validate(),
        }
    }

    /// Vectorized steps collected per iteration.
    pub fn horizon(&self) -> usize {
        match self.algorithm {
            Algorithm::Ppo => self.ppo.horizon,
            Algorithm::Sac | Algorithm::Ddpg => self.off_policy.horizon,
            Algorithm::Surrogate => self.surrogate.horizon,
        }
    }

    /// Env steps credited to an agent per iteration.
    pub fn steps_per_iteration(&self) -> u64 {
        (self.horizon() * self.envs_per_agent) as u64
    }

    pub fn net_config(&self, kind: EnvKind) -> PolicyNetConfig {
        let (hidden, act) = match self.algorithm {
            Algorithm::Ppo => (&self.ppo.hidden_units, self.ppo.activation),
            _ => (&self.off_policy.hidden_units, self.off_policy.activation),
        };
        PolicyNetConfig {
            obs_dim: kind.obs_dim(),
            act_dim: kind.act_dim(),
            hidden_units: hidden.clone(),
            activation: act,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Learner {
    Ppo(PpoLearner),
    Sac(SacLearner),
    Ddpg(DdpgLearner),
    Surrogate(SurrogateLearner),
}

impl Learner {
    pub fn new(spec: &AgentSpec, rng: &mut Stream) -> Result<Self> {
        let Some(kind) = spec.env.kind() else {
            return Ok(Learner::Surrogate(SurrogateLearner::new(&spec.surrogate)));
        };
        let net = spec.net_config(kind);
        let bound = kind.action_bound();
        let n = spec.envs_per_agent;
        Ok(match spec.algorithm {
            Algorithm::Ppo => Learner::Ppo(PpoLearner::new(&net, &spec.ppo, rng)?),
            Algorithm::Sac => Learner::Sac(SacLearner::new(&net, &spec.off_policy, bound, n, rng)?),
            Algorithm::Ddpg => Learner::Ddpg(DdpgLearner::new(&net, &spec.off_policy, bound, n, rng)?),
            Algorithm::Surrogate => Learner::Surrogate(SurrogateLearner::new(&spec.surrogate)),
        })
    }

    pub fn algorithm(&self) -> Algorithm {
        match self {
            Learner::Ppo(_) => Algorithm::Ppo,
            Learner::Sac(_) => Algorithm::Sac,
            Learner::Ddpg(_) => Algorithm::Ddpg,
            Learner::Surrogate(_) => Algorithm::Surrogate,
        }
    }

    /// Every trainable and target tensor, in a fixed order.
    pub fn blocks(&self) -> Vec<&ParamTensor> {
        match self {
            Learner::Ppo(l) => l.blocks(),
            Learner::Sac(l) => l.blocks(),
            Learner::Ddpg(l) => l.blocks(),
            Learner::Surrogate(l) => l.blocks(),
        }
    }

    /// Copy of the parameters and optimizer state with an empty replay store.
    pub fn inherit(&self) -> Self {
        match self {
            Learner::Ppo(l) => Learner::Ppo(l.clone()),
            Learner::Sac(l) => Learner::Sac(SacLearner {
                actor: l.actor.clone(),
                critic: l.critic.clone(),
                actor_opt: l.actor_opt.clone(),
                log_alpha: l.log_alpha.clone(),
                alpha_opt: l.alpha_opt.clone(),
                replay: l.replay.cleared(),
                action_bound: l.action_bound,
            }),
            Learner::Ddpg(l) => Learner::Ddpg(DdpgLearner {
                actor: l.actor.clone(),
                actor_target: l.actor_target.clone(),
                critic: l.critic.clone(),
                actor_opt: l.actor_opt.clone(),
                replay: l.replay.cleared(),
                action_bound: l.action_bound,
            }),
            Learner::Surrogate(l) => Learner::Surrogate(l.clone()),
        }
    }

    /// Exploration-free actions.
    pub fn greedy_actions(&self, obs: &[f64], rows: usize) -> Vec<f64> {
        match self {
            Learner::Ppo(l) => l.mean_actions(obs, rows),
            Learner::Sac(l) => l.mean_actions(obs, rows),
            Learner::Ddpg(l) => l.mean_actions(obs, rows),
            Learner::Surrogate(_) => Vec::new(),
        }
    }
}

/// Short hex digest of a parameter list, stable across platforms.
pub fn param_digest<'a>(blocks: impl IntoIterator<Item = &'a ParamTensor>) -> String {
    let mut h = Sha256::new();
    for b in blocks {
        for d in b.shape() {
            h.update((*d as u64).to_le_bytes());
        }
        for v in b.values() {
            h.update(v.to_bits().to_le_bytes());
        }
    }
    h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// One population member.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub id: usize,
    pub learner: Learner,
    pub hypers: HyperSet,
    /// Episode returns completed since the last evolution event.
    pub fitness_window: Vec<f64>,
    pub fitness_at_last_event: Option<f64>,
    pub env_steps: u64,
    pub env: Option<EnvBatch>,
    pub action_rngs: Vec<Stream>,
    pub update_rng: Stream,
}

/// What one training iteration produced.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct IterationReport {
    pub completed_episodes: usize,
    pub ppo: Option<PpoStats>,
    pub off_policy: Option<OffPolicyStats>,
}

impl AgentState {
    pub fn new(spec: &AgentSpec, id: usize, master_seed: u64, hypers: HyperSet) -> Result<Self> {
        spec.validate()?;
        let aid = id as u64;
        let mut init = seed_stream(master_seed, aid, 0, "init");
        let learner = Learner::new(spec, &mut init)?;
        let n = spec.envs_per_agent as u64;
        let env = match spec.env.kind() {
            Some(kind) => Some(EnvBatch::new(
                kind,
                (0..n).map(|i| seed_stream(master_seed, aid, i, "reset")).collect(),
            )?),
            None => None,
        };
        Ok(Self {
            id,
            learner,
            hypers,
            fitness_window: Vec::new(),
            fitness_at_last_event: None,
            env_steps: 0,
            env,
            action_rngs: (0..n).map(|i| seed_stream(master_seed, aid, i, "action")).collect(),
            update_rng: seed_stream(master_seed, aid, 0, "update"),
        })
    }

    pub fn digest(&self) -> String {
        param_digest(self.learner.blocks())
    }

    /// Mean of the current fitness window, `None` when empty.
    pub fn window_mean(&self) -> Option<f64> {
        if self.fitness_window.is_empty() {
            None
        } else {
            Some(self.fitness_window.iter().sum::<f64>() / self.fitness_window.len() as f64)
        }
    }

    /// Learning rate reported in metrics.
    pub fn current_lr(&self) -> f64 {
        match &self.learner {
            Learner::Ppo(l) => l.current_lr,
            Learner::Sac(_) | Learner::Ddpg(_) => self.hypers.get(ACTOR_LR).unwrap_or(f64::NAN),
            Learner::Surrogate(l) => l.lr,
        }
    }

    /// Takes over a parent's learner with new hypers; keeps its own envs and streams.
    pub fn inherit_from(&mut self, parent: &AgentState, hypers: HyperSet, spec: &AgentSpec) {
        self.adopt(parent.learner.inherit(), hypers, spec);
    }

    /// Installs a learner copied from another agent.
    pub fn adopt(&mut self, learner: Learner, hypers: HyperSet, spec: &AgentSpec) {
        self.learner = learner;
        if let Learner::Ppo(l) = &mut self.learner {
            l.current_lr = spec.ppo.initial_lr;
        }
        self.hypers = hypers;
        self.fitness_window.clear();
    }

    /// Collects one horizon of experience and updates the learner.
    pub fn train_iteration(&mut self, spec: &AgentSpec) -> Result<IterationReport> {
        let mut report = IterationReport::default();
        let horizon = spec.horizon();
        let completed = match &mut self.learner {
            Learner::Ppo(l) => {
                let env = self.env.as_mut().ok_or_else(|| Error::contract("ppo agent without envs"))?;
                let std = self.hypers.get(ACTOR_STD)?;
                let (traj, done) = rollout::collect_ppo(l, env, &mut self.action_rngs, horizon, std, &spec.ppo)?;
                report.ppo = Some(ppo_update(l, &self.hypers, &traj, &spec.ppo, &mut self.update_rng)?);
                done
            }
            Learner::Sac(l) => {
                let env = self.env.as_mut().ok_or_else(|| Error::contract("sac agent without envs"))?;
                let cfg = &spec.off_policy;
                let mut done = Vec::new();
                for _ in 0..horizon {
                    let n = env.num_envs();
                    let eps = rollout::per_env_normals(&mut self.action_rngs, l.act_dim());
                    let actions = l.sample_actions(env.obs(), &eps);
                    debug_assert_eq!(actions.len(), n * l.act_dim());
                    let step = rollout::step_into_replay(env, &mut l.replay, &actions)?;
                    done.extend(step.completed_episode_returns.iter().map(|(_, g)| *g));
                    if l.replay.len() >= cfg.warmup.max(1) {
                        for _ in 0..cfg.updates_per_step {
                            report.off_policy = Some(l.update(&self.hypers, cfg, &mut self.update_rng)?);
                        }
                    }
                }
                done
            }
            Learner::Ddpg(l) => {
                let env = self.env.as_mut().ok_or_else(|| Error::contract("ddpg agent without envs"))?;
                let cfg = &spec.off_policy;
                let sigmas = mixed_exploration_stds(
                    env.num_envs(),
                    self.hypers.get(SIGMA_MIN)?,
                    self.hypers.get(SIGMA_MAX)?,
                )?;
                let mut done = Vec::new();
                for _ in 0..horizon {
                    let mean = l.mean_actions(env.obs(), env.num_envs());
                    let actions = rollout::noisy_actions(&mean, &sigmas, &mut self.action_rngs, l.action_bound);
                    let step = rollout::step_into_replay(env, &mut l.replay, &actions)?;
                    done.extend(step.completed_episode_returns.iter().map(|(_, g)| *g));
                    if l.replay.len() >= cfg.warmup.max(1) {
                        for _ in 0..cfg.updates_per_step {
                            report.off_policy = Some(l.update(&self.hypers, cfg, &mut self.update_rng)?);
                        }
                    }
                }
                done
            }
            Learner::Surrogate(l) => {
                let mut done = Vec::with_capacity(horizon);
                for _ in 0..horizon {
                    done.push(l.step(&self.hypers)?);
                }
                done
            }
        };
        self.env_steps += spec.steps_per_iteration();
        report.completed_episodes = completed.len();
        self.fitness_window.extend(completed);
        Ok(report)
    }

    /// Returns of `episodes` exploration-free episodes on a fresh env seeded from `seed`.
    pub fn evaluate(&self, spec: &AgentSpec, episodes: usize, seed: u64) -> Result<Vec<f64>> {
        if episodes == 0 {
            return Err(Error::contract("episodes must be ≥ 1"));
        }
        let kind = match (&self.learner, spec.env.kind()) {
            (Learner::Surrogate(l), _) => return Ok(vec![l.true_objective(); episodes]),
            (_, Some(kind)) => kind,
            (_, None) => return Err(Error::contract("evaluation needs a simulated env")),
        };
        let mut env = EnvBatch::new(kind, vec![seed_stream(seed, self.id as u64, 0, "eval")])?;
        let mut returns = Vec::with_capacity(episodes);
        while returns.len() < episodes {
            let actions = self.learner.greedy_actions(env.obs(), 1);
            let step = env.step(&actions)?;
            returns.extend(step.completed_episode_returns.iter().map(|(_, g)| *g));
        }
        Ok(returns)
    }
}
