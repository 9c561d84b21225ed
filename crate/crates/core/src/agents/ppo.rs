//! Clipped-surrogate PPO with a fixed, state-independent action std.

use rand::seq::SliceRandom;

use crate::agents::config::PpoConfig;
use crate::agents::exploration::kl_adapt_lr;
use crate::agents::gae::{normalize, TrajectoryBatch};
use crate::agents::hypers::{HyperSet, ACTOR_STD, ENTROPY_COEFF, KL_THRESHOLD};
use crate::agents::network::{clip_grad_norm, Mlp, MlpVars, PolicyNetConfig};
use crate::error::{Error, Result};
use crate::ndmath::{gaussian_log_prob, AdamState, ParamTensor, Tape, Var, HALF_LN_2PI};
use crate::seeds::Stream;

/// Smallest action std used for sampling and densities.
pub const STD_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct PpoLearner {
    pub actor: Mlp,
    pub critic: Mlp,
    /// One optimizer over actor then critic blocks.
    pub optimizer: AdamState,
    pub current_lr: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PpoStats {
    pub approx_kl: f64,
    pub clip_frac: f64,
    pub entropy: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    /// Mean total loss of each epoch.
    pub epoch_losses: Vec<f64>,
    pub lr: f64,
}

/// Samples handed to [`ppo_loss`].
#[derive(Debug, Clone, PartialEq)]
pub struct PpoMinibatch {
    pub rows: usize,
    pub obs: Vec<f64>,
    pub actions: Vec<f64>,
    pub old_log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct PpoLossTerms {
    pub total: Var,
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
    pub clipped: usize,
    pub approx_kl: f64,
}

impl PpoLearner {
    pub fn new(net: &PolicyNetConfig, cfg: &PpoConfig, rng: &mut Stream) -> Result<Self> {
        net.validate()?;
        let actor = Mlp::new("actor", net.obs_dim, &net.hidden_units, net.act_dim, net.activation, 0.01, rng);
        let critic = Mlp::new("critic", net.obs_dim, &net.hidden_units, 1, net.activation, 1.0, rng);
        let sizes: Vec<usize> = actor
            .blocks()
            .iter()
            .chain(critic.blocks().iter())
            .map(|b| b.len())
            .collect();
        Ok(Self {
            actor,
            critic,
            optimizer: AdamState::new(sizes),
            current_lr: cfg.initial_lr,
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.actor.in_dim()
    }

    pub fn act_dim(&self) -> usize {
        self.actor.out_dim()
    }

    pub fn blocks(&self) -> Vec<&ParamTensor> {
        let mut b = self.actor.blocks();
        b.extend(self.critic.blocks());
        b
    }

    fn step_optimizer(&mut self, lr: f64, max_grad_norm: f64) -> Result<()> {
        let mut blocks = self.actor.blocks_mut();
        blocks.extend(self.critic.blocks_mut());
        clip_grad_norm(&mut blocks, max_grad_norm);
        self.optimizer.step(&mut blocks, lr)
    }

    pub fn mean_actions(&self, obs: &[f64], rows: usize) -> Vec<f64> {
        self.actor.predict(obs, rows)
    }

    pub fn values(&self, obs: &[f64], rows: usize) -> Vec<f64> {
        self.critic.predict(obs, rows)
    }
}

/// Entropy of a diagonal Gaussian with the same `std` in each of `dim` dimensions.
pub fn gaussian_entropy(std: f64, dim: usize) -> f64 {
    dim as f64 * (0.5 + HALF_LN_2PI + std.ln())
}

/// Builds the PPO objective on `tape`:
/// `−mean(min(ρA, clip(ρ)A)) + value_coeff·mean((V − R)²) − entropy_coeff·H`.
#[allow(clippy::too_many_arguments)]
pub fn ppo_loss(
    tape: &mut Tape,
    actor: &Mlp,
    actor_vars: &MlpVars,
    critic: &Mlp,
    critic_vars: &MlpVars,
    mb: &PpoMinibatch,
    std: f64,
    clip_eps: f64,
    entropy_coeff: f64,
    value_coeff: f64,
) -> Result<PpoLossTerms> {
    if mb.rows == 0 {
        return Err(Error::contract("ppo: empty minibatch"));
    }
    let od = actor.in_dim();
    let ad = actor.out_dim();
    let b = mb.rows;
    let obs = tape.constant_from(vec![b, od], mb.obs.clone())?;
    let actions = tape.constant_from(vec![b, ad], mb.actions.clone())?;
    let old_lp = tape.constant_from(vec![b], mb.old_log_probs.clone())?;
    let adv = tape.constant_from(vec![b], mb.advantages.clone())?;
    let ret = tape.constant_from(vec![b], mb.returns.clone())?;
    let std_v = tape.constant_scalar(std.max(STD_FLOOR));

    let mean = actor.forward(tape, actor_vars, obs)?;
    let new_lp = tape.gaussian_log_prob(actions, mean, std_v)?;
    let log_ratio = tape.sub(new_lp, old_lp)?;
    let ratio = tape.exp(log_ratio);
    let surr1 = tape.mul(ratio, adv)?;
    let clipped_ratio = tape.clamp(ratio, 1.0 - clip_eps, 1.0 + clip_eps)?;
    let surr2 = tape.mul(clipped_ratio, adv)?;
    let surr = tape.minimum(surr1, surr2)?;
    let surr_mean = tape.mean(surr);
    let policy = tape.neg(surr_mean);

    let v = critic.forward(tape, critic_vars, obs)?;
    let v = tape.reshape(v, vec![b])?;
    let err = tape.sub(v, ret)?;
    let sq = tape.square(err);
    let value = tape.mean(sq);

    let entropy = gaussian_entropy(std.max(STD_FLOOR), ad);
    let weighted_value = tape.scale(value, value_coeff);
    let total = tape.add(policy, weighted_value)?;
    let total = tape.offset(total, -entropy_coeff * entropy);

    let clipped = tape
        .value(ratio)
        .iter()
        .filter(|r| (**r - 1.0).abs() > clip_eps)
        .count();
    let approx_kl = tape
        .value(log_ratio)
        .iter()
        .map(|lr| -lr)
        .sum::<f64>()
        / b as f64;
    Ok(PpoLossTerms {
        total,
        policy: tape.scalar(policy),
        value: tape.scalar(value),
        entropy,
        clipped,
        approx_kl,
    })
}

/// Runs all epochs of minibatch updates on `traj`, then adapts the learning rate.
pub fn ppo_update(
    learner: &mut PpoLearner,
    hypers: &HyperSet,
    traj: &TrajectoryBatch,
    cfg: &PpoConfig,
    rng: &mut Stream,
) -> Result<PpoStats> {
    if traj.is_empty() {
        return Err(Error::contract("ppo: empty trajectory batch"));
    }
    let std = hypers.get(ACTOR_STD)?.max(STD_FLOOR);
    let entropy_coeff = hypers.get(ENTROPY_COEFF)?;
    let kl_threshold = hypers.get(KL_THRESHOLD)?;
    let (mut adv, ret) = traj.advantages(cfg.gamma, cfg.gae_lambda)?;
    normalize(&mut adv);

    let n = traj.len();
    let (od, ad) = (traj.obs_dim, traj.act_dim);
    let mut order: Vec<usize> = (0..n).collect();
    let mut stats = PpoStats::default();
    let mut clipped_total = 0usize;
    let mut seen = 0usize;
    let lr = learner.current_lr;
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.minibatch_size) {
            let mb = gather(traj, &adv, &ret, chunk, od, ad);
            let mut tape = Tape::new();
            let av = learner.actor.bind(&mut tape, true);
            let cv = learner.critic.bind(&mut tape, true);
            let terms = ppo_loss(
                &mut tape,
                &learner.actor,
                &av,
                &learner.critic,
                &cv,
                &mb,
                std,
                cfg.clip_eps,
                entropy_coeff,
                cfg.value_coeff,
            )?;
            let total = tape.scalar(terms.total);
            if !total.is_finite() {
                return Err(Error::Poisoned {
                    block: "ppo.loss".into(),
                });
            }
            let grads = tape.backward(terms.total)?;
            learner.actor.store_grads(&grads, &av)?;
            learner.critic.store_grads(&grads, &cv)?;
            learner.step_optimizer(lr, cfg.max_grad_norm)?;
            epoch_loss += total;
            batches += 1;
            clipped_total += terms.clipped;
            seen += mb.rows;
            stats.policy_loss = terms.policy;
            stats.value_loss = terms.value;
            stats.entropy = terms.entropy;
        }
        stats.epoch_losses.push(epoch_loss / batches as f64);
    }
    stats.clip_frac = clipped_total as f64 / seen as f64;

    let means = learner.actor.predict(&traj.obs, n);
    let stds = vec![std; ad];
    let kl_sum: f64 = (0..n)
        .map(|i| {
            let new_lp = gaussian_log_prob(&traj.actions[i * ad..(i + 1) * ad], &means[i * ad..(i + 1) * ad], &stds);
            traj.log_probs[i] - new_lp
        })
        .sum();
    stats.approx_kl = kl_sum / n as f64;
    learner.current_lr = kl_adapt_lr(lr, stats.approx_kl, kl_threshold, cfg.lr_gain, (cfg.lr_min, cfg.lr_max));
    stats.lr = learner.current_lr;
    Ok(stats)
}

fn gather(traj: &TrajectoryBatch, adv: &[f64], ret: &[f64], idx: &[usize], od: usize, ad: usize) -> PpoMinibatch {
    let mut mb = PpoMinibatch {
        rows: idx.len(),
        obs: Vec::with_capacity(idx.len() * od),
        actions: Vec::with_capacity(idx.len() * ad),
        old_log_probs: Vec::with_capacity(idx.len()),
        advantages: Vec::with_capacity(idx.len()),
        returns: Vec::with_capacity(idx.len()),
    };
    for &i in idx {
        mb.obs.extend_from_slice(&traj.obs[i * od..(i + 1) * od]);
        mb.actions.extend_from_slice(&traj.actions[i * ad..(i + 1) * ad]);
        mb.old_log_probs.push(traj.log_probs[i]);
        mb.advantages.push(adv[i]);
        mb.returns.push(ret[i]);
    }
    mb
}
