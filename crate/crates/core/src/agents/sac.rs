//! Soft actor-critic with a tanh-squashed Gaussian actor and learned temperature.

use std::f64::consts::LN_2;

use rand_distr::{Distribution, StandardNormal};

use crate::agents::config::OffPolicyConfig;
use crate::agents::critic::{concat_rows, TwinCritic};
use crate::agents::hypers::{HyperSet, ACTOR_LR, CRITIC_LR, TARGET_ENTROPY};
use crate::agents::network::{clip_grad_norm, Mlp, MlpVars, PolicyNetConfig};
use crate::agents::replay::{nstep_targets, ReplayBatch, ReplayStore};
use crate::error::{Error, Result};
use crate::ndmath::{softplus, AdamState, ParamTensor, Tape, Var, HALF_LN_2PI};
use crate::seeds::Stream;

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SacLearner {
    /// Outputs `[mean | log_std]` per row.
    pub actor: Mlp,
    pub critic: TwinCritic,
    pub actor_opt: AdamState,
    pub log_alpha: ParamTensor,
    pub alpha_opt: AdamState,
    pub replay: ReplayStore,
    pub action_bound: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct OffPolicyStats {
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub alpha: f64,
}

/// `log(1 − tanh²(u))` without cancellation.
pub fn tanh_log_det(u: f64) -> f64 {
    2.0 * (LN_2 - u - softplus(-2.0 * u))
}

/// Squashes pre-activation samples `u = mean + std·ε` and returns `(actions, log_probs)`.
///
/// `head` is the raw actor output `rows × 2·act_dim`; `eps` is `rows × act_dim`.
pub fn squashed_sample(head: &[f64], eps: &[f64], act_dim: usize, bound: f64) -> (Vec<f64>, Vec<f64>) {
    let rows = eps.len() / act_dim;
    let mut actions = Vec::with_capacity(eps.len());
    let mut log_probs = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = &head[r * 2 * act_dim..(r + 1) * 2 * act_dim];
        let mut lp = -(act_dim as f64) * bound.ln();
        for d in 0..act_dim {
            let log_std = row[act_dim + d].clamp(LOG_STD_MIN, LOG_STD_MAX);
            let e = eps[r * act_dim + d];
            let u = row[d] + log_std.exp() * e;
            lp += -0.5 * e * e - log_std - HALF_LN_2PI - tanh_log_det(u);
            actions.push(bound * u.tanh());
        }
        log_probs.push(lp);
    }
    (actions, log_probs)
}

/// Deterministic action: `bound·tanh(mean)`.
pub fn squashed_mean(head: &[f64], act_dim: usize, bound: f64) -> Vec<f64> {
    head.chunks(2 * act_dim)
        .flat_map(|row| row[..act_dim].iter().map(move |m| bound * m.tanh()))
        .collect()
}

/// Gradient of `−log α·(log π + H_target)` with respect to `log α`.
pub fn temperature_gradient(log_probs: &[f64], target_entropy: f64) -> f64 {
    -log_probs.iter().map(|lp| lp + target_entropy).sum::<f64>() / log_probs.len() as f64
}

pub struct SacActorLoss {
    pub loss: Var,
    pub log_probs: Vec<f64>,
}

/// `mean(α·log π(a|s) − min(Q₁, Q₂)(s, a))` with `a` reparameterised from `eps`.
#[allow(clippy::too_many_arguments)]
pub fn sac_actor_loss(
    tape: &mut Tape,
    actor: &Mlp,
    actor_vars: &MlpVars,
    critic: &TwinCritic,
    obs: &[f64],
    eps: &[f64],
    alpha: f64,
    bound: f64,
) -> Result<SacActorLoss> {
    let od = actor.in_dim();
    let ad = actor.out_dim() / 2;
    let b = obs.len() / od;
    let x = tape.constant_from(vec![b, od], obs.to_vec())?;
    let head = actor.forward(tape, actor_vars, x)?;
    let mean = tape.slice_cols(head, 0, ad)?;
    let raw_log_std = tape.slice_cols(head, ad, 2 * ad)?;
    let log_std = tape.clamp(raw_log_std, LOG_STD_MIN, LOG_STD_MAX)?;
    let std = tape.exp(log_std);
    let e = tape.constant_from(vec![b, ad], eps.to_vec())?;
    let noise = tape.mul(std, e)?;
    let u = tape.add(mean, noise)?;
    let gauss = tape.gaussian_log_prob(u, mean, std)?;
    // log(1 − tanh²u) = 2(ln 2 − u − softplus(−2u))
    let m2u = tape.scale(u, -2.0);
    let sp = tape.softplus(m2u);
    let t = tape.add(u, sp)?;
    let t = tape.neg(t);
    let t = tape.offset(t, LN_2);
    let t = tape.scale(t, 2.0);
    let log_det = tape.sum_cols(t)?;
    let lp = tape.sub(gauss, log_det)?;
    let lp = tape.offset(lp, -(ad as f64) * bound.ln());
    let squashed = tape.tanh(u);
    let action = tape.scale(squashed, bound);
    let q_in = tape.concat_cols(x, action)?;
    let v1 = critic.q1.bind(tape, false);
    let v2 = critic.q2.bind(tape, false);
    let q1 = critic.q1.forward(tape, &v1, q_in)?;
    let q2 = critic.q2.forward(tape, &v2, q_in)?;
    let q = tape.minimum(q1, q2)?;
    let q = tape.reshape(q, vec![b])?;
    let weighted = tape.scale(lp, alpha);
    let diff = tape.sub(weighted, q)?;
    let loss = tape.mean(diff);
    Ok(SacActorLoss {
        loss,
        log_probs: tape.value(lp).to_vec(),
    })
}

fn normal_matrix(rng: &mut Stream, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

impl SacLearner {
    pub fn new(net: &PolicyNetConfig, cfg: &OffPolicyConfig, bound: f64, num_envs: usize, rng: &mut Stream) -> Result<Self> {
        net.validate()?;
        let actor = Mlp::new("actor", net.obs_dim, &net.hidden_units, 2 * net.act_dim, net.activation, 1.0, rng);
        let critic = TwinCritic::new(net, rng);
        let actor_opt = AdamState::new(actor.blocks().iter().map(|b| b.len()));
        Ok(Self {
            actor,
            critic,
            actor_opt,
            log_alpha: ParamTensor::vector(vec![cfg.initial_alpha.ln()]).trainable(),
            alpha_opt: AdamState::new([1]),
            replay: ReplayStore::new(cfg.replay_capacity, net.obs_dim, net.act_dim, cfg.n_step, num_envs)?,
            action_bound: bound,
        })
    }

    pub fn act_dim(&self) -> usize {
        self.actor.out_dim() / 2
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.values()[0].exp()
    }

    pub fn blocks(&self) -> Vec<&ParamTensor> {
        let mut b = self.actor.blocks();
        b.extend(self.critic.blocks());
        b.push(&self.log_alpha);
        b
    }

    /// Stochastic actions for rollouts; `eps` rows come from each env's own stream.
    pub fn sample_actions(&self, obs: &[f64], eps: &[f64]) -> Vec<f64> {
        let ad = self.act_dim();
        let head = self.actor.predict(obs, eps.len() / ad);
        squashed_sample(&head, eps, ad, self.action_bound).0
    }

    pub fn mean_actions(&self, obs: &[f64], rows: usize) -> Vec<f64> {
        squashed_mean(&self.actor.predict(obs, rows), self.act_dim(), self.action_bound)
    }

    pub fn update(&mut self, hypers: &HyperSet, cfg: &OffPolicyConfig, rng: &mut Stream) -> Result<OffPolicyStats> {
        if self.replay.len() < cfg.warmup.max(1) {
            return Err(Error::contract(format!(
                "sac: replay holds {} transitions, warmup needs {}",
                self.replay.len(),
                cfg.warmup
            )));
        }
        let batch = self.replay.sample(cfg.batch_size, rng)?;
        self.update_on_batch(&batch, hypers, cfg, rng)
    }

    pub fn update_on_batch(
        &mut self,
        batch: &ReplayBatch,
        hypers: &HyperSet,
        cfg: &OffPolicyConfig,
        rng: &mut Stream,
    ) -> Result<OffPolicyStats> {
        let actor_lr = hypers.get(ACTOR_LR)?;
        let critic_lr = hypers.get(CRITIC_LR)?;
        let target_entropy = hypers.get(TARGET_ENTROPY)?;
        let (od, ad, b) = (self.actor.in_dim(), self.act_dim(), batch.size);
        let alpha = self.alpha();

        let next_head = self.actor.predict(&batch.next_obs, b);
        let eps_next = normal_matrix(rng, b * ad);
        let (next_act, next_lp) = squashed_sample(&next_head, &eps_next, ad, self.action_bound);
        let next_q = self.critic.target_min(&concat_rows(&batch.next_obs, od, &next_act, ad, b), b);
        let bootstrap: Vec<f64> = next_q.iter().zip(&next_lp).map(|(q, lp)| q - alpha * lp).collect();
        let targets = nstep_targets(&scaled(batch, cfg.reward_scale), cfg.gamma, &bootstrap);
        let obs_act = concat_rows(&batch.obs, od, &batch.actions, ad, b);
        let critic_loss = self.critic.update(&obs_act, b, &targets, critic_lr, cfg.max_grad_norm)?;

        let eps = normal_matrix(rng, b * ad);
        let mut tape = Tape::new();
        let av = self.actor.bind(&mut tape, true);
        let out = sac_actor_loss(&mut tape, &self.actor, &av, &self.critic, &batch.obs, &eps, alpha, self.action_bound)?;
        let actor_loss = tape.scalar(out.loss);
        if !actor_loss.is_finite() {
            return Err(Error::Poisoned {
                block: "actor.loss".into(),
            });
        }
        let grads = tape.backward(out.loss)?;
        self.actor.store_grads(&grads, &av)?;
        let mut blocks = self.actor.blocks_mut();
        clip_grad_norm(&mut blocks, cfg.max_grad_norm);
        self.actor_opt.step(&mut blocks, actor_lr)?;

        self.log_alpha.grad = Some(vec![temperature_gradient(&out.log_probs, target_entropy)]);
        self.alpha_opt.step(&mut [("log_alpha", &mut self.log_alpha)], actor_lr)?;

        self.critic.polyak(cfg.tau);
        Ok(OffPolicyStats {
            critic_loss,
            actor_loss,
            alpha: self.alpha(),
        })
    }
}

pub(crate) fn scaled(batch: &ReplayBatch, scale: f64) -> ReplayBatch {
    if scale == 1.0 {
        return batch.clone();
    }
    let mut b = batch.clone();
    b.rewards.iter_mut().for_each(|r| *r *= scale);
    b
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::hypers::HyperSet;
    use crate::agents::network::Activation;
    use crate::seeds::seed_stream;
    use rand::Rng;

    #[test]
    fn zero_pre_squash_maps_to_zero_with_zero_log_det() {
        assert!(tanh_log_det(0.0).abs() < 1e-15);
        let (a, _) = squashed_sample(&[0.0, 0.0], &[0.0], 1, 2.0);
        assert_eq!(a, vec![0.0]);
    }

    #[test]
    fn log_det_matches_naive_formula() {
        for u in [-3.0_f64, -0.7, 0.2, 1.5, 4.0] {
            let naive = (1.0 - u.tanh().powi(2)).ln();
            assert!((tanh_log_det(u) - naive).abs() < 1e-9);
        }
        // stable deep in saturation where the naive form underflows
        assert!(tanh_log_det(40.0).is_finite());
    }

    #[test]
    fn temperature_fixed_point() {
        let lps = [-1.5, -0.5, -1.0];
        // mean −log π = 1.0
        assert!(temperature_gradient(&lps, 1.0).abs() < 1e-15);
        assert!(temperature_gradient(&lps, 3.0) < 0.0);
    }

    #[test]
    fn tape_log_prob_matches_plain_sampler() {
        let net = PolicyNetConfig {
            obs_dim: 3,
            act_dim: 2,
            hidden_units: vec![6],
            activation: Activation::Tanh,
        };
        let mut rng = seed_stream(3, 0, 0, "init");
        let l = SacLearner::new(&net, &OffPolicyConfig::default(), 2.0, 1, &mut rng).unwrap();
        let obs: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
        let eps: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let head = l.actor.predict(&obs, 4);
        let (_, lp) = squashed_sample(&head, &eps, 2, 2.0);
        let mut tape = Tape::new();
        let av = l.actor.bind(&mut tape, true);
        let out = sac_actor_loss(&mut tape, &l.actor, &av, &l.critic, &obs, &eps, 0.2, 2.0).unwrap();
        for (a, b) in out.log_probs.iter().zip(&lp) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn critic_loss_decreases_on_frozen_batch() {
        let net = PolicyNetConfig {
            obs_dim: 3,
            act_dim: 1,
            hidden_units: vec![32, 32],
            activation: Activation::Relu,
        };
        let cfg = OffPolicyConfig {
            warmup: 64,
            batch_size: 64,
            ..OffPolicyConfig::default()
        };
        let mut rng = seed_stream(4, 0, 0, "init");
        let mut l = SacLearner::new(&net, &cfg, 2.0, 1, &mut rng).unwrap();
        for t in 0..200 {
            let o: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let n: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let a = [rng.random_range(-2.0..2.0)];
            l.replay.push_step(0, &o, &a, o[0] - 0.5 * a[0], &n, t % 50 == 49, false).unwrap();
        }
        let batch = l.replay.sample(64, &mut rng).unwrap();
        let hypers = HyperSet::from_pairs([(ACTOR_LR, 1e-3), (CRITIC_LR, 1e-3), (TARGET_ENTROPY, -1.0)]);
        let mut losses = Vec::new();
        for _ in 0..40 {
            losses.push(l.update_on_batch(&batch, &hypers, &cfg, &mut rng).unwrap().critic_loss);
        }
        let head: f64 = losses[..5].iter().sum();
        let tail: f64 = losses[35..].iter().sum();
        assert!(tail < 0.8 * head, "{losses:?}");
    }

    #[test]
    fn update_before_warmup_is_contract_error() {
        let net = PolicyNetConfig {
            obs_dim: 3,
            act_dim: 1,
            hidden_units: vec![4],
            activation: Activation::Relu,
        };
        let cfg = OffPolicyConfig::default();
        let mut rng = seed_stream(4, 0, 0, "init");
        let mut l = SacLearner::new(&net, &cfg, 2.0, 1, &mut rng).unwrap();
        let hypers = HyperSet::from_pairs([(ACTOR_LR, 1e-3), (CRITIC_LR, 1e-3), (TARGET_ENTROPY, -1.0)]);
        assert!(matches!(l.update(&hypers, &cfg, &mut rng), Err(Error::Contract(_))));
    }
}
