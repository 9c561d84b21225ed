//! DDPG with twin critics, n-step targets and per-env mixed exploration noise.

use crate::agents::config::OffPolicyConfig;
use crate::agents::critic::{concat_rows, TwinCritic};
use crate::agents::hypers::{HyperSet, ACTOR_LR, CRITIC_LR};
use crate::agents::network::{clip_grad_norm, Mlp, MlpVars, PolicyNetConfig};
use crate::agents::replay::{nstep_targets, ReplayBatch, ReplayStore};
use crate::agents::sac::{scaled, OffPolicyStats};
use crate::error::{Error, Result};
use crate::ndmath::{AdamState, ParamTensor, Tape, Var};
use crate::seeds::Stream;

#[derive(Debug, Clone, PartialEq)]
pub struct DdpgLearner {
    pub actor: Mlp,
    pub actor_target: Mlp,
    pub critic: TwinCritic,
    pub actor_opt: AdamState,
    pub replay: ReplayStore,
    pub action_bound: f64,
}

/// `−mean(Q₁(s, bound·tanh(actor(s))))` with the critic held fixed.
pub fn ddpg_actor_loss(
    tape: &mut Tape,
    actor: &Mlp,
    actor_vars: &MlpVars,
    critic: &TwinCritic,
    obs: &[f64],
    bound: f64,
) -> Result<Var> {
    let od = actor.in_dim();
    let b = obs.len() / od;
    let x = tape.constant_from(vec![b, od], obs.to_vec())?;
    let pre = actor.forward(tape, actor_vars, x)?;
    let squashed = tape.tanh(pre);
    let action = tape.scale(squashed, bound);
    let q_in = tape.concat_cols(x, action)?;
    let v1 = critic.q1.bind(tape, false);
    let q = critic.q1.forward(tape, &v1, q_in)?;
    let m = tape.mean(q);
    Ok(tape.neg(m))
}

impl DdpgLearner {
    pub fn new(net: &PolicyNetConfig, cfg: &OffPolicyConfig, bound: f64, num_envs: usize, rng: &mut Stream) -> Result<Self> {
        net.validate()?;
        let actor = Mlp::new("actor", net.obs_dim, &net.hidden_units, net.act_dim, net.activation, 1.0, rng);
        let critic = TwinCritic::new(net, rng);
        let actor_opt = AdamState::new(actor.blocks().iter().map(|b| b.len()));
        Ok(Self {
            actor_target: actor.clone(),
            actor,
            critic,
            actor_opt,
            replay: ReplayStore::new(cfg.replay_capacity, net.obs_dim, net.act_dim, cfg.n_step, num_envs)?,
            action_bound: bound,
        })
    }

    pub fn blocks(&self) -> Vec<&ParamTensor> {
        let mut b = self.actor.blocks();
        b.extend(self.actor_target.blocks());
        b.extend(self.critic.blocks());
        b
    }

    pub fn mean_actions(&self, obs: &[f64], rows: usize) -> Vec<f64> {
        let bound = self.action_bound;
        self.actor.predict(obs, rows).into_iter().map(|u| bound * u.tanh()).collect()
    }

    fn target_actions(&self, obs: &[f64], rows: usize) -> Vec<f64> {
        let bound = self.action_bound;
        self.actor_target
            .predict(obs, rows)
            .into_iter()
            .map(|u| bound * u.tanh())
            .collect()
    }

    pub fn update(&mut self, hypers: &HyperSet, cfg: &OffPolicyConfig, rng: &mut Stream) -> Result<OffPolicyStats> {
        if self.replay.len() < cfg.warmup.max(1) {
            return Err(Error::contract(format!(
                "ddpg: replay holds {} transitions, warmup needs {}",
                self.replay.len(),
                cfg.warmup
            )));
        }
        let batch = self.replay.sample(cfg.batch_size, rng)?;
        self.update_on_batch(&batch, hypers, cfg)
    }

    pub fn update_on_batch(&mut self, batch: &ReplayBatch, hypers: &HyperSet, cfg: &OffPolicyConfig) -> Result<OffPolicyStats> {
        let actor_lr = hypers.get(ACTOR_LR)?;
        let critic_lr = hypers.get(CRITIC_LR)?;
        let (od, ad, b) = (self.actor.in_dim(), self.actor.out_dim(), batch.size);

        let next_act = self.target_actions(&batch.next_obs, b);
        let bootstrap = self.critic.target_min(&concat_rows(&batch.next_obs, od, &next_act, ad, b), b);
        let targets = nstep_targets(&scaled(batch, cfg.reward_scale), cfg.gamma, &bootstrap);
        let obs_act = concat_rows(&batch.obs, od, &batch.actions, ad, b);
        let critic_loss = self.critic.update(&obs_act, b, &targets, critic_lr, cfg.max_grad_norm)?;

        let mut tape = Tape::new();
        let av = self.actor.bind(&mut tape, true);
        let loss = ddpg_actor_loss(&mut tape, &self.actor, &av, &self.critic, &batch.obs, self.action_bound)?;
        let actor_loss = tape.scalar(loss);
        if !actor_loss.is_finite() {
            return Err(Error::Poisoned {
                block: "actor.loss".into(),
            });
        }
        let grads = tape.backward(loss)?;
        self.actor.store_grads(&grads, &av)?;
        let mut blocks = self.actor.blocks_mut();
        clip_grad_norm(&mut blocks, cfg.max_grad_norm);
        self.actor_opt.step(&mut blocks, actor_lr)?;

        self.critic.polyak(cfg.tau);
        self.actor_target.polyak_from(&self.actor, cfg.tau);
        Ok(OffPolicyStats {
            critic_loss,
            actor_loss,
            alpha: 0.0,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::network::Activation;
    use crate::seeds::seed_stream;
    use rand::Rng;

    fn learner(cfg: &OffPolicyConfig) -> DdpgLearner {
        let net = PolicyNetConfig {
            obs_dim: 3,
            act_dim: 1,
            hidden_units: vec![32, 32],
            activation: Activation::Relu,
        };
        let mut rng = seed_stream(8, 0, 0, "init");
        DdpgLearner::new(&net, cfg, 2.0, 1, &mut rng).unwrap()
    }

    #[test]
    fn critic_loss_decreases_on_frozen_batch() {
        let cfg = OffPolicyConfig::default();
        let mut l = learner(&cfg);
        let mut rng = seed_stream(9, 0, 0, "data");
        for t in 0..200 {
            let o: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let n: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let a = [rng.random_range(-2.0..2.0)];
            l.replay.push_step(0, &o, &a, o[1] + 0.3 * a[0], &n, t % 40 == 39, t % 80 == 79).unwrap();
        }
        let batch = l.replay.sample(64, &mut rng).unwrap();
        let hypers = HyperSet::from_pairs([(ACTOR_LR, 1e-3), (CRITIC_LR, 1e-3)]);
        let losses: Vec<f64> = (0..6)
            .map(|_| l.update_on_batch(&batch, &hypers, &cfg).unwrap().critic_loss)
            .collect();
        assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
    }

    #[test]
    fn targets_track_online_at_polyak_rate() {
        let cfg = OffPolicyConfig::default();
        let mut l = learner(&cfg);
        let mut rng = seed_stream(9, 0, 0, "data");
        for _ in 0..10 {
            l.replay.push_step(0, &[0.1, 0.2, 0.3], &[0.5], 1.0, &[0.0; 3], true, true).unwrap();
        }
        let before_t = l.actor_target.blocks()[0].values()[0];
        let hypers = HyperSet::from_pairs([(ACTOR_LR, 1e-3), (CRITIC_LR, 1e-3)]);
        let batch = l.replay.sample(8, &mut rng).unwrap();
        l.update_on_batch(&batch, &hypers, &cfg).unwrap();
        let online = l.actor.blocks()[0].values()[0];
        let after_t = l.actor_target.blocks()[0].values()[0];
        assert!((after_t - (0.95 * before_t + 0.05 * online)).abs() < 1e-15);
    }

    #[test]
    fn update_before_warmup_is_contract_error() {
        let cfg = OffPolicyConfig::default();
        let mut l = learner(&cfg);
        let mut rng = seed_stream(9, 0, 0, "data");
        let hypers = HyperSet::from_pairs([(ACTOR_LR, 1e-3), (CRITIC_LR, 1e-3)]);
        assert!(matches!(l.update(&hypers, &cfg, &mut rng), Err(Error::Contract(_))));
    }
}
