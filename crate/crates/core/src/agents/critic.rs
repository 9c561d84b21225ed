//! Twin Q critics with Polyak-averaged targets, shared by SAC and DDPG.

use crate::agents::network::{clip_grad_norm, Mlp, MlpVars, PolicyNetConfig};
use crate::error::{Error, Result};
use crate::ndmath::{AdamState, ParamTensor, Tape, Var};
use crate::seeds::Stream;

#[derive(Debug, Clone, PartialEq)]
pub struct TwinCritic {
    pub q1: Mlp,
    pub q2: Mlp,
    pub q1_target: Mlp,
    pub q2_target: Mlp,
    pub optimizer: AdamState,
}

/// Double-Q bootstrap: the smaller of the two target heads.
pub fn double_q_bootstrap(q1: f64, q2: f64) -> f64 {
    q1.min(q2)
}

/// Row-wise `[obs | action]`.
pub fn concat_rows(obs: &[f64], od: usize, act: &[f64], ad: usize, rows: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows * (od + ad));
    for r in 0..rows {
        out.extend_from_slice(&obs[r * od..(r + 1) * od]);
        out.extend_from_slice(&act[r * ad..(r + 1) * ad]);
    }
    out
}

/// `mean((Q₁ − y)²) + mean((Q₂ − y)²)`.
pub fn twin_q_loss(
    tape: &mut Tape,
    critic: &TwinCritic,
    v1: &MlpVars,
    v2: &MlpVars,
    obs_act: Var,
    targets: &[f64],
) -> Result<Var> {
    let b = targets.len();
    let y = tape.constant_from(vec![b], targets.to_vec())?;
    let mut total = None;
    for (net, vars) in [(&critic.q1, v1), (&critic.q2, v2)] {
        let q = net.forward(tape, vars, obs_act)?;
        let q = tape.reshape(q, vec![b])?;
        let e = tape.sub(q, y)?;
        let sq = tape.square(e);
        let m = tape.mean(sq);
        total = Some(match total {
            None => m,
            Some(t) => tape.add(t, m)?,
        });
    }
    Ok(total.expect("two heads"))
}

impl TwinCritic {
    pub fn new(net: &PolicyNetConfig, rng: &mut Stream) -> Self {
        let in_dim = net.obs_dim + net.act_dim;
        let q1 = Mlp::new("q1", in_dim, &net.hidden_units, 1, net.activation, 1.0, rng);
        let q2 = Mlp::new("q2", in_dim, &net.hidden_units, 1, net.activation, 1.0, rng);
        let sizes: Vec<usize> = q1.blocks().iter().chain(q2.blocks().iter()).map(|b| b.len()).collect();
        Self {
            q1_target: q1.clone(),
            q2_target: q2.clone(),
            q1,
            q2,
            optimizer: AdamState::new(sizes),
        }
    }

    pub fn blocks(&self) -> Vec<&ParamTensor> {
        let mut b = self.q1.blocks();
        b.extend(self.q2.blocks());
        b.extend(self.q1_target.blocks());
        b.extend(self.q2_target.blocks());
        b
    }

    /// `min(Q₁', Q₂')` at each `[obs | action]` row.
    pub fn target_min(&self, obs_act: &[f64], rows: usize) -> Vec<f64> {
        let a = self.q1_target.predict(obs_act, rows);
        let b = self.q2_target.predict(obs_act, rows);
        a.iter().zip(&b).map(|(x, y)| double_q_bootstrap(*x, *y)).collect()
    }

    /// One gradient step on both heads. Returns the loss before the step.
    pub fn update(&mut self, obs_act: &[f64], rows: usize, targets: &[f64], lr: f64, max_grad_norm: f64) -> Result<f64> {
        let mut tape = Tape::new();
        let v1 = self.q1.bind(&mut tape, true);
        let v2 = self.q2.bind(&mut tape, true);
        let in_dim = self.q1.in_dim();
        let x = tape.constant_from(vec![rows, in_dim], obs_act.to_vec())?;
        let loss = twin_q_loss(&mut tape, self, &v1, &v2, x, targets)?;
        let value = tape.scalar(loss);
        if !value.is_finite() {
            return Err(Error::Poisoned {
                block: "critic.loss".into(),
            });
        }
        let grads = tape.backward(loss)?;
        self.q1.store_grads(&grads, &v1)?;
        self.q2.store_grads(&grads, &v2)?;
        let mut blocks = self.q1.blocks_mut();
        blocks.extend(self.q2.blocks_mut());
        clip_grad_norm(&mut blocks, max_grad_norm);
        self.optimizer.step(&mut blocks, lr)?;
        Ok(value)
    }

    pub fn polyak(&mut self, tau: f64) {
        self.q1_target.polyak_from(&self.q1, tau);
        self.q2_target.polyak_from(&self.q2, tau);
    }
}
