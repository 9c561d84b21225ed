use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndmath::{matmul_into, Gradients, ParamTensor, Tape, Var};
use crate::seeds::Stream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Tanh => v.tanh(),
            Activation::Relu => v.max(0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNetConfig {
    pub obs_dim: usize,
    pub act_dim: usize,
    pub hidden_units: Vec<usize>,
    pub activation: Activation,
}

impl PolicyNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_units.is_empty() {
            return Err(Error::config("hidden_units", "must list at least one layer"));
        }
        if self.obs_dim == 0 || self.act_dim == 0 || self.hidden_units.contains(&0) {
            return Err(Error::config("hidden_units", "all dimensions must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Dense {
    w: ParamTensor,
    b: ParamTensor,
}

/// Fully connected network with a linear output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Dense>,
    activation: Activation,
    names: Vec<String>,
}

/// Tape handles for one bound copy of an [`Mlp`].
#[derive(Debug, Clone)]
pub struct MlpVars(Vec<(Var, Var)>);

impl Mlp {
    /// Uniform `±1/√fan_in` initialisation; the output layer is further scaled by `out_gain`.
    pub fn new(
        name: &str,
        in_dim: usize,
        hidden: &[usize],
        out_dim: usize,
        activation: Activation,
        out_gain: f64,
        rng: &mut Stream,
    ) -> Self {
        let mut dims = vec![in_dim];
        dims.extend_from_slice(hidden);
        dims.push(out_dim);
        let last = dims.len() - 2;
        let mut layers = Vec::new();
        let mut names = Vec::new();
        for (l, pair) in dims.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let gain = if l == last { out_gain } else { 1.0 };
            let w = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-bound..bound) * gain)
                .collect();
            let b = (0..fan_out)
                .map(|_| rng.random_range(-bound..bound) * gain)
                .collect();
            layers.push(Dense {
                w: ParamTensor::matrix(fan_in, fan_out, w).expect("dims positive").trainable(),
                b: ParamTensor::vector(b).trainable(),
            });
            names.push(format!("{name}.l{l}.weight"));
            names.push(format!("{name}.l{l}.bias"));
        }
        Self {
            layers,
            activation,
            names,
        }
    }

    pub fn from_blocks(blocks: Vec<ParamTensor>, activation: Activation, name: &str) -> Result<Self> {
        if blocks.is_empty() || !blocks.len().is_multiple_of(2) {
            return Err(Error::contract("mlp needs weight/bias pairs"));
        }
        let mut layers = Vec::new();
        let mut names = Vec::new();
        let mut it = blocks.into_iter();
        let mut l = 0;
        while let (Some(w), Some(b)) = (it.next(), it.next()) {
            if w.shape().len() != 2 || b.shape() != [w.shape()[1]] {
                return Err(Error::Dimension {
                    op: "mlp layer",
                    lhs: w.shape().to_vec(),
                    rhs: b.shape().to_vec(),
                });
            }
            layers.push(Dense {
                w: w.trainable(),
                b: b.trainable(),
            });
            names.push(format!("{name}.l{l}.weight"));
            names.push(format!("{name}.l{l}.bias"));
            l += 1;
        }
        for pair in layers.windows(2) {
            if pair[0].w.shape()[1] != pair[1].w.shape()[0] {
                return Err(Error::Dimension {
                    op: "mlp layer",
                    lhs: pair[0].w.shape().to_vec(),
                    rhs: pair[1].w.shape().to_vec(),
                });
            }
        }
        Ok(Self {
            layers,
            activation,
            names,
        })
    }

    /// Prefix shared by all block names.
    pub fn name(&self) -> &str {
        self.names[0].strip_suffix(".l0.weight").unwrap_or(&self.names[0])
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].w.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().expect("non-empty").w.shape()[1]
    }

    pub fn num_params(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    pub fn blocks(&self) -> Vec<&ParamTensor> {
        self.layers.iter().flat_map(|d| [&d.w, &d.b]).collect()
    }

    pub fn blocks_mut(&mut self) -> Vec<(&str, &mut ParamTensor)> {
        self.layers
            .iter_mut()
            .flat_map(|d| [&mut d.w, &mut d.b])
            .zip(&self.names)
            .map(|(t, n)| (n.as_str(), t))
            .collect()
    }

    /// Records all parameters on `tape`; `trainable = false` binds them as constants.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> MlpVars {
        MlpVars(
            self.layers
                .iter()
                .map(|d| {
                    if trainable {
                        (tape.leaf(&d.w), tape.leaf(&d.b))
                    } else {
                        (tape.constant(&d.w), tape.constant(&d.b))
                    }
                })
                .collect(),
        )
    }

    pub fn forward(&self, tape: &mut Tape, vars: &MlpVars, x: Var) -> Result<Var> {
        let mut h = x;
        let last = vars.0.len() - 1;
        for (l, (w, b)) in vars.0.iter().enumerate() {
            let z = tape.matmul(h, *w)?;
            let z = tape.add_rowwise(z, *b)?;
            h = if l == last {
                z
            } else {
                match self.activation {
                    Activation::Tanh => tape.tanh(z),
                    Activation::Relu => tape.relu(z),
                }
            };
        }
        Ok(h)
    }

    /// Forward pass without recording; `x` holds `rows` row-major inputs.
    pub fn predict(&self, x: &[f64], rows: usize) -> Vec<f64> {
        let mut h = x.to_vec();
        let last = self.layers.len() - 1;
        for (l, d) in self.layers.iter().enumerate() {
            let (k, n) = (d.w.shape()[0], d.w.shape()[1]);
            let mut out = vec![0.0; rows * n];
            matmul_into(&h, d.w.values(), &mut out, rows, k, n);
            for r in 0..rows {
                for (o, b) in out[r * n..(r + 1) * n].iter_mut().zip(d.b.values()) {
                    *o += b;
                    if l != last {
                        *o = self.activation.apply(*o);
                    }
                }
            }
            h = out;
        }
        h
    }

    /// Accumulates the gradients for `vars` into each block's `grad`.
    pub fn store_grads(&mut self, grads: &Gradients, vars: &MlpVars) -> Result<()> {
        for (d, (w, b)) in self.layers.iter_mut().zip(&vars.0) {
            grads.write_into(*w, &mut d.w)?;
            grads.write_into(*b, &mut d.b)?;
        }
        Ok(())
    }

    /// `self ← (1 − τ)·self + τ·online`.
    pub fn polyak_from(&mut self, online: &Mlp, tau: f64) {
        for (t, o) in self.layers.iter_mut().zip(&online.layers) {
            polyak(t.w.values_mut(), o.w.values(), tau);
            polyak(t.b.values_mut(), o.b.values(), tau);
        }
    }
}

pub fn polyak(target: &mut [f64], online: &[f64], tau: f64) {
    for (t, o) in target.iter_mut().zip(online) {
        *t = (1.0 - tau) * *t + tau * o;
    }
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`. Returns the pre-clip norm.
pub fn clip_grad_norm(blocks: &mut [(&str, &mut ParamTensor)], max_norm: f64) -> f64 {
    let total: f64 = blocks
        .iter()
        .filter_map(|(_, t)| t.grad.as_ref())
        .flat_map(|g| g.iter())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt();
    if max_norm > 0.0 && total > max_norm {
        let s = max_norm / (total + 1e-12);
        for (_, t) in blocks.iter_mut() {
            if let Some(g) = &mut t.grad {
                g.iter_mut().for_each(|x| *x *= s);
            }
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds::seed_stream;

    #[test]
    fn predict_matches_tape_forward() {
        let mut rng = seed_stream(1, 0, 0, "init");
        for act in [Activation::Tanh, Activation::Relu] {
            let net = Mlp::new("n", 3, &[5, 4], 2, act, 1.0, &mut rng);
            let x: Vec<f64> = (0..12).map(|i| (i as f64 * 0.37).sin()).collect();
            let mut tape = Tape::new();
            let vars = net.bind(&mut tape, true);
            let xv = tape.constant_from(vec![4, 3], x.clone()).unwrap();
            let y = net.forward(&mut tape, &vars, xv).unwrap();
            let p = net.predict(&x, 4);
            for (a, b) in tape.value(y).iter().zip(&p) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn polyak_extremes() {
        let mut rng = seed_stream(1, 0, 0, "init");
        let online = Mlp::new("a", 2, &[3], 1, Activation::Tanh, 1.0, &mut rng);
        let original = Mlp::new("b", 2, &[3], 1, Activation::Tanh, 1.0, &mut rng);
        let mut t = original.clone();
        t.polyak_from(&online, 0.0);
        assert_eq!(t, original);
        t.polyak_from(&online, 1.0);
        for (a, b) in t.blocks().iter().zip(online.blocks()) {
            assert_eq!(a.values(), b.values());
        }
        let mut v = vec![0.0];
        polyak(&mut v, &[1.0], 0.05);
        assert_eq!(v, vec![0.05]);
    }

    #[test]
    fn from_blocks_round_trip() {
        let mut rng = seed_stream(2, 0, 0, "init");
        let net = Mlp::new("q", 4, &[8, 8], 1, Activation::Relu, 1.0, &mut rng);
        let blocks = net.blocks().into_iter().cloned().collect();
        let back = Mlp::from_blocks(blocks, Activation::Relu, "q").unwrap();
        assert_eq!(back, net);
    }
}
