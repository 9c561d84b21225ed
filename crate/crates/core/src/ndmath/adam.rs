use crate::error::{Error, Result};
use crate::ndmath::ParamTensor;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

/// First and second moment estimates for a fixed list of parameter blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(block_sizes: impl IntoIterator<Item = usize>) -> Self {
        let (m, v) = block_sizes
            .into_iter()
            .map(|n| (vec![0.0; n], vec![0.0; n]))
            .unzip();
        Self { step: 0, m, v }
    }

    pub fn for_blocks(blocks: &[(&str, &mut ParamTensor)]) -> Self {
        Self::new(blocks.iter().map(|(_, t)| t.len()))
    }

    /// One bias-corrected Adam update using each block's `grad`.
    ///
    /// Blocks without a gradient are treated as zero-gradient. Every gradient
    /// is checked before any value is written, so a poisoned gradient leaves
    /// parameters and moments untouched. Gradients are cleared afterwards.
    pub fn step(&mut self, blocks: &mut [(&str, &mut ParamTensor)], lr: f64) -> Result<()> {
        if blocks.len() != self.m.len() {
            return Err(Error::contract(format!(
                "adam: {} parameter blocks but state holds {}",
                blocks.len(),
                self.m.len()
            )));
        }
        for (i, (name, t)) in blocks.iter().enumerate() {
            if t.len() != self.m[i].len() {
                return Err(Error::Dimension {
                    op: "adam_step",
                    lhs: t.shape().to_vec(),
                    rhs: vec![self.m[i].len()],
                });
            }
            if let Some(g) = &t.grad {
                if g.len() != t.len() {
                    return Err(Error::Dimension {
                        op: "adam_step",
                        lhs: t.shape().to_vec(),
                        rhs: vec![g.len()],
                    });
                }
                if g.iter().any(|x| !x.is_finite()) {
                    return Err(Error::Poisoned {
                        block: (*name).to_string(),
                    });
                }
            }
        }
        self.step += 1;
        let bc1 = 1.0 - BETA1.powf(self.step as f64);
        let bc2 = 1.0 - BETA2.powf(self.step as f64);
        for (i, (_, t)) in blocks.iter_mut().enumerate() {
            let Some(g) = t.grad.take() else {
                // zero gradient: moments decay, values move by m̂ / (sqrt(v̂) + eps)
                let (m, v) = (&mut self.m[i], &mut self.v[i]);
                for j in 0..m.len() {
                    m[j] *= BETA1;
                    v[j] *= BETA2;
                }
                apply(t.values_mut(), m, v, lr, bc1, bc2);
                continue;
            };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..g.len() {
                m[j] = BETA1 * m[j] + (1.0 - BETA1) * g[j];
                v[j] = BETA2 * v[j] + (1.0 - BETA2) * g[j] * g[j];
            }
            apply(t.values_mut(), m, v, lr, bc1, bc2);
        }
        Ok(())
    }
}

fn apply(values: &mut [f64], m: &[f64], v: &[f64], lr: f64, bc1: f64, bc2: f64) {
    for j in 0..values.len() {
        let m_hat = m[j] / bc1;
        let v_hat = v[j] / bc2;
        values[j] -= lr * m_hat / (v_hat.sqrt() + EPS);
    }
}
