//! Gradient ascent on the surrogate landscape, ranked on the true objective.

use crate::agents::config::SurrogateConfig;
use crate::agents::hypers::{HyperSet, SURROGATE_H1, SURROGATE_H2};
use crate::envpack::{surrogate_gradient, surrogate_landscape_eval};
use crate::error::Result;
use crate::ndmath::ParamTensor;

#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateLearner {
    pub theta: ParamTensor,
    pub lr: f64,
}

impl SurrogateLearner {
    pub fn new(cfg: &SurrogateConfig) -> Self {
        Self {
            theta: ParamTensor::vector(cfg.theta_init.to_vec()),
            lr: cfg.lr,
        }
    }

    pub fn theta(&self) -> [f64; 2] {
        let v = self.theta.values();
        [v[0], v[1]]
    }

    pub fn blocks(&self) -> Vec<&ParamTensor> {
        vec![&self.theta]
    }

    pub fn true_objective(&self) -> f64 {
        surrogate_landscape_eval(self.theta(), [0.0, 0.0]).0
    }

    /// One ascent step on the surrogate under `hypers`; returns the true objective afterwards.
    pub fn step(&mut self, hypers: &HyperSet) -> Result<f64> {
        let h = [hypers.get(SURROGATE_H1)?, hypers.get(SURROGATE_H2)?];
        let g = surrogate_gradient(self.theta(), h);
        let lr = self.lr;
        for (t, g) in self.theta.values_mut().iter_mut().zip(g) {
            *t += lr * g;
        }
        Ok(self.true_objective())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ascends_only_weighted_coordinates() {
        let mut l = SurrogateLearner::new(&SurrogateConfig::default());
        let h = HyperSet::from_pairs([(SURROGATE_H1, 1.0), (SURROGATE_H2, 0.0)]);
        let before = l.true_objective();
        for _ in 0..200 {
            l.step(&h).unwrap();
        }
        let [t1, t2] = l.theta();
        assert!(t1.abs() < 1e-6);
        assert_eq!(t2, 0.9);
        assert!(l.true_objective() > before);
    }
}
