use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agents::hypers::*;
use crate::agents::{Algorithm, HyperSet};
use crate::error::{Error, Result};
use crate::seeds::Stream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Linear,
    Log,
}

/// Bounds, sampling scale and fixed default of one hyperparameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperBound {
    pub lower: f64,
    pub upper: f64,
    pub scale: Scale,
    /// Value used when hyperparameters are not sampled.
    pub default: f64,
}

impl HyperBound {
    pub fn new(lower: f64, upper: f64, scale: Scale, default: f64) -> Self {
        Self {
            lower,
            upper,
            scale,
            default,
        }
    }

    pub fn validate(&self, name: &str) -> Result<()> {
        let key = format!("hypers.bounds.{name}");
        if !(self.lower.is_finite() && self.upper.is_finite() && self.lower < self.upper) {
            return Err(Error::config(key, "lower must be finite and below upper"));
        }
        if self.scale == Scale::Log && self.lower <= 0.0 {
            return Err(Error::config(key, "log-scale bounds must be positive"));
        }
        if !self.contains(self.default) {
            return Err(Error::config(key, "default lies outside the bounds"));
        }
        Ok(())
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lower && v <= self.upper
    }

    pub fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.lower, self.upper)
    }

    /// Uniform draw over `[lo, hi]` in this bound's scale.
    pub fn sample_within(&self, lo: f64, hi: f64, rng: &mut Stream) -> f64 {
        let u: f64 = rng.random();
        let v = match self.scale {
            Scale::Linear => lo + u * (hi - lo),
            Scale::Log => (lo.ln() + u * (hi.ln() - lo.ln())).exp(),
        };
        v.clamp(lo, hi)
    }

    pub fn sample(&self, rng: &mut Stream) -> f64 {
        self.sample_within(self.lower, self.upper, rng)
    }

    /// Maps `v` to `[0, 1]` in this bound's scale.
    pub fn unit(&self, v: f64) -> f64 {
        match self.scale {
            Scale::Linear => (v - self.lower) / (self.upper - self.lower),
            Scale::Log => (v.ln() - self.lower.ln()) / (self.upper.ln() - self.lower.ln()),
        }
    }
}

/// The searchable hyperparameters of one algorithm.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperSpace {
    pub bounds: BTreeMap<String, HyperBound>,
    /// Pairs `(low, high)` kept ordered after every mutation.
    pub ordered_pairs: Vec<(String, String)>,
}

impl HyperSpace {
    /// Search ranges and baseline values of each algorithm.
    pub fn for_algorithm(algorithm: Algorithm) -> Self {
        let b = HyperBound::new;
        let entries: Vec<(&str, HyperBound)> = match algorithm {
            Algorithm::Ppo => vec![
                (ACTOR_STD, b(0.3, 1.0, Scale::Linear, 0.5)),
                (KL_THRESHOLD, b(0.008, 0.016, Scale::Linear, 0.016)),
                (ENTROPY_COEFF, b(1e-4, 1e-3, Scale::Log, 1e-3)),
            ],
            Algorithm::Sac => vec![
                (ACTOR_LR, b(1e-4, 1e-3, Scale::Log, 1e-4)),
                (CRITIC_LR, b(1e-4, 1e-3, Scale::Log, 1e-4)),
                (TARGET_ENTROPY, b(-20.0, -10.0, Scale::Linear, -20.0)),
            ],
            Algorithm::Ddpg => vec![
                (ACTOR_LR, b(1e-4, 1e-3, Scale::Log, 1e-4)),
                (CRITIC_LR, b(1e-4, 1e-3, Scale::Log, 1e-4)),
                (SIGMA_MIN, b(0.01, 0.1, Scale::Linear, 0.01)),
                (SIGMA_MAX, b(0.5, 1.0, Scale::Linear, 1.0)),
            ],
            Algorithm::Surrogate => vec![
                (SURROGATE_H1, b(1e-3, 1.0, Scale::Log, 1e-3)),
                (SURROGATE_H2, b(1e-3, 1.0, Scale::Log, 1e-3)),
            ],
        };
        let ordered_pairs = match algorithm {
            Algorithm::Ddpg => vec![(SIGMA_MIN.to_string(), SIGMA_MAX.to_string())],
            _ => Vec::new(),
        };
        Self {
            bounds: entries.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
            ordered_pairs,
        }
    }

    pub fn get(&self, name: &str) -> Result<&HyperBound> {
        self.bounds
            .get(name)
            .ok_or_else(|| Error::contract(format!("hyperparameter `{name}` has no declared bounds")))
    }

    pub fn validate(&self) -> Result<()> {
        for (name, b) in &self.bounds {
            b.validate(name)?;
        }
        for (lo, hi) in &self.ordered_pairs {
            if self.get(lo)?.lower > self.get(hi)?.upper {
                return Err(Error::config(
                    format!("hypers.bounds.{lo}"),
                    format!("range lies entirely above `{hi}`"),
                ));
            }
        }
        Ok(())
    }

    /// Baseline assignment.
    pub fn defaults(&self) -> HyperSet {
        HyperSet::from_pairs(self.bounds.iter().map(|(k, b)| (k.as_str(), b.default)))
    }

    /// Checks that `h` assigns exactly the declared names, within bounds and ordered.
    pub fn check(&self, h: &HyperSet) -> Result<()> {
        if h.len() != self.bounds.len() {
            return Err(Error::contract(format!(
                "hyperset has {} entries, space declares {}",
                h.len(),
                self.bounds.len()
            )));
        }
        for (name, b) in &self.bounds {
            let v = h.get(name)?;
            if !b.contains(v) {
                return Err(Error::contract(format!(
                    "{name}={v} outside [{}, {}]",
                    b.lower, b.upper
                )));
            }
        }
        for (lo, hi) in &self.ordered_pairs {
            if h.get(lo)? > h.get(hi)? {
                return Err(Error::contract(format!("{lo} exceeds {hi}")));
            }
        }
        Ok(())
    }

    /// Swaps inverted ordered pairs, then pulls them back inside their bounds.
    pub fn sort_pairs(&self, h: &mut HyperSet) {
        for (lo, hi) in &self.ordered_pairs {
            let (Ok(a), Ok(b), Some(lb), Some(hb)) = (h.get(lo), h.get(hi), self.bounds.get(lo), self.bounds.get(hi))
            else {
                continue;
            };
            if a <= b {
                continue;
            }
            let low = lb.clamp(b).min(hb.upper);
            let high = hb.clamp(a).max(low);
            h.set(lo, low);
            h.set(hi, high);
        }
    }
}
