use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const KL_THRESHOLD: &str = "kl_threshold";
pub const ENTROPY_COEFF: &str = "entropy_coeff";
pub const ACTOR_STD: &str = "actor_std";
pub const ACTOR_LR: &str = "actor_lr";
pub const CRITIC_LR: &str = "critic_lr";
pub const TARGET_ENTROPY: &str = "target_entropy";
pub const SIGMA_MIN: &str = "sigma_min";
pub const SIGMA_MAX: &str = "sigma_max";
pub const SURROGATE_H1: &str = "h1";
pub const SURROGATE_H2: &str = "h2";

/// Named hyperparameter values of one agent, iterated in name order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct HyperSet(BTreeMap<String, f64>);

impl HyperSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, f64)>) -> Self {
        Self(pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect())
    }

    pub fn get(&self, name: &str) -> Result<f64> {
        self.0
            .get(name)
            .copied()
            .ok_or_else(|| Error::contract(format!("hyperparameter `{name}` missing")))
    }

    pub fn set(&mut self, name: &str, value: f64) {
        self.0.insert(name.to_string(), value);
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.0.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.0.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for HyperSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (k, v) in self.iter() {
            if !first {
                f.write_str(",")?;
            }
            first = false;
            write!(f, "{k}={v}")?;
        }
        Ok(())
    }
}
