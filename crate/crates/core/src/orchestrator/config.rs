use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agents::{AgentSpec, Algorithm, HyperSet, OffPolicyConfig, PpoConfig, SurrogateConfig};
use crate::envpack::EnvName;
use crate::error::{Error, Result};
use crate::evolution::{EvolutionConfig, HyperBound, HyperSpace};
use crate::seeds::{seed_stream, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Population with evolution events.
    Pbrl,
    /// Independent agents, no evolution.
    Baseline,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Pbrl => "pbrl",
            Mode::Baseline => "baseline",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HyperInit {
    /// Every agent starts from the declared defaults.
    Default,
    /// Each agent draws its own values uniformly (in scale) from the init ranges.
    Sample,
}

/// Hyperparameter search space overrides and initialisation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HypersSection {
    pub init: HyperInit,
    /// Replaces the built-in bounds of the named hyperparameters.
    pub bounds: BTreeMap<String, HyperBound>,
    /// Narrower `[lo, hi]` ranges for initial sampling; defaults to the full bounds.
    pub init_range: BTreeMap<String, [f64; 2]>,
}

impl Default for HypersSection {
    fn default() -> Self {
        Self {
            init: HyperInit::Sample,
            bounds: BTreeMap::new(),
            init_range: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub algorithm: Algorithm,
    pub env: EnvName,
    pub mode: Mode,
    pub population_size: usize,
    pub envs_per_agent: usize,
    /// Training budget in env steps, counted per agent.
    pub env_steps_per_agent: u64,
    /// Drawn from entropy and recorded in the snapshot when absent.
    pub seed: Option<u64>,
    pub out_dir: PathBuf,
    /// Iterations between checkpoints; absent means every 10 evolution windows.
    pub checkpoint_every: Option<u64>,
    /// Train agents one after another in index order.
    pub deterministic: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Ppo,
            env: EnvName::Pendulum,
            mode: Mode::Pbrl,
            population_size: 4,
            envs_per_agent: 4,
            env_steps_per_agent: 300_000,
            seed: None,
            out_dir: PathBuf::from("runs/default"),
            checkpoint_every: None,
            deterministic: false,
        }
    }
}

/// A complete, resolved run description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub run: RunSection,
    pub evolution: EvolutionConfig,
    pub hypers: HypersSection,
    pub ppo: PpoConfig,
    pub offpolicy: OffPolicyConfig,
    pub surrogate: SurrogateConfig,
}

impl RunConfig {
    /// Defaults for an algorithm/env pair.
    pub fn for_task(algorithm: Algorithm, env: EnvName) -> Self {
        let mut cfg = Self::default();
        cfg.run.algorithm = algorithm;
        cfg.run.env = env;
        if env == EnvName::Pendulum {
            // Per-step costs reach −16; smaller targets keep the critic well conditioned.
            cfg.ppo.reward_scale = 0.1;
        }
        if algorithm == Algorithm::Surrogate {
            cfg.run.envs_per_agent = 1;
            cfg.run.env_steps_per_agent = 5_000;
            cfg.evolution.n_start = 100;
            cfg.evolution.n_evo = 100;
        }
        cfg
    }

    pub fn agent_spec(&self) -> AgentSpec {
        AgentSpec {
            algorithm: self.run.algorithm,
            env: self.run.env,
            envs_per_agent: self.run.envs_per_agent,
            ppo: self.ppo.clone(),
            off_policy: self.offpolicy.clone(),
            surrogate: self.surrogate.clone(),
        }
    }

    /// Built-in space for the algorithm with the configured overrides applied.
    pub fn hyper_space(&self) -> Result<HyperSpace> {
        let mut space = HyperSpace::for_algorithm(self.run.algorithm);
        for (name, b) in &self.hypers.bounds {
            if !space.bounds.contains_key(name) {
                return Err(Error::config(
                    format!("hypers.bounds.{name}"),
                    format!("`{}` has no hyperparameter named `{name}`", self.run.algorithm),
                ));
            }
            space.bounds.insert(name.clone(), *b);
        }
        space.validate()?;
        for (name, [lo, hi]) in &self.hypers.init_range {
            let key = format!("hypers.init_range.{name}");
            let b = space
                .bounds
                .get(name)
                .ok_or_else(|| Error::config(&key, format!("unknown hyperparameter `{name}`")))?;
            if !(lo <= hi && b.contains(*lo) && b.contains(*hi)) {
                return Err(Error::config(key, format!("[{lo}, {hi}] must be ordered and inside the bounds")));
            }
        }
        Ok(space)
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.run;
        if r.population_size == 0 {
            return Err(Error::config("run.population_size", "must be at least 1"));
        }
        if r.env_steps_per_agent == 0 {
            return Err(Error::config("run.env_steps_per_agent", "must be positive"));
        }
        if r.checkpoint_every == Some(0) {
            return Err(Error::config("run.checkpoint_every", "must be positive"));
        }
        self.agent_spec().validate()?;
        self.evolution.validate()?;
        self.hyper_space()?;
        if r.mode == Mode::Pbrl && r.env_steps_per_agent < self.evolution.n_start {
            log::warn!(
                "budget of {} steps per agent ends before evolution starts at {}",
                r.env_steps_per_agent,
                self.evolution.n_start
            );
        }
        Ok(())
    }

    /// Fills in a seed drawn from entropy when none is set.
    pub fn resolve_seed(&mut self) -> u64 {
        *self.run.seed.get_or_insert_with(|| rand::rng().random::<u64>() >> 1)
    }

    pub fn seed(&self) -> Result<u64> {
        self.run
            .seed
            .ok_or_else(|| Error::config("run.seed", "unresolved; call resolve_seed first"))
    }

    /// Initial hyperparameters of agent `id`.
    pub fn initial_hypers(&self, space: &HyperSpace, id: usize) -> Result<HyperSet> {
        let mut h = space.defaults();
        if self.hypers.init == HyperInit::Sample {
            let mut rng: Stream = seed_stream(self.seed()?, id as u64, 0, "hypers");
            for (name, b) in &space.bounds {
                let [lo, hi] = self.hypers.init_range.get(name).copied().unwrap_or([b.lower, b.upper]);
                h.set(name, b.sample_within(lo, hi, &mut rng));
            }
            space.sort_pairs(&mut h);
        }
        space.check(&h)?;
        Ok(h)
    }

    /// Iterations between checkpoints.
    pub fn checkpoint_interval(&self) -> u64 {
        self.run.checkpoint_every.unwrap_or_else(|| {
            let per_iter = self.agent_spec().steps_per_iteration().max(1);
            (10 * self.evolution.n_evo).div_ceil(per_iter).max(1)
        })
    }

    /// Digest of everything that shapes the trajectory of a run.
    ///
    /// Budget, output location, checkpoint cadence and execution mode are left
    /// out so a run can be resumed elsewhere with a larger budget.
    pub fn fingerprint(&self) -> [u8; 32] {
        let mut c = self.clone();
        c.run.env_steps_per_agent = 0;
        c.run.out_dir = PathBuf::new();
        c.run.checkpoint_every = None;
        c.run.deterministic = false;
        let text = toml::to_string(&c).expect("config serializes");
        Sha256::digest(text.as_bytes()).into()
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config("document", e.to_string()))
    }
}
