//! Ranking, replacement and hyperparameter mutation of a population.

pub mod events;
pub mod mutate;
pub mod space;

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use events::EventRecord;
pub use mutate::{dexpbt_factor, mutate_dexpbt, mutate_perturb, mutate_resample, perturb_value};
pub use space::{HyperBound, HyperSpace, Scale};

use crate::agents::{AgentSpec, AgentState, HyperSet};
use crate::error::{Error, Result};
use crate::seeds::Stream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MutationScheme {
    Perturb,
    Resample,
    Dexpbt,
}

impl MutationScheme {
    pub const ALL: [MutationScheme; 3] = [MutationScheme::Perturb, MutationScheme::Resample, MutationScheme::Dexpbt];

    pub fn as_str(self) -> &'static str {
        match self {
            MutationScheme::Perturb => "perturb",
            MutationScheme::Resample => "resample",
            MutationScheme::Dexpbt => "dexpbt",
        }
    }
}

impl fmt::Display for MutationScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// When evolution fires and how children are mutated. Step counts are per agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvolutionConfig {
    pub n_start: u64,
    pub n_evo: u64,
    pub perturb_factor_min: f64,
    pub perturb_factor_max: f64,
    pub beta_mut: f64,
    pub mu_min: f64,
    pub mu_max: f64,
    pub scheme: MutationScheme,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        Self {
            n_start: 200_000,
            n_evo: 100_000,
            perturb_factor_min: 0.8,
            perturb_factor_max: 1.2,
            beta_mut: 0.5,
            mu_min: 1.1,
            mu_max: 1.5,
            scheme: MutationScheme::Perturb,
        }
    }
}

impl EvolutionConfig {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("evolution.n_evo", self.n_evo > 0),
            (
                "evolution.perturb_factor_min",
                self.perturb_factor_min > 0.0 && self.perturb_factor_min <= self.perturb_factor_max,
            ),
            ("evolution.beta_mut", (0.0..=1.0).contains(&self.beta_mut)),
            ("evolution.mu_min", self.mu_min > 1.0 && self.mu_min <= self.mu_max),
        ];
        match checks.iter().find(|(_, ok)| !ok) {
            Some((key, _)) => Err(Error::config(*key, "value out of range")),
            None => Ok(()),
        }
    }

    /// First per-agent step count at which an event may fire after `last_boundary`.
    ///
    /// Boundaries are the multiples of `n_evo` strictly above `n_start`.
    pub fn next_boundary(&self, last_boundary: Option<u64>) -> u64 {
        let first = (self.n_start / self.n_evo + 1) * self.n_evo;
        match last_boundary {
            Some(b) => (b + self.n_evo).max(first),
            None => first,
        }
    }

    pub fn mutate(&self, h: &HyperSet, space: &HyperSpace, rng: &mut Stream) -> HyperSet {
        match self.scheme {
            MutationScheme::Perturb => mutate_perturb(h, space, self.perturb_factor_min, self.perturb_factor_max, rng),
            MutationScheme::Resample => mutate_resample(h, space, rng),
            MutationScheme::Dexpbt => mutate_dexpbt(h, space, self.beta_mut, self.mu_min, self.mu_max, rng),
        }
    }
}

/// Mean of the agent's window, or `−∞` with a warning when it is empty.
pub fn fitness(agent: &AgentState) -> f64 {
    match agent.window_mean() {
        Some(m) if !m.is_nan() => m,
        _ => {
            log::warn!("agent {} has no completed episodes; ranked last", agent.id);
            f64::NEG_INFINITY
        }
    }
}

/// Index sets of one ranking, each ordered best first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub top: Vec<usize>,
    pub mid: Vec<usize>,
    pub bottom: Vec<usize>,
}

impl Partition {
    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.top.len(), self.mid.len(), self.bottom.len())
    }
}

/// Sorts by descending fitness (lower index first on ties) and splits 25/50/25.
///
/// The outer groups hold `max(1, ⌊n/4⌋)` agents each; a single agent is all top.
pub fn rank_and_partition(fitness: &[f64]) -> Partition {
    let n = fitness.len();
    let key = |i: usize| if fitness[i].is_nan() { f64::NEG_INFINITY } else { fitness[i] };
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| key(b).total_cmp(&key(a)).then(a.cmp(&b)));
    if n < 2 {
        return Partition {
            top: order,
            mid: Vec::new(),
            bottom: Vec::new(),
        };
    }
    let q = (n / 4).max(1);
    Partition {
        top: order[..q].to_vec(),
        mid: order[q..n - q].to_vec(),
        bottom: order[n - q..].to_vec(),
    }
}

/// Context of one evolution event.
#[derive(Debug, Clone, Copy)]
pub struct EventContext {
    pub event: u64,
    pub iteration: u64,
    pub step: u64,
}

/// Replaces the bottom quarter with mutated copies of random top-quarter agents.
///
/// Every agent's fitness window is consumed. Returns the log records of the event.
pub fn evolve_population(
    agents: &mut [AgentState],
    space: &HyperSpace,
    cfg: &EvolutionConfig,
    spec: &AgentSpec,
    ctx: EventContext,
    rng: &mut Stream,
) -> Result<Vec<EventRecord>> {
    let fit: Vec<f64> = agents.iter().map(fitness).collect();
    for (a, f) in agents.iter_mut().zip(&fit) {
        a.fitness_at_last_event = Some(*f);
    }
    if agents.len() < 2 {
        log::info!("population of {} agent(s): evolution is a no-op", agents.len());
        agents.iter_mut().for_each(|a| a.fitness_window.clear());
        return Ok(vec![EventRecord::Noop {
            event: ctx.event,
            iteration: ctx.iteration,
            step: ctx.step,
            population: agents.len(),
        }]);
    }
    let part = rank_and_partition(&fit);
    let before: Vec<String> = agents.iter().map(AgentState::digest).collect();
    let mut records = Vec::with_capacity(part.bottom.len() + 1);
    for &child in &part.bottom {
        let parent = part.top[rng.random_range(0..part.top.len())];
        let new_hypers = cfg.mutate(&agents[parent].hypers, space, rng);
        space.check(&new_hypers)?;
        let old_hypers = agents[child].hypers.clone();
        let learner = agents[parent].learner.inherit();
        agents[child].adopt(learner, new_hypers.clone(), spec);
        records.push(EventRecord::Replacement {
            event: ctx.event,
            iteration: ctx.iteration,
            step: ctx.step,
            child,
            parent,
            parent_fitness: fit[parent],
            child_fitness: fit[child],
            parent_digest: before[parent].clone(),
            child_digest: agents[child].digest(),
            old_hypers,
            new_hypers,
        });
    }
    agents.iter_mut().for_each(|a| a.fitness_window.clear());
    records.insert(
        0,
        EventRecord::Partition {
            event: ctx.event,
            iteration: ctx.iteration,
            step: ctx.step,
            top: part.top,
            mid: part.mid,
            bottom: part.bottom,
            fitness: fit,
            before,
            after: agents.iter().map(AgentState::digest).collect(),
        },
    );
    Ok(records)
}
