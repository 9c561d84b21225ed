//! Drives the generational loop: train every agent, evolve at step boundaries, record everything.

pub mod checkpoint;
pub mod config;
pub mod metrics;
pub mod trainer;

pub use checkpoint::Checkpoint;
pub use config::{HyperInit, HypersSection, Mode, RunConfig, RunSection};
pub use trainer::{RunSummary, Trainer};

use crate::agents::AgentState;
use crate::evolution::EventRecord;
use crate::seeds::Stream;

/// All agents plus evolution bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationState {
    pub agents: Vec<AgentState>,
    /// Completed generational iterations.
    pub iteration: u64,
    pub events_fired: u64,
    /// Largest step boundary at which an event fired.
    pub last_boundary: Option<u64>,
    pub evolution_rng: Stream,
    pub event_log: Vec<EventRecord>,
}

impl PopulationState {
    /// Per-agent step count of the least advanced agent.
    pub fn env_steps(&self) -> u64 {
        self.agents.iter().map(|a| a.env_steps).min().unwrap_or(0)
    }

    pub fn total_env_steps(&self) -> u64 {
        self.agents.iter().map(|a| a.env_steps).sum()
    }

    /// Agent index with the highest (or lowest) fitness at the last event,
    /// falling back to the current window when no event has happened.
    pub fn select(&self, best: bool) -> Option<usize> {
        let score = |a: &AgentState| {
            a.fitness_at_last_event
                .or_else(|| a.window_mean())
                .filter(|f| !f.is_nan())
                .unwrap_or(f64::NEG_INFINITY)
        };
        let ranked = crate::evolution::rank_and_partition(&self.agents.iter().map(score).collect::<Vec<_>>());
        let order: Vec<usize> = ranked.top.iter().chain(&ranked.mid).chain(&ranked.bottom).copied().collect();
        if best {
            order.first().copied()
        } else {
            order.last().copied()
        }
    }
}
