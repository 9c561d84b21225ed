//! Population-based reinforcement learning over PPO, SAC and DDPG.
//!
//! A population of agents trains side by side on small vectorized tasks.
//! At regular step boundaries the weakest quarter is replaced by copies of
//! the strongest quarter with mutated hyperparameters.

pub mod agents;
pub mod cli;
pub mod envpack;
pub mod error;
pub mod evolution;
pub mod ndmath;
pub mod orchestrator;
pub mod parallel;
pub mod seeds;

pub use error::{Error, Result};
