use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::agents::{AgentSpec, AgentState};
use crate::error::{Error, Result};
use crate::evolution::{evolve_population, EventContext, EventRecord, HyperSpace};
use crate::orchestrator::checkpoint::Checkpoint;
use crate::orchestrator::config::{Mode, RunConfig};
use crate::orchestrator::metrics::MetricsWriter;
use crate::orchestrator::PopulationState;
use crate::parallel::{map_mut, Parallelism};
use crate::seeds::seed_stream;

/// Agent id reserved for the population-level evolution stream.
const EVOLUTION_STREAM_ID: u64 = u64::MAX;

pub const SNAPSHOT_FILE: &str = "config.snapshot";
pub const EVENTS_FILE: &str = "events.log";
pub const METRICS_DIR: &str = "metrics";
pub const CHECKPOINT_DIR: &str = "checkpoints";

struct RunDir {
    root: PathBuf,
    metrics: MetricsWriter,
    events: BufWriter<File>,
}

impl RunDir {
    fn events_path(root: &Path) -> PathBuf {
        root.join(EVENTS_FILE)
    }

    fn open(root: &Path, cfg: &RunConfig, pop: &PopulationState, hyper_names: &[String], resume: bool) -> Result<Self> {
        fs::create_dir_all(root.join(CHECKPOINT_DIR)).map_err(|e| Error::io(root, e))?;
        let snap = root.join(SNAPSHOT_FILE);
        fs::write(&snap, cfg.to_toml()?).map_err(|e| Error::io(&snap, e))?;
        let mdir = root.join(METRICS_DIR);
        let n = pop.agents.len();
        let metrics = if resume {
            MetricsWriter::reopen(&mdir, n, hyper_names, pop.iteration)?
        } else {
            MetricsWriter::create(&mdir, n, hyper_names)?
        };
        let ep = Self::events_path(root);
        let log: String = pop.event_log.iter().map(|r| r.to_line() + "\n").collect();
        fs::write(&ep, log).map_err(|e| Error::io(&ep, e))?;
        let f = OpenOptions::new().append(true).open(&ep).map_err(|e| Error::io(&ep, e))?;
        Ok(Self {
            root: root.to_path_buf(),
            metrics,
            events: BufWriter::new(f),
        })
    }

    fn flush(&mut self) -> Result<()> {
        self.metrics.flush()?;
        let ep = Self::events_path(&self.root);
        self.events.flush().map_err(|e| Error::io(ep, e))
    }
}

/// Outcome of a finished run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub iterations: u64,
    pub events: u64,
    pub replacements: usize,
    pub env_steps_per_agent: u64,
    pub total_env_steps: u64,
    pub run_dir: Option<PathBuf>,
}

/// Runs one configured population.
pub struct Trainer {
    cfg: RunConfig,
    spec: AgentSpec,
    space: HyperSpace,
    fingerprint: [u8; 32],
    parallelism: Parallelism,
    pub pop: PopulationState,
    out: Option<RunDir>,
}

impl Trainer {
    fn build(mut cfg: RunConfig) -> Result<(RunConfig, AgentSpec, HyperSpace, PopulationState)> {
        cfg.resolve_seed();
        cfg.validate()?;
        let seed = cfg.seed()?;
        let spec = cfg.agent_spec();
        let space = cfg.hyper_space()?;
        let agents = (0..cfg.run.population_size)
            .map(|id| AgentState::new(&spec, id, seed, cfg.initial_hypers(&space, id)?))
            .collect::<Result<Vec<_>>>()?;
        let pop = PopulationState {
            agents,
            iteration: 0,
            events_fired: 0,
            last_boundary: None,
            evolution_rng: seed_stream(seed, EVOLUTION_STREAM_ID, 0, "evolution"),
            event_log: Vec::new(),
        };
        Ok((cfg, spec, space, pop))
    }

    fn assemble(cfg: RunConfig, spec: AgentSpec, space: HyperSpace, pop: PopulationState, out: Option<RunDir>) -> Self {
        let parallelism = if cfg.run.deterministic {
            Parallelism::Sequential
        } else {
            Parallelism::Parallel
        };
        Self {
            fingerprint: cfg.fingerprint(),
            cfg,
            spec,
            space,
            parallelism,
            pop,
            out,
        }
    }

    /// A fresh run writing into `cfg.run.out_dir`.
    pub fn new(cfg: RunConfig) -> Result<Self> {
        let (cfg, spec, space, pop) = Self::build(cfg)?;
        let names: Vec<String> = space.bounds.keys().cloned().collect();
        let out = RunDir::open(&cfg.run.out_dir, &cfg, &pop, &names, false)?;
        Ok(Self::assemble(cfg, spec, space, pop, Some(out)))
    }

    /// A fresh run that writes nothing to disk.
    pub fn in_memory(cfg: RunConfig) -> Result<Self> {
        let (cfg, spec, space, pop) = Self::build(cfg)?;
        Ok(Self::assemble(cfg, spec, space, pop, None))
    }

    /// Continues from a checkpoint. `cfg` may differ from the original only in
    /// budget, output location, checkpoint cadence and execution mode.
    pub fn resume(cfg: RunConfig, ckpt: Checkpoint) -> Result<Self> {
        if cfg.run.seed.is_none() {
            return Err(Error::config("run.seed", "resuming needs the original seed"));
        }
        cfg.validate()?;
        if cfg.fingerprint() != ckpt.config_hash {
            return Err(Error::config(
                "document",
                "configuration differs from the one that wrote the checkpoint",
            ));
        }
        let spec = cfg.agent_spec();
        let space = cfg.hyper_space()?;
        let names: Vec<String> = space.bounds.keys().cloned().collect();
        let pop = ckpt.population;
        let out = RunDir::open(&cfg.run.out_dir, &cfg, &pop, &names, true)?;
        Ok(Self::assemble(cfg, spec, space, pop, Some(out)))
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn spec(&self) -> &AgentSpec {
        &self.spec
    }

    pub fn space(&self) -> &HyperSpace {
        &self.space
    }

    pub fn run_dir(&self) -> Option<&Path> {
        self.out.as_ref().map(|o| o.root.as_path())
    }

    pub fn set_parallelism(&mut self, p: Parallelism) {
        self.parallelism = p;
    }

    pub fn finished(&self) -> bool {
        self.pop.env_steps() >= self.cfg.run.env_steps_per_agent
    }

    /// Every agent collects one horizon and updates; one metrics row per agent.
    pub fn train_step(&mut self) -> Result<()> {
        let spec = &self.spec;
        let results = map_mut(&mut self.pop.agents, self.parallelism, |a| a.train_iteration(spec));
        if let Some(e) = results.into_iter().find_map(Result::err) {
            return Err(e);
        }
        self.pop.iteration += 1;
        if let Some(out) = &mut self.out {
            out.metrics.append(self.pop.iteration, &self.pop.agents)?;
        }
        Ok(())
    }

    /// Fires one evolution event if the agents crossed a step boundary this iteration.
    pub fn maybe_evolve(&mut self) -> Result<Vec<EventRecord>> {
        if self.cfg.run.mode == Mode::Baseline {
            return Ok(Vec::new());
        }
        let evo = &self.cfg.evolution;
        let steps = self.pop.env_steps();
        if steps < evo.next_boundary(self.pop.last_boundary) {
            return Ok(Vec::new());
        }
        self.pop.last_boundary = Some(steps / evo.n_evo * evo.n_evo);
        self.pop.events_fired += 1;
        let ctx = EventContext {
            event: self.pop.events_fired,
            iteration: self.pop.iteration,
            step: steps,
        };
        let records = evolve_population(
            &mut self.pop.agents,
            &self.space,
            evo,
            &self.spec,
            ctx,
            &mut self.pop.evolution_rng,
        )?;
        if let Some(out) = &mut self.out {
            for r in &records {
                writeln!(out.events, "{}", r.to_line()).map_err(|e| Error::io(RunDir::events_path(&out.root), e))?;
            }
        }
        for r in &records {
            log::debug!("{}", r.to_line());
        }
        log::info!(
            "event {} at step {}: {} replacements",
            ctx.event,
            ctx.step,
            records.iter().filter(|r| r.is_replacement()).count()
        );
        self.pop.event_log.extend(records.iter().cloned());
        Ok(records)
    }

    pub fn checkpoint_path(&self, suffix: &str) -> Option<PathBuf> {
        self.out.as_ref().map(|o| {
            o.root
                .join(CHECKPOINT_DIR)
                .join(format!("ckpt_{}{suffix}.bin", self.pop.env_steps()))
        })
    }

    pub fn snapshot(&self) -> Checkpoint {
        Checkpoint::new(self.fingerprint, self.pop.clone())
    }

    /// Writes a checkpoint (when backed by a directory) and flushes logs.
    pub fn save_checkpoint(&mut self) -> Result<Option<PathBuf>> {
        self.save_checkpoint_as("")
    }

    fn save_checkpoint_as(&mut self, suffix: &str) -> Result<Option<PathBuf>> {
        let Some(path) = self.checkpoint_path(suffix) else {
            return Ok(None);
        };
        if let Some(out) = &mut self.out {
            out.flush()?;
        }
        self.snapshot().save(&path)?;
        Ok(Some(path))
    }

    /// One iteration: train, maybe evolve, maybe checkpoint.
    pub fn iterate(&mut self) -> Result<()> {
        if let Err(e) = self.train_step() {
            if matches!(e, Error::Poisoned { .. }) {
                if let Ok(Some(p)) = self.save_checkpoint_as("_poisoned") {
                    log::error!("training halted; diagnostic checkpoint at {}", p.display());
                }
            }
            return Err(e);
        }
        self.maybe_evolve()?;
        if self.pop.iteration.is_multiple_of(self.cfg.checkpoint_interval()) {
            self.save_checkpoint()?;
        }
        Ok(())
    }

    /// Trains until every agent has used its step budget.
    pub fn run(&mut self) -> Result<RunSummary> {
        while !self.finished() {
            self.iterate()?;
        }
        self.save_checkpoint()?;
        Ok(self.summary())
    }

    pub fn summary(&self) -> RunSummary {
        RunSummary {
            iterations: self.pop.iteration,
            events: self.pop.events_fired,
            replacements: self.pop.event_log.iter().filter(|r| r.is_replacement()).count(),
            env_steps_per_agent: self.pop.env_steps(),
            total_env_steps: self.pop.total_env_steps(),
            run_dir: self.run_dir().map(Path::to_path_buf),
        }
    }
}

impl Drop for Trainer {
    fn drop(&mut self) {
        if let Some(out) = &mut self.out {
            let _ = out.flush();
        }
    }
}

/// Most recent regular checkpoint in a run directory.
pub fn latest_checkpoint(run_dir: &Path) -> Result<PathBuf> {
    let dir = run_dir.join(CHECKPOINT_DIR);
    let entries = fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))?;
    entries
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().into_string().ok()?;
            let step: u64 = name.strip_prefix("ckpt_")?.strip_suffix(".bin")?.parse().ok()?;
            Some((step, e.path()))
        })
        .max_by_key(|(s, _)| *s)
        .map(|(_, p)| p)
        .ok_or_else(|| Error::contract(format!("no checkpoints in {}", dir.display())))
}
