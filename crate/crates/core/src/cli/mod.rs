//! Command-line surface: train, eval, plot, inspect, compare, defaults.

pub mod compare;
pub mod document;
pub mod plot;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use crate::agents::Algorithm;
use crate::envpack::EnvName;
use crate::error::{Error, Result};
use crate::orchestrator::trainer::{latest_checkpoint, SNAPSHOT_FILE};
use crate::orchestrator::{Checkpoint, PopulationState, RunConfig, Trainer};
use crate::parallel::Parallelism;

pub use document::{default_document, load_config, parse_config};

pub const OUTPUT_ROOT_ENV: &str = "PBRL_OUTPUT_ROOT";

#[derive(Debug, Parser)]
#[command(name = "pbrl", version, about = "Population-based reinforcement learning on small control tasks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a population (or independent baseline agents) from a config file.
    Train(TrainArgs),
    /// Run exploration-free episodes with one agent from a checkpoint.
    Eval(EvalArgs),
    /// Draw learning curves (mean ± std across agents) as SVG plus CSV.
    Plot(PlotArgs),
    /// Print the population table stored in a checkpoint.
    Inspect(InspectArgs),
    /// Run all mutation schemes on the surrogate landscape under shared seeds.
    Compare(CompareArgs),
    /// Print the full default config for an algorithm and env.
    Defaults(DefaultsArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Run config (TOML). Missing keys take the task's default profile.
    #[arg(long)]
    pub config: PathBuf,
    /// Master seed; drawn from entropy and recorded in the snapshot when absent.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory, overriding `run.out_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Train agents sequentially in index order.
    #[arg(long)]
    pub deterministic: bool,
    /// Per-agent env step budget, overriding `run.env_steps_per_agent`.
    #[arg(long)]
    pub steps: Option<u64>,
    /// Continue from this checkpoint (use the run's config.snapshot as --config).
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Root for relative output directories.
    #[arg(long, env = OUTPUT_ROOT_ENV)]
    pub output_root: Option<PathBuf>,
}

/// Which population member to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AgentChoice {
    Best,
    Worst,
    Index(usize),
}

impl FromStr for AgentChoice {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "best" => Ok(AgentChoice::Best),
            "worst" => Ok(AgentChoice::Worst),
            other => other
                .parse()
                .map(AgentChoice::Index)
                .map_err(|_| format!("expected best, worst or an agent index, got `{other}`")),
        }
    }
}

impl AgentChoice {
    /// Resolves against a population; best and worst use fitness at the last event.
    pub fn resolve(self, pop: &PopulationState) -> Result<usize> {
        let n = pop.agents.len();
        match self {
            AgentChoice::Index(i) if i < n => Ok(i),
            AgentChoice::Index(i) => Err(Error::config(
                "--agent",
                format!("index {i} out of range for a population of n = {n}"),
            )),
            AgentChoice::Best => pop.select(true).ok_or_else(|| Error::contract("empty population")),
            AgentChoice::Worst => pop.select(false).ok_or_else(|| Error::contract("empty population")),
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Number of evaluation episodes.
    #[arg(long, default_value_t = 10)]
    pub episodes: usize,
    /// best, worst or an agent index.
    #[arg(long, default_value = "best")]
    pub agent: AgentChoice,
    /// Config of the run; defaults to the snapshot two levels above the checkpoint.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed of the evaluation env.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// Run directories; one curve each.
    #[arg(long, num_args = 1.., required = true)]
    pub runs: Vec<PathBuf>,
    /// SVG output path; aggregated points go next to it with a .csv extension.
    #[arg(long)]
    pub out: PathBuf,
    /// Metrics column to plot.
    #[arg(long, default_value = "mean_return_window")]
    pub metric: String,
    /// Also draw every agent's own curve.
    #[arg(long)]
    pub per_agent: bool,
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct InspectTarget {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Run directory; its latest checkpoint is inspected.
    #[arg(long)]
    pub run: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[command(flatten)]
    pub target: InspectTarget,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Surrogate run config; defaults to the built-in surrogate profile.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seeds shared by all schemes.
    #[arg(long, num_args = 1.., default_values_t = [0u64, 1, 2, 3, 4])]
    pub seeds: Vec<u64>,
    /// Directory for schemes.svg, schemes.csv and summary.txt.
    #[arg(long)]
    pub out: PathBuf,
    /// Run the trials one after another.
    #[arg(long)]
    pub deterministic: bool,
    #[arg(long, env = OUTPUT_ROOT_ENV)]
    pub output_root: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DefaultsArgs {
    #[arg(long, default_value = "ppo")]
    pub algorithm: String,
    /// Defaults to pendulum, or surrogate for the surrogate algorithm.
    #[arg(long)]
    pub env: Option<String>,
}

/// Relative paths land under the output root when one is given.
pub fn resolve_output(path: &Path, root: Option<&Path>) -> PathBuf {
    match root {
        Some(r) if path.is_relative() => r.join(path),
        _ => path.to_path_buf(),
    }
}

fn emit(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes()).map_err(|e| Error::io("<stdout>", e))
}

pub fn train(args: &TrainArgs, out: &mut dyn Write) -> Result<()> {
    let mut cfg = load_config(&args.config)?;
    if let Some(s) = args.seed {
        cfg.run.seed = Some(s);
    }
    if let Some(o) = &args.out {
        cfg.run.out_dir = o.clone();
    }
    if let Some(s) = args.steps {
        cfg.run.env_steps_per_agent = s;
    }
    cfg.run.deterministic |= args.deterministic;
    cfg.run.out_dir = resolve_output(&cfg.run.out_dir, args.output_root.as_deref());
    let mut trainer = match &args.resume {
        Some(p) => Trainer::resume(cfg, Checkpoint::load(p)?)?,
        None => Trainer::new(cfg)?,
    };
    let summary = trainer.run()?;
    let dir = trainer.run_dir().map(|p| p.display().to_string()).unwrap_or_default();
    emit(
        out,
        &format!(
            "run_dir={dir}\nseed={}\niterations={}\nevents={}\nreplacements={}\nenv_steps_per_agent={}\ntotal_env_steps={}\n",
            trainer.config().run.seed.unwrap_or_default(),
            summary.iterations,
            summary.events,
            summary.replacements,
            summary.env_steps_per_agent,
            summary.total_env_steps
        ),
    )
}

/// Loads a checkpoint together with the config that produced it.
pub fn load_run(checkpoint: &Path, config: Option<&Path>) -> Result<(RunConfig, Checkpoint)> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let cfg_path = match config {
        Some(p) => p.to_path_buf(),
        None => checkpoint
            .parent()
            .and_then(Path::parent)
            .map(|d| d.join(SNAPSHOT_FILE))
            .ok_or_else(|| Error::config("--config", "cannot locate the run's config snapshot"))?,
    };
    let cfg = load_config(&cfg_path)?;
    if cfg.fingerprint() != ckpt.config_hash {
        return Err(Error::config(
            "--config",
            format!("{} did not produce this checkpoint", cfg_path.display()),
        ));
    }
    Ok((cfg, ckpt))
}

/// Mean and std of `episodes` greedy returns of the chosen agent.
pub fn evaluate(args: &EvalArgs) -> Result<(usize, f64, f64)> {
    if args.episodes == 0 {
        return Err(Error::config("--episodes", "episodes must be ≥ 1"));
    }
    let (cfg, ckpt) = load_run(&args.checkpoint, args.config.as_deref())?;
    let idx = args.agent.resolve(&ckpt.population)?;
    let returns = ckpt.population.agents[idx].evaluate(&cfg.agent_spec(), args.episodes, args.seed)?;
    let (m, s) = plot::mean_std(&returns);
    Ok((idx, m, s))
}

pub fn eval(args: &EvalArgs, out: &mut dyn Write) -> Result<()> {
    let (idx, m, s) = evaluate(args)?;
    emit(out, &format!("agent {idx}: {m:.6} ± {s:.6} over {} episodes\n", args.episodes))
}

/// Human-readable population table.
pub fn population_table(pop: &PopulationState) -> String {
    let fmt_opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "-".into());
    let mut s = format!(
        "iteration={} events={} env_steps_per_agent={}\n{:<6} {:>14} {:>14} {:>10} {:<17} hypers\n",
        pop.iteration,
        pop.events_fired,
        pop.env_steps(),
        "agent",
        "fitness",
        "window_mean",
        "env_steps",
        "digest"
    );
    for a in &pop.agents {
        let hypers: Vec<String> = a.hypers.iter().map(|(k, v)| format!("{k}={v:.6e}")).collect();
        s.push_str(&format!(
            "{:<6} {:>14} {:>14} {:>10} {:<17} {}\n",
            a.id,
            fmt_opt(a.fitness_at_last_event),
            fmt_opt(a.window_mean()),
            a.env_steps,
            a.digest(),
            hypers.join(" ")
        ));
    }
    s
}

pub fn inspect(args: &InspectArgs, out: &mut dyn Write) -> Result<()> {
    let path = match (&args.target.checkpoint, &args.target.run) {
        (Some(p), _) => p.clone(),
        (None, Some(r)) => latest_checkpoint(r)?,
        (None, None) => return Err(Error::config("--checkpoint", "give a checkpoint or a run directory")),
    };
    let ckpt = Checkpoint::load(&path)?;
    emit(out, &population_table(&ckpt.population))
}

pub fn plot_cmd(args: &PlotArgs, out: &mut dyn Write) -> Result<()> {
    let curves = plot::plot_runs(&args.runs, &args.out, &args.metric, args.per_agent)?;
    let points: usize = curves.iter().map(|c| c.points.len()).sum();
    emit(
        out,
        &format!(
            "wrote {} and {} ({} curves, {points} points)\n",
            args.out.display(),
            args.out.with_extension("csv").display(),
            curves.len()
        ),
    )
}

pub fn compare_cmd(args: &CompareArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = match &args.config {
        Some(p) => load_config(p)?,
        None => RunConfig::for_task(Algorithm::Surrogate, EnvName::Surrogate),
    };
    let mode = if args.deterministic {
        Parallelism::Sequential
    } else {
        Parallelism::Parallel
    };
    let result = compare::compare_schemes(&cfg, &args.seeds, mode)?;
    let dir = resolve_output(&args.out, args.output_root.as_deref());
    result.write(&dir)?;
    emit(out, &result.table())?;
    emit(out, &format!("wrote {}\n", dir.display()))
}

pub fn defaults(args: &DefaultsArgs, out: &mut dyn Write) -> Result<()> {
    let algorithm: Algorithm = args.algorithm.parse()?;
    let env = match &args.env {
        Some(e) => e.parse()?,
        None if algorithm == Algorithm::Surrogate => EnvName::Surrogate,
        None => EnvName::Pendulum,
    };
    emit(out, &default_document(algorithm, env)?)
}

/// Dispatches a parsed command line.
pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::Train(a) => train(a, out),
        Command::Eval(a) => eval(a, out),
        Command::Plot(a) => plot_cmd(a, out),
        Command::Inspect(a) => inspect(a, out),
        Command::Compare(a) => compare_cmd(a, out),
        Command::Defaults(a) => defaults(a, out),
    }
}
