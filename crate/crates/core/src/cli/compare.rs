//! Runs every mutation scheme on the surrogate landscape under shared seeds.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::agents::{Algorithm, Learner};
use crate::cli::plot::{mean_std, write_plot, BandPoint, Curve};
use crate::error::{Error, Result};
use crate::evolution::MutationScheme;
use crate::orchestrator::{PopulationState, RunConfig, Trainer};
use crate::parallel::{map_range, Parallelism};

/// Best true objective in the population after every iteration of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemeTrace {
    pub scheme: MutationScheme,
    pub seed: u64,
    /// `(env_steps, best true objective)` per iteration.
    pub best: Vec<(u64, f64)>,
    pub replacements: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchemeSummary {
    pub scheme: MutationScheme,
    pub final_mean: f64,
    pub final_std: f64,
    pub final_min: f64,
    pub final_max: f64,
    pub replacements_mean: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub traces: Vec<SchemeTrace>,
    pub summary: Vec<SchemeSummary>,
}

/// Highest true objective among surrogate agents.
pub fn best_true_objective(pop: &PopulationState) -> f64 {
    pop.agents
        .iter()
        .filter_map(|a| match &a.learner {
            Learner::Surrogate(l) => Some(l.true_objective()),
            _ => None,
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Trains one population in memory and records the best true objective per iteration.
pub fn trace_run(base: &RunConfig, scheme: MutationScheme, seed: u64) -> Result<SchemeTrace> {
    let mut cfg = base.clone();
    cfg.evolution.scheme = scheme;
    cfg.run.seed = Some(seed);
    cfg.run.deterministic = true;
    let mut t = Trainer::in_memory(cfg)?;
    let mut best = Vec::new();
    while !t.finished() {
        t.train_step()?;
        t.maybe_evolve()?;
        best.push((t.pop.env_steps(), best_true_objective(&t.pop)));
    }
    Ok(SchemeTrace {
        scheme,
        seed,
        best,
        replacements: t.summary().replacements,
    })
}

fn summarize(scheme: MutationScheme, traces: &[&SchemeTrace]) -> SchemeSummary {
    let finals: Vec<f64> = traces.iter().filter_map(|t| t.best.last().map(|p| p.1)).collect();
    let (final_mean, final_std) = mean_std(&finals);
    SchemeSummary {
        scheme,
        final_mean,
        final_std,
        final_min: finals.iter().copied().fold(f64::INFINITY, f64::min),
        final_max: finals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        replacements_mean: traces.iter().map(|t| t.replacements as f64).sum::<f64>() / traces.len().max(1) as f64,
    }
}

/// Runs all three schemes for every seed. Results do not depend on `parallelism`.
pub fn compare_schemes(base: &RunConfig, seeds: &[u64], parallelism: Parallelism) -> Result<Comparison> {
    if base.run.algorithm != Algorithm::Surrogate {
        return Err(Error::config("run.algorithm", "the scheme comparison runs on the surrogate landscape"));
    }
    if seeds.is_empty() {
        return Err(Error::config("--seeds", "at least one seed is required"));
    }
    let jobs: Vec<(MutationScheme, u64)> = MutationScheme::ALL
        .iter()
        .flat_map(|s| seeds.iter().map(move |&seed| (*s, seed)))
        .collect();
    let traces = map_range(jobs.len(), parallelism, |i| trace_run(base, jobs[i].0, jobs[i].1))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let summary = MutationScheme::ALL
        .iter()
        .map(|s| summarize(*s, &traces.iter().filter(|t| t.scheme == *s).collect::<Vec<_>>()))
        .collect();
    Ok(Comparison { traces, summary })
}

impl Comparison {
    /// Mean ± std across seeds of the best true objective, one curve per scheme.
    pub fn curves(&self) -> Vec<Curve> {
        MutationScheme::ALL
            .iter()
            .map(|s| {
                let runs: Vec<&SchemeTrace> = self.traces.iter().filter(|t| t.scheme == *s).collect();
                let len = runs.iter().map(|t| t.best.len()).min().unwrap_or(0);
                let points = (0..len)
                    .map(|k| {
                        let vs: Vec<f64> = runs.iter().map(|t| t.best[k].1).collect();
                        let (mean, std) = mean_std(&vs);
                        BandPoint {
                            env_steps: runs[0].best[k].0 as f64,
                            mean,
                            std,
                            count: vs.len(),
                        }
                    })
                    .collect();
                Curve {
                    label: s.as_str().to_string(),
                    points,
                    agents: runs
                        .iter()
                        .map(|t| t.best.iter().map(|&(x, y)| (x as f64, y)).collect())
                        .collect(),
                }
            })
            .collect()
    }

    pub fn table(&self) -> String {
        let mut out = format!(
            "{:<10} {:>12} {:>12} {:>12} {:>12} {:>13}\n",
            "scheme", "final_mean", "final_std", "final_min", "final_max", "replacements"
        );
        for s in &self.summary {
            let _ = writeln!(
                out,
                "{:<10} {:>12.6} {:>12.6} {:>12.6} {:>12.6} {:>13.1}",
                s.scheme.as_str(),
                s.final_mean,
                s.final_std,
                s.final_min,
                s.final_max,
                s.replacements_mean
            );
        }
        out
    }

    /// Writes `schemes.svg`, `schemes.csv` and `summary.txt` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_plot(&self.curves(), &dir.join("schemes.svg"), "best true objective", false)?;
        let p = dir.join("summary.txt");
        fs::write(&p, self.table()).map_err(|e| Error::io(&p, e))
    }
}
