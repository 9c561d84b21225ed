//! Per-agent metrics CSV files.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::agents::AgentState;
use crate::error::{Error, Result};

pub const FIXED_COLUMNS: [&str; 6] = [
    "iteration",
    "env_steps",
    "agent_id",
    "mean_return_window",
    "fitness_at_last_event",
    "lr",
];

pub fn header(hyper_names: &[String]) -> String {
    let mut cols: Vec<&str> = FIXED_COLUMNS.to_vec();
    cols.extend(hyper_names.iter().map(String::as_str));
    cols.join(",")
}

pub fn row(iteration: u64, agent: &AgentState) -> String {
    let mut fields = vec![
        iteration.to_string(),
        agent.env_steps.to_string(),
        agent.id.to_string(),
        agent.window_mean().unwrap_or(f64::NAN).to_string(),
        agent.fitness_at_last_event.unwrap_or(f64::NAN).to_string(),
        agent.current_lr().to_string(),
    ];
    fields.extend(agent.hypers.iter().map(|(_, v)| v.to_string()));
    fields.join(",")
}

pub fn agent_path(metrics_dir: &Path, id: usize) -> PathBuf {
    metrics_dir.join(format!("agent_{id}.csv"))
}

/// Open writers for every agent's CSV.
pub struct MetricsWriter {
    files: Vec<(PathBuf, BufWriter<File>)>,
}

impl MetricsWriter {
    /// Creates fresh files with headers.
    pub fn create(dir: &Path, agents: usize, hyper_names: &[String]) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut files = Vec::with_capacity(agents);
        for id in 0..agents {
            let p = agent_path(dir, id);
            let f = File::create(&p).map_err(|e| Error::io(&p, e))?;
            let mut w = BufWriter::new(f);
            writeln!(w, "{}", header(hyper_names)).map_err(|e| Error::io(&p, e))?;
            files.push((p, w));
        }
        Ok(Self { files })
    }

    /// Reopens existing files, dropping rows after `iteration`.
    pub fn reopen(dir: &Path, agents: usize, hyper_names: &[String], iteration: u64) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut files = Vec::with_capacity(agents);
        for id in 0..agents {
            let p = agent_path(dir, id);
            let mut kept = header(hyper_names) + "\n";
            if let Ok(text) = fs::read_to_string(&p) {
                for line in text.lines().skip(1) {
                    let it = line.split(',').next().and_then(|s| s.parse::<u64>().ok());
                    if it.is_some_and(|i| i <= iteration) {
                        kept.push_str(line);
                        kept.push('\n');
                    }
                }
            }
            fs::write(&p, kept).map_err(|e| Error::io(&p, e))?;
            let f = OpenOptions::new().append(true).open(&p).map_err(|e| Error::io(&p, e))?;
            files.push((p, BufWriter::new(f)));
        }
        Ok(Self { files })
    }

    pub fn append(&mut self, iteration: u64, agents: &[AgentState]) -> Result<()> {
        for ((p, w), a) in self.files.iter_mut().zip(agents) {
            writeln!(w, "{}", row(iteration, a)).map_err(|e| Error::io(p.as_path(), e))?;
        }
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        for (p, w) in &mut self.files {
            w.flush().map_err(|e| Error::io(p.as_path(), e))?;
        }
        Ok(())
    }
}
