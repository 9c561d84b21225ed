//! TOML run documents layered over the per-task default profile.

use std::fs;
use std::ops::Range;
use std::path::Path;

use toml::{Table, Value};

use crate::agents::Algorithm;
use crate::envpack::EnvName;
use crate::error::{Error, Result};
use crate::orchestrator::RunConfig;

/// 1-based line of a byte offset.
fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Dotted key for the entry on `line`, qualified by the enclosing `[section]`.
fn key_at(text: &str, line: usize) -> String {
    let mut section = String::new();
    for (i, raw) in text.lines().enumerate() {
        let l = raw.trim();
        if l.starts_with('[') {
            section = l.trim_matches(|c| c == '[' || c == ']').trim().to_string();
        }
        if i + 1 == line {
            if l.starts_with('[') {
                return section;
            }
            let key = l.split('=').next().unwrap_or("").trim().trim_matches('"');
            return match (section.is_empty(), key.is_empty()) {
                (_, true) => section,
                (true, false) => key.to_string(),
                (false, false) => format!("{section}.{key}"),
            };
        }
    }
    "document".into()
}

fn located(text: &str, span: Option<Range<usize>>, message: &str) -> Error {
    match span {
        Some(s) => {
            let line = line_of(text, s.start);
            Error::config(format!("{} (line {line})", key_at(text, line)), message.trim())
        }
        None => Error::config("document", message.trim()),
    }
}

fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn task_of(user: &Table) -> Result<(Algorithm, EnvName)> {
    let run = user.get("run").and_then(Value::as_table);
    let field = |name: &str| run.and_then(|r| r.get(name)).and_then(Value::as_str);
    let algorithm = field("algorithm").map(str::parse).transpose()?.unwrap_or(Algorithm::Ppo);
    let default_env = if algorithm == Algorithm::Surrogate {
        EnvName::Surrogate
    } else {
        EnvName::Pendulum
    };
    let env = field("env").map(str::parse).transpose()?.unwrap_or(default_env);
    Ok((algorithm, env))
}

/// Parses a run document. Keys left out take the default profile of the
/// document's algorithm and env.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    // Strict pass over the user's text alone so errors point at their lines.
    toml::from_str::<RunConfig>(text).map_err(|e| located(text, e.span(), e.message()))?;
    let user: Table = toml::from_str(text).map_err(|e| located(text, e.span(), e.message()))?;
    let (algorithm, env) = task_of(&user)?;
    let defaults = RunConfig::for_task(algorithm, env).to_toml()?;
    let mut merged: Table = toml::from_str(&defaults).map_err(|e| Error::config("document", e.to_string()))?;
    merge(&mut merged, user);
    let cfg: RunConfig = merged
        .try_into()
        .map_err(|e: toml::de::Error| Error::config("document", e.message().trim()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text).map_err(|e| match e {
        Error::Config { key, message } => Error::Config {
            key: format!("{}: {key}", path.display()),
            message,
        },
        other => other,
    })
}

/// The complete default document for a task, every field spelled out.
pub fn default_document(algorithm: Algorithm, env: EnvName) -> Result<String> {
    RunConfig::for_task(algorithm, env).to_toml()
}
