//! Append-only evolution log records, one text line each.

use std::collections::BTreeMap;
use std::fmt;

use crate::agents::HyperSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum EventRecord {
    /// Ranking of one event, with parameter digests before and after replacement.
    Partition {
        event: u64,
        iteration: u64,
        step: u64,
        top: Vec<usize>,
        mid: Vec<usize>,
        bottom: Vec<usize>,
        fitness: Vec<f64>,
        before: Vec<String>,
        after: Vec<String>,
    },
    Replacement {
        event: u64,
        iteration: u64,
        step: u64,
        child: usize,
        parent: usize,
        parent_fitness: f64,
        child_fitness: f64,
        parent_digest: String,
        child_digest: String,
        old_hypers: HyperSet,
        new_hypers: HyperSet,
    },
    /// Event reached with fewer than two agents.
    Noop {
        event: u64,
        iteration: u64,
        step: u64,
        population: usize,
    },
}

fn join<T: fmt::Display>(xs: &[T]) -> String {
    if xs.is_empty() {
        return "-".into();
    }
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn hypers_field(h: &HyperSet) -> String {
    if h.is_empty() {
        return "-".into();
    }
    h.iter().map(|(k, v)| format!("{k}:{v}")).collect::<Vec<_>>().join(",")
}

impl EventRecord {
    pub fn event(&self) -> u64 {
        match self {
            EventRecord::Partition { event, .. }
            | EventRecord::Replacement { event, .. }
            | EventRecord::Noop { event, .. } => *event,
        }
    }

    pub fn step(&self) -> u64 {
        match self {
            EventRecord::Partition { step, .. } | EventRecord::Replacement { step, .. } | EventRecord::Noop { step, .. } => {
                *step
            }
        }
    }

    pub fn is_replacement(&self) -> bool {
        matches!(self, EventRecord::Replacement { .. })
    }

    pub fn to_line(&self) -> String {
        match self {
            EventRecord::Partition {
                event,
                iteration,
                step,
                top,
                mid,
                bottom,
                fitness,
                before,
                after,
            } => format!(
                "kind=partition event={event} iteration={iteration} step={step} top={} mid={} bottom={} fitness={} before={} after={}",
                join(top),
                join(mid),
                join(bottom),
                join(fitness),
                join(before),
                join(after)
            ),
            EventRecord::Replacement {
                event,
                iteration,
                step,
                child,
                parent,
                parent_fitness,
                child_fitness,
                parent_digest,
                child_digest,
                old_hypers,
                new_hypers,
            } => format!(
                "kind=replacement event={event} iteration={iteration} step={step} child={child} parent={parent} \
                 parent_fitness={parent_fitness} child_fitness={child_fitness} parent_digest={parent_digest} \
                 child_digest={child_digest} old_hypers={} new_hypers={}",
                hypers_field(old_hypers),
                hypers_field(new_hypers)
            ),
            EventRecord::Noop {
                event,
                iteration,
                step,
                population,
            } => format!("kind=noop event={event} iteration={iteration} step={step} population={population}"),
        }
    }

    pub fn parse_line(line: &str) -> Result<Self> {
        let fields: BTreeMap<&str, &str> = line
            .split_whitespace()
            .map(|tok| tok.split_once('=').ok_or_else(|| bad(line, tok)))
            .collect::<Result<_>>()?;
        let get = |k: &str| fields.get(k).copied().ok_or_else(|| bad(line, k));
        let num = |k: &str| get(k)?.parse::<u64>().map_err(|_| bad(line, k));
        let real = |k: &str| get(k)?.parse::<f64>().map_err(|_| bad(line, k));
        let list = |k: &str| -> Result<Vec<String>> {
            let v = get(k)?;
            Ok(if v == "-" {
                Vec::new()
            } else {
                v.split(',').map(str::to_string).collect()
            })
        };
        let idx = |k: &str| -> Result<Vec<usize>> {
            list(k)?.iter().map(|s| s.parse().map_err(|_| bad(line, k))).collect()
        };
        let hypers = |k: &str| -> Result<HyperSet> {
            let mut h = HyperSet::new();
            for item in list(k)? {
                let (name, v) = item.split_once(':').ok_or_else(|| bad(line, k))?;
                h.set(name, v.parse().map_err(|_| bad(line, k))?);
            }
            Ok(h)
        };
        match get("kind")? {
            "partition" => Ok(EventRecord::Partition {
                event: num("event")?,
                iteration: num("iteration")?,
                step: num("step")?,
                top: idx("top")?,
                mid: idx("mid")?,
                bottom: idx("bottom")?,
                fitness: list("fitness")?
                    .iter()
                    .map(|s| s.parse().map_err(|_| bad(line, "fitness")))
                    .collect::<Result<_>>()?,
                before: list("before")?,
                after: list("after")?,
            }),
            "replacement" => Ok(EventRecord::Replacement {
                event: num("event")?,
                iteration: num("iteration")?,
                step: num("step")?,
                child: num("child")? as usize,
                parent: num("parent")? as usize,
                parent_fitness: real("parent_fitness")?,
                child_fitness: real("child_fitness")?,
                parent_digest: get("parent_digest")?.to_string(),
                child_digest: get("child_digest")?.to_string(),
                old_hypers: hypers("old_hypers")?,
                new_hypers: hypers("new_hypers")?,
            }),
            "noop" => Ok(EventRecord::Noop {
                event: num("event")?,
                iteration: num("iteration")?,
                step: num("step")?,
                population: num("population")? as usize,
            }),
            other => Err(bad(line, other)),
        }
    }
}

fn bad(line: &str, field: &str) -> Error {
    Error::contract(format!("malformed event line at `{field}`: {line}"))
}

/// Parses every non-empty line of an event log.
pub fn parse_log(text: &str) -> Result<Vec<EventRecord>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(EventRecord::parse_line)
        .collect()
}
