//! Learning curves from run directories: mean ± std band across agents, as SVG and CSV.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::orchestrator::trainer::METRICS_DIR;

/// One aggregated point: mean and sample std of the agents' values at a step.
#[derive(Debug, Clone, PartialEq)]
pub struct BandPoint {
    pub env_steps: f64,
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub label: String,
    pub points: Vec<BandPoint>,
    /// `(env_steps, value)` per agent, finite values only.
    pub agents: Vec<Vec<(f64, f64)>>,
}

/// Sample mean and std (n − 1 denominator; zero for a single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn agent_files(run: &Path) -> Result<Vec<PathBuf>> {
    let dir = run.join(METRICS_DIR);
    let mut files: Vec<(usize, PathBuf)> = fs::read_dir(&dir)
        .map_err(|e| Error::io(&dir, e))?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().into_string().ok()?;
            let id = name.strip_prefix("agent_")?.strip_suffix(".csv")?.parse().ok()?;
            Some((id, e.path()))
        })
        .collect();
    if files.is_empty() {
        return Err(Error::contract(format!("no agent metrics in {}", dir.display())));
    }
    files.sort();
    Ok(files.into_iter().map(|(_, p)| p).collect())
}

/// Reads one run's metric into a curve labelled by the directory name.
pub fn read_run(run: &Path, metric: &str) -> Result<Curve> {
    let mut by_iter: BTreeMap<u64, (f64, Vec<f64>)> = BTreeMap::new();
    let mut agents = Vec::new();
    for path in agent_files(run)? {
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut lines = text.lines();
        let header: Vec<&str> = lines.next().unwrap_or("").split(',').collect();
        let col = |name: &str| header.iter().position(|h| *h == name);
        let (Some(ic), Some(sc)) = (col("iteration"), col("env_steps")) else {
            return Err(Error::contract(format!("{}: not a metrics file", path.display())));
        };
        let Some(mc) = col(metric) else {
            return Err(Error::config(
                "--metric",
                format!("no column `{metric}`; available: {}", header.join(", ")),
            ));
        };
        let mut own = Vec::new();
        for (k, line) in lines.enumerate() {
            let f: Vec<&str> = line.split(',').collect();
            let parse = |c: usize| -> Result<f64> {
                f.get(c).and_then(|s| s.parse().ok()).ok_or_else(|| {
                    Error::contract(format!("{}: malformed row {}", path.display(), k + 2))
                })
            };
            let it = parse(ic)? as u64;
            let (steps, v) = (parse(sc)?, parse(mc)?);
            let slot = by_iter.entry(it).or_insert((steps, Vec::new()));
            if v.is_finite() {
                slot.1.push(v);
                own.push((steps, v));
            }
        }
        agents.push(own);
    }
    let points = by_iter
        .into_values()
        .filter(|(_, vs)| !vs.is_empty())
        .map(|(env_steps, vs)| {
            let (mean, std) = mean_std(&vs);
            BandPoint {
                env_steps,
                mean,
                std,
                count: vs.len(),
            }
        })
        .collect();
    let label = run
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| run.display().to_string());
    Ok(Curve { label, points, agents })
}

pub fn curves_csv(curves: &[Curve]) -> String {
    let mut out = String::from("run,env_steps,mean,std,agents\n");
    for c in curves {
        for p in &c.points {
            let _ = writeln!(out, "{},{},{},{},{}", c.label, p.env_steps, p.mean, p.std, p.count);
        }
    }
    out
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn span(lo: f64, hi: f64) -> (f64, f64) {
    if !(lo.is_finite() && hi.is_finite()) {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        let pad = lo.abs().max(1.0) * 0.05;
        return (lo - pad, hi + pad);
    }
    let pad = (hi - lo) * 0.05;
    (lo - pad, hi + pad)
}

fn tick_label(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e5 || v.abs() < 1e-2) {
        format!("{v:.2e}")
    } else {
        format!("{:.3}", v).trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

/// Self-contained SVG with one band and mean line per curve.
pub fn render_svg(curves: &[Curve], metric: &str, per_agent: bool) -> String {
    let (w, h) = (820.0, 500.0);
    let (left, right, top, bottom) = (80.0, 180.0, 40.0, 60.0);
    let (pw, ph) = (w - left - right, h - top - bottom);

    let mut xs = (f64::INFINITY, f64::NEG_INFINITY);
    let mut ys = (f64::INFINITY, f64::NEG_INFINITY);
    let mut see = |x: f64, lo: f64, hi: f64| {
        xs = (xs.0.min(x), xs.1.max(x));
        ys = (ys.0.min(lo), ys.1.max(hi));
    };
    for c in curves {
        c.points.iter().for_each(|p| see(p.env_steps, p.mean - p.std, p.mean + p.std));
        if per_agent {
            c.agents.iter().flatten().for_each(|&(x, y)| see(x, y, y));
        }
    }
    let (x0, x1) = span(xs.0, xs.1);
    let (y0, y1) = span(ys.0, ys.1);
    let px = |x: f64| left + (x - x0) / (x1 - x0) * pw;
    let py = |y: f64| top + (1.0 - (y - y0) / (y1 - y0)) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for k in 0..=5 {
        let f = k as f64 / 5.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let (tx, ty) = (px(xv), py(yv));
        let _ = writeln!(
            s,
            r##"<line x1="{tx:.2}" y1="{b:.2}" x2="{tx:.2}" y2="{b2:.2}" stroke="black"/><text x="{tx:.2}" y="{t:.2}" text-anchor="middle">{}</text>"##,
            tick_label(xv),
            b = top + ph,
            b2 = top + ph + 5.0,
            t = top + ph + 20.0
        );
        let _ = writeln!(
            s,
            r##"<line x1="{l2:.2}" y1="{ty:.2}" x2="{left}" y2="{ty:.2}" stroke="black"/><text x="{l3:.2}" y="{ty4:.2}" text-anchor="end">{}</text>"##,
            tick_label(yv),
            l2 = left - 5.0,
            l3 = left - 8.0,
            ty4 = ty + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">env steps per agent</text>"#,
        left + pw / 2.0,
        h - 15.0
    );
    let _ = writeln!(
        s,
        r#"<text x="20" y="{:.2}" text-anchor="middle" transform="rotate(-90 20 {:.2})">{}</text>"#,
        top + ph / 2.0,
        top + ph / 2.0,
        escape(metric)
    );

    for (i, c) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        if c.points.is_empty() {
            continue;
        }
        let upper = c.points.iter().map(|p| format!("{:.2},{:.2}", px(p.env_steps), py(p.mean + p.std)));
        let lower = c.points.iter().rev().map(|p| format!("{:.2},{:.2}", px(p.env_steps), py(p.mean - p.std)));
        let band: Vec<String> = upper.chain(lower).collect();
        let _ = writeln!(
            s,
            r#"<polygon points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#,
            band.join(" ")
        );
        if per_agent {
            for a in &c.agents {
                let pts: Vec<String> = a.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
                let _ = writeln!(
                    s,
                    r#"<polyline points="{}" fill="none" stroke="{color}" stroke-opacity="0.45" stroke-width="0.8"/>"#,
                    pts.join(" ")
                );
            }
        }
        let line: Vec<String> = c.points.iter().map(|p| format!("{:.2},{:.2}", px(p.env_steps), py(p.mean))).collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            line.join(" ")
        );
        let ly = top + 10.0 + 20.0 * i as f64;
        let lx = left + pw + 15.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{:.2}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            escape(&c.label)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Reads every run, writes the SVG to `out` and the aggregated points next to it as CSV.
pub fn plot_runs(runs: &[PathBuf], out: &Path, metric: &str, per_agent: bool) -> Result<Vec<Curve>> {
    if runs.is_empty() {
        return Err(Error::config("--runs", "at least one run directory is required"));
    }
    let curves = runs.iter().map(|r| read_run(r, metric)).collect::<Result<Vec<_>>>()?;
    write_plot(&curves, out, metric, per_agent)?;
    Ok(curves)
}

pub fn write_plot(curves: &[Curve], out: &Path, metric: &str, per_agent: bool) -> Result<()> {
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(out, render_svg(curves, metric, per_agent)).map_err(|e| Error::io(out, e))?;
    let csv = out.with_extension("csv");
    fs::write(&csv, curves_csv(curves)).map_err(|e| Error::io(&csv, e))
}
