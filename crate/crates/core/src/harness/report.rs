//! Convergence checks over recorded training runs.
//!
//! Per-iteration losses are single-batch estimates, so thresholds are applied
//! to a trailing mean over [`SMOOTH_WINDOW`] logged iterations.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::Path;

use crate::error::{Error, Result};
use crate::mgu::InitKind;
use crate::tasks::Task;

use super::io::{read_run_csv, write_trace_csv};
use super::train::RunLog;

pub const SMOOTH_WINDOW: usize = 100;
pub const MANIFEST: &str = "runs.csv";

/// Outcome of one named check.
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "[{status}] {}: {}", self.name, self.detail)
    }
}

/// Mean of the last `window` values at each position (fewer at the start).
pub fn trailing_mean(values: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    for (i, &v) in values.iter().enumerate() {
        acc += v;
        if i >= window {
            acc -= values[i - window];
        }
        out.push(acc / (i + 1).min(window) as f64);
    }
    out
}

/// First iteration whose value is strictly below `threshold`.
pub fn first_below(iterations: &[usize], values: &[f64], threshold: f64) -> Option<usize> {
    iterations
        .iter()
        .zip(values)
        .find(|(_, &v)| v < threshold)
        .map(|(&i, _)| i)
}

pub fn tail_mean(values: &[f64], n: usize) -> f64 {
    let tail = &values[values.len().saturating_sub(n)..];
    tail.iter().sum::<f64>() / tail.len().max(1) as f64
}

/// One seeded run as needed for evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct RunTrace {
    pub seed: u64,
    pub losses: Vec<(usize, f64)>,
    pub wall_time_s: f64,
    pub clip_events: usize,
}

impl RunTrace {
    pub fn from_log(log: &RunLog) -> Self {
        Self {
            seed: log.config.seed,
            losses: log.losses.clone(),
            wall_time_s: log.wall_time_s,
            clip_events: log.clip_events,
        }
    }

    fn iterations(&self) -> Vec<usize> {
        self.losses.iter().map(|p| p.0).collect()
    }

    fn values(&self) -> Vec<f64> {
        self.losses.iter().map(|p| p.1).collect()
    }

    fn smoothed(&self) -> Vec<f64> {
        trailing_mean(&self.values(), SMOOTH_WINDOW)
    }
}

/// Run traces grouped by `<task>-<size>-<init>`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GridResults {
    pub groups: BTreeMap<String, Vec<RunTrace>>,
}

pub fn group_label(task: Task, size: usize, init: InitKind) -> String {
    format!("{task}-{size}-{init}")
}

pub fn raw_csv_name(label: &str, seed: u64) -> String {
    format!("raw/{label}-seed{seed}.csv")
}

pub const MANIFEST_HEADER: &str = "label,seed,wall_time_s,clip_events,raw_csv\n";

/// Writes one raw trace under `dir` and returns its manifest row.
pub fn save_trace(dir: &Path, label: &str, r: &RunTrace) -> Result<String> {
    let name = raw_csv_name(label, r.seed);
    write_trace_csv(&r.losses, &dir.join(&name))?;
    Ok(format!(
        "{label},{},{},{},{name}\n",
        r.seed, r.wall_time_s, r.clip_events
    ))
}

impl GridResults {
    pub fn from_logs(logs: &[RunLog]) -> Self {
        let mut grid = GridResults::default();
        for log in logs {
            grid.groups
                .entry(log.config.label())
                .or_default()
                .push(RunTrace::from_log(log));
        }
        grid
    }

    pub fn get(&self, task: Task, size: usize, init: InitKind) -> Option<&[RunTrace]> {
        self.groups
            .get(&group_label(task, size, init))
            .map(Vec::as_slice)
    }

    /// Writes every raw trace plus a manifest (`runs.csv`) into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let manifest = dir.join(MANIFEST);
        let mut rows = String::from(MANIFEST_HEADER);
        for (label, runs) in &self.groups {
            for r in runs {
                rows.push_str(&save_trace(dir, label, r)?);
            }
        }
        std::fs::write(&manifest, rows).map_err(|e| Error::io(&manifest, e))
    }

    /// Loads a directory written by [`GridResults::save`].
    pub fn load(dir: &Path) -> Result<Self> {
        Self::load_manifest(dir, MANIFEST)
    }

    /// Loads any manifest in the `runs.csv` format; paths are relative to `dir`.
    pub fn load_manifest(dir: &Path, name: &str) -> Result<Self> {
        let manifest = dir.join(name);
        let text = std::fs::read_to_string(&manifest).map_err(|e| Error::io(&manifest, e))?;
        let mut grid = GridResults::default();
        for (n, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            let bad = || Error::parse(&manifest, n + 1, format!("malformed manifest row `{line}`"));
            if fields.len() != 5 {
                return Err(bad());
            }
            let seed = fields[1].parse().map_err(|_| bad())?;
            let wall_time_s = fields[2].parse().map_err(|_| bad())?;
            let clip_events = fields[3].parse().map_err(|_| bad())?;
            let losses = read_run_csv(&dir.join(fields[4]))?;
            grid.groups
                .entry(fields[0].to_string())
                .or_default()
                .push(RunTrace {
                    seed,
                    losses,
                    wall_time_s,
                    clip_events,
                });
        }
        Ok(grid)
    }

    /// Plain-text table of final (trailing-mean) losses per group.
    pub fn summary_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<22} {:>5} {:>12} {:>12} {:>12} {:>10}",
            "run", "seeds", "final mean", "final min", "final max", "time/run s"
        );
        for (label, runs) in &self.groups {
            let finals: Vec<f64> = runs
                .iter()
                .map(|r| tail_mean(&r.values(), SMOOTH_WINDOW))
                .collect();
            let mean = finals.iter().sum::<f64>() / finals.len().max(1) as f64;
            let min = finals.iter().copied().fold(f64::INFINITY, f64::min);
            let max = finals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let time = runs.iter().map(|r| r.wall_time_s).sum::<f64>() / runs.len().max(1) as f64;
            let _ = writeln!(
                s,
                "{label:<22} {:>5} {mean:>12.5} {min:>12.5} {max:>12.5} {time:>10.1}",
                runs.len()
            );
        }
        s
    }
}

/// Pointwise mean of smoothed traces sharing one grid.
fn mean_smoothed(runs: &[RunTrace]) -> (Vec<usize>, Vec<f64>) {
    let iters = runs[0].iterations();
    let mut mean = vec![0.0; iters.len()];
    for r in runs {
        for (m, v) in mean.iter_mut().zip(r.smoothed()) {
            *m += v / runs.len() as f64;
        }
    }
    (iters, mean)
}

fn fmt_opt(v: Option<usize>) -> String {
    v.map_or_else(|| "never".to_string(), |i| i.to_string())
}

fn missing(name: &str, label: &str) -> Check {
    Check::new(name, false, format!("no recorded runs for {label}"))
}

fn runtime_check(name: &str, runs: &[RunTrace], budget_s: f64) -> Check {
    let worst = runs.iter().map(|r| r.wall_time_s).fold(0.0, f64::max);
    Check::new(
        name,
        worst <= budget_s,
        format!("slowest run {worst:.1} s (budget {budget_s:.0} s)"),
    )
}

/// Seeds whose smoothed loss drops below `threshold` by `deadline`.
fn seeds_crossing_by(runs: &[RunTrace], threshold: f64, deadline: usize) -> (usize, Vec<String>) {
    let mut hits = 0;
    let mut firsts = Vec::new();
    for r in runs {
        let first = first_below(&r.iterations(), &r.smoothed(), threshold);
        if first.is_some_and(|i| i <= deadline) {
            hits += 1;
        }
        firsts.push(format!("seed {}: {}", r.seed, fmt_opt(first)));
    }
    (hits, firsts)
}

/// Convergence checks for the adding task at length 50.
pub fn adding_50_checks(grid: &GridResults) -> Vec<Check> {
    let (Some(chrono), Some(konst)) = (
        grid.get(Task::Adding, 50, InitKind::ChronoPositive),
        grid.get(Task::Adding, 50, InitKind::ConstantOne),
    ) else {
        return vec![missing("adding-50", "adding-50 chrono/const")];
    };
    let (hits_c, firsts_c) = seeds_crossing_by(chrono, 0.01, 2500);
    let (hits_k, firsts_k) = seeds_crossing_by(konst, 0.01, 4500);
    let (iters, mean_c) = mean_smoothed(chrono);
    let (iters_k, mean_k) = mean_smoothed(konst);
    let first_c = first_below(&iters, &mean_c, 0.01);
    let first_k = first_below(&iters_k, &mean_k, 0.01);
    let chrono_first = match (first_c, first_k) {
        (Some(c), Some(k)) => c < k,
        (Some(_), None) => true,
        _ => false,
    };
    let mut all_runs = chrono.to_vec();
    all_runs.extend_from_slice(konst);
    vec![
        Check::new(
            "adding-50 chrono MSE < 0.01 by iteration 2500 in >= 2 of 3 seeds",
            hits_c >= 2,
            format!("{hits_c} seeds ({})", firsts_c.join(", ")),
        ),
        Check::new(
            "adding-50 const MSE < 0.01 by iteration 4500 in >= 2 of 3 seeds",
            hits_k >= 2,
            format!("{hits_k} seeds ({})", firsts_k.join(", ")),
        ),
        Check::new(
            "adding-50 chrono mean curve crosses 0.01 before const",
            chrono_first,
            format!("chrono {}, const {}", fmt_opt(first_c), fmt_opt(first_k)),
        ),
        runtime_check("adding-50 runtime <= 5 min per run", &all_runs, 300.0),
    ]
}

/// Plateau and convergence checks for the adding task at length 250.
pub fn adding_250_checks(grid: &GridResults) -> Vec<Check> {
    let (Some(chrono), Some(konst)) = (
        grid.get(Task::Adding, 250, InitKind::ChronoPositive),
        grid.get(Task::Adding, 250, InitKind::ConstantOne),
    ) else {
        return vec![missing("adding-250", "adding-250 chrono/const")];
    };
    let plateau: Vec<f64> = konst.iter().map(|r| tail_mean(&r.values(), 500)).collect();
    let plateau_hits = plateau.iter().filter(|&&v| v >= 0.15).count();
    let finals: Vec<f64> = chrono
        .iter()
        .map(|r| tail_mean(&r.values(), SMOOTH_WINDOW))
        .collect();
    let solved = finals.iter().filter(|&&v| v < 0.05).count();
    let show = |v: &[f64]| {
        v.iter()
            .map(|x| format!("{x:.4}"))
            .collect::<Vec<_>>()
            .join(", ")
    };
    let mut all_runs = chrono.to_vec();
    all_runs.extend_from_slice(konst);
    vec![
        Check::new(
            "adding-250 const final-500 mean MSE >= 0.15 in >= 2 of 3 seeds",
            plateau_hits >= 2,
            format!("[{}]", show(&plateau)),
        ),
        Check::new(
            "adding-250 chrono final MSE < 0.05 in >= 2 of 3 seeds",
            solved >= 2,
            format!("[{}]", show(&finals)),
        ),
        runtime_check("adding-250 runtime <= 20 min per run", &all_runs, 1200.0),
    ]
}

/// Final-ordering and early-advantage checks for the copy task.
pub fn copy_checks(grid: &GridResults, t: usize) -> Vec<Check> {
    let (Some(chrono), Some(konst)) = (
        grid.get(Task::Copy, t, InitKind::ChronoPositive),
        grid.get(Task::Copy, t, InitKind::ConstantOne),
    ) else {
        return vec![missing(
            &format!("copy-{t}"),
            &format!("copy-{t} chrono/const"),
        )];
    };
    let (iters, mean_c) = mean_smoothed(chrono);
    let (_, mean_k) = mean_smoothed(konst);
    let last_c = *mean_c.last().unwrap_or(&f64::NAN);
    let last_k = *mean_k.last().unwrap_or(&f64::NAN);
    let early = iters
        .iter()
        .zip(mean_c.iter().zip(&mean_k))
        .filter(|(&i, _)| i <= 1000)
        .filter(|(_, (c, k))| k <= c)
        .map(|(&i, _)| i)
        .collect::<Vec<_>>();
    let mut checks = vec![
        Check::new(
            format!("copy-{t} final mean CE chrono < const"),
            last_c < last_k,
            format!(
                "chrono {last_c:.5}, const {last_k:.5} at iteration {}",
                iters.last().unwrap_or(&0)
            ),
        ),
        Check::new(
            format!("copy-{t} const <= chrono at some iteration <= 1000"),
            !early.is_empty(),
            format!(
                "{} such iterations{}",
                early.len(),
                early
                    .first()
                    .map_or(String::new(), |i| format!(", first {i}"))
            ),
        ),
    ];
    if t >= 200 {
        let mut all_runs = chrono.to_vec();
        all_runs.extend_from_slice(konst);
        checks.push(runtime_check(
            &format!("copy-{t} runtime <= 30 min per run"),
            &all_runs,
            1800.0,
        ));
    }
    checks
}

/// Every convergence check over a full reproduction grid.
pub fn evaluate_claims(grid: &GridResults) -> Vec<Check> {
    let mut checks = adding_50_checks(grid);
    checks.extend(adding_250_checks(grid));
    checks.extend(copy_checks(grid, 50));
    checks.extend(copy_checks(grid, 200));
    checks
}
