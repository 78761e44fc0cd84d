//! One check per acceptance criterion. Each test prints a `[PASS]` or
//! `[FAIL]` line (visible with `--nocapture`) before asserting.
//!
//! Criteria 2-4 need about four hours of single-core training, so they are
//! evaluated on the grid recorded in `results/`. `recorded_runs_are_reproducible`
//! re-trains the start of every recorded run and demands identical losses, and
//! the ignored `full_grid_rerun` regenerates everything from scratch.

use std::path::PathBuf;
use std::process::Command;
use std::sync::Mutex;
use std::time::Instant;

use minigate::autodiff::{batch_loss, grad_check, LossKind};
use minigate::harness::report::{adding_250_checks, adding_50_checks, copy_checks};
use minigate::harness::selfcheck::gradcheck_instance;
use minigate::harness::train::INIT_STREAM;
use minigate::harness::{train_run, Check, GridResults, TrainConfig};
use minigate::mgu::init_model;
use minigate::tasks::{baseline_loss, gen_adding, gen_copy, Targets};
use minigate::{InitKind, RngState, Task};

// Tolerances and budgets.
const GRAD_TOL: f64 = 1e-4;
const GRAD_EPS: f64 = 1e-5;
const GRAD_TRIALS: u64 = 20;
const GRAD_BUDGET_S: f64 = 30.0;
const CONST_MSE_TOL: f64 = 0.005;
const CONST_MSE_SAMPLES: usize = 100_000;
const BASELINE_TOL: f64 = 5e-5;
const FAST_BUDGET_S: f64 = 300.0;
const PROVENANCE_ITERS: usize = 10;

/// Tests share one core; timing-sensitive ones must not overlap.
static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(criterion: u32, passed: bool, detail: &str) {
    let status = if passed { "PASS" } else { "FAIL" };
    println!("criterion {criterion} [{status}] {detail}");
}

fn report_checks(criterion: u32, checks: &[Check]) -> bool {
    for c in checks {
        println!("criterion {criterion} {c}");
    }
    let passed = checks.iter().all(|c| c.passed);
    let failed: Vec<&str> = checks
        .iter()
        .filter(|c| !c.passed)
        .map(|c| c.name.as_str())
        .collect();
    report(
        criterion,
        passed,
        &format!(
            "{} of {} checks pass{}",
            checks.len() - failed.len(),
            checks.len(),
            if failed.is_empty() {
                String::new()
            } else {
                format!("; failing: {}", failed.join("; "))
            }
        ),
    );
    passed
}

fn results_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../results")
}

fn recorded_grid() -> GridResults {
    let dir = results_dir();
    GridResults::load(&dir).unwrap_or_else(|e| panic!("no recorded grid in {}: {e}", dir.display()))
}

fn parse_label(label: &str) -> (Task, usize, InitKind) {
    let mut parts = label.splitn(3, '-');
    let task = parts.next().unwrap().parse().unwrap();
    let size = parts.next().unwrap().parse().unwrap();
    let init = parts.next().unwrap().parse().unwrap();
    (task, size, init)
}

#[test]
fn criterion_1_gradient_exactness() {
    let _guard = serial();
    let start = Instant::now();
    let mut worst = Vec::new();
    let mut offenders = Vec::new();
    for loss in [LossKind::Mse, LossKind::SoftmaxXent] {
        let mut max_err: f64 = 0.0;
        for seed in 0..GRAD_TRIALS {
            let (model, batch) = gradcheck_instance(loss, seed).unwrap();
            assert_eq!(
                (model.hidden_size(), batch.steps(), batch.batch_size()),
                (8, 12, 4)
            );
            let err = grad_check(&model, &batch, GRAD_EPS).unwrap();
            if err >= GRAD_TOL {
                offenders.push(format!("{loss:?} seed {seed}: {err:.3e}"));
            }
            max_err = max_err.max(err);
        }
        worst.push(format!("{loss:?} max {max_err:.3e}"));
    }
    let elapsed = start.elapsed().as_secs_f64();
    let passed = offenders.is_empty() && elapsed < GRAD_BUDGET_S;
    report(
        1,
        passed,
        &format!(
            "{GRAD_TRIALS} instances per loss kind at eps {GRAD_EPS:e}: {} (tol {GRAD_TOL:e}); {elapsed:.1} s (budget {GRAD_BUDGET_S} s){}",
            worst.join(", "),
            if offenders.is_empty() { String::new() } else { format!("; offenders {}", offenders.join(", ")) }
        ),
    );
    assert!(passed);
}

#[test]
fn recorded_grid_is_complete() {
    let grid = recorded_grid();
    let mut expected = Vec::new();
    for (task, size) in [
        (Task::Adding, 50),
        (Task::Adding, 250),
        (Task::Copy, 50),
        (Task::Copy, 200),
    ] {
        for init in [InitKind::ChronoPositive, InitKind::ConstantOne] {
            expected.push(format!("{task}-{size}-{init}"));
        }
    }
    let mut labels: Vec<&String> = grid.groups.keys().collect();
    labels.sort();
    expected.sort();
    assert_eq!(labels, expected.iter().collect::<Vec<_>>());
    for (label, runs) in &grid.groups {
        let seeds: Vec<u64> = runs.iter().map(|r| r.seed).collect();
        assert_eq!(seeds, vec![1, 2, 3], "{label}");
        for r in runs {
            assert_eq!(r.losses.len(), 5000, "{label} seed {}", r.seed);
            assert!(r.losses.iter().enumerate().all(|(i, p)| p.0 == i + 1));
        }
    }
}

#[test]
fn recorded_runs_are_reproducible() {
    let _guard = serial();
    let grid = recorded_grid();
    for (label, runs) in &grid.groups {
        let (task, size, init) = parse_label(label);
        for r in runs {
            let mut cfg = TrainConfig::standard(task, size, init, r.seed).unwrap();
            cfg.iterations = PROVENANCE_ITERS;
            let log = train_run(&cfg).unwrap();
            assert_eq!(
                log.losses,
                r.losses[..PROVENANCE_ITERS].to_vec(),
                "{label} seed {} does not match a fresh run with the standard settings",
                r.seed
            );
        }
    }
}

#[test]
fn criterion_2_adding_50() {
    let passed = report_checks(2, &adding_50_checks(&recorded_grid()));
    assert!(passed);
}

#[test]
fn criterion_3_adding_250() {
    let passed = report_checks(3, &adding_250_checks(&recorded_grid()));
    assert!(passed);
}

#[test]
fn criterion_4_copy() {
    let grid = recorded_grid();
    let mut checks = copy_checks(&grid, 50);
    checks.extend(copy_checks(&grid, 200));
    let passed = report_checks(4, &checks);
    assert!(passed);
}

#[test]
fn criterion_5_analytic_baselines() {
    let _guard = serial();
    let ln10 = 10f64.ln();
    let mut lines = Vec::new();
    let mut passed = true;

    // Untrained models at the standard width, both inits, both copy sizes.
    for t in [50, 200] {
        for init in [InitKind::ChronoPositive, InitKind::ConstantOne] {
            let cfg = TrainConfig::standard(Task::Copy, t, init, 1).unwrap();
            let model = init_model(
                cfg.hidden_size,
                Task::Copy.input_size(),
                Task::Copy.output_size(),
                cfg.init,
                &mut RngState::with_stream(1, INIT_STREAM),
            )
            .unwrap();
            let batch = gen_copy(t, cfg.batch_size, &mut RngState::new(5)).unwrap();
            let loss = batch_loss(&model, &batch).unwrap();
            let ok = loss >= 0.5 * ln10 && loss <= 3.0 * ln10;
            passed &= ok;
            lines.push(format!("untrained copy-{t} {init} {loss:.4}"));
        }
    }

    // Best constant predictor for the adding task is the target mean (1), with
    // MSE equal to the target variance.
    let batch = gen_adding(50, CONST_MSE_SAMPLES, &mut RngState::new(11)).unwrap();
    let Targets::Regression(y) = &batch.targets else {
        unreachable!()
    };
    let mse = y.data().iter().map(|v| (v - 1.0).powi(2)).sum::<f64>() / CONST_MSE_SAMPLES as f64;
    let ok = (mse - 1.0 / 6.0).abs() <= CONST_MSE_TOL;
    passed &= ok;
    lines.push(format!(
        "constant-1 adding MSE {mse:.5} (1/6 +- {CONST_MSE_TOL})"
    ));

    // Memoryless copy baseline: the 10 recall positions each cost ln 8, the
    // rest are predictable blanks.
    for (t, want) in [(50, 0.2971), (200, 0.0945)] {
        let got = baseline_loss(Task::Copy, t);
        let oracle = 10.0 * 8f64.ln() / (t + 20) as f64;
        let ok = (got - want).abs() <= BASELINE_TOL && (got - oracle).abs() < 1e-15;
        passed &= ok;
        lines.push(format!("copy-{t} baseline {got:.5} (want {want})"));
    }
    report(5, passed, &lines.join("; "));
    assert!(passed);
}

#[test]
fn criterion_6_fast_reproduce_runs_the_invariant_suite() {
    let _guard = serial();
    let dir = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let out = Command::new(env!("CARGO_BIN_EXE_minigate"))
        .args(["reproduce", "--fast", "--out"])
        .arg(dir.path())
        .env("MINIGATE_THREADS", "1")
        .output()
        .unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    let summary = std::fs::read_to_string(dir.path().join("summary.txt")).unwrap_or_default();
    let expected_checks = [
        "gate range and contraction bound",
        "closed gate preserves state",
        "adding generator layout",
        "copy generator layout",
        "chrono bias bounds and mean",
        "csv and checkpoint round trips",
        "determinism per seed",
    ];
    let missing: Vec<&str> = expected_checks
        .iter()
        .filter(|name| {
            !summary
                .lines()
                .any(|l| l.starts_with("[PASS]") && l.contains(*name))
        })
        .copied()
        .collect();
    let failing = summary.lines().filter(|l| l.starts_with("[FAIL]")).count();
    let svgs = ["adding-50.svg", "copy-50.svg"]
        .iter()
        .filter(|f| dir.path().join(f).exists())
        .count();
    let passed = out.status.success()
        && missing.is_empty()
        && failing == 0
        && svgs == 2
        && elapsed < FAST_BUDGET_S;
    report(
        6,
        passed,
        &format!(
            "reproduce --fast exit {:?}, {} invariant checks failing, missing {:?}, {svgs} figures, {elapsed:.1} s (budget {FAST_BUDGET_S} s)",
            out.status.code(),
            failing,
            missing
        ),
    );
    assert!(passed, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
#[ignore = "retrains the full 24-run grid; takes hours on one core"]
fn full_grid_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_minigate"))
        .args(["reproduce", "--out"])
        .arg(dir.path())
        .status()
        .unwrap();
    let fresh = GridResults::load(dir.path()).unwrap();
    let recorded = recorded_grid();
    for (label, runs) in &fresh.groups {
        for (a, b) in runs.iter().zip(&recorded.groups[label]) {
            assert_eq!(a.losses, b.losses, "{label} seed {}", a.seed);
        }
    }
    assert!(status.success());
}
