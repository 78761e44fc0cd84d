use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Mutex;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use minigate::autodiff::{grad_check, grad_check_against, loss_and_gradients, LossKind};
use minigate::harness::config::{default_batch_size, DEFAULT_HIDDEN, DEFAULT_ITERATIONS};
use minigate::harness::report::{
    adding_250_checks, adding_50_checks, copy_checks, save_trace, RunTrace, MANIFEST_HEADER,
};
use minigate::harness::selfcheck::{gradcheck_instance, run_invariant_suite};
use minigate::harness::train::DATA_STREAM;
use minigate::harness::{
    aggregate_traces, emit_svg, read_curve_csv, run_all, save_checkpoint, train_model,
    write_curve_csv, write_run_csv, AggregatedCurve, BandKind, Check, GridResults, LossAxis,
    OptimizerKind, RunLog, TrainConfig,
};
use minigate::tasks::{gen_batch, MaskProtocol};
use minigate::{Error, InitKind, InitSpec, RngState, Task};

const PROGRESS: &str = "runs.partial.csv";
const FIGURES: [(Task, usize); 4] = [
    (Task::Adding, 50),
    (Task::Adding, 250),
    (Task::Copy, 50),
    (Task::Copy, 200),
];
const FAST_FIGURES: [(Task, usize); 2] = [(Task::Adding, 50), (Task::Copy, 50)];
const FAST_HIDDEN: usize = 64;
const FAST_ITERATIONS: usize = 2000;

/// MGU recurrent network trainer and benchmark harness.
#[derive(Parser)]
#[command(name = "minigate", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and write its loss curve and final checkpoint.
    Train(TrainArgs),
    /// Run the multi-seed experiment grid and write curves, figures and a summary.
    Reproduce(ReproduceArgs),
    /// Compare analytic gradients against central finite differences.
    Gradcheck(GradcheckArgs),
    /// Dump generated task batches as text.
    Gen(GenArgs),
    /// Render an SVG from aggregated curve CSVs.
    Plot(PlotArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Task: adding or copy.
    #[arg(long, default_value = "adding")]
    task: Task,
    /// Sequence length (adding) or delay T (copy).
    #[arg(long, default_value_t = 50)]
    size: usize,
    /// Gate-bias init: chrono, chrono-neg or const.
    #[arg(long, default_value = "chrono")]
    init: InitKind,
    /// Largest dependency range assumed by chrono init [default: full sequence length].
    #[arg(long)]
    t_max: Option<usize>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_ITERATIONS)]
    iters: usize,
    /// Minibatch size [default: 50 for adding, 128 for copy].
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_HIDDEN)]
    hidden: usize,
    #[arg(long, default_value_t = 0.001)]
    lr: f64,
    /// Global gradient-norm clip threshold.
    #[arg(long, default_value_t = 1.0, conflicts_with = "no_clip")]
    clip: f64,
    /// Disable gradient clipping.
    #[arg(long)]
    no_clip: bool,
    /// Optimizer: adam or sgd.
    #[arg(long, default_value = "adam")]
    optimizer: OptimizerKind,
    /// Adding-task marker placement: half or uniform.
    #[arg(long, default_value = "half")]
    mask: MaskProtocol,
    /// Record the loss every N iterations.
    #[arg(long, default_value_t = 1)]
    log_every: usize,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct ReproduceArgs {
    /// Output directory.
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// Reduced grid (adding-50 and copy-50, one seed, 64 hidden units, 2000 iterations) plus the invariant suite.
    #[arg(long)]
    fast: bool,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    seeds: Vec<u64>,
    /// Restrict to these figures, e.g. adding-50 or copy-200 (repeatable).
    #[arg(long)]
    only: Vec<String>,
    /// Extra init methods to run alongside chrono and const (e.g. chrono-neg).
    #[arg(long, value_delimiter = ',')]
    extra_init: Vec<InitKind>,
    /// Band drawn around the mean: minmax or std.
    #[arg(long, default_value = "minmax")]
    band: BandKind,
    /// Optimizer: adam or sgd.
    #[arg(long, default_value = "adam")]
    optimizer: OptimizerKind,
    /// Learning rate.
    #[arg(long, default_value_t = 0.001)]
    lr: f64,
    /// Reuse runs already recorded in the progress manifest of --out.
    #[arg(long)]
    resume: bool,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Random instances per loss kind.
    #[arg(long, default_value_t = 20)]
    trials: u64,
    /// Finite-difference step.
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
    /// Corrupt the analytic gradient before comparing (negative control).
    #[arg(long, hide = true)]
    inject_fault: bool,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value = "adding")]
    task: Task,
    #[arg(long, default_value_t = 50)]
    size: usize,
    /// Seed; the batch matches the first training batch of a run with this seed.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Number of samples.
    #[arg(long, default_value_t = 1)]
    count: usize,
    #[arg(long, default_value = "half")]
    mask: MaskProtocol,
    /// Write to this file instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PlotArgs {
    /// Aggregated curve CSV (repeatable).
    #[arg(long = "csv", required = true)]
    csvs: Vec<PathBuf>,
    /// Legend label per CSV, in order [default: file stem].
    #[arg(long = "label")]
    labels: Vec<String>,
    /// Y axis: mse or xent.
    #[arg(long, default_value = "mse")]
    axis: String,
    #[arg(long, default_value = "")]
    title: String,
    #[arg(long)]
    out: PathBuf,
}

/// Failures caused by bad flags rather than by the run itself.
fn is_usage(e: &anyhow::Error) -> bool {
    matches!(e.downcast_ref::<Error>(), Some(Error::Argument(_)))
}

/// Training allocates and frees many state-sized matrices per step. With
/// 128 x 128 states these sit just above glibc's default mmap threshold, and
/// the resulting map/unmap churn costs about a fifth of the run time.
#[cfg(all(target_os = "linux", target_env = "gnu"))]
fn tune_allocator() {
    // SAFETY: mallopt only adjusts allocator parameters and is called before
    // any other thread exists.
    unsafe {
        libc::mallopt(libc::M_MMAP_THRESHOLD, 64 << 20);
        libc::mallopt(libc::M_TRIM_THRESHOLD, 256 << 20);
        libc::mallopt(libc::M_TOP_PAD, 64 << 20);
    }
}

#[cfg(not(all(target_os = "linux", target_env = "gnu")))]
fn tune_allocator() {}

fn main() -> ExitCode {
    tune_allocator();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Reproduce(a) => cmd_reproduce(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Gen(a) => cmd_gen(a),
        Command::Plot(a) => cmd_plot(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if is_usage(&e) { 2 } else { 1 })
        }
    }
}

fn cmd_train(a: TrainArgs) -> anyhow::Result<ExitCode> {
    let t_max = a.t_max.unwrap_or_else(|| a.task.seq_len(a.size));
    let cfg = TrainConfig {
        task: a.task,
        size: a.size,
        init: InitSpec::new(a.init, t_max)?,
        iterations: a.iters,
        batch_size: a.batch.unwrap_or_else(|| default_batch_size(a.task)),
        hidden_size: a.hidden,
        learning_rate: a.lr,
        clip_norm: (!a.no_clip).then_some(a.clip),
        seed: a.seed,
        log_every: a.log_every,
        optimizer: a.optimizer,
        mask: a.mask,
    };
    cfg.validate()?;
    let stem = format!("{}-seed{}", cfg.label(), cfg.seed);
    let (model, log) = train_model(&cfg, |it, loss| {
        if it % 500 == 0 {
            eprintln!("{stem}: iteration {it} loss {loss:.6}");
        }
    })?;
    let csv = a.out.join(format!("{stem}.csv"));
    let ckpt = a.out.join(format!("{stem}.ckpt"));
    write_run_csv(&log, &csv)?;
    save_checkpoint(&model, &ckpt)?;
    let last = log.losses.last().map_or(f64::NAN, |p| p.1);
    println!(
        "{stem}: {} iterations, last loss {last:.6}, {} clip events, {:.1} s",
        cfg.iterations, log.clip_events, log.wall_time_s
    );
    println!("wrote {} and {}", csv.display(), ckpt.display());
    Ok(ExitCode::SUCCESS)
}

fn legend(init: InitKind) -> &'static str {
    match init {
        InitKind::ChronoPositive => "MGU (Chrono)",
        InitKind::ChronoNegative => "MGU (Chrono, negated)",
        InitKind::ConstantOne => "MGU (Const.)",
    }
}

fn figure_title(task: Task, size: usize) -> String {
    match task {
        Task::Adding => format!("Adding task, sequence length {size}"),
        Task::Copy => format!("Copy task, T = {size}"),
    }
}

fn axis_for(task: Task) -> LossAxis {
    match task.loss_kind() {
        LossKind::Mse => LossAxis::Mse,
        LossKind::SoftmaxXent => LossAxis::SoftmaxXent,
    }
}

fn thread_count() -> anyhow::Result<usize> {
    match std::env::var("MINIGATE_THREADS") {
        Ok(v) => {
            let n: usize = v.trim().parse().map_err(|_| {
                Error::arg(format!(
                    "MINIGATE_THREADS must be a positive integer, got `{v}`"
                ))
            })?;
            if n == 0 {
                bail!(Error::arg("MINIGATE_THREADS must be positive"));
            }
            Ok(n)
        }
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

fn print_checks(out: &mut String, title: &str, checks: &[Check]) {
    out.push_str(title);
    out.push('\n');
    for c in checks {
        out.push_str(&format!("{c}\n"));
    }
}

fn cmd_reproduce(a: ReproduceArgs) -> anyhow::Result<ExitCode> {
    if a.seeds.is_empty() {
        bail!(Error::arg("--seeds needs at least one seed"));
    }
    let figures: Vec<(Task, usize)> = if a.fast {
        FAST_FIGURES.to_vec()
    } else {
        FIGURES.to_vec()
    };
    for name in &a.only {
        if !figures.iter().any(|(t, s)| format!("{t}-{s}") == *name) {
            bail!(Error::arg(format!(
                "--only `{name}` is not a figure of this grid"
            )));
        }
    }
    let figures: Vec<(Task, usize)> = figures
        .into_iter()
        .filter(|(t, s)| a.only.is_empty() || a.only.contains(&format!("{t}-{s}")))
        .collect();
    let mut inits = vec![InitKind::ChronoPositive, InitKind::ConstantOne];
    for &k in &a.extra_init {
        if !inits.contains(&k) {
            inits.push(k);
        }
    }
    let seeds: Vec<u64> = if a.fast {
        a.seeds[..1].to_vec()
    } else {
        a.seeds.clone()
    };

    let mut configs = Vec::new();
    for &(task, size) in &figures {
        for &init in &inits {
            for &seed in &seeds {
                let mut cfg = TrainConfig::standard(task, size, init, seed)?;
                cfg.optimizer = a.optimizer;
                cfg.learning_rate = a.lr;
                if a.fast {
                    cfg.hidden_size = FAST_HIDDEN;
                    cfg.iterations = FAST_ITERATIONS;
                }
                cfg.validate()?;
                configs.push(cfg);
            }
        }
    }

    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let mut report = String::new();
    report.push_str(&format!(
        "grid: {} runs, hidden {}, {} iterations, optimizer {}, lr {}, band {}\n\n",
        configs.len(),
        if a.fast { FAST_HIDDEN } else { DEFAULT_HIDDEN },
        if a.fast {
            FAST_ITERATIONS
        } else {
            DEFAULT_ITERATIONS
        },
        a.optimizer,
        a.lr,
        a.band
    ));

    let mut invariants_ok = true;
    if a.fast {
        let scratch = a.out.join("selfcheck-scratch");
        let checks = run_invariant_suite(&scratch);
        let _ = fs::remove_dir_all(&scratch);
        invariants_ok = checks.iter().all(|c| c.passed);
        let mut text = String::new();
        print_checks(&mut text, "invariant suite", &checks);
        eprint!("{text}");
        report.push_str(&text);
        report.push('\n');
    }

    // Completed runs are appended to a progress manifest as they finish, so an
    // interrupted grid keeps its finished runs and can be resumed.
    let progress_path = a.out.join(PROGRESS);
    let mut done = GridResults::default();
    if a.resume && progress_path.exists() {
        done = GridResults::load_manifest(&a.out, PROGRESS)?;
    } else {
        fs::write(&progress_path, MANIFEST_HEADER)
            .with_context(|| format!("writing {}", progress_path.display()))?;
    }
    let already = |cfg: &TrainConfig| {
        done.groups
            .get(&cfg.label())
            .is_some_and(|runs| runs.iter().any(|r| r.seed == cfg.seed))
    };
    let todo: Vec<TrainConfig> = configs.iter().filter(|c| !already(c)).cloned().collect();
    if todo.len() < configs.len() {
        eprintln!(
            "resuming: {} of {} runs already recorded",
            configs.len() - todo.len(),
            configs.len()
        );
    }

    let progress = Mutex::new(
        OpenOptions::new()
            .append(true)
            .open(&progress_path)
            .with_context(|| format!("opening {}", progress_path.display()))?,
    );
    let finished = Mutex::new(configs.len() - todo.len());
    let total = configs.len();
    let out_dir = a.out.clone();
    let on_done = |cfg: &TrainConfig, r: &minigate::Result<RunLog>| {
        let mut n = finished.lock().expect("progress counter poisoned");
        *n += 1;
        match r {
            Ok(log) => {
                let last = log.losses.last().map_or(f64::NAN, |p| p.1);
                eprintln!(
                    "[{}/{total}] {} seed {}: last loss {last:.5}, {:.1} s",
                    *n,
                    cfg.label(),
                    cfg.seed,
                    log.wall_time_s
                );
                let row = save_trace(&out_dir, &cfg.label(), &RunTrace::from_log(log));
                let mut f = progress.lock().expect("progress file poisoned");
                match row {
                    Ok(row) => {
                        if let Err(e) = f.write_all(row.as_bytes()).and_then(|_| f.flush()) {
                            eprintln!("warning: could not record progress: {e}");
                        }
                    }
                    Err(e) => eprintln!("warning: could not save raw trace: {e}"),
                }
            }
            Err(e) => eprintln!(
                "[{}/{total}] {} seed {} failed: {e}",
                *n,
                cfg.label(),
                cfg.seed
            ),
        }
    };
    let results = run_all(&todo, thread_count()?, &on_done);

    let mut failures = Vec::new();
    let mut grid = done;
    for r in results {
        match r {
            Ok(log) => {
                grid.groups
                    .entry(log.config.label())
                    .or_default()
                    .push(RunTrace::from_log(&log));
            }
            Err(e) => failures.push(e),
        }
    }
    for runs in grid.groups.values_mut() {
        runs.sort_by_key(|r| r.seed);
    }
    grid.save(&a.out)?;
    // Manifest now holds everything; the progress file is redundant.
    let _ = fs::remove_file(&progress_path);

    for &(task, size) in &figures {
        let mut curves: Vec<(String, AggregatedCurve)> = Vec::new();
        for &init in &inits {
            let label = format!("{task}-{size}-{init}");
            let Some(runs) = grid.groups.get(&label) else {
                continue;
            };
            let traces: Vec<Vec<(usize, f64)>> = runs.iter().map(|r| r.losses.clone()).collect();
            let curve = aggregate_traces(&traces, a.band)?;
            write_curve_csv(&curve, &a.out.join(format!("{label}.csv")))?;
            curves.push((legend(init).to_string(), curve));
        }
        if !curves.is_empty() {
            emit_svg(
                &curves,
                axis_for(task),
                &figure_title(task, size),
                &a.out.join(format!("{task}-{size}.svg")),
            )?;
        }
    }

    report.push_str("final losses (mean of the last 100 logged iterations)\n");
    report.push_str(&grid.summary_table());
    report.push('\n');
    // Checks run per benchmark so partial grids (--only) still get evaluated.
    let mut checks = Vec::new();
    if !a.fast {
        for &(task, size) in &figures {
            let both = [InitKind::ChronoPositive, InitKind::ConstantOne]
                .iter()
                .all(|&k| grid.get(task, size, k).is_some_and(|r| !r.is_empty()));
            if !both {
                continue;
            }
            checks.extend(match (task, size) {
                (Task::Adding, 50) => adding_50_checks(&grid),
                (Task::Adding, 250) => adding_250_checks(&grid),
                (Task::Copy, t) => copy_checks(&grid, t),
                _ => Vec::new(),
            });
        }
    }
    let claims_ok = checks.iter().all(|c| c.passed);
    if checks.is_empty() {
        report.push_str("convergence checks skipped: no full-scale benchmark in this grid\n");
    } else {
        print_checks(&mut report, "convergence checks", &checks);
    }
    for e in &failures {
        report.push_str(&format!("run failed: {e}\n"));
    }
    let summary = a.out.join("summary.txt");
    fs::write(&summary, &report).with_context(|| format!("writing {}", summary.display()))?;
    print!("{report}");

    if !failures.is_empty() || !invariants_ok || !claims_ok {
        return Ok(ExitCode::from(1));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_gradcheck(a: GradcheckArgs) -> anyhow::Result<ExitCode> {
    if !(a.eps > 0.0) || a.trials == 0 {
        bail!(Error::arg("--eps and --trials must be positive"));
    }
    let mut worst_seed = None;
    for loss in [LossKind::Mse, LossKind::SoftmaxXent] {
        let mut max_err: f64 = 0.0;
        for seed in 0..a.trials {
            let (model, batch) = gradcheck_instance(loss, seed)?;
            let err = if a.inject_fault {
                let (_, mut g) = loss_and_gradients(&model, &batch)?;
                g.d_w_h.map_inplace(|x| x * 1.01);
                grad_check_against(&model, &batch, a.eps, &g)?
            } else {
                grad_check(&model, &batch, a.eps)?
            };
            if err >= 1e-4 {
                println!("{loss:?} seed {seed}: relative error {err:.3e} exceeds 1e-4");
                worst_seed.get_or_insert((loss, seed));
            }
            max_err = max_err.max(err);
        }
        println!(
            "{loss:?}: {} instances, max relative error {max_err:.3e}",
            a.trials
        );
    }
    match worst_seed {
        None => Ok(ExitCode::SUCCESS),
        Some((loss, seed)) => {
            println!("FAIL: first offending instance {loss:?} seed {seed}");
            Ok(ExitCode::from(1))
        }
    }
}

fn cmd_gen(a: GenArgs) -> anyhow::Result<ExitCode> {
    if a.count == 0 {
        bail!(Error::arg("--count must be positive"));
    }
    let mut rng = RngState::with_stream(a.seed, DATA_STREAM);
    let mut batch = gen_batch(a.task, a.size, a.count, a.mask, &mut rng)?;
    batch.meta.seed = a.seed;
    match &a.out {
        Some(path) => {
            let mut f = io::BufWriter::new(
                File::create(path).with_context(|| format!("creating {}", path.display()))?,
            );
            batch.write_text(&mut f)?;
            f.flush()?;
        }
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            batch.write_text(&mut lock)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(
        || path.display().to_string(),
        |s| s.to_string_lossy().into_owned(),
    )
}

fn cmd_plot(a: PlotArgs) -> anyhow::Result<ExitCode> {
    let axis = match a.axis.as_str() {
        "mse" => LossAxis::Mse,
        "xent" => LossAxis::SoftmaxXent,
        other => bail!(Error::arg(format!(
            "unknown axis `{other}` (expected mse or xent)"
        ))),
    };
    if !a.labels.is_empty() && a.labels.len() != a.csvs.len() {
        bail!(Error::arg(format!(
            "{} labels given for {} CSV files",
            a.labels.len(),
            a.csvs.len()
        )));
    }
    let mut curves = Vec::new();
    for (i, path) in a.csvs.iter().enumerate() {
        let label = a.labels.get(i).cloned().unwrap_or_else(|| stem(path));
        curves.push((label, read_curve_csv(path)?));
    }
    emit_svg(&curves, axis, &a.title, &a.out)?;
    println!("wrote {}", a.out.display());
    Ok(ExitCode::SUCCESS)
}
