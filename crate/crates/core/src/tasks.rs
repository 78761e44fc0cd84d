//! Seeded generators for the adding and copy benchmarks.
//!
//! Inputs are sequences of `features x batch` matrices, one per timestep.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use crate::autodiff::{ClassTargets, LossKind};
use crate::error::{Error, Result};
use crate::tensor::{Matrix, RngState};

/// Number of symbols to remember in the copy task.
pub const COPY_SYMBOLS: usize = 10;
/// Symbol classes in the copy task: dummy 0, data 1..=8, signal 9.
pub const COPY_CLASSES: usize = 10;
pub const COPY_SIGNAL: usize = 9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Task {
    Adding,
    Copy,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Adding => "adding",
            Task::Copy => "copy",
        }
    }

    /// Sequence length for a task size (adding: the length itself; copy: `T + 20`).
    pub fn seq_len(self, size: usize) -> usize {
        match self {
            Task::Adding => size,
            Task::Copy => size + 2 * COPY_SYMBOLS,
        }
    }

    pub fn input_size(self) -> usize {
        match self {
            Task::Adding => 2,
            Task::Copy => COPY_CLASSES,
        }
    }

    pub fn output_size(self) -> usize {
        match self {
            Task::Adding => 1,
            Task::Copy => COPY_CLASSES,
        }
    }

    pub fn loss_kind(self) -> LossKind {
        match self {
            Task::Adding => LossKind::Mse,
            Task::Copy => LossKind::SoftmaxXent,
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adding" => Ok(Task::Adding),
            "copy" => Ok(Task::Copy),
            other => Err(Error::arg(format!(
                "unknown task `{other}` (expected adding or copy)"
            ))),
        }
    }
}

/// Where the two marker positions of an adding-task sample may fall.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum MaskProtocol {
    /// One marker in `[0, L/2)`, the other in `[L/2, L)`.
    #[default]
    HalfSplit,
    /// Two distinct positions drawn uniformly from `[0, L)`.
    UniformDistinct,
}

impl MaskProtocol {
    pub fn as_str(self) -> &'static str {
        match self {
            MaskProtocol::HalfSplit => "half",
            MaskProtocol::UniformDistinct => "uniform",
        }
    }
}

impl fmt::Display for MaskProtocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MaskProtocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "half" => Ok(MaskProtocol::HalfSplit),
            "uniform" => Ok(MaskProtocol::UniformDistinct),
            other => Err(Error::arg(format!(
                "unknown mask protocol `{other}` (expected half or uniform)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Targets {
    /// `outputs x batch` regression targets, compared at the final step.
    Regression(Matrix),
    /// One class index per step and sample.
    Classes(ClassTargets),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BatchMeta {
    pub task: Task,
    pub size: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub xs: Vec<Matrix>,
    pub targets: Targets,
    pub meta: BatchMeta,
}

impl Batch {
    pub fn steps(&self) -> usize {
        self.xs.len()
    }

    pub fn batch_size(&self) -> usize {
        self.xs.first().map_or(0, Matrix::cols)
    }

    pub fn loss_kind(&self) -> LossKind {
        match self.targets {
            Targets::Regression(_) => LossKind::Mse,
            Targets::Classes(_) => LossKind::SoftmaxXent,
        }
    }

    /// Writes the batch in the plain-text dump format, one block per sample.
    pub fn write_text<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        let steps = self.steps();
        writeln!(w, "# minigate batch v1")?;
        writeln!(
            w,
            "# task={} size={} steps={} batch={} seed={}",
            self.meta.task,
            self.meta.size,
            steps,
            self.batch_size(),
            self.meta.seed
        )?;
        for j in 0..self.batch_size() {
            writeln!(w, "sample {j}")?;
            match &self.targets {
                Targets::Regression(y) => {
                    let values: Vec<String> =
                        self.xs.iter().map(|x| x.get(0, j).to_string()).collect();
                    let mask: Vec<String> =
                        self.xs.iter().map(|x| x.get(1, j).to_string()).collect();
                    writeln!(w, "values {}", values.join(" "))?;
                    writeln!(w, "mask {}", mask.join(" "))?;
                    writeln!(w, "target {}", y.get(0, j))?;
                }
                Targets::Classes(t) => {
                    let input: Vec<String> = (0..steps)
                        .map(|s| self.symbol_at(s, j).to_string())
                        .collect();
                    let target: Vec<String> = (0..steps).map(|s| t.get(s, j).to_string()).collect();
                    writeln!(w, "input {}", input.join(" "))?;
                    writeln!(w, "target {}", target.join(" "))?;
                }
            }
        }
        Ok(())
    }

    /// Decodes the one-hot input symbol at `step` for sample `j` (copy task).
    pub fn symbol_at(&self, step: usize, j: usize) -> usize {
        let x = &self.xs[step];
        (0..x.rows())
            .find(|&r| x.get(r, j) == 1.0)
            .unwrap_or(usize::MAX)
    }
}

pub fn gen_adding(length: usize, batch: usize, rng: &mut RngState) -> Result<Batch> {
    gen_adding_with(length, batch, MaskProtocol::HalfSplit, rng)
}

pub fn gen_adding_with(
    length: usize,
    batch: usize,
    protocol: MaskProtocol,
    rng: &mut RngState,
) -> Result<Batch> {
    if length < 2 {
        return Err(Error::arg(format!(
            "adding task needs length >= 2, got {length}"
        )));
    }
    if batch == 0 {
        return Err(Error::arg("batch size must be positive"));
    }
    let mut xs = vec![Matrix::zeros(2, batch); length];
    let mut targets = Matrix::zeros(1, batch);
    let half = length / 2;
    for j in 0..batch {
        for x in xs.iter_mut() {
            x.set(0, j, rng.next_f64());
        }
        let (a, b) = match protocol {
            MaskProtocol::HalfSplit => (rng.below(half), half + rng.below(length - half)),
            MaskProtocol::UniformDistinct => {
                let a = rng.below(length);
                let mut b = rng.below(length - 1);
                if b >= a {
                    b += 1;
                }
                (a, b)
            }
        };
        xs[a].set(1, j, 1.0);
        xs[b].set(1, j, 1.0);
        targets.set(0, j, xs[a].get(0, j) + xs[b].get(0, j));
    }
    Ok(Batch {
        xs,
        targets: Targets::Regression(targets),
        meta: BatchMeta {
            task: Task::Adding,
            size: length,
            seed: rng.seed(),
        },
    })
}

pub fn gen_copy(t_param: usize, batch: usize, rng: &mut RngState) -> Result<Batch> {
    if t_param == 0 {
        return Err(Error::arg("copy task needs T >= 1"));
    }
    if batch == 0 {
        return Err(Error::arg("batch size must be positive"));
    }
    let steps = Task::Copy.seq_len(t_param);
    let signal_at = t_param + COPY_SYMBOLS - 1;
    let recall_from = t_param + COPY_SYMBOLS;
    let mut xs = vec![Matrix::zeros(COPY_CLASSES, batch); steps];
    let mut targets = ClassTargets::zeros(steps, batch);
    for j in 0..batch {
        let mut symbols = [0usize; COPY_SYMBOLS];
        for s in symbols.iter_mut() {
            *s = 1 + rng.below(8);
        }
        for (t, x) in xs.iter_mut().enumerate() {
            let sym = if t < COPY_SYMBOLS {
                symbols[t]
            } else if t == signal_at {
                COPY_SIGNAL
            } else {
                0
            };
            x.set(sym, j, 1.0);
        }
        for (k, &s) in symbols.iter().enumerate() {
            targets.set(recall_from + k, j, s);
        }
    }
    Ok(Batch {
        xs,
        targets: Targets::Classes(targets),
        meta: BatchMeta {
            task: Task::Copy,
            size: t_param,
            seed: rng.seed(),
        },
    })
}

pub fn gen_batch(
    task: Task,
    size: usize,
    batch: usize,
    protocol: MaskProtocol,
    rng: &mut RngState,
) -> Result<Batch> {
    match task {
        Task::Adding => gen_adding_with(size, batch, protocol, rng),
        Task::Copy => gen_copy(size, batch, rng),
    }
}

/// Loss of the best predictor that ignores long-range information.
///
/// Adding: a constant guess of 1 against the sum of two `U(0,1)` draws, whose
/// variance is `2/12`. Copy: exact dummy predictions everywhere plus a uniform
/// guess over the 8 data symbols at the 10 recall steps.
pub fn baseline_loss(task: Task, size: usize) -> f64 {
    match task {
        Task::Adding => 1.0 / 6.0,
        Task::Copy => COPY_SYMBOLS as f64 * 8f64.ln() / (size + 2 * COPY_SYMBOLS) as f64,
    }
}
