use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::mgu::{InitKind, InitSpec};
use crate::tasks::{MaskProtocol, Task};

pub const DEFAULT_ITERATIONS: usize = 5000;
pub const DEFAULT_HIDDEN: usize = 128;
pub const DEFAULT_LEARNING_RATE: f64 = 0.001;
pub const DEFAULT_CLIP_NORM: f64 = 1.0;
pub const ADDING_BATCH: usize = 50;
pub const COPY_BATCH: usize = 128;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

impl OptimizerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Sgd => "sgd",
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(OptimizerKind::Adam),
            "sgd" => Ok(OptimizerKind::Sgd),
            other => Err(Error::arg(format!("unknown optimizer `{other}`"))),
        }
    }
}

pub fn default_batch_size(task: Task) -> usize {
    match task {
        Task::Adding => ADDING_BATCH,
        Task::Copy => COPY_BATCH,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub task: Task,
    /// Sequence length for adding, `T` for copy.
    pub size: usize,
    pub init: InitSpec,
    pub iterations: usize,
    pub batch_size: usize,
    pub hidden_size: usize,
    pub learning_rate: f64,
    pub clip_norm: Option<f64>,
    pub seed: u64,
    pub log_every: usize,
    pub optimizer: OptimizerKind,
    pub mask: MaskProtocol,
}

impl TrainConfig {
    /// The standard experiment settings for a task: 5000 iterations, batch 50
    /// (adding) or 128 (copy), 128 hidden units, learning rate 0.001, clipping
    /// at norm 1, and `t_max` equal to the full sequence length.
    pub fn standard(task: Task, size: usize, init: InitKind, seed: u64) -> Result<Self> {
        let cfg = Self {
            task,
            size,
            init: InitSpec::new(init, task.seq_len(size))?,
            iterations: DEFAULT_ITERATIONS,
            batch_size: default_batch_size(task),
            hidden_size: DEFAULT_HIDDEN,
            learning_rate: DEFAULT_LEARNING_RATE,
            clip_norm: Some(DEFAULT_CLIP_NORM),
            seed,
            log_every: 1,
            optimizer: OptimizerKind::Adam,
            mask: MaskProtocol::HalfSplit,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.init.validate()?;
        let min_size = match self.task {
            Task::Adding => 2,
            Task::Copy => 1,
        };
        if self.size < min_size {
            return Err(Error::arg(format!(
                "{} size must be >= {min_size}",
                self.task
            )));
        }
        if self.iterations == 0
            || self.batch_size == 0
            || self.hidden_size == 0
            || self.log_every == 0
        {
            return Err(Error::arg(
                "iterations, batch size, hidden size and log interval must be positive",
            ));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::arg(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::arg(format!("clip norm must be positive, got {c}")));
            }
        }
        Ok(())
    }

    /// Short identifier such as `adding-50-chrono`.
    pub fn label(&self) -> String {
        format!("{}-{}-{}", self.task, self.size, self.init.kind)
    }
}
