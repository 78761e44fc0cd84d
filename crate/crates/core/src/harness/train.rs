//! The single-run training loop and the multi-seed runner.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use crate::autodiff::loss_and_gradients;
use crate::error::{Error, Result};
use crate::mgu::{init_model, Model};
use crate::optim::{adam_step, clip_global_norm, sgd_step, AdamConfig, AdamState};
use crate::tasks::gen_batch;
use crate::tensor::RngState;

use super::config::{OptimizerKind, TrainConfig};

/// ChaCha stream ids derived from a run seed. Initialization and data use
/// separate streams, so every init method sees the same batches for a seed.
pub const INIT_STREAM: u64 = 0;
pub const DATA_STREAM: u64 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct RunLog {
    pub config: TrainConfig,
    /// `(iteration, loss)`, iterations counted from 1.
    pub losses: Vec<(usize, f64)>,
    pub wall_time_s: f64,
    /// Iterations where clipping rescaled the gradient.
    pub clip_events: usize,
}

impl RunLog {
    pub fn loss_values(&self) -> Vec<f64> {
        self.losses.iter().map(|&(_, l)| l).collect()
    }

    pub fn iterations(&self) -> Vec<usize> {
        self.losses.iter().map(|&(i, _)| i).collect()
    }
}

pub fn train_run(cfg: &TrainConfig) -> Result<RunLog> {
    train_model(cfg, |_, _| {}).map(|(_, log)| log)
}

/// Trains from scratch and returns the final model with its log. `on_log`
/// sees every recorded `(iteration, loss)`.
pub fn train_model(
    cfg: &TrainConfig,
    mut on_log: impl FnMut(usize, f64),
) -> Result<(Model, RunLog)> {
    cfg.validate()?;
    let start = Instant::now();
    let mut init_rng = RngState::with_stream(cfg.seed, INIT_STREAM);
    let mut data_rng = RngState::with_stream(cfg.seed, DATA_STREAM);
    let task = cfg.task;
    let mut model = init_model(
        cfg.hidden_size,
        task.input_size(),
        task.output_size(),
        cfg.init,
        &mut init_rng,
    )?;
    let mut adam = AdamState::new(&model, AdamConfig::default());
    let mut losses = Vec::with_capacity(cfg.iterations / cfg.log_every);
    let mut clip_events = 0;
    let mut last_loss = f64::NAN;

    for it in 1..=cfg.iterations {
        let batch = gen_batch(task, cfg.size, cfg.batch_size, cfg.mask, &mut data_rng)?;
        let abort = |e: Error, clip_events: usize| {
            Error::Numeric(format!(
                "{} aborted at iteration {it} (last loss {last_loss}, {clip_events} clip events): {e}",
                cfg.label()
            ))
        };
        let (loss, mut grads) =
            loss_and_gradients(&model, &batch).map_err(|e| abort(e, clip_events))?;
        if let Some(max_norm) = cfg.clip_norm {
            if clip_global_norm(&mut grads, max_norm).map_err(|e| abort(e, clip_events))? < 1.0 {
                clip_events += 1;
            }
        }
        match cfg.optimizer {
            OptimizerKind::Adam => adam_step(&mut model, &grads, &mut adam, cfg.learning_rate),
            OptimizerKind::Sgd => sgd_step(&mut model, &grads, cfg.learning_rate),
        }
        .map_err(|e| abort(e, clip_events))?;
        last_loss = loss;
        if it % cfg.log_every == 0 {
            losses.push((it, loss));
            on_log(it, loss);
        }
    }
    let log = RunLog {
        config: cfg.clone(),
        losses,
        wall_time_s: start.elapsed().as_secs_f64(),
        clip_events,
    };
    Ok((model, log))
}

/// Runs every config on up to `threads` worker threads. Results come back in
/// input order; `on_done` is called from the worker as each run finishes.
pub fn run_all(
    configs: &[TrainConfig],
    threads: usize,
    on_done: &(dyn Fn(&TrainConfig, &Result<RunLog>) + Sync),
) -> Vec<Result<RunLog>> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<RunLog>>>> =
        Mutex::new((0..configs.len()).map(|_| None).collect());
    let workers = threads.clamp(1, configs.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(cfg) = configs.get(i) else { break };
                let result = train_run(cfg).map_err(|e| Error::Run {
                    seed: cfg.seed,
                    source: Box::new(e),
                });
                on_done(cfg, &result);
                slots.lock().expect("result slots poisoned")[i] = Some(result);
            });
        }
    });
    slots
        .into_inner()
        .expect("result slots poisoned")
        .into_iter()
        .map(|r| r.expect("every config is run"))
        .collect()
}

/// One run per seed; configs are identical to `base` apart from the seed.
pub fn run_experiment(base: &TrainConfig, seeds: &[u64], threads: usize) -> Result<Vec<RunLog>> {
    if seeds.is_empty() {
        return Err(Error::arg("run_experiment needs at least one seed"));
    }
    let configs: Vec<TrainConfig> = seeds
        .iter()
        .map(|&seed| TrainConfig {
            seed,
            ..base.clone()
        })
        .collect();
    run_all(&configs, threads, &|_, _| {}).into_iter().collect()
}
