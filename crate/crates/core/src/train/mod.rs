//! Maximum-likelihood training: objective, Adam, warmup/decay schedule,
//! gradient clipping, EMA, checkpoints and the training loop.

pub mod checkpoint;
mod clip;
mod ema;
pub mod eval;
mod objective;
mod optim;
mod schedule;

pub use clip::{clip_gradients, global_norm};
pub use ema::ema_update;
pub use objective::{loss, loss_with_noise, LossTerms};
pub use optim::Adam;
pub use schedule::LrSchedule;

use std::collections::HashMap;

use crate::caflow::CaflowModel;
use crate::data::PairedSet;
use crate::error::{Error, Result};
use crate::params::{Cx, ParamStore};
use crate::tensor::{Graph, Rng};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Weight of `log p(y)` in the objective.
    pub lambda: f64,
    pub target_lr: f64,
    pub warmup_iters: u64,
    pub step_gamma: f64,
    /// Iterations between decay steps after warmup.
    pub decay_interval: u64,
    /// Divides the learning rate by 10.
    pub plateau_drop: bool,
    pub ema_rate: f64,
    pub grad_clip_norm: f64,
    pub batch_size: usize,
    /// Pairs used for the data-dependent actnorm initialization.
    pub init_batch_size: usize,
    pub max_iters: u64,
    pub seed: u64,
    pub eval_temperature: f64,
    pub best_of: usize,
    pub val_every: u64,
    pub checkpoint_every: u64,
    /// Consecutive skipped steps tolerated before aborting.
    pub max_bad_steps: u32,
    /// Random flips and transposes of each training pair.
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 0.01,
            target_lr: 1e-3,
            warmup_iters: 500,
            step_gamma: 0.999,
            decay_interval: 1,
            plateau_drop: false,
            ema_rate: 0.999,
            grad_clip_norm: 1.0,
            batch_size: 16,
            init_batch_size: 64,
            max_iters: 2000,
            seed: 0,
            eval_temperature: 0.5,
            best_of: 10,
            val_every: 100,
            checkpoint_every: 500,
            max_bad_steps: 10,
            augment: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if !(self.lambda >= 0.0) {
            return bad("lambda must be non-negative");
        }
        if !(0.0..1.0).contains(&self.ema_rate) {
            return bad("ema_rate must lie in [0, 1)");
        }
        if !(self.grad_clip_norm > 0.0) {
            return bad("grad_clip_norm must be positive");
        }
        if !(self.target_lr >= 0.0) || !(self.step_gamma > 0.0) {
            return bad("learning rate and decay factor must be positive");
        }
        if self.batch_size == 0 || self.init_batch_size == 0 || self.val_every == 0 {
            return bad("batch sizes and validation interval must be positive");
        }
        // Checkpoints are taken at validation points.
        if !self.checkpoint_every.is_multiple_of(self.val_every) {
            return bad("checkpoint_every must be a multiple of val_every");
        }
        if self.eval_temperature < 0.0 || self.best_of == 0 {
            return bad("evaluation temperature must be >= 0 and best_of >= 1");
        }
        Ok(())
    }

    pub fn schedule(&self) -> LrSchedule {
        LrSchedule {
            target: self.target_lr,
            warmup: self.warmup_iters,
            gamma: self.step_gamma,
            interval: self.decay_interval,
            plateau_drop: self.plateau_drop,
        }
    }
}

/// Everything needed to resume training.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub params: ParamStore<f32>,
    pub adam: Adam<f32>,
    pub ema: ParamStore<f32>,
    pub iteration: u64,
    /// Dequantization noise stream.
    pub rng: Rng,
    /// Whether the data-dependent actnorm initialization has run.
    pub initialized: bool,
}

impl TrainState {
    pub fn new(params: ParamStore<f32>, seed: u64) -> Self {
        Self {
            adam: Adam::new(&params),
            ema: params.clone(),
            params,
            iteration: 0,
            rng: Rng::with_stream(seed, 7),
            initialized: false,
        }
    }
}

/// One validation line of the metrics log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Record {
    pub iteration: u64,
    /// Mean training loss since the previous record (NaN for the initial one).
    pub train_bpd: f64,
    pub val_bpd: f64,
    pub lr: f64,
}

impl Record {
    pub const HEADER: &'static str = "# iteration train_bpd val_bpd lr";

    pub fn line(&self) -> String {
        format!(
            "{} {:.6} {:.6} {:.6e}",
            self.iteration, self.train_bpd, self.val_bpd, self.lr
        )
    }
}

#[derive(Clone, Debug, Default)]
pub struct TrainReport {
    pub records: Vec<Record>,
    /// Loss of every successful step, in order.
    pub losses: Vec<f64>,
    pub skipped_steps: u64,
}

/// Batch indices for `iteration`: consecutive slices of per-epoch seeded
/// permutations, so the order depends only on `(seed, iteration)`.
struct BatchOrder {
    n: usize,
    seed: u64,
    perms: HashMap<u64, Vec<usize>>,
}

impl BatchOrder {
    fn indices(&mut self, iteration: u64, batch: usize) -> Vec<usize> {
        let (n, seed) = (self.n, self.seed);
        (0..batch as u64)
            .map(|k| {
                let pos = iteration * batch as u64 + k;
                let epoch = pos / n as u64;
                let perm = self.perms.entry(epoch).or_insert_with(|| {
                    let mut p: Vec<usize> = (0..n).collect();
                    Rng::with_stream(seed, 1 << 40 | epoch).shuffle(&mut p);
                    p
                });
                perm[(pos % n as u64) as usize]
            })
            .collect()
    }
}

/// Runs the data-dependent actnorm initialization if it has not run yet.
pub fn initialize(
    model: &CaflowModel,
    state: &mut TrainState,
    cfg: &TrainConfig,
    train: &PairedSet,
) -> Result<()> {
    if state.initialized {
        return Ok(());
    }
    if train.is_empty() {
        return Err(Error::Dataset("training set is empty".into()));
    }
    let mut order = BatchOrder {
        n: train.len(),
        seed: cfg.seed,
        perms: HashMap::new(),
    };
    let idx = order.indices(0, cfg.init_batch_size.min(train.len()));
    let (w, y) = train.batch::<f32>(&idx)?;
    model.data_init(&mut state.params, &w, &y, &mut state.rng)?;
    state.ema = state.params.clone();
    state.initialized = true;
    Ok(())
}

/// Trains until `cfg.max_iters`, validating (with the EMA parameters) every
/// `cfg.val_every` iterations. `on_record` sees the state after each
/// validation, including one right after initialization.
pub fn train(
    model: &CaflowModel,
    state: &mut TrainState,
    cfg: &TrainConfig,
    train_set: &PairedSet,
    val_set: &PairedSet,
    mut on_record: impl FnMut(&TrainState, &Record) -> Result<()>,
) -> Result<TrainReport> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Dataset(
            "training and validation sets must be non-empty".into(),
        ));
    }
    let schedule = cfg.schedule();
    let mut report = TrainReport::default();
    if !state.initialized {
        initialize(model, state, cfg, train_set)?;
        let rec = Record {
            iteration: state.iteration,
            train_bpd: f64::NAN,
            val_bpd: eval::conditional_bpd(model, &state.ema, val_set)?,
            lr: schedule.lr(state.iteration),
        };
        report.records.push(rec);
        on_record(state, &rec)?;
    }
    let mut order = BatchOrder {
        n: train_set.len(),
        seed: cfg.seed,
        perms: HashMap::new(),
    };
    let mut streak = 0u32;
    let mut window = Vec::new();
    while state.iteration < cfg.max_iters {
        let idx = order.indices(state.iteration, cfg.batch_size);
        let (w, y) = if cfg.augment {
            let mut rng = Rng::with_stream(cfg.seed, 2 << 40 | state.iteration);
            let ks: Vec<u8> = idx.iter().map(|_| rng.below(8) as u8).collect();
            train_set.transformed_batch::<f32>(&idx, &ks)?
        } else {
            train_set.batch::<f32>(&idx)?
        };
        let lr = schedule.lr(state.iteration + 1);
        match step(model, state, cfg, &w, &y, lr) {
            Ok(loss) => {
                streak = 0;
                report.losses.push(loss);
                window.push(loss);
            }
            Err(Error::NonFinite { .. }) => {
                streak += 1;
                report.skipped_steps += 1;
                if streak > cfg.max_bad_steps {
                    return Err(Error::TrainingDiverged {
                        iteration: state.iteration,
                        consecutive: streak,
                    });
                }
            }
            Err(e) => return Err(e),
        }
        state.iteration += 1;
        if state.iteration.is_multiple_of(cfg.val_every) || state.iteration == cfg.max_iters {
            let rec = Record {
                iteration: state.iteration,
                train_bpd: window.iter().sum::<f64>() / window.len().max(1) as f64,
                val_bpd: eval::conditional_bpd(model, &state.ema, val_set)?,
                lr,
            };
            window.clear();
            report.records.push(rec);
            on_record(state, &rec)?;
        }
    }
    Ok(report)
}

/// One optimization step; returns the loss before the update.
fn step(
    model: &CaflowModel,
    state: &mut TrainState,
    cfg: &TrainConfig,
    w: &crate::Tensor<f32>,
    y: &crate::Tensor<f32>,
    lr: f64,
) -> Result<f64> {
    let g = Graph::new();
    let cx = Cx::new(&g, &state.params);
    let terms = loss(&cx, model, w, y, cfg.lambda, &mut state.rng)?;
    let value = g.value(terms.loss).sum_f64();
    let grads = g.backward(terms.loss)?;
    let mut pg = cx.param_grads(&grads);
    clip_gradients(&mut pg, cfg.grad_clip_norm)?;
    drop(cx);
    state.adam.step(&mut state.params, &pg, lr)?;
    ema_update(&mut state.ema, &state.params, cfg.ema_rate)?;
    Ok(value)
}
