//! Run configuration as line-oriented `key = value` text.
//!
//! ```text
//! # comment
//! [model]
//! n_scales = 2
//! [train]
//! lambda = 0.01
//! ```
//!
//! Sections are `model`, `train`, `task` and `io`. Keys left out keep their
//! defaults; unknown sections or keys are errors carrying the line number.
//! `#` starts a comment only at the beginning of a line.

use std::fmt::Write as _;
use std::path::PathBuf;

use crate::caflow::{DependencyMode, ModelConfig, WeightSharing};
use crate::data::Task;
use crate::error::{Error, Result};
use crate::layers::DequantKind;
use crate::train::TrainConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct TaskConfig {
    pub task: Task,
    /// Dataset directory; `None` generates a synthetic set in memory.
    pub data: Option<PathBuf>,
    pub synthetic_train: usize,
    pub synthetic_val: usize,
    pub synthetic_test: usize,
    pub data_seed: u64,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            task: Task::Colorize,
            data: None,
            synthetic_train: 200,
            synthetic_val: 32,
            synthetic_test: 32,
            data_seed: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IoConfig {
    pub out_dir: PathBuf,
    /// Checkpoint to resume from.
    pub resume: Option<PathBuf>,
}

impl Default for IoConfig {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("runs/default"),
            resume: None,
        }
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            channels: 3,
            size: 16,
            n_scales: 3,
            r_steps: 8,
            t_steps: 8,
            cond_steps: 8,
            hidden: 64,
            cond_hidden: 32,
            dependency: DependencyMode::Caflow,
            sharing: WeightSharing::Off,
            dequant: DequantKind::Uniform,
            dequant_steps: 4,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub task: TaskConfig,
    pub io: IoConfig,
}

fn dependency_name(d: DependencyMode) -> &'static str {
    match d {
        DependencyMode::Caflow => "caflow",
        DependencyMode::DualGlow => "dualglow",
    }
}

fn sharing_name(s: WeightSharing) -> &'static str {
    match s {
        WeightSharing::Off => "off",
        WeightSharing::Shared => "shared",
    }
}

fn dequant_name(d: DequantKind) -> &'static str {
    match d {
        DequantKind::Uniform => "uniform",
        DequantKind::Variational => "variational",
    }
}

fn path_text(p: &Option<PathBuf>) -> String {
    p.as_ref()
        .map(|p| p.display().to_string())
        .unwrap_or_default()
}

fn num<T: std::str::FromStr>(v: &str) -> std::result::Result<T, String> {
    v.parse().map_err(|_| format!("invalid number {v:?}"))
}

fn float(v: &str) -> std::result::Result<f64, String> {
    let x: f64 = num(v)?;
    if x.is_finite() {
        Ok(x)
    } else {
        Err(format!("{v:?} is not finite"))
    }
}

fn flag(v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("expected true or false, got {v:?}")),
    }
}

fn opt_path(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| PathBuf::from(v))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = RunConfig::default();
        let mut section: Option<String> = None;
        for (k, raw) in text.lines().enumerate() {
            let line_no = k + 1;
            let err = |message: String| Error::Config {
                line: line_no,
                message,
            };
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                let name = name.trim();
                if !["model", "train", "task", "io"].contains(&name) {
                    return Err(err(format!("unknown section [{name}]")));
                }
                section = Some(name.to_string());
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err("expected `key = value`".into()))?;
            let (key, value) = (key.trim(), value.trim());
            let sec = section
                .as_deref()
                .ok_or_else(|| err(format!("key {key:?} outside any section")))?;
            c.set(sec, key, value).map_err(err)?;
        }
        c.validate()?;
        Ok(c)
    }

    fn set(&mut self, section: &str, key: &str, v: &str) -> std::result::Result<(), String> {
        let (m, t, task, io) = (
            &mut self.model,
            &mut self.train,
            &mut self.task,
            &mut self.io,
        );
        match (section, key) {
            ("model", "channels") => m.channels = num(v)?,
            ("model", "size") => m.size = num(v)?,
            ("model", "n_scales") => m.n_scales = num(v)?,
            ("model", "r_steps") => m.r_steps = num(v)?,
            ("model", "t_steps") => m.t_steps = num(v)?,
            ("model", "cond_steps") => m.cond_steps = num(v)?,
            ("model", "hidden") => m.hidden = num(v)?,
            ("model", "cond_hidden") => m.cond_hidden = num(v)?,
            ("model", "dependency") => {
                m.dependency = match v {
                    "caflow" => DependencyMode::Caflow,
                    "dualglow" => DependencyMode::DualGlow,
                    _ => return Err(format!("dependency must be caflow or dualglow, got {v:?}")),
                }
            }
            ("model", "sharing") => {
                m.sharing = match v {
                    "off" => WeightSharing::Off,
                    "shared" => WeightSharing::Shared,
                    _ => return Err(format!("sharing must be off or shared, got {v:?}")),
                }
            }
            ("model", "dequant") => {
                m.dequant = match v {
                    "uniform" => DequantKind::Uniform,
                    "variational" => DequantKind::Variational,
                    _ => return Err(format!("dequant must be uniform or variational, got {v:?}")),
                }
            }
            ("model", "dequant_steps") => m.dequant_steps = num(v)?,
            ("train", "lambda") => t.lambda = float(v)?,
            ("train", "target_lr") => t.target_lr = float(v)?,
            ("train", "warmup_iters") => t.warmup_iters = num(v)?,
            ("train", "step_gamma") => t.step_gamma = float(v)?,
            ("train", "decay_interval") => t.decay_interval = num(v)?,
            ("train", "plateau_drop") => t.plateau_drop = flag(v)?,
            ("train", "ema_rate") => t.ema_rate = float(v)?,
            ("train", "grad_clip_norm") => t.grad_clip_norm = float(v)?,
            ("train", "batch_size") => t.batch_size = num(v)?,
            ("train", "init_batch_size") => t.init_batch_size = num(v)?,
            ("train", "max_iters") => t.max_iters = num(v)?,
            ("train", "seed") => t.seed = num(v)?,
            ("train", "eval_temperature") => t.eval_temperature = float(v)?,
            ("train", "best_of") => t.best_of = num(v)?,
            ("train", "val_every") => t.val_every = num(v)?,
            ("train", "checkpoint_every") => t.checkpoint_every = num(v)?,
            ("train", "max_bad_steps") => t.max_bad_steps = num(v)?,
            ("train", "augment") => t.augment = flag(v)?,
            ("task", "task") => task.task = v.parse().map_err(|e: Error| e.to_string())?,
            ("task", "data") => task.data = opt_path(v),
            ("task", "synthetic_train") => task.synthetic_train = num(v)?,
            ("task", "synthetic_val") => task.synthetic_val = num(v)?,
            ("task", "synthetic_test") => task.synthetic_test = num(v)?,
            ("task", "data_seed") => task.data_seed = num(v)?,
            ("io", "out_dir") => io.out_dir = PathBuf::from(v),
            ("io", "resume") => io.resume = opt_path(v),
            _ => return Err(format!("unknown key {key:?} in [{section}]")),
        }
        Ok(())
    }

    /// Checks cross-field constraints; the error points at line 0.
    pub fn validate(&self) -> Result<()> {
        let as_config = |e: Error| Error::Config {
            line: 0,
            message: e.to_string(),
        };
        self.model.flow_config(1).validate().map_err(as_config)?;
        self.train.validate().map_err(as_config)?;
        Ok(())
    }

    pub fn serialize(&self) -> String {
        let (m, t, task, io) = (&self.model, &self.train, &self.task, &self.io);
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").expect("write to string");
        kv("[model]\nchannels", m.channels.to_string());
        kv("size", m.size.to_string());
        kv("n_scales", m.n_scales.to_string());
        kv("r_steps", m.r_steps.to_string());
        kv("t_steps", m.t_steps.to_string());
        kv("cond_steps", m.cond_steps.to_string());
        kv("hidden", m.hidden.to_string());
        kv("cond_hidden", m.cond_hidden.to_string());
        kv("dependency", dependency_name(m.dependency).into());
        kv("sharing", sharing_name(m.sharing).into());
        kv("dequant", dequant_name(m.dequant).into());
        kv("dequant_steps", m.dequant_steps.to_string());
        kv("\n[train]\nlambda", format!("{:?}", t.lambda));
        kv("target_lr", format!("{:?}", t.target_lr));
        kv("warmup_iters", t.warmup_iters.to_string());
        kv("step_gamma", format!("{:?}", t.step_gamma));
        kv("decay_interval", t.decay_interval.to_string());
        kv("plateau_drop", t.plateau_drop.to_string());
        kv("ema_rate", format!("{:?}", t.ema_rate));
        kv("grad_clip_norm", format!("{:?}", t.grad_clip_norm));
        kv("batch_size", t.batch_size.to_string());
        kv("init_batch_size", t.init_batch_size.to_string());
        kv("max_iters", t.max_iters.to_string());
        kv("seed", t.seed.to_string());
        kv("eval_temperature", format!("{:?}", t.eval_temperature));
        kv("best_of", t.best_of.to_string());
        kv("val_every", t.val_every.to_string());
        kv("checkpoint_every", t.checkpoint_every.to_string());
        kv("max_bad_steps", t.max_bad_steps.to_string());
        kv("augment", t.augment.to_string());
        kv("\n[task]\ntask", task.task.name().into());
        kv("data", path_text(&task.data));
        kv("synthetic_train", task.synthetic_train.to_string());
        kv("synthetic_val", task.synthetic_val.to_string());
        kv("synthetic_test", task.synthetic_test.to_string());
        kv("data_seed", task.data_seed.to_string());
        kv("\n[io]\nout_dir", io.out_dir.display().to_string());
        kv("resume", path_text(&io.resume));
        s
    }
}
