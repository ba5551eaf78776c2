use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::synth::desk_model;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, OutputSpec, Variant};
use crate::task::Task;

/// Which base configuration the overrides apply to.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Full-size model for real feature inputs.
    #[default]
    Paper,
    /// Small model for the synthetic datasets.
    Desk,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Preset::Desk),
            "paper" => Ok(Preset::Paper),
            _ => Err(Error::config(format!("unknown preset {s:?} (expected desk or paper)"))),
        }
    }
}

/// 5e-4 for tagging and chords, 1e-3 for melody.
pub fn default_lr(task: Task) -> f64 {
    match task {
        Task::Melody => 1e-3,
        _ => 5e-4,
    }
}
fn default_weight_decay() -> f64 {
    0.01
}
fn default_batch() -> usize {
    16
}
fn default_steps() -> usize {
    1000
}
fn default_eval_every() -> usize {
    100
}

/// Optimisation settings of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
    pub eval_every: usize,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::config(format!("weight_decay must be non-negative, got {}", self.weight_decay)));
        }
        for (name, v) in [("batch_size", self.batch_size), ("steps", self.steps), ("eval_every", self.eval_every)] {
            if v == 0 {
                return Err(Error::config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

/// A run description: task, a base preset, optional model overrides,
/// optimiser settings and data paths. Unknown keys are rejected.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: Option<Task>,
    /// `paper` when absent.
    pub preset: Option<Preset>,
    pub variant: Option<Variant>,
    pub n_freq: Option<usize>,
    pub n_frames: Option<usize>,
    pub p_f: Option<usize>,
    pub p_t: Option<usize>,
    pub k: Option<usize>,
    pub d: Option<usize>,
    pub h_k: Option<usize>,
    pub h_d: Option<usize>,
    pub o_d: Option<OutputSpec>,
    #[serde(rename = "L")]
    pub blocks: Option<usize>,
    pub dropout: Option<f64>,
    pub lr: Option<f64>,
    pub weight_decay: Option<f64>,
    pub batch_size: Option<usize>,
    pub steps: Option<usize>,
    pub seed: Option<u64>,
    pub eval_every: Option<usize>,
    pub train_data: Option<PathBuf>,
    pub val_data: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
    }

    /// Fields set in `other` replace those in `self`.
    pub fn merge(self, other: RunConfig) -> RunConfig {
        macro_rules! pick {
            ($($f:ident),*) => { RunConfig { $($f: other.$f.or(self.$f)),* } };
        }
        pick!(task, preset, variant, n_freq, n_frames, p_f, p_t, k, d, h_k, h_d, o_d, blocks, dropout, lr, weight_decay,
            batch_size, steps, seed, eval_every, train_data, val_data)
    }

    pub fn task(&self) -> Result<Task> {
        self.task.ok_or_else(|| Error::config("no task given"))
    }

    /// The validated model configuration.
    pub fn model(&self) -> Result<ModelConfig> {
        let task = self.task()?;
        let base = match self.preset.unwrap_or_default() {
            Preset::Desk => desk_model(task),
            Preset::Paper => ModelConfig::preset(task.name())?,
        };
        let cfg = ModelConfig {
            n_freq: self.n_freq.unwrap_or(base.n_freq),
            n_frames: self.n_frames.unwrap_or(base.n_frames),
            p_f: self.p_f.unwrap_or(base.p_f),
            p_t: self.p_t.unwrap_or(base.p_t),
            k: self.k.unwrap_or(base.k),
            d: self.d.unwrap_or(base.d),
            h_k: self.h_k.unwrap_or(base.h_k),
            h_d: self.h_d.unwrap_or(base.h_d),
            o_d: self.o_d.unwrap_or(base.o_d),
            blocks: self.blocks.unwrap_or(base.blocks),
            dropout: self.dropout.unwrap_or(base.dropout),
            variant: self.variant.unwrap_or(base.variant),
            ..base
        };
        if task == Task::Tagging && !cfg.o_d.is_clip() || task != Task::Tagging && cfg.o_d.is_clip() {
            return Err(Error::config(format!("{task} needs {} outputs", if task == Task::Tagging { "clip" } else { "frame" })));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train(&self) -> Result<TrainConfig> {
        let t = TrainConfig {
            lr: self.lr.unwrap_or(default_lr(self.task()?)),
            weight_decay: self.weight_decay.unwrap_or_else(default_weight_decay),
            batch_size: self.batch_size.unwrap_or_else(default_batch),
            steps: self.steps.unwrap_or_else(default_steps),
            seed: self.seed.unwrap_or(0),
            eval_every: self.eval_every.unwrap_or_else(default_eval_every),
        };
        t.validate()?;
        Ok(t)
    }
}
