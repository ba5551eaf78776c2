//! Losses, optimizer, evaluation and the training loop.

mod ablation;
mod loss;
mod optim;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

pub use ablation::{ablation_table, run_ablation, AblationRow};
pub use loss::{bce_loss, ce_loss_framewise, PROB_FLOOR};
pub use optim::AdamW;

use crate::autograd::{Tape, Var};
use crate::data::{downsample_labels, Dataset, Target, IGNORE_INDEX};
use crate::error::{Error, Result};
use crate::metrics::{frames_to_segments, macro_average, melody_metrics, pr_auc, roc_auc, wcsr};
use crate::model::{OutputSpec, SpecTnt};
use crate::nn::ForwardCtx;
use crate::params::{Bound, ParamStore};
use crate::task::Task;

/// Checks that a dataset's clips and labels fit the model.
pub fn check_compatible(model: &SpecTnt, data: &Dataset) -> Result<()> {
    let cfg = &model.cfg;
    if (data.n_frames, data.n_freq, data.channels) != (cfg.n_frames, cfg.n_freq, cfg.in_channels) {
        return Err(Error::config(format!(
            "dataset clips are [{}, {}, {}] but the model expects [{}, {}, {}]",
            data.n_frames, data.n_freq, data.channels, cfg.n_frames, cfg.n_freq, cfg.in_channels
        )));
    }
    let expected = match data.task {
        Task::Tagging => OutputSpec::Clip(data.classes),
        _ => OutputSpec::Frame(data.classes),
    };
    if cfg.o_d != expected {
        return Err(Error::config(format!("{} dataset needs output {expected:?}, model has {:?}", data.task, cfg.o_d)));
    }
    Ok(())
}

/// Frame labels of the selected clips at the model's pooled resolution.
fn pooled_labels(data: &Dataset, indices: &[usize], p_t: usize) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for &i in indices {
        match &data.samples[i].target {
            Target::Frames(f) => out.extend(downsample_labels(f, p_t)?),
            Target::Tags(_) => return Err(Error::contract("frame labels requested from a tagging clip")),
        }
    }
    Ok(out)
}

fn tag_targets(data: &Dataset, indices: &[usize]) -> Result<Vec<f32>> {
    let mut out = Vec::new();
    for &i in indices {
        match &data.samples[i].target {
            Target::Tags(t) => out.extend_from_slice(t),
            Target::Frames(_) => return Err(Error::contract("tag labels requested from a frame-labelled clip")),
        }
    }
    Ok(out)
}

/// Task loss of a batch of output probabilities.
pub fn batch_loss<'t>(model: &SpecTnt, probs: Var<'t, f32>, data: &Dataset, indices: &[usize]) -> Result<Var<'t, f32>> {
    match model.cfg.o_d {
        OutputSpec::Clip(_) => bce_loss(probs, &tag_targets(data, indices)?),
        OutputSpec::Frame(_) => ce_loss_framewise(probs, &pooled_labels(data, indices, model.cfg.p_t)?),
    }
}

fn forward_batch<'t>(
    model: &SpecTnt,
    p: &Bound<'t, f32>,
    tape: &'t Tape<f32>,
    data: &Dataset,
    indices: &[usize],
    ctx: &mut ForwardCtx,
) -> Result<Var<'t, f32>> {
    let x = tape.constant(&model.input_shape(indices.len()), data.stack(indices));
    model.forward(p, x, ctx)
}

/// Metrics of one evaluation pass. `primary` names the entry used for
/// model selection.
#[derive(Clone, Debug, Serialize)]
pub struct EvalReport {
    pub task: Task,
    pub clips: usize,
    pub loss: f64,
    pub primary: &'static str,
    pub metrics: BTreeMap<String, f64>,
    pub notes: Vec<String>,
}

impl EvalReport {
    pub fn score(&self) -> f64 {
        self.metrics[self.primary]
    }
}

fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Runs the model in eval mode over `data` in batches and scores it.
pub fn evaluate(model: &SpecTnt, store: &ParamStore<f32>, data: &Dataset, batch_size: usize) -> Result<EvalReport> {
    check_compatible(model, data)?;
    if data.is_empty() {
        return Err(Error::UndefinedMetric("evaluation on an empty dataset".into()));
    }
    let classes = data.classes;
    let mut probs: Vec<f32> = Vec::new();
    let mut loss_sum = 0.0;
    let all: Vec<usize> = (0..data.len()).collect();
    for chunk in all.chunks(batch_size.max(1)) {
        let tape = Tape::inference();
        let y = forward_batch(model, &store.bind(&tape), &tape, data, chunk, &mut ForwardCtx::eval())?;
        loss_sum += batch_loss(model, y, data, chunk)?.item() as f64 * chunk.len() as f64;
        probs.extend_from_slice(&y.value());
    }
    let mut metrics = BTreeMap::new();
    let mut notes = Vec::new();
    let primary = match data.task {
        Task::Tagging => {
            let scores: Vec<f64> = probs.iter().map(|&p| p as f64).collect();
            let labels: Vec<bool> = tag_targets(data, &all)?.iter().map(|&t| t > 0.5).collect();
            let (roc, used) = macro_average(&scores, &labels, classes, roc_auc)?;
            let (pr, _) = macro_average(&scores, &labels, classes, pr_auc)?;
            if used < classes {
                notes.push(format!("{} of {classes} tags have a single label value and were skipped", classes - used));
            }
            metrics.insert("roc_auc".into(), roc);
            metrics.insert("pr_auc".into(), pr);
            "roc_auc"
        }
        Task::Melody | Task::Chord => {
            let labels = pooled_labels(data, &all, model.cfg.p_t)?;
            let pred: Vec<usize> = probs.chunks_exact(classes).map(argmax).collect();
            let keep: Vec<(usize, usize)> =
                pred.iter().zip(&labels).filter(|(_, &l)| l != IGNORE_INDEX).map(|(&p, &l)| (p, l)).collect();
            let acc = keep.iter().filter(|(p, l)| p == l).count() as f64 / keep.len().max(1) as f64;
            metrics.insert("frame_accuracy".into(), acc);
            if data.task == Task::Melody {
                let grid = data.pitch_grid.ok_or_else(|| Error::config("melody dataset needs a pitch grid"))?;
                let est: Vec<f64> = keep.iter().map(|&(p, _)| grid.f0(p)).collect();
                let reference: Vec<f64> = keep.iter().map(|&(_, l)| grid.f0(l)).collect();
                let m = melody_metrics(&est, &reference)?;
                if m.no_voiced_reference {
                    notes.push("no voiced reference frames: RPA and VR reported as 0".into());
                }
                metrics.insert("oa".into(), m.oa);
                metrics.insert("rpa".into(), m.rpa);
                metrics.insert("vr".into(), m.vr);
                "oa"
            } else {
                let t_hat = model.cfg.t_hat();
                let frame = data.frame_seconds * model.cfg.p_t as f64;
                let mut total = 0.0;
                for (c, truth) in labels.chunks(t_hat).enumerate() {
                    let est = frames_to_segments(&pred[c * t_hat..(c + 1) * t_hat], frame);
                    total += wcsr(&est, &frames_to_segments(truth, frame))?;
                }
                metrics.insert("wcsr".into(), total / data.len() as f64);
                "wcsr"
            }
        }
    };
    let loss = loss_sum / data.len() as f64;
    metrics.insert("loss".into(), loss);
    Ok(EvalReport {
        task: data.task,
        clips: data.len(),
        loss,
        primary,
        metrics,
        notes,
    })
}

/// Loop settings that are not part of the model.
pub struct TrainOptions {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Validate every this many steps and after the last step.
    pub eval_every: usize,
    /// Stop after a validation report that satisfies this.
    pub stop_when: Option<Box<dyn Fn(&EvalReport) -> bool>>,
}

impl TrainOptions {
    pub fn new(steps: usize, batch_size: usize, lr: f64, seed: u64) -> Self {
        TrainOptions {
            steps,
            batch_size,
            lr,
            weight_decay: 0.0,
            seed,
            eval_every: 100,
            stop_when: None,
        }
    }
}

impl From<&crate::io::TrainConfig> for TrainOptions {
    fn from(c: &crate::io::TrainConfig) -> Self {
        TrainOptions {
            weight_decay: c.weight_decay,
            eval_every: c.eval_every,
            ..TrainOptions::new(c.steps, c.batch_size, c.lr, c.seed)
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct HistoryRow {
    pub step: usize,
    pub loss: f64,
    pub val_loss: Option<f64>,
    pub val_score: Option<f64>,
}

pub struct TrainOutcome {
    pub history: Vec<HistoryRow>,
    /// Parameters at the best validation score (the final ones when no
    /// validation set is given).
    pub best: ParamStore<f32>,
    pub best_step: usize,
    pub best_report: Option<EvalReport>,
    pub steps_run: usize,
    pub seconds: f64,
    /// Set when training stopped on a non-finite loss or gradient.
    pub diverged: Option<String>,
}

/// Mini-batch AdamW training with best-on-validation checkpointing.
///
/// Batches are drawn from a per-epoch shuffle; shuffling and dropout use
/// separate streams seeded from `opts.seed`, so a run is reproducible.
/// One optimisation step at a time: per-epoch shuffling, dropout and AdamW
/// state carried between calls. [`train`] drives one of these.
pub struct Trainer {
    shuffle_rng: ChaCha8Rng,
    ctx: ForwardCtx,
    opt: AdamW<f32>,
    batch: usize,
    order: Vec<usize>,
    cursor: usize,
}

impl Trainer {
    pub fn new(opts: &TrainOptions, n_train: usize) -> Self {
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(opts.seed);
        shuffle_rng.set_stream(1);
        let mut dropout_rng = ChaCha8Rng::seed_from_u64(opts.seed);
        dropout_rng.set_stream(2);
        Trainer {
            shuffle_rng,
            ctx: ForwardCtx::train(dropout_rng),
            opt: AdamW::new(opts.lr, opts.weight_decay),
            batch: opts.batch_size.min(n_train).max(1),
            order: Vec::new(),
            cursor: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.opt.steps_taken()
    }

    /// Trains on the next batch and returns its loss. A non-finite loss or
    /// gradient is reported as [`Error::NonFinite`] before any weight moves.
    pub fn step(&mut self, model: &SpecTnt, store: &mut ParamStore<f32>, data: &Dataset) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::config("training set is empty"));
        }
        if self.cursor + self.batch > self.order.len() {
            self.order = (0..data.len()).collect();
            self.order.shuffle(&mut self.shuffle_rng);
            self.cursor = 0;
        }
        let idx = &self.order[self.cursor..self.cursor + self.batch];
        self.cursor += self.batch;

        let tape = Tape::new();
        let bound = store.bind(&tape);
        let probs = forward_batch(model, &bound, &tape, data, idx, &mut self.ctx)?;
        let loss = batch_loss(model, probs, data, idx)?;
        let value = loss.item() as f64;
        if !value.is_finite() {
            return Err(Error::NonFinite("loss".into()));
        }
        let grads = tape.backward(loss)?;
        store.zero_grads();
        store.accumulate(&bound, &grads, 1.0);
        self.opt.step(store)?;
        Ok(value)
    }
}

pub fn train(
    model: &SpecTnt,
    store: &mut ParamStore<f32>,
    train_set: &Dataset,
    val_set: Option<&Dataset>,
    opts: &TrainOptions,
    mut on_row: impl FnMut(&HistoryRow),
) -> Result<TrainOutcome> {
    check_compatible(model, train_set)?;
    if let Some(v) = val_set {
        check_compatible(model, v)?;
    }
    if train_set.is_empty() {
        return Err(Error::config("training set is empty"));
    }
    if opts.batch_size == 0 || opts.eval_every == 0 {
        return Err(Error::config("batch size and eval interval must be positive"));
    }
    if !(opts.lr > 0.0 && opts.lr.is_finite()) {
        return Err(Error::config(format!("learning rate {} must be positive", opts.lr)));
    }
    let start = Instant::now();
    let mut trainer = Trainer::new(opts, train_set.len());
    let mut out = TrainOutcome {
        history: Vec::new(),
        best: store.clone(),
        best_step: 0,
        best_report: None,
        steps_run: 0,
        seconds: 0.0,
        diverged: None,
    };
    for step in 1..=opts.steps {
        let loss_value = match trainer.step(model, store, train_set) {
            Err(Error::NonFinite(what)) => {
                out.diverged = Some(format!("non-finite {what} at step {step}"));
                break;
            }
            r => r?,
        };
        out.steps_run = step;

        let mut row = HistoryRow {
            step,
            loss: loss_value,
            val_loss: None,
            val_score: None,
        };
        let mut stop = false;
        if let Some(v) = val_set.filter(|_| step % opts.eval_every == 0 || step == opts.steps) {
            let report = evaluate(model, store, v, opts.batch_size)?;
            row.val_loss = Some(report.loss);
            row.val_score = Some(report.score());
            if out.best_report.as_ref().is_none_or(|b| report.score() > b.score()) {
                out.best = store.clone();
                out.best_step = step;
                stop = opts.stop_when.as_ref().is_some_and(|f| f(&report));
                out.best_report = Some(report);
            }
        }
        on_row(&row);
        out.history.push(row);
        if stop {
            break;
        }
    }
    if val_set.is_none() {
        out.best = store.clone();
        out.best_step = out.steps_run;
    }
    out.seconds = start.elapsed().as_secs_f64();
    Ok(out)
}

/// `step,loss,val_loss,val_score` with empty cells where no validation ran.
pub fn history_csv(rows: &[HistoryRow]) -> String {
    let mut s = String::from("step,loss,val_loss,val_score\n");
    let cell = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    for r in rows {
        let _ = writeln!(s, "{},{:.6},{},{}", r.step, r.loss, cell(r.val_loss), cell(r.val_score));
    }
    s
}

pub fn write_history(path: impl AsRef<Path>, rows: &[HistoryRow]) -> Result<()> {
    crate::io::write_atomic(path.as_ref(), history_csv(rows).as_bytes())
}
