//! WebAssembly bindings for the demo page in `www/`.
//!
//! Three things can be poked at from the page: the log-mel spectrogram of a
//! sine, clips of the synthetic datasets, and a small tagging model trained
//! step by step in the browser.

use spectnt::data::synth::{desk_model, gen_clip, split_dataset, SynthSpec};
use spectnt::data::{chord_label, Dataset, Target};
use spectnt::features::{mel_centres, spectrogram, SpectrogramConfig, WaveBuffer};
use spectnt::model::SpecTnt;
use spectnt::params::ParamStore;
use spectnt::train::{evaluate, TrainOptions, Trainer};
use spectnt::{Task, Tensor};
use wasm_bindgen::prelude::*;

fn js<T>(r: spectnt::Result<T>) -> Result<T, JsError> {
    r.map_err(|e| JsError::new(&e.to_string()))
}

/// Row-major `[rows, cols]` grid of values plus a one-line description.
/// Rows are time frames, columns are frequency bins.
#[wasm_bindgen]
pub struct Heatmap {
    rows: usize,
    cols: usize,
    values: Vec<f32>,
    caption: String,
}

#[wasm_bindgen]
impl Heatmap {
    #[wasm_bindgen(getter)]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[wasm_bindgen(getter)]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[wasm_bindgen(getter)]
    pub fn values(&self) -> Vec<f32> {
        self.values.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn caption(&self) -> String {
        self.caption.clone()
    }
}

impl Heatmap {
    fn from_tensor(x: &Tensor<f32>, caption: String) -> Heatmap {
        let s = x.shape();
        Heatmap {
            rows: s[0],
            cols: s[1],
            values: x.data().to_vec(),
            caption,
        }
    }
}

/// Log-mel spectrogram (22.05 kHz, 128 bands) of a unit sine.
#[wasm_bindgen]
pub fn sine_spectrogram(freq_hz: f64, seconds: f64) -> Result<Heatmap, JsError> {
    let cfg = SpectrogramConfig::tagging();
    let rate = cfg.sample_rate as f64;
    if !(freq_hz > 0.0 && freq_hz < rate / 2.0) {
        return Err(JsError::new(&format!("frequency must be in (0, {}) Hz", rate / 2.0)));
    }
    let n = (seconds.clamp(0.1, 10.0) * rate) as usize;
    let samples = (0..n)
        .map(|i| (2.0 * std::f64::consts::PI * freq_hz * i as f64 / rate).sin())
        .collect();
    let x = js(spectrogram(&js(WaveBuffer::new(samples, cfg.sample_rate))?, &cfg))?;
    let bands = x.shape()[1];
    let mid = &x.data()[x.shape()[0] / 2 * bands..][..bands];
    let peak = (0..bands).fold(0, |b, i| if mid[i] > mid[b] { i } else { b });
    let centre = mel_centres(bands, 0.0, rate / 2.0)[peak];
    Ok(Heatmap::from_tensor(
        &x,
        format!("{} frames x {bands} bands, peak in band {peak} (centre {centre:.0} Hz)", x.shape()[0]),
    ))
}

fn task_of(name: &str) -> Result<Task, JsError> {
    name.parse().map_err(|_| JsError::new(&format!("unknown task {name:?}")))
}

/// Clip `id` of the synthetic dataset for `task`, with its labels spelled out.
#[wasm_bindgen]
pub fn synthetic_clip(task: &str, id: u64) -> Result<Heatmap, JsError> {
    let spec = SynthSpec::desk(task_of(task)?);
    let sample = gen_clip(&spec, id);
    let caption = match &sample.target {
        Target::Tags(t) => {
            let on: Vec<String> = (0..t.len()).filter(|&i| t[i] > 0.5).map(|i| format!("tag{i}")).collect();
            format!("active: {}", on.join(" "))
        }
        Target::Frames(f) => {
            let grid = spec.pitch_grid();
            let names: Vec<String> = f
                .iter()
                .map(|&c| match (spec.task, grid) {
                    (Task::Chord, _) => chord_label(c),
                    (_, Some(g)) if c > 0 => format!("{:.0}", g.f0(c)),
                    _ => "-".into(),
                })
                .collect();
            format!("per frame: {}", names.join(" "))
        }
    };
    let x = js(Tensor::new(&[spec.n_frames, spec.n_freq], sample.features))?;
    Ok(Heatmap::from_tensor(&x, caption))
}

/// A small tagging model and its synthetic data, trained a few steps per call.
#[wasm_bindgen]
pub struct Session {
    model: SpecTnt,
    store: ParamStore<f32>,
    trainer: Trainer,
    train: Dataset,
    val: Dataset,
}

#[wasm_bindgen]
impl Session {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u64) -> Result<Session, JsError> {
        let spec = SynthSpec {
            seed,
            train: 128,
            val: 32,
            test: 0,
            ..SynthSpec::desk(Task::Tagging)
        };
        let splits = js(split_dataset(&spec))?;
        let cfg = desk_model(Task::Tagging);
        let (model, store) = js(SpecTnt::init::<f32>(&cfg, seed))?;
        let opts = TrainOptions {
            weight_decay: 0.01,
            ..TrainOptions::new(0, 16, 1e-3, seed)
        };
        Ok(Session {
            trainer: Trainer::new(&opts, splits.train.len()),
            model,
            store,
            train: splits.train,
            val: splits.val,
        })
    }

    #[wasm_bindgen(getter)]
    pub fn params(&self) -> usize {
        self.store.param_count()
    }

    #[wasm_bindgen(getter)]
    pub fn steps(&self) -> u32 {
        self.trainer.steps_taken() as u32
    }

    #[wasm_bindgen(getter)]
    pub fn val_clips(&self) -> usize {
        self.val.len()
    }

    /// Runs `steps` optimiser steps and returns their mean training loss.
    pub fn train(&mut self, steps: u32) -> Result<f64, JsError> {
        let mut total = 0.0;
        for _ in 0..steps {
            total += js(self.trainer.step(&self.model, &mut self.store, &self.train))?;
        }
        Ok(total / steps.max(1) as f64)
    }

    /// Macro ROC-AUC on the validation clips.
    pub fn roc_auc(&self) -> Result<f64, JsError> {
        let report = js(evaluate(&self.model, &self.store, &self.val, 16))?;
        Ok(report.metrics["roc_auc"])
    }

    pub fn clip(&self, i: usize) -> Result<Heatmap, JsError> {
        let s = self.val.samples.get(i).ok_or_else(|| JsError::new("no such clip"))?;
        let x = js(Tensor::new(&[self.val.n_frames, self.val.n_freq], s.features.clone()))?;
        Ok(Heatmap::from_tensor(&x, format!("validation clip {i}")))
    }

    /// Predicted tag probabilities for validation clip `i`.
    pub fn predict(&self, i: usize) -> Result<Vec<f32>, JsError> {
        let s = self.val.samples.get(i).ok_or_else(|| JsError::new("no such clip"))?;
        let x = js(Tensor::new(&self.model.input_shape(1), s.features.clone()))?;
        Ok(js(self.model.predict(&self.store, &x))?.data().to_vec())
    }

    /// Ground-truth tags of validation clip `i`.
    pub fn labels(&self, i: usize) -> Vec<f32> {
        match self.val.samples.get(i).map(|s| &s.target) {
            Some(Target::Tags(t)) => t.clone(),
            _ => Vec::new(),
        }
    }
}
