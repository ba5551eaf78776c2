//! Synthetic stand-ins for the three tasks. Clips are rendered directly in
//! a log-magnitude domain where silence is 0 and a full-strength partial
//! is 1; noise is additive and uniform on `[0, noise)`.
//!
//! Every clip is a pure function of its id, so splits are reproducible
//! from the dataset seed alone.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Dataset, PitchGrid, Sample, Target};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, OutputSpec, Variant};
use crate::task::Task;

/// Semitones between the fundamental and partials 1..=4.
pub const PARTIAL_OFFSETS: [usize; 4] = [0, 12, 19, 24];
pub const PARTIAL_GAINS: [f32; 4] = [1.0, 0.6, 0.45, 0.35];
/// Gain of the optional accompaniment tone under the melody.
pub const ACCOMPANIMENT_GAIN: f32 = 0.4;
/// Chroma value of every dimension in a no-chord frame.
pub const NO_CHORD_LEVEL: f32 = 0.1;
/// Lowest melody pitch (A2) of the synthetic pitch grid.
pub const MELODY_BASE_MIDI: f64 = 45.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub task: Task,
    pub n_frames: usize,
    pub n_freq: usize,
    pub classes: usize,
    pub noise: f64,
    pub seed: u64,
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SynthSpec {
    /// Small default problem per task, sized for CPU training.
    pub fn desk(task: Task) -> Self {
        let (n_frames, n_freq, classes) = match task {
            Task::Tagging => (16, 32, 8),
            Task::Melody => (16, 80, 61),
            Task::Chord => (32, 24, 25),
        };
        SynthSpec {
            task,
            n_frames,
            n_freq,
            classes,
            noise: 0.1,
            seed: 0,
            train: 512,
            val: 128,
            test: 128,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_frames == 0 || self.n_freq == 0 {
            return Err(Error::config("synthetic clips need at least one frame and one bin"));
        }
        if !(0.0..1.0).contains(&self.noise) {
            return Err(Error::config(format!("noise {} outside [0, 1)", self.noise)));
        }
        match self.task {
            Task::Tagging if self.classes == 0 || self.n_freq < 8 => {
                Err(Error::config("tagging needs at least one tag and 8 bins"))
            }
            Task::Melody if self.classes < 2 || self.n_freq < self.classes - 1 => Err(Error::config(format!(
                "melody with {} classes needs at least {} bins",
                self.classes,
                self.classes.saturating_sub(1)
            ))),
            Task::Chord if self.classes != 25 || self.n_freq != 24 => {
                Err(Error::config("chord clips are 24-dim with 25 classes"))
            }
            _ => Ok(()),
        }
    }

    pub fn frame_seconds(&self) -> f64 {
        match self.task {
            Task::Tagging => 512.0 / 22050.0,
            Task::Melody => 320.0 / 16000.0,
            Task::Chord => 0.1,
        }
    }

    pub fn pitch_grid(&self) -> Option<PitchGrid> {
        (self.task == Task::Melody).then_some(PitchGrid {
            base_midi: MELODY_BASE_MIDI,
            step: 1.0,
        })
    }

    fn empty(&self) -> Dataset {
        Dataset {
            task: self.task,
            n_frames: self.n_frames,
            n_freq: self.n_freq,
            channels: 1,
            classes: self.classes,
            frame_seconds: self.frame_seconds(),
            pitch_grid: self.pitch_grid(),
            samples: Vec::new(),
        }
    }
}

/// Model sized for [`SynthSpec::desk`] inputs.
pub fn desk_model(task: Task) -> ModelConfig {
    let s = SynthSpec::desk(task);
    let (p_f, p_t, o_d) = match task {
        Task::Tagging => (2, 2, OutputSpec::Clip(s.classes)),
        Task::Melody => (2, 1, OutputSpec::Frame(s.classes)),
        Task::Chord => (1, 1, OutputSpec::Frame(s.classes)),
    };
    ModelConfig {
        n_freq: s.n_freq,
        n_frames: s.n_frames,
        in_channels: 1,
        p_f,
        p_t,
        k: 16,
        d: 32,
        h_k: 2,
        h_d: 2,
        o_d,
        blocks: 2,
        dropout: 0.1,
        variant: Variant::Full,
        conv_depth: 1,
        ffn_ratio: 4,
        frame_activation: Default::default(),
    }
}

/// `[T × F]` log-magnitude canvas.
struct Canvas {
    f: usize,
    data: Vec<f32>,
}

impl Canvas {
    fn new(t: usize, f: usize) -> Self {
        Canvas { f, data: vec![0.0; t * f] }
    }

    /// Overlapping sources combine by maximum, not sum.
    fn put(&mut self, t: usize, bin: usize, v: f32) {
        if bin < self.f {
            let c = &mut self.data[t * self.f + bin];
            *c = c.max(v);
        }
    }

    fn add_noise(&mut self, noise: f64, rng: &mut ChaCha8Rng) {
        if noise > 0.0 {
            for v in &mut self.data {
                *v += rng.random_range(0.0..noise) as f32;
            }
        }
    }
}

/// Tags alternate between harmonic stacks and amplitude-modulated bands.
#[derive(Clone, Debug, PartialEq)]
pub enum TagPattern {
    Harmonic { base: usize },
    Modulated { lo: usize, hi: usize, period: usize },
}

pub fn tag_pattern(tag: usize, n_freq: usize) -> TagPattern {
    let m = tag / 2;
    if tag % 2 == 0 {
        TagPattern::Harmonic { base: 2 + m % (n_freq / 2 - 2) }
    } else {
        let width = (n_freq / 8).max(2);
        let lo = (m * width + 1) % (n_freq - width);
        TagPattern::Modulated {
            lo,
            hi: lo + width,
            period: 2 << (m % 3),
        }
    }
}

/// Bins a tag lights up in frame `t`, each with its level.
pub fn tag_energy(tag: usize, n_freq: usize, t: usize) -> Vec<(usize, f32)> {
    match tag_pattern(tag, n_freq) {
        TagPattern::Harmonic { base } => (1..=4)
            .map(|h| (base * h, (h as f32).powf(-0.5)))
            .filter(|&(b, _)| b < n_freq)
            .collect(),
        TagPattern::Modulated { lo, hi, period } => {
            if (t % period) < period / 2 {
                (lo..hi).map(|b| (b, 1.0)).collect()
            } else {
                Vec::new()
            }
        }
    }
}

/// Renders a tagging clip with the given active tags.
pub fn render_tagging(spec: &SynthSpec, active: &[bool], rng: &mut ChaCha8Rng) -> Vec<f32> {
    let mut c = Canvas::new(spec.n_frames, spec.n_freq);
    for (tag, _) in active.iter().enumerate().filter(|(_, &a)| a) {
        for t in 0..spec.n_frames {
            for (b, v) in tag_energy(tag, spec.n_freq, t) {
                c.put(t, b, v);
            }
        }
    }
    c.add_noise(spec.noise, rng);
    c.data
}

/// Renders a melody clip from one class per frame plus an optional
/// accompaniment pitch held for the whole clip.
pub fn render_melody(spec: &SynthSpec, classes: &[usize], accompaniment: Option<usize>, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let mut c = Canvas::new(spec.n_frames, spec.n_freq);
    for (t, &class) in classes.iter().enumerate() {
        for (off, gain) in PARTIAL_OFFSETS.iter().zip(PARTIAL_GAINS) {
            if let Some(a) = accompaniment {
                c.put(t, a + off, gain * ACCOMPANIMENT_GAIN);
            }
            if class > 0 {
                c.put(t, class - 1 + off, gain);
            }
        }
    }
    c.add_noise(spec.noise, rng);
    c.data
}

/// Pitch classes of a chord label: `None` for no-chord, else the root and
/// the triad (root, third, fifth).
pub fn chord_notes(class: usize) -> Option<(usize, [usize; 3])> {
    match class {
        0 => None,
        1..=12 => {
            let r = class - 1;
            Some((r, [r, (r + 4) % 12, (r + 7) % 12]))
        }
        13..=24 => {
            let r = class - 13;
            Some((r, [r, (r + 3) % 12, (r + 7) % 12]))
        }
        _ => panic!("chord class {class} out of range"),
    }
}

/// Transposes a chord label by `shift` semitones.
pub fn transpose_chord(class: usize, shift: usize) -> usize {
    match class {
        0 => 0,
        1..=12 => 1 + (class - 1 + shift) % 12,
        _ => 13 + (class - 13 + shift) % 12,
    }
}

/// 24-dim frames: bass chroma (root only) then treble chroma (triad).
pub fn render_chord(spec: &SynthSpec, classes: &[usize], rng: &mut ChaCha8Rng) -> Vec<f32> {
    let mut c = Canvas::new(spec.n_frames, 24);
    for (t, &class) in classes.iter().enumerate() {
        match chord_notes(class) {
            None => (0..24).for_each(|b| c.put(t, b, NO_CHORD_LEVEL)),
            Some((root, triad)) => {
                c.put(t, root, 1.0);
                triad.iter().for_each(|&p| c.put(t, 12 + p, 1.0));
            }
        }
    }
    c.add_noise(spec.noise, rng);
    c.data
}

/// Piecewise-constant label track with segment lengths in `min..=max`.
fn segments(n: usize, min: usize, max: usize, rng: &mut ChaCha8Rng, mut draw: impl FnMut(&mut ChaCha8Rng) -> usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let len = rng.random_range(min..=max);
        let class = draw(rng);
        out.extend(std::iter::repeat_n(class, len.min(n - out.len())));
    }
    out
}

/// Generates the clip whose content is determined by `id`.
pub fn gen_clip(spec: &SynthSpec, id: u64) -> Sample {
    let mut rng = ChaCha8Rng::seed_from_u64(id);
    let (features, target) = match spec.task {
        Task::Tagging => {
            let mut active: Vec<bool> = (0..spec.classes).map(|_| rng.random_bool(0.3)).collect();
            if !active.contains(&true) {
                active[rng.random_range(0..spec.classes)] = true;
            }
            let x = render_tagging(spec, &active, &mut rng);
            (x, Target::Tags(active.iter().map(|&a| f32::from(u8::from(a))).collect()))
        }
        Task::Melody => {
            let pitches = spec.classes - 1;
            let labels = segments(spec.n_frames, 2, 6, &mut rng, |r| {
                if r.random_bool(0.75) {
                    1 + r.random_range(0..pitches)
                } else {
                    0
                }
            });
            let acc = rng.random_bool(0.5).then(|| rng.random_range(0..pitches));
            let x = render_melody(spec, &labels, acc, &mut rng);
            (x, Target::Frames(labels))
        }
        Task::Chord => {
            let labels = segments(spec.n_frames, 4, 12, &mut rng, |r| r.random_range(0..25));
            let x = render_chord(spec, &labels, &mut rng);
            (x, Target::Frames(labels))
        }
    };
    Sample { id, features, target }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

/// Draws distinct clip ids from the spec seed and cuts them into
/// train/val/test in that order.
pub fn split_dataset(spec: &SynthSpec) -> Result<Splits> {
    spec.validate()?;
    let total = spec.train + spec.val + spec.test;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut seen = HashSet::with_capacity(total);
    let mut ids = Vec::with_capacity(total);
    while ids.len() < total {
        let id: u64 = rng.random();
        if seen.insert(id) {
            ids.push(id);
        }
    }
    let build = |range: &[u64]| {
        let mut d = spec.empty();
        d.samples = range.iter().map(|&id| gen_clip(spec, id)).collect();
        d
    };
    let (a, b) = (spec.train, spec.train + spec.val);
    Ok(Splits {
        train: build(&ids[..a]),
        val: build(&ids[a..b]),
        test: build(&ids[b..]),
    })
}
