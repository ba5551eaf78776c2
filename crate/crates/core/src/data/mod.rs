//! In-memory datasets of fixed-size feature clips with tag or frame labels.

pub mod synth;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::task::Task;

/// Frame label excluded from the loss and from metrics.
pub const IGNORE_INDEX: usize = usize::MAX;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    /// Multi-hot clip labels in {0, 1}.
    Tags(Vec<f32>),
    /// One class index per input frame.
    Frames(Vec<usize>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: u64,
    /// Row-major `[T, F, K]`.
    pub features: Vec<f32>,
    pub target: Target,
}

/// Maps melody class indices to F0. Class 0 is non-voice; class `c ≥ 1`
/// sits at MIDI note `base_midi + (c − 1)·step`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PitchGrid {
    pub base_midi: f64,
    pub step: f64,
}

impl PitchGrid {
    pub fn f0(&self, class: usize) -> f64 {
        if class == 0 {
            return 0.0;
        }
        let midi = self.base_midi + (class - 1) as f64 * self.step;
        440.0 * 2f64.powf((midi - 69.0) / 12.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dataset {
    pub task: Task,
    pub n_frames: usize,
    pub n_freq: usize,
    pub channels: usize,
    pub classes: usize,
    /// Duration of one input frame.
    pub frame_seconds: f64,
    #[serde(default)]
    pub pitch_grid: Option<PitchGrid>,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn clip_len(&self) -> usize {
        self.n_frames * self.n_freq * self.channels
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes == 0 || self.clip_len() == 0 {
            return Err(Error::config("dataset shape and class count must be positive"));
        }
        if self.task == Task::Melody && self.pitch_grid.is_none() {
            return Err(Error::config("melody dataset needs a pitch grid"));
        }
        for (i, s) in self.samples.iter().enumerate() {
            if s.features.len() != self.clip_len() {
                return Err(Error::contract(format!(
                    "sample {i}: {} feature values, expected {}",
                    s.features.len(),
                    self.clip_len()
                )));
            }
            if let Some(j) = s.features.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("sample {i} feature {j}")));
            }
            match (&s.target, self.task) {
                (Target::Tags(t), Task::Tagging) if t.len() == self.classes => {}
                (Target::Frames(f), Task::Melody | Task::Chord) if f.len() == self.n_frames => {
                    if let Some(&bad) = f.iter().find(|&&c| c >= self.classes && c != IGNORE_INDEX) {
                        return Err(Error::contract(format!("sample {i}: label {bad} out of range")));
                    }
                }
                _ => return Err(Error::contract(format!("sample {i}: target does not fit a {} dataset", self.task))),
            }
        }
        Ok(())
    }

    /// Stacks clips into a `[B, T, F, K]` buffer.
    pub fn stack(&self, indices: &[usize]) -> Vec<f32> {
        let mut out = Vec::with_capacity(indices.len() * self.clip_len());
        for &i in indices {
            out.extend_from_slice(&self.samples[i].features);
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::io::write_atomic(path.as_ref(), &serde_json::to_vec(self)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let d: Dataset = serde_json::from_slice(&std::fs::read(path)?)?;
        d.validate()?;
        Ok(d)
    }
}

const PITCH_NAMES: [&str; 12] = ["C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B"];

/// Names in the 25-class major/minor vocabulary: `N`, `C`, …, `B`,
/// `C:min`, …, `B:min`.
pub fn chord_label(class: usize) -> String {
    match class {
        0 => "N".into(),
        1..=12 => PITCH_NAMES[class - 1].into(),
        13..=24 => format!("{}:min", PITCH_NAMES[class - 13]),
        _ => format!("?{class}"),
    }
}

/// Reduces frame labels by majority vote over windows of `p`. Ignored
/// frames do not vote; ties go to the smaller class index.
pub fn downsample_labels(labels: &[usize], p: usize) -> Result<Vec<usize>> {
    if p == 0 || labels.len() % p != 0 {
        return Err(Error::contract(format!("{} frames do not split into windows of {p}", labels.len())));
    }
    Ok(labels
        .chunks_exact(p)
        .map(|w| {
            let mut best = (0, IGNORE_INDEX);
            for &c in w.iter().filter(|&&c| c != IGNORE_INDEX) {
                let votes = w.iter().filter(|&&o| o == c).count();
                if votes > best.0 || (votes == best.0 && c < best.1) {
                    best = (votes, c);
                }
            }
            best.1
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn majority_downsampling() {
        assert_eq!(downsample_labels(&[1, 1, 2, 3, 3, 3, 4, 5], 4).unwrap(), vec![1, 3]);
        assert_eq!(downsample_labels(&[2, 1, 1, 2], 4).unwrap(), vec![1]);
        let i = IGNORE_INDEX;
        assert_eq!(downsample_labels(&[i, i, i, 7], 4).unwrap(), vec![7]);
        assert_eq!(downsample_labels(&[i, i], 2).unwrap(), vec![i]);
        assert_eq!(downsample_labels(&[4, 5], 1).unwrap(), vec![4, 5]);
        assert!(downsample_labels(&[1, 2, 3], 2).is_err());
    }

    #[test]
    fn chord_names() {
        assert_eq!(chord_label(0), "N");
        assert_eq!(chord_label(1), "C");
        assert_eq!(chord_label(12), "B");
        assert_eq!(chord_label(22), "A:min");
    }

    #[test]
    fn pitch_grid_reference_points() {
        let g = PitchGrid { base_midi: 69.0, step: 1.0 };
        assert_eq!(g.f0(0), 0.0);
        assert!((g.f0(1) - 440.0).abs() < 1e-9);
        assert!((g.f0(13) - 880.0).abs() < 1e-9);
    }

    #[test]
    fn validate_rejects_wrong_targets() {
        let mut d = Dataset {
            task: Task::Chord,
            n_frames: 2,
            n_freq: 3,
            channels: 1,
            classes: 25,
            frame_seconds: 0.1,
            pitch_grid: None,
            samples: vec![Sample {
                id: 0,
                features: vec![0.0; 6],
                target: Target::Frames(vec![0, 24]),
            }],
        };
        d.validate().unwrap();
        d.samples[0].target = Target::Frames(vec![0, 25]);
        assert!(d.validate().is_err());
        d.samples[0].target = Target::Tags(vec![0.0; 25]);
        assert!(d.validate().is_err());
    }
}
