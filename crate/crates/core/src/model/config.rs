use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture variant.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "full")]
    Full,
    /// No TE→FCT injection; the FCT is a learnable vector.
    A1,
    /// Bridges read and write the whole flattened spectral frame.
    A2,
    /// Temporal Transformer only.
    A3,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Full, Variant::A1, Variant::A2, Variant::A3];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::A1 => "A1",
            Variant::A2 => "A2",
            Variant::A3 => "A3",
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::config(format!("unknown variant {s:?} (expected full, A1, A2 or A3)")))
    }
}

/// Output geometry: one vector per clip, or one per pooled frame.
///
/// Serialised as a bare class count (`50`) or `["T", classes]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutputSpec {
    Clip(usize),
    Frame(usize),
}

impl OutputSpec {
    pub fn classes(self) -> usize {
        match self {
            OutputSpec::Clip(c) | OutputSpec::Frame(c) => c,
        }
    }

    pub fn is_clip(self) -> bool {
        matches!(self, OutputSpec::Clip(_))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum OutputRepr {
    Clip(usize),
    Frame(String, usize),
}

impl Serialize for OutputSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match *self {
            OutputSpec::Clip(c) => OutputRepr::Clip(c),
            OutputSpec::Frame(c) => OutputRepr::Frame("T".into(), c),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for OutputSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match OutputRepr::deserialize(d)? {
            OutputRepr::Clip(c) => Ok(OutputSpec::Clip(c)),
            OutputRepr::Frame(t, c) if t == "T" => Ok(OutputSpec::Frame(c)),
            OutputRepr::Frame(t, _) => Err(serde::de::Error::custom(format!(
                "frame-wise output must be written [\"T\", classes], got {t:?}"
            ))),
        }
    }
}

/// Nonlinearity of the frame-wise head.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrameActivation {
    #[default]
    Softmax,
    Sigmoid,
}

fn default_blocks() -> usize {
    3
}
fn one() -> usize {
    1
}
fn four() -> usize {
    4
}

/// Hyperparameters of one SpecTNT model, including the fixed input size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Input frequency bins F.
    pub n_freq: usize,
    /// Input frames T.
    pub n_frames: usize,
    /// Input channels K.
    #[serde(default = "one")]
    pub in_channels: usize,
    pub p_f: usize,
    pub p_t: usize,
    pub k: usize,
    pub d: usize,
    pub h_k: usize,
    pub h_d: usize,
    pub o_d: OutputSpec,
    #[serde(rename = "L", default = "default_blocks")]
    pub blocks: usize,
    pub dropout: f64,
    pub variant: Variant,
    #[serde(default = "one")]
    pub conv_depth: usize,
    #[serde(default = "four")]
    pub ffn_ratio: usize,
    #[serde(default)]
    pub frame_activation: FrameActivation,
}

/// Dropout rate used by every preset.
pub const DROPOUT: f64 = 0.15;

impl ModelConfig {
    /// Music tagging: 128 mel bins, 192 frames (the 194 extracted frames
    /// cropped to a multiple of `p_t`), 50 tags.
    pub fn tagging() -> Self {
        ModelConfig {
            n_freq: 128,
            n_frames: 192,
            in_channels: 1,
            p_f: 1,
            p_t: 4,
            k: 96,
            d: 96,
            h_k: 4,
            h_d: 8,
            o_d: OutputSpec::Clip(50),
            blocks: 3,
            dropout: DROPOUT,
            variant: Variant::Full,
            conv_depth: 1,
            ffn_ratio: 4,
            frame_activation: FrameActivation::Softmax,
        }
    }

    /// Vocal melody: 1024 linear bins, 144 frames, 480 pitch bins plus
    /// non-voice.
    pub fn melody() -> Self {
        ModelConfig {
            n_freq: 1024,
            n_frames: 144,
            p_f: 4,
            p_t: 1,
            k: 128,
            d: 128,
            h_k: 8,
            h_d: 8,
            o_d: OutputSpec::Frame(481),
            ..Self::tagging()
        }
    }

    /// Chord recognition: 24-dim chroma, 400 frames, 25 classes.
    pub fn chord() -> Self {
        ModelConfig {
            n_freq: 24,
            n_frames: 400,
            p_f: 1,
            p_t: 1,
            k: 64,
            d: 256,
            h_k: 4,
            h_d: 8,
            o_d: OutputSpec::Frame(25),
            ..Self::tagging()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "tagging" => Ok(Self::tagging()),
            "melody" => Ok(Self::melody()),
            "chord" => Ok(Self::chord()),
            _ => Err(Error::config(format!(
                "unknown preset {name:?} (expected tagging, melody or chord)"
            ))),
        }
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    /// Pooled frequency bins F̂.
    pub fn f_hat(&self) -> usize {
        self.n_freq / self.p_f
    }

    /// Pooled frames T̂.
    pub fn t_hat(&self) -> usize {
        self.n_frames / self.p_t
    }

    /// Length of the temporal sequence including the class token.
    pub fn te_len(&self) -> usize {
        self.t_hat() + usize::from(self.o_d.is_clip())
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_freq", self.n_freq),
            ("n_frames", self.n_frames),
            ("in_channels", self.in_channels),
            ("p_f", self.p_f),
            ("p_t", self.p_t),
            ("k", self.k),
            ("d", self.d),
            ("h_k", self.h_k),
            ("h_d", self.h_d),
            ("L", self.blocks),
            ("conv_depth", self.conv_depth),
            ("ffn_ratio", self.ffn_ratio),
            ("classes", self.o_d.classes()),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::config(format!("{name} must be positive")));
        }
        if self.k % self.h_k != 0 {
            return Err(Error::config(format!("k={} not divisible by h_k={}", self.k, self.h_k)));
        }
        if self.d % self.h_d != 0 {
            return Err(Error::config(format!("d={} not divisible by h_d={}", self.d, self.h_d)));
        }
        if self.n_freq % self.p_f != 0 || self.n_frames % self.p_t != 0 {
            return Err(Error::config(format!(
                "input {}x{} (F x T) not divisible by pooling ratios ({}, {})",
                self.n_freq, self.n_frames, self.p_f, self.p_t
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}
