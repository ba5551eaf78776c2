//! Audio front end: WAV ingestion, resampling, STFT and log-magnitude
//! (mel-)spectrograms. Spectrogram tensors are oriented `[T, F, 1]`.

mod wav;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

pub use wav::{encode_wav, load_wav, parse_wav, write_wav, WaveBuffer};

use crate::error::{Error, Result};
use crate::task::Task;
use crate::tensor::Tensor;

pub const LOG_FLOOR: f64 = 1e-5;
pub const TAGGING_SECONDS: f64 = 4.54;
pub const MELODY_SECONDS: f64 = 3.0;

#[derive(Clone, Debug, PartialEq)]
pub struct SpectrogramConfig {
    pub sample_rate: u32,
    pub window: usize,
    pub hop: usize,
    /// Project onto this many mel bands; `None` keeps linear bins.
    pub mel_bins: Option<usize>,
    /// Keep only the lowest `max_bins` linear bins.
    pub max_bins: Option<usize>,
    pub floor: f64,
}

impl SpectrogramConfig {
    pub fn tagging() -> Self {
        SpectrogramConfig {
            sample_rate: 22050,
            window: 1024,
            hop: 512,
            mel_bins: Some(128),
            max_bins: None,
            floor: LOG_FLOOR,
        }
    }

    /// Linear bins with the Nyquist bin dropped (1025 → 1024), so that a
    /// frequency pooling ratio of 4 divides the bin count.
    pub fn melody() -> Self {
        SpectrogramConfig {
            sample_rate: 16000,
            window: 2048,
            hop: 320,
            mel_bins: None,
            max_bins: Some(1024),
            floor: LOG_FLOOR,
        }
    }

    pub fn for_task(task: Task) -> Result<Self> {
        match task {
            Task::Tagging => Ok(Self::tagging()),
            Task::Melody => Ok(Self::melody()),
            Task::Chord => Err(Error::config(
                "chord features (chroma/CQT) are not extracted from audio; supply tensor files",
            )),
        }
    }

    pub fn n_bins(&self) -> usize {
        self.window / 2 + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 || self.window < 2 || self.hop == 0 || self.hop > self.window {
            return Err(Error::config(format!(
                "invalid spectrogram geometry: window {} hop {} rate {}",
                self.window, self.hop, self.sample_rate
            )));
        }
        if matches!(self.mel_bins, Some(m) if m == 0 || m > self.n_bins()) {
            return Err(Error::config("mel bin count must be in 1..=window/2+1"));
        }
        if !(self.floor > 0.0) {
            return Err(Error::config("log floor must be positive"));
        }
        Ok(())
    }
}

/// Segment length in samples for a task's fixed-length input.
pub fn segment_samples(task: Task) -> Result<usize> {
    let cfg = SpectrogramConfig::for_task(task)?;
    let seconds = match task {
        Task::Tagging => TAGGING_SECONDS,
        _ => MELODY_SECONDS,
    };
    Ok((seconds * cfg.sample_rate as f64).round() as usize)
}

/// `floor((n − window) / hop) + 1`, or `None` if `n < window`.
pub fn frame_count(n: usize, window: usize, hop: usize) -> Option<usize> {
    (n >= window).then(|| (n - window) / hop + 1)
}

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Linear-interpolation resampler.
pub fn resample(w: &WaveBuffer, target_rate: u32) -> Result<WaveBuffer> {
    if target_rate == 0 {
        return Err(Error::config("target sample rate must be positive"));
    }
    if target_rate == w.sample_rate || w.samples.is_empty() {
        return WaveBuffer::new(w.samples.clone(), target_rate);
    }
    let ratio = w.sample_rate as f64 / target_rate as f64;
    let n_out = (w.samples.len() as f64 / ratio).round() as usize;
    let last = w.samples.len() - 1;
    let samples = (0..n_out)
        .map(|i| {
            let pos = i as f64 * ratio;
            let j = (pos.floor() as usize).min(last);
            let frac = pos - j as f64;
            let next = w.samples[(j + 1).min(last)];
            w.samples[j] * (1.0 - frac) + next * frac
        })
        .collect();
    WaveBuffer::new(samples, target_rate)
}

/// Hann-windowed real FFT frames, `window/2 + 1` bins each. Frame `t`
/// starts at sample `t·hop`; there is no centre padding.
pub fn stft(samples: &[f64], cfg: &SpectrogramConfig) -> Result<Vec<Vec<Complex<f64>>>> {
    cfg.validate()?;
    let frames = frame_count(samples.len(), cfg.window, cfg.hop).ok_or_else(|| {
        Error::contract(format!("{} samples is shorter than the {}-sample window", samples.len(), cfg.window))
    })?;
    let win = hann(cfg.window);
    let fft = FftPlanner::new().plan_fft_forward(cfg.window);
    let mut buf = vec![Complex::new(0.0, 0.0); cfg.window];
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    Ok((0..frames)
        .map(|t| {
            let start = t * cfg.hop;
            for ((b, &x), &w) in buf.iter_mut().zip(&samples[start..start + cfg.window]).zip(&win) {
                *b = Complex::new(x * w, 0.0);
            }
            fft.process_with_scratch(&mut buf, &mut scratch);
            buf[..cfg.n_bins()].to_vec()
        })
        .collect())
}

/// HTK mel scale.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters `[n_mels][window/2+1]` with peaks equally spaced on
/// the HTK mel scale between `fmin` and `fmax`; each peak has weight 1.
pub fn mel_filterbank(n_mels: usize, window: usize, sample_rate: u32, fmin: f64, fmax: f64) -> Vec<Vec<f64>> {
    let n_bins = window / 2 + 1;
    let (lo, hi) = (hz_to_mel(fmin), hz_to_mel(fmax));
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64))
        .collect();
    let bin_hz = sample_rate as f64 / window as f64;
    (0..n_mels)
        .map(|m| {
            let (left, centre, right) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..n_bins)
                .map(|k| {
                    let f = k as f64 * bin_hz;
                    let up = (f - left) / (centre - left);
                    let down = (right - f) / (right - centre);
                    up.min(down).max(0.0)
                })
                .collect()
        })
        .collect()
}

/// Centre frequency (Hz) of each filter built by [`mel_filterbank`].
pub fn mel_centres(n_mels: usize, fmin: f64, fmax: f64) -> Vec<f64> {
    let (lo, hi) = (hz_to_mel(fmin), hz_to_mel(fmax));
    (1..=n_mels)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64))
        .collect()
}

/// `ln(max(|x|, floor))`.
pub fn log_magnitude(x: f64, floor: f64) -> f64 {
    x.abs().max(floor).ln()
}

/// Log-magnitude spectrogram `[T, F, 1]` of a buffer already at
/// `cfg.sample_rate`.
pub fn spectrogram(w: &WaveBuffer, cfg: &SpectrogramConfig) -> Result<Tensor<f32>> {
    if w.sample_rate != cfg.sample_rate {
        return Err(Error::contract(format!(
            "audio at {} Hz, spectrogram expects {} Hz",
            w.sample_rate, cfg.sample_rate
        )));
    }
    let frames = stft(&w.samples, cfg)?;
    let mags: Vec<Vec<f64>> = frames.iter().map(|f| f.iter().map(|c| c.norm()).collect()).collect();
    let rows: Vec<Vec<f64>> = match cfg.mel_bins {
        Some(m) => {
            let bank = mel_filterbank(m, cfg.window, cfg.sample_rate, 0.0, cfg.sample_rate as f64 / 2.0);
            mags.iter()
                .map(|mag| bank.iter().map(|f| f.iter().zip(mag).map(|(a, b)| a * b).sum()).collect())
                .collect()
        }
        None => {
            let keep = cfg.max_bins.unwrap_or(cfg.n_bins()).min(cfg.n_bins());
            mags.into_iter().map(|m| m[..keep].to_vec()).collect()
        }
    };
    let f = rows[0].len();
    let data = rows
        .iter()
        .flat_map(|r| r.iter().map(|&v| log_magnitude(v, cfg.floor) as f32))
        .collect();
    Tensor::new(&[rows.len(), f, 1], data)
}

/// Task features from arbitrary audio: resample, take the leading
/// fixed-length segment, and compute the task spectrogram.
pub fn extract_features(task: Task, w: &WaveBuffer) -> Result<Tensor<f32>> {
    let cfg = SpectrogramConfig::for_task(task)?;
    let w = resample(w, cfg.sample_rate)?;
    let need = segment_samples(task)?;
    if w.samples.len() < need {
        return Err(Error::contract(format!(
            "{task} input needs {need} samples at {} Hz, got {}",
            cfg.sample_rate,
            w.samples.len()
        )));
    }
    let seg = WaveBuffer::new(w.samples[..need].to_vec(), cfg.sample_rate)?;
    spectrogram(&seg, &cfg)
}

/// Task features for a whole recording, any length of at least one window.
pub fn task_spectrogram(task: Task, w: &WaveBuffer) -> Result<Tensor<f32>> {
    let cfg = SpectrogramConfig::for_task(task)?;
    spectrogram(&resample(w, cfg.sample_rate)?, &cfg)
}

/// Keeps the first `n` frames of a `[T, ...]` tensor.
pub fn crop_frames(x: &Tensor<f32>, n: usize) -> Result<Tensor<f32>> {
    let shape = x.shape();
    if shape.is_empty() || shape[0] < n || n == 0 {
        return Err(Error::contract(format!("cannot crop {shape:?} to {n} frames")));
    }
    let row: usize = shape[1..].iter().product();
    let mut s = shape.to_vec();
    s[0] = n;
    Tensor::new(&s, x.data()[..n * row].to_vec())
}
