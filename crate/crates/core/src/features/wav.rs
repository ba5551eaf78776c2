//! Minimal RIFF/WAVE PCM16 reader and writer.

use std::path::Path;

use crate::error::{Error, Result};

/// Mono audio with samples in [−1, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct WaveBuffer {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl WaveBuffer {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::config("sample rate must be positive"));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFinite(format!("sample {i}")));
        }
        Ok(WaveBuffer { samples, sample_rate })
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::parse(
                self.pos as u64,
                format!("truncated {what}: need {n} bytes, {} left", self.bytes.len() - self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn tag(&mut self, expect: &[u8; 4]) -> Result<()> {
        let at = self.pos as u64;
        let got = self.take(4, "chunk tag")?;
        if got != expect {
            return Err(Error::parse(
                at,
                format!("expected {:?}, found {:?}", String::from_utf8_lossy(expect), String::from_utf8_lossy(got)),
            ));
        }
        Ok(())
    }
}

/// Decodes a 16-bit PCM WAV file; multichannel audio is averaged to mono.
pub fn parse_wav(bytes: &[u8]) -> Result<WaveBuffer> {
    let mut r = Reader { bytes, pos: 0 };
    r.tag(b"RIFF")?;
    r.u32("RIFF size")?;
    r.tag(b"WAVE")?;
    let mut format: Option<(u16, u32)> = None;
    loop {
        let at = r.pos as u64;
        let id: [u8; 4] = r.take(4, "chunk tag")?.try_into().unwrap();
        let size = r.u32("chunk size")? as usize;
        match &id {
            b"fmt " => {
                if size < 16 {
                    return Err(Error::parse(at, format!("fmt chunk of {size} bytes")));
                }
                let body_at = r.pos as u64;
                let fmt = r.u16("format tag")?;
                let channels = r.u16("channel count")?;
                let rate = r.u32("sample rate")?;
                r.take(6, "byte rate and block align")?;
                let bits = r.u16("bits per sample")?;
                r.take(size - 16 + (size & 1), "fmt extension")?;
                if fmt != 1 {
                    return Err(Error::parse(body_at, format!("unsupported format tag {fmt} (PCM is 1)")));
                }
                if bits != 16 {
                    return Err(Error::parse(body_at + 14, format!("unsupported bit depth {bits}")));
                }
                if channels == 0 || rate == 0 {
                    return Err(Error::parse(body_at + 2, "zero channels or sample rate"));
                }
                format = Some((channels, rate));
            }
            b"data" => {
                let (channels, rate) =
                    format.ok_or_else(|| Error::parse(at, "data chunk before fmt chunk"))?;
                let data = r.take(size, "sample data")?;
                let ch = channels as usize;
                let frames = data.len() / (2 * ch);
                let samples = (0..frames)
                    .map(|f| {
                        let sum: f64 = (0..ch)
                            .map(|c| {
                                let i = (f * ch + c) * 2;
                                i16::from_le_bytes([data[i], data[i + 1]]) as f64 / 32768.0
                            })
                            .sum();
                        sum / ch as f64
                    })
                    .collect();
                return WaveBuffer::new(samples, rate);
            }
            _ => {
                r.take(size + (size & 1), "chunk body")?;
            }
        }
    }
}

pub fn load_wav(path: impl AsRef<Path>) -> Result<WaveBuffer> {
    parse_wav(&std::fs::read(path)?)
}

/// Encodes mono PCM16; samples are clipped to [−1, 1).
pub fn encode_wav(w: &WaveBuffer) -> Vec<u8> {
    let data_len = w.samples.len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len as u32).to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&w.sample_rate.to_le_bytes());
    out.extend_from_slice(&(w.sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in &w.samples {
        let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn write_wav(path: impl AsRef<Path>, w: &WaveBuffer) -> Result<()> {
    crate::io::write_atomic(path.as_ref(), &encode_wav(w))
}
