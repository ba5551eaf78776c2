//! Binary tensor and checkpoint files, atomic writes, and run configs.
//!
//! Tensor file (little-endian throughout):
//!
//! ```text
//! "STNT" | version u32 | dtype u8 (0 f32, 1 f64) | ndim u8 | dims u64 × ndim | payload
//! ```
//!
//! Checkpoint file:
//!
//! ```text
//! "STNC" | version u32 | config length u64 | config JSON
//!        | count u32 | (name length u32 | name UTF-8 | tensor file) × count
//! ```

mod run_config;

use std::path::Path;

pub use run_config::{default_lr, Preset, RunConfig, TrainConfig};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, SpecTnt};
use crate::params::ParamStore;
use crate::tensor::{DType, Element, Tensor};

pub const TENSOR_MAGIC: &[u8; 4] = b"STNT";
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"STNC";
pub const FORMAT_VERSION: u32 = 1;

/// Rounds to six significant digits.
pub fn round6(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.5e}").parse().unwrap_or(x)
}

/// Six significant digits, fixed notation for moderate magnitudes and
/// trailing zeros dropped: `0.333333`, `1234.57`, `1.5e-7`.
pub fn fmt6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let exp = x.abs().log10().floor() as i32;
    if (-5..6).contains(&exp) {
        let s = format!("{:.*}", (5 - exp).max(0) as usize, x);
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    } else {
        let s = format!("{x:.5e}");
        let (mantissa, e) = s.split_once('e').unwrap();
        let mantissa = mantissa.trim_end_matches('0').trim_end_matches('.');
        format!("{mantissa}e{e}")
    }
}

/// Serialises to pretty JSON with every float rounded by [`round6`].
pub fn to_json6<S: serde::Serialize>(value: &S) -> Result<String> {
    fn walk(v: &mut serde_json::Value) {
        match v {
            serde_json::Value::Number(n) if n.is_f64() => {
                if let Some(r) = n.as_f64().map(round6).and_then(serde_json::Number::from_f64) {
                    *n = r;
                }
            }
            serde_json::Value::Array(a) => a.iter_mut().for_each(walk),
            serde_json::Value::Object(o) => o.values_mut().for_each(walk),
            _ => {}
        }
    }
    let mut v = serde_json::to_value(value)?;
    walk(&mut v);
    Ok(serde_json::to_string_pretty(&v)?)
}

/// Writes to a sibling temporary file, then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::config(format!("{} is not a file path", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path).inspect_err(|_| {
        let _ = std::fs::remove_file(&tmp);
    })?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    base: u64,
}

impl<'a> Cursor<'a> {
    fn offset(&self) -> u64 {
        self.base + self.pos as u64
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let left = self.bytes.len() - self.pos;
        if left < n {
            return Err(Error::parse(self.offset(), format!("truncated {what}: expected {n} bytes, found {left}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn header(&mut self, magic: &[u8; 4]) -> Result<()> {
        let at = self.offset();
        let got = self.take(4, "magic")?;
        if got != magic {
            return Err(Error::parse(at, format!("bad magic {:?}, expected {:?}", got, magic)));
        }
        let at = self.offset();
        let version = self.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(Error::parse(at, format!("unsupported format version {version}")));
        }
        Ok(())
    }
}

pub fn encode_tensor<T: Element>(t: &Tensor<T>, out: &mut Vec<u8>) {
    out.extend_from_slice(TENSOR_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(T::DTYPE.code());
    out.push(t.ndim() as u8);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in t.data() {
        v.write_le(out);
    }
}

fn decode_tensor_at<T: Element>(c: &mut Cursor<'_>) -> Result<Tensor<T>> {
    c.header(TENSOR_MAGIC)?;
    let at = c.offset();
    let code = c.u8("dtype")?;
    let dtype = DType::from_code(code).ok_or_else(|| Error::parse(at, format!("unknown dtype code {code}")))?;
    if dtype != T::DTYPE {
        return Err(Error::parse(at, format!("stored dtype {dtype:?}, requested {:?}", T::DTYPE)));
    }
    let ndim = c.u8("ndim")? as usize;
    let mut shape = Vec::with_capacity(ndim);
    let mut numel: u64 = 1;
    for _ in 0..ndim {
        let at = c.offset();
        let d = c.u64("dimension")?;
        numel = numel
            .checked_mul(d)
            .filter(|&n| d > 0 && n <= (usize::MAX / 8) as u64)
            .ok_or_else(|| Error::parse(at, format!("dimension {d} is zero or overflows")))?;
        shape.push(d as usize);
    }
    let bytes = c.take(numel as usize * dtype.size(), "payload")?;
    let data = bytes.chunks_exact(dtype.size()).map(T::read_le).collect();
    Tensor::new(&shape, data)
}

pub fn decode_tensor<T: Element>(bytes: &[u8]) -> Result<Tensor<T>> {
    let mut c = Cursor { bytes, pos: 0, base: 0 };
    let t = decode_tensor_at(&mut c)?;
    if c.pos != bytes.len() {
        return Err(Error::parse(c.offset(), format!("{} trailing bytes", bytes.len() - c.pos)));
    }
    Ok(t)
}

pub fn write_tensor<T: Element>(path: impl AsRef<Path>, t: &Tensor<T>) -> Result<()> {
    let mut out = Vec::new();
    encode_tensor(t, &mut out);
    write_atomic(path.as_ref(), &out)
}

pub fn read_tensor<T: Element>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    decode_tensor(&std::fs::read(path)?)
}

pub fn encode_checkpoint<T: Element>(cfg: &ModelConfig, store: &ParamStore<T>) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(cfg)?;
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for p in store.iter() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        encode_tensor(&p.tensor, &mut out);
    }
    Ok(out)
}

/// Raw checkpoint contents: the stored config and named tensors in file
/// order.
pub fn decode_checkpoint<T: Element>(bytes: &[u8]) -> Result<(ModelConfig, Vec<(String, Tensor<T>)>)> {
    let mut c = Cursor { bytes, pos: 0, base: 0 };
    c.header(CHECKPOINT_MAGIC)?;
    let len = c.u64("config length")?;
    let at = c.offset();
    let blob = c.take(usize::try_from(len).unwrap_or(usize::MAX), "config")?;
    let cfg: ModelConfig =
        serde_json::from_slice(blob).map_err(|e| Error::parse(at, format!("config JSON: {e}")))?;
    let count = c.u32("tensor count")?;
    let mut entries = Vec::new();
    for _ in 0..count {
        let n = c.u32("name length")? as usize;
        let at = c.offset();
        let name = std::str::from_utf8(c.take(n, "name")?)
            .map_err(|_| Error::parse(at, "name is not UTF-8"))?
            .to_string();
        if entries.iter().any(|(e, _): &(String, Tensor<T>)| *e == name) {
            return Err(Error::parse(at, format!("duplicate tensor name {name}")));
        }
        entries.push((name, decode_tensor_at(&mut c)?));
    }
    if c.pos != bytes.len() {
        return Err(Error::parse(c.offset(), format!("{} trailing bytes", bytes.len() - c.pos)));
    }
    Ok((cfg, entries))
}

/// Builds the model for `cfg` and fills it from `entries`, reporting every
/// missing, unexpected or mis-shaped tensor.
pub fn restore<T: Element>(cfg: &ModelConfig, entries: Vec<(String, Tensor<T>)>) -> Result<(SpecTnt, ParamStore<T>)> {
    let (model, mut store) = SpecTnt::init::<T>(cfg, 0)?;
    let mut problems = Vec::new();
    let mut seen = vec![false; store.len()];
    for (name, tensor) in entries {
        match store.id(&name) {
            None => problems.push(format!("unexpected tensor {name}")),
            Some(id) => {
                seen[id.index()] = true;
                let slot = store.get_mut(id);
                if slot.shape() != tensor.shape() {
                    problems.push(format!("{name}: shape {:?}, model expects {:?}", tensor.shape(), slot.shape()));
                } else {
                    slot.data_mut().copy_from_slice(tensor.data());
                }
            }
        }
    }
    for id in store.ids() {
        if !seen[id.index()] {
            problems.push(format!("missing tensor {}", store.name(id)));
        }
    }
    if problems.is_empty() {
        Ok((model, store))
    } else {
        Err(Error::CheckpointMismatch(problems))
    }
}

pub fn save_checkpoint<T: Element>(path: impl AsRef<Path>, cfg: &ModelConfig, store: &ParamStore<T>) -> Result<()> {
    write_atomic(path.as_ref(), &encode_checkpoint(cfg, store)?)
}

/// Loads a checkpoint using the model config stored inside it.
pub fn load_checkpoint<T: Element>(path: impl AsRef<Path>) -> Result<(SpecTnt, ParamStore<T>)> {
    let (cfg, entries) = decode_checkpoint(&std::fs::read(path)?)?;
    restore(&cfg, entries)
}

/// Loads a checkpoint's tensors into the model described by `cfg`.
pub fn load_checkpoint_as<T: Element>(path: impl AsRef<Path>, cfg: &ModelConfig) -> Result<(SpecTnt, ParamStore<T>)> {
    let (_, entries) = decode_checkpoint(&std::fs::read(path)?)?;
    restore(cfg, entries)
}
