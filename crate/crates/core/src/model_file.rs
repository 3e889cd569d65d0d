//! Binary weight file.
//!
//! ```text
//! magic "RESUNET\0" | version u32 | kind u8 | manifest_len u32 | manifest (TOML)
//! params f32[] | running f32[] | bin_min f64[161] | bin_range f64[161]
//! [checkpoint section] | crc32 u32
//! ```
//!
//! All numbers are little-endian. The CRC covers every byte before it.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{NormStats, N_BINS};
use crate::training::{AdamConfig, AdamState, TrainState};
use crate::unet::{UNetConfig, UNetWeights};

const MAGIC: &[u8; 8] = b"RESUNET\0";
pub const FORMAT_VERSION: u32 = 1;
const KIND_MODEL: u8 = 0;
const KIND_CHECKPOINT: u8 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    kind: String,
    n_params: usize,
    n_running: usize,
    unet: UNetConfig,
    #[serde(default)]
    meta: toml::Table,
}

/// Trained weights with the normalization statistics they expect.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub weights: UNetWeights<f32>,
    pub stats: NormStats,
    /// Free-form provenance: resolved config, seed, code version.
    pub meta: toml::Table,
}

/// A model plus the optimizer state needed to resume training.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelFile,
    pub state: TrainState,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f32s(&mut self, v: &[f32]) {
        v.iter().for_each(|x| self.0.extend_from_slice(&x.to_le_bytes()));
    }
    fn f64s(&mut self, v: &[f64]) {
        v.iter().for_each(|&x| self.f64(x));
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::ModelFormat("file truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let b = self.take(n.checked_mul(4).ok_or_else(|| Error::ModelFormat("tensor size overflow".into()))?)?;
        Ok(b.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect())
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }
}

fn write_header(w: &mut Writer, kind: u8, model: &ModelFile) -> Result<()> {
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        kind: if kind == KIND_MODEL { "model" } else { "checkpoint" }.into(),
        n_params: model.weights.params.len(),
        n_running: model.weights.running.len(),
        unet: model.weights.config().clone(),
        meta: model.meta.clone(),
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::Config(e.to_string()))?;
    w.0.extend_from_slice(MAGIC);
    w.u32(FORMAT_VERSION);
    w.u8(kind);
    w.u32(text.len() as u32);
    w.0.extend_from_slice(text.as_bytes());
    w.f32s(&model.weights.params);
    w.f32s(&model.weights.running);
    w.f64s(&model.stats.bin_min);
    w.f64s(&model.stats.bin_range);
    Ok(())
}

fn finish(mut w: Writer) -> Vec<u8> {
    let crc = crc32fast::hash(&w.0);
    w.u32(crc);
    w.0
}

fn open(bytes: &[u8]) -> Result<(Reader<'_>, u8, ModelFile)> {
    if bytes.len() < MAGIC.len() + 4 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::ModelFormat("not a model file (bad magic)".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    if crc32fast::hash(body) != stored {
        return Err(Error::ModelFormat("checksum mismatch".into()));
    }
    let mut r = Reader { buf: body, pos: MAGIC.len() };
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::ModelFormat(format!("unsupported format version {version}")));
    }
    let kind = r.u8()?;
    let len = r.u32()? as usize;
    let text = std::str::from_utf8(r.take(len)?).map_err(|_| Error::ModelFormat("manifest is not UTF-8".into()))?;
    let manifest: Manifest = toml::from_str(text).map_err(|e| Error::ModelFormat(format!("manifest: {e}")))?;
    let params = r.f32s(manifest.n_params)?;
    let running = r.f32s(manifest.n_running)?;
    let weights = UNetWeights::from_parts(&manifest.unet, params, running)
        .map_err(|e| Error::ModelFormat(format!("weights do not match the manifest: {e}")))?;
    weights.check_running_var().map_err(|e| Error::ModelFormat(e.to_string()))?;
    let stats = NormStats { bin_min: r.f64s(N_BINS)?, bin_range: r.f64s(N_BINS)? };
    stats.validate().map_err(|e| Error::ModelFormat(e.to_string()))?;
    Ok((r, kind, ModelFile { weights, stats, meta: manifest.meta }))
}

impl ModelFile {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer(Vec::new());
        write_header(&mut w, KIND_MODEL, self)?;
        Ok(finish(w))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (r, kind, model) = open(bytes)?;
        if kind != KIND_MODEL {
            return Err(Error::ModelFormat("file is a checkpoint, not a model".into()));
        }
        if r.pos != r.buf.len() {
            return Err(Error::ModelFormat("trailing bytes after tensors".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(std::fs::write(path, self.to_bytes()?)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer(Vec::new());
        let model = ModelFile { weights: self.state.weights.clone(), ..self.model.clone() };
        write_header(&mut w, KIND_CHECKPOINT, &model)?;
        let a = &self.state.adam;
        w.f64(a.config.beta1);
        w.f64(a.config.beta2);
        w.f64(a.config.eps);
        w.u64(a.step);
        w.f32s(&a.m);
        w.f32s(&a.v);
        w.u64(self.state.epoch as u64);
        match &self.state.best {
            Some((epoch, loss, weights)) => {
                w.u8(1);
                w.u64(*epoch as u64);
                w.f64(*loss);
                w.f32s(&weights.params);
                w.f32s(&weights.running);
            }
            None => w.u8(0),
        }
        Ok(finish(w))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (mut r, kind, model) = open(bytes)?;
        if kind != KIND_CHECKPOINT {
            return Err(Error::ModelFormat("file is a model, not a checkpoint".into()));
        }
        let n = model.weights.params.len();
        let config = AdamConfig { beta1: r.f64()?, beta2: r.f64()?, eps: r.f64()? };
        let step = r.u64()?;
        let adam = AdamState { config, step, m: r.f32s(n)?, v: r.f32s(n)? };
        let epoch = r.u64()? as usize;
        let best = match r.u8()? {
            0 => None,
            1 => {
                let (e, l) = (r.u64()? as usize, r.f64()?);
                let params = r.f32s(n)?;
                let running = r.f32s(model.weights.running.len())?;
                Some((e, l, UNetWeights::from_parts(model.weights.config(), params, running)?))
            }
            t => return Err(Error::ModelFormat(format!("bad best-weights tag {t}"))),
        };
        if r.pos != r.buf.len() {
            return Err(Error::ModelFormat("trailing bytes after checkpoint".into()));
        }
        let state = TrainState { weights: model.weights.clone(), adam, epoch, best };
        Ok(Self { model, state })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(std::fs::write(path, self.to_bytes()?)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
