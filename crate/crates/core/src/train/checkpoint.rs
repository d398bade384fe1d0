//! Binary checkpoints: `CARA`, version, model settings text, Adam step, then
//! named little-endian `f32` tensors (parameters and their `.m`/`.v` moments).

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::adam::AdamState;
use crate::config::Settings;
use crate::error::{Error, Result};
use crate::model::{CaraNet, CaraNetConfig};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"CARA";
const VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor<f32>) {
    put_u32(out, name.len() as u32);
    out.extend_from_slice(name.as_bytes());
    put_u32(out, t.rank() as u32);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_checkpoint(model: &CaraNet<f32>, state: &AdamState<f32>) -> Result<Vec<u8>> {
    if state.m.len() != model.params.len() || state.v.len() != model.params.len() {
        return Err(Error::invalid("optimizer state does not match the model"));
    }
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    let cfg = model.config.to_text();
    put_u32(&mut out, cfg.len() as u32);
    out.extend_from_slice(cfg.as_bytes());
    out.extend_from_slice(&state.t.to_le_bytes());
    put_u32(&mut out, 3 * model.params.len() as u32);
    for (i, p) in model.params.iter().enumerate() {
        put_tensor(&mut out, &p.name, &p.value);
        put_tensor(&mut out, &format!("{}.m", p.name), &state.m[i]);
        put_tensor(&mut out, &format!("{}.v", p.name), &state.v[i]);
    }
    Ok(out)
}

pub fn save_checkpoint(path: impl AsRef<Path>, model: &CaraNet<f32>, state: &AdamState<f32>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_checkpoint(model, state)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format("truncated checkpoint".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap_or_default()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap_or_default()))
    }
}

/// Decoded checkpoint contents before they are matched against a model.
pub struct RawCheckpoint {
    pub config: CaraNetConfig,
    pub t: u64,
    pub tensors: HashMap<String, Tensor<f32>>,
    order: Vec<String>,
}

impl RawCheckpoint {
    /// Tensor names in file order.
    pub fn names(&self) -> &[String] {
        &self.order
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<RawCheckpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("checkpoint version {version}, expected {VERSION}")));
    }
    let cfg_len = r.u32()? as usize;
    let cfg_text = std::str::from_utf8(r.take(cfg_len)?)
        .map_err(|_| Error::Format("checkpoint settings are not UTF-8".into()))?;
    let mut config = CaraNetConfig::default();
    config
        .apply_text(cfg_text)
        .map_err(|e| Error::Format(format!("checkpoint settings: {e}")))?;
    let t = r.u64()?;
    let count = r.u32()? as usize;
    let mut tensors = HashMap::new();
    let mut order = Vec::new();
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32()? as usize;
        if rank > 8 {
            return Err(Error::Format(format!("tensor {name} has rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64()? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::Format(format!("tensor {name} is too large")))?;
        let raw = r.take(n.checked_mul(4).ok_or_else(|| Error::Format("tensor too large".into()))?)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        if tensors.insert(name.clone(), Tensor::new(&shape, data)?).is_some() {
            return Err(Error::Format(format!("duplicate tensor {name}")));
        }
        order.push(name);
    }
    if r.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after checkpoint".into()));
    }
    Ok(RawCheckpoint {
        config,
        t,
        tensors,
        order,
    })
}

/// Copy weights and moments into an existing model. Every parameter must be
/// present with its exact shape and the file may hold nothing else.
pub fn restore_into(raw: &RawCheckpoint, model: &mut CaraNet<f32>) -> Result<AdamState<f32>> {
    let mut state = AdamState::new(&model.params);
    state.t = raw.t;
    let mut used = 0;
    for (i, p) in model.params.iter_mut().enumerate() {
        for (suffix, slot) in [("", 0usize), (".m", 1), (".v", 2)] {
            let key = format!("{}{suffix}", p.name);
            let t = raw
                .tensors
                .get(&key)
                .ok_or_else(|| Error::ParamMismatch(format!("checkpoint has no tensor {key}")))?;
            if t.shape() != p.value.shape() {
                return Err(Error::ParamMismatch(format!(
                    "{key}: checkpoint shape {:?}, model shape {:?}",
                    t.shape(),
                    p.value.shape()
                )));
            }
            match slot {
                0 => p.value = t.clone(),
                1 => state.m[i] = t.clone(),
                _ => state.v[i] = t.clone(),
            }
            used += 1;
        }
    }
    if used != raw.tensors.len() {
        let unknown = raw
            .names()
            .iter()
            .find(|n| {
                let base = n.strip_suffix(".m").or_else(|| n.strip_suffix(".v")).unwrap_or(n);
                model.params.id_of(base).is_none() && model.params.id_of(n).is_none()
            })
            .cloned()
            .unwrap_or_default();
        return Err(Error::ParamMismatch(format!("checkpoint tensor {unknown} is not a model parameter")));
    }
    Ok(state)
}

/// Rebuild the model recorded in a checkpoint, with its optimizer moments.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(CaraNet<f32>, AdamState<f32>)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let raw = decode_checkpoint(&bytes)?;
    let mut model = CaraNet::new(raw.config.clone())?;
    let state = restore_into(&raw, &mut model)?;
    Ok((model, state))
}
