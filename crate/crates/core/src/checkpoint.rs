//! Binary checkpoints of named `f32` tensors.
//!
//! Layout (all integers little-endian): magic `LNTC`, `u32` version, `u32`
//! tensor count, then per tensor a `u16` name length, the UTF-8 name, a `u8`
//! rank, one `u32` per dimension and the raw `f32` values.
//!
//! Besides the model parameters a checkpoint carries `encoder.strides` and,
//! when present, the normalization statistics `norm.mean` / `norm.std`. The
//! architecture is recovered from names and shapes on load.

use std::collections::BTreeMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::data::NormStats;
use crate::error::{LntError, Result};
use crate::model::{ModelConfig, ModelParams};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"LNTC";
pub const VERSION: u32 = 1;

/// A model with the statistics used to standardize its training data.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelParams<f32>,
    pub norm: Option<NormStats>,
}

fn bad(msg: impl Into<String>) -> LntError {
    LntError::Checkpoint(msg.into())
}

/// Serializes named tensors.
pub fn encode_tensors(tensors: &[(String, Tensor<f32>)]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        let len = u16::try_from(name.len()).map_err(|_| bad(format!("name too long: {name}")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        let rank = u8::try_from(t.rank()).map_err(|_| bad(format!("{name}: rank {} too large", t.rank())))?;
        out.push(rank);
        for &d in t.shape() {
            let d = u32::try_from(d).map_err(|_| bad(format!("{name}: dimension {d} too large")))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| bad(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

/// Parses named tensors, in file order.
pub fn decode_tensors(bytes: &[u8]) -> Result<Vec<(String, Tensor<f32>)>> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err(bad("bad magic bytes"));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let count = c.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let len = u16::from_le_bytes(c.take(2)?.try_into().expect("2 bytes")) as usize;
        let name = std::str::from_utf8(c.take(len)?).map_err(|_| bad("tensor name is not UTF-8"))?.to_string();
        let rank = c.take(1)?[0] as usize;
        let shape = (0..rank).map(|_| c.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| bad(format!("{name}: shape overflow")))?;
        let raw = c.take(numel.checked_mul(4).ok_or_else(|| bad("size overflow"))?)?;
        let data = raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes"))).collect();
        let t = Tensor::new(shape, data).map_err(|e| bad(format!("{name}: {e}")))?;
        out.push((name, t));
    }
    if c.pos != bytes.len() {
        return Err(bad(format!("{} trailing bytes", bytes.len() - c.pos)));
    }
    Ok(out)
}

impl Checkpoint {
    pub fn new(model: ModelParams<f32>, norm: Option<NormStats>) -> Self {
        Checkpoint { model, norm }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut tensors: Vec<(String, Tensor<f32>)> =
            self.model.parts.named().into_iter().map(|(n, t)| (n, t.clone())).collect();
        let strides = self.model.config.strides.iter().map(|&s| s as f32).collect();
        tensors.push(("encoder.strides".into(), Tensor::vector(strides)));
        if let Some(norm) = &self.norm {
            tensors.push(("norm.mean".into(), Tensor::vector(norm.mean.iter().map(|&v| v as f32).collect())));
            tensors.push(("norm.std".into(), Tensor::vector(norm.std.iter().map(|&v| v as f32).collect())));
        }
        encode_tensors(&tensors)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut map: BTreeMap<String, Tensor<f32>> = BTreeMap::new();
        for (name, t) in decode_tensors(bytes)? {
            if map.insert(name.clone(), t).is_some() {
                return Err(bad(format!("duplicate tensor {name}")));
            }
        }
        let norm = match (map.remove("norm.mean"), map.remove("norm.std")) {
            (Some(m), Some(s)) if m.numel() == s.numel() => Some(NormStats {
                mean: m.data().iter().map(|&v| v as f64).collect(),
                std: s.data().iter().map(|&v| v as f64).collect(),
            }),
            (None, None) => None,
            _ => return Err(bad("inconsistent normalization statistics")),
        };
        let strides = map.remove("encoder.strides").ok_or_else(|| bad("missing tensor encoder.strides"))?;
        let config = infer_config(&map, strides.data())?;
        let decoder = map.contains_key("decoder.layer0.weight");
        let output_bias = map.contains_key("context.output_bias");
        let mut model = ModelParams::zeros(&config, decoder, output_bias).map_err(|e| bad(e.to_string()))?;
        let expected = model.parts.names();
        if expected.len() != map.len() {
            let unknown: Vec<&String> = map.keys().filter(|k| !expected.contains(k)).collect();
            return Err(bad(format!("unexpected tensors {unknown:?}")));
        }
        model.fill_by_name(|name| map.remove(name))?;
        Ok(Checkpoint { model, norm })
    }

    /// Writes the checkpoint and returns the SHA-256 of the file contents.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<String> {
        let path = path.as_ref();
        let bytes = self.to_bytes()?;
        std::fs::write(path, &bytes).map_err(|e| LntError::io(path, e))?;
        Ok(hex::encode(Sha256::digest(&bytes)))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| LntError::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| bad(format!("{}: {e}", path.display())))
    }
}

/// SHA-256 of a file as lowercase hex.
pub fn file_sha256(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| LntError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn count_prefixed(map: &BTreeMap<String, Tensor<f32>>, prefix: impl Fn(usize) -> String) -> usize {
    (0..).take_while(|&i| map.keys().any(|k| k.starts_with(&prefix(i)))).count()
}

fn infer_config(map: &BTreeMap<String, Tensor<f32>>, strides: &[f32]) -> Result<ModelConfig> {
    let get = |name: &str| map.get(name).ok_or_else(|| bad(format!("missing tensor {name}")));
    let strides: Vec<usize> = strides.iter().map(|&s| s as usize).collect();
    let mut filters = Vec::new();
    for i in 0..strides.len() {
        let w = get(&format!("encoder.layer{i}.weight"))?;
        if w.rank() != 3 {
            return Err(bad(format!("encoder.layer{i}.weight has rank {}", w.rank())));
        }
        filters.push(w.shape()[2]);
    }
    let first = get("encoder.layer0.weight")?;
    let hidden = get("context.reset.w_hidden")?;
    let horizons = count_prefixed(map, |k| format!("heads.W{}", k + 1));
    let transforms = count_prefixed(map, |l| format!("bank.T{l}."));
    let bank_layers = count_prefixed(map, |j| format!("bank.T0.layer{j}."));
    let bank_width = if bank_layers > 1 { get("bank.T0.layer0.weight")?.shape()[0] } else { 0 };
    Ok(ModelConfig {
        in_channels: first.shape()[1],
        dim_z: first.shape()[0],
        dim_c: hidden.shape()[0],
        filters,
        strides,
        conv_bias: map.contains_key("encoder.layer0.bias"),
        horizons,
        transforms,
        bank_width,
        bank_layers,
        shared_heads: !map.keys().any(|k| k.starts_with("ddcl_heads.")),
    })
}
