//! Checkpoint = text manifest + one contiguous little-endian blob.
//!
//! ```text
//! AUTOATLAS-CHECKPOINT 1
//! blob epoch_0003.bin
//! meta config {"unet":{...},"autoencoder":{...}}
//! meta seed 42
//! tensor unet.enc0.conv0.weight f32 0 8,1,3,3,3
//! ...
//! ```
//!
//! `tensor` lines give name, dtype, byte offset into the blob and shape.
//! Tensors are stored back to back in manifest order.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::{ModelConfig, ModelParams};
use crate::diffengine::{Real, Tensor};
use crate::error::{Error, Result};

const HEADER: &str = "AUTOATLAS-CHECKPOINT 1";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub meta: BTreeMap<String, String>,
    pub tensors: Vec<(String, Tensor<T>)>,
}

fn width<T: Real>() -> usize {
    std::mem::size_of::<T>()
}

fn push_bytes<T: Real>(out: &mut Vec<u8>, v: T) {
    match width::<T>() {
        4 => out.extend_from_slice(&(v.f64() as f32).to_le_bytes()),
        _ => out.extend_from_slice(&v.f64().to_le_bytes()),
    }
}

fn from_bytes<T: Real>(b: &[u8]) -> T {
    match width::<T>() {
        4 => T::lit(f32::from_le_bytes(b.try_into().unwrap()) as f64),
        _ => T::lit(f64::from_le_bytes(b.try_into().unwrap())),
    }
}

/// Blob written next to a manifest at `path`.
pub fn blob_path(path: &Path) -> PathBuf {
    path.with_extension("bin")
}

impl<T: Real> Checkpoint<T> {
    pub fn new() -> Self {
        Self {
            meta: BTreeMap::new(),
            tensors: Vec::new(),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let blob = blob_path(path);
        let mut text = String::new();
        text.push_str(HEADER);
        text.push('\n');
        text.push_str(&format!(
            "blob {}\n",
            blob.file_name().and_then(|s| s.to_str()).unwrap_or_default()
        ));
        for (k, v) in &self.meta {
            if k.contains(char::is_whitespace) || v.contains('\n') {
                return Err(Error::Invalid(format!("meta entry `{k}` cannot be stored on one line")));
            }
            text.push_str(&format!("meta {k} {v}\n"));
        }
        let mut bytes = Vec::new();
        for (name, t) in &self.tensors {
            let shape: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
            text.push_str(&format!(
                "tensor {name} {} {} {}\n",
                T::DTYPE,
                bytes.len(),
                shape.join(",")
            ));
            for &v in t.data() {
                push_bytes(&mut bytes, v);
            }
        }
        fs::write(&blob, &bytes).map_err(|e| Error::io(&blob, e))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let bad = |offset: usize, msg: String| Error::Format {
            path: path.to_path_buf(),
            offset: offset as u64,
            msg,
        };
        let mut lines = text.lines();
        if lines.next() != Some(HEADER) {
            return Err(bad(0, "not a checkpoint manifest".into()));
        }
        let mut blob_name = None;
        let mut meta = BTreeMap::new();
        let mut entries = Vec::new();
        let mut offset = HEADER.len() + 1;
        for line in lines {
            let (kind, rest) = line.split_once(' ').unwrap_or((line, ""));
            match kind {
                "blob" => blob_name = Some(rest.to_string()),
                "meta" => {
                    let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                    meta.insert(k.to_string(), v.to_string());
                }
                "tensor" => {
                    let f: Vec<&str> = rest.split(' ').collect();
                    if f.len() != 4 {
                        return Err(bad(offset, format!("malformed tensor line `{line}`")));
                    }
                    if f[1] != T::DTYPE {
                        return Err(bad(offset, format!("tensor `{}` is {}, expected {}", f[0], f[1], T::DTYPE)));
                    }
                    let at: usize = f[2].parse().map_err(|_| bad(offset, format!("bad offset in `{line}`")))?;
                    let shape = if f[3].is_empty() {
                        vec![]
                    } else {
                        f[3].split(',')
                            .map(|d| d.parse::<usize>())
                            .collect::<std::result::Result<Vec<_>, _>>()
                            .map_err(|_| bad(offset, format!("bad shape in `{line}`")))?
                    };
                    entries.push((f[0].to_string(), at, shape));
                }
                "" => {}
                _ => return Err(bad(offset, format!("unknown line `{line}`"))),
            }
            offset += line.len() + 1;
        }
        let blob_name = blob_name.ok_or_else(|| bad(offset, "missing blob line".into()))?;
        let blob = path.with_file_name(blob_name);
        let bytes = fs::read(&blob).map_err(|e| Error::io(&blob, e))?;
        let w = width::<T>();
        let mut tensors = Vec::with_capacity(entries.len());
        for (name, at, shape) in entries {
            let n: usize = shape.iter().product();
            let end = at + n * w;
            if end > bytes.len() {
                return Err(Error::Format {
                    path: blob.clone(),
                    offset: bytes.len() as u64,
                    msg: format!("blob truncated while reading `{name}`"),
                });
            }
            let data = bytes[at..end].chunks_exact(w).map(from_bytes::<T>).collect();
            tensors.push((name, Tensor::new(shape, data)?));
        }
        Ok(Self { meta, tensors })
    }

    pub fn take(&mut self, name: &str) -> Option<Tensor<T>> {
        let i = self.tensors.iter().position(|(n, _)| n == name)?;
        Some(self.tensors.remove(i).1)
    }
}

impl<T: Real> Default for Checkpoint<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ModelParams<T> {
    pub fn to_checkpoint(&self) -> Checkpoint<T> {
        let mut ck = Checkpoint::new();
        ck.meta.insert(
            "config".into(),
            serde_json::to_string(self.config()).expect("config serializes"),
        );
        ck.meta.insert("seed".into(), self.seed().to_string());
        ck.tensors = self
            .names()
            .iter()
            .cloned()
            .zip(self.tensors().iter().cloned())
            .collect();
        ck
    }

    /// Extract model parameters; tensors not in the layer list stay in `ck`.
    pub fn from_checkpoint(ck: &mut Checkpoint<T>) -> Result<Self> {
        let config: ModelConfig = ck
            .meta
            .get("config")
            .ok_or_else(|| Error::Invalid("checkpoint lacks a model config".into()))
            .and_then(|s| serde_json::from_str(s).map_err(|e| Error::Invalid(format!("bad config: {e}"))))?;
        let seed = ck
            .meta
            .get("seed")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Invalid("checkpoint lacks a seed".into()))?;
        let names: Vec<String> = super::params::layer_specs(&config).into_iter().map(|s| s.name).collect();
        let mut named = Vec::with_capacity(names.len());
        for name in names {
            let t = ck
                .take(&name)
                .ok_or_else(|| Error::Invalid(format!("checkpoint lacks `{name}`")))?;
            named.push((name, t));
        }
        ModelParams::from_named(config, seed, named)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&mut Checkpoint::load(path)?)
    }
}
