//! Checkpoints as a `<prefix>.json` header plus a `<prefix>.bin` payload.
//!
//! The payload is the magic `EMTW`, a little-endian `u32` version, then
//! little-endian `f64`s: every parameter in manifest order, every momentum
//! buffer in the same order, then the running mean and variance of every
//! batch-norm layer. The header records each block's byte offset.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::skeleton::{SkeletonTopology, StreamKind};

const MAGIC: &[u8; 4] = b"EMTW";
const VERSION: u32 = 1;
const HEADER_BYTES: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    momentum_offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BufferEntry {
    name: String,
    len: usize,
    mean_offset: usize,
    var_offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u32,
    model: ModelConfig,
    topology: SkeletonTopology,
    /// Completed training epochs.
    epoch: usize,
    #[serde(default)]
    stream: Option<StreamKind>,
    #[serde(default)]
    train: Option<TrainConfig>,
    params: Vec<ParamEntry>,
    buffers: Vec<BufferEntry>,
}

/// What is stored beside the weights.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CheckpointMeta {
    pub epoch: usize,
    pub stream: Option<StreamKind>,
    pub train: Option<TrainConfig>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model,
    pub meta: CheckpointMeta,
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s: OsString = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn checkpoint_paths(prefix: &Path) -> (PathBuf, PathBuf) {
    (with_suffix(prefix, ".json"), with_suffix(prefix, ".bin"))
}

pub fn checkpoint_save(model: &Model, meta: &CheckpointMeta, prefix: &Path) -> Result<()> {
    let (json_path, bin_path) = checkpoint_paths(prefix);
    let mut bytes: Vec<u8> = Vec::new();
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    let put = |values: &[f64], bytes: &mut Vec<u8>| {
        let offset = bytes.len();
        for v in values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        offset
    };
    let store = &model.store;
    let mut params: Vec<ParamEntry> = store
        .params()
        .iter()
        .map(|p| ParamEntry {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
            offset: put(p.value.data(), &mut bytes),
            momentum_offset: 0,
        })
        .collect();
    for (e, p) in params.iter_mut().zip(store.params()) {
        e.momentum_offset = put(p.momentum.data(), &mut bytes);
    }
    let buffers = store
        .buffers()
        .iter()
        .map(|b| BufferEntry {
            name: b.name.clone(),
            len: b.mean.len(),
            mean_offset: put(&b.mean, &mut bytes),
            var_offset: put(&b.var, &mut bytes),
        })
        .collect();
    let header = Header {
        format: "EMTW".into(),
        version: VERSION,
        model: model.config.clone(),
        topology: model.topology.clone(),
        epoch: meta.epoch,
        stream: meta.stream,
        train: meta.train.clone(),
        params,
        buffers,
    };
    if let Some(dir) = json_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(&bin_path, &bytes).map_err(|e| Error::io(&bin_path, e))?;
    let json = serde_json::to_string_pretty(&header).expect("header serializes");
    fs::write(&json_path, json + "\n").map_err(|e| Error::io(&json_path, e))
}

/// Config field that determines the shape of a parameter, for diagnostics.
fn shape_source(name: &str) -> &'static str {
    if name.starts_with("classifier") {
        "num_classes"
    } else if name.starts_with("input_bn") {
        "in_channels"
    } else if name.contains(".tam.fc") {
        "window"
    } else if name.contains(".agcl.b") {
        "topology"
    } else {
        "blocks"
    }
}

fn read_f64s(bytes: &[u8], offset: usize, len: usize, what: &str) -> Result<Vec<f64>> {
    let end = len
        .checked_mul(8)
        .and_then(|n| n.checked_add(offset))
        .filter(|&end| offset >= HEADER_BYTES && end <= bytes.len())
        .ok_or_else(|| Error::Format(format!("{what}: offset {offset} + {len} values is outside the payload")))?;
    Ok(bytes[offset..end]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}

pub fn checkpoint_load(prefix: &Path) -> Result<Checkpoint> {
    let (json_path, bin_path) = checkpoint_paths(prefix);
    let text = fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
    let header: Header =
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", json_path.display())))?;
    let fail = |m: String| Error::Format(format!("{}: {m}", json_path.display()));
    if header.format != "EMTW" || header.version != VERSION {
        return Err(fail(format!(
            "unsupported format {} version {}",
            header.format, header.version
        )));
    }
    let bytes = fs::read(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
    if bytes.len() < HEADER_BYTES || &bytes[..4] != MAGIC {
        return Err(Error::Format(format!("{}: bad magic", bin_path.display())));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::Format(format!("{}: unsupported version {version}", bin_path.display())));
    }
    let mut model = Model::new(header.model.clone(), header.topology.clone(), 0).map_err(|e| fail(e.to_string()))?;
    if header.params.len() != model.store.params().len() {
        return Err(fail(format!(
            "{} parameters stored, config implies {}",
            header.params.len(),
            model.store.params().len()
        )));
    }
    for (p, e) in model.store.params_mut().iter_mut().zip(&header.params) {
        if p.name != e.name {
            return Err(fail(format!("expected parameter `{}`, found `{}`", p.name, e.name)));
        }
        if p.value.shape() != e.shape.as_slice() {
            return Err(fail(format!(
                "parameter `{}` is {:?} in the payload but {:?} under the stored config; check `{}`",
                e.name,
                e.shape,
                p.value.shape(),
                shape_source(&e.name)
            )));
        }
        let n = p.value.len();
        p.value.data_mut().copy_from_slice(&read_f64s(&bytes, e.offset, n, &e.name)?);
        p.momentum.data_mut().copy_from_slice(&read_f64s(&bytes, e.momentum_offset, n, &e.name)?);
    }
    if header.buffers.len() != model.store.buffers().len() {
        return Err(fail("batch-norm statistics do not match the config".into()));
    }
    for (b, e) in model.store.buffers_mut().iter_mut().zip(&header.buffers) {
        if b.name != e.name || b.mean.len() != e.len {
            return Err(fail(format!("statistics `{}` do not match `{}`", e.name, b.name)));
        }
        b.mean = read_f64s(&bytes, e.mean_offset, e.len, &e.name)?;
        b.var = read_f64s(&bytes, e.var_offset, e.len, &e.name)?;
    }
    Ok(Checkpoint {
        model,
        meta: CheckpointMeta {
            epoch: header.epoch,
            stream: header.stream,
            train: header.train,
        },
    })
}
