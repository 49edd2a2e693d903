//! Checkpoint persistence: an inspectable JSON header plus a compact
//! little-endian `f32` blob.
//!
//! Layout: 8-byte little-endian header length, the JSON header
//! (format version, model config, topology, optimizer step, batch-norm
//! batch counters, tensor manifest with byte offsets), then the blob.
//! Every parameter, running statistic and optimizer moment is a manifest
//! entry, so `load(save(x))` is bit-exact for `f32` training.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::AdamState;
use crate::model::{DcGct, ModelConfig, ModelParams, ModelState};
use crate::skeleton::SkeletonTopology;
use crate::tensor::{Element, Tensor};

const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("checkpoint format version {found}, expected {FORMAT_VERSION}")]
    VersionMismatch { found: u32 },
    #[error("truncated checkpoint: blob has {got} bytes, manifest needs {need}")]
    Truncated { need: usize, got: usize },
    #[error("config mismatch: {0}")]
    ConfigMismatch(String),
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    /// Byte offset into the blob.
    offset: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    config: ModelConfig,
    topology: SkeletonTopology,
    optimizer_step: Option<u64>,
    bn_batches: Vec<u64>,
    manifest: Vec<ManifestEntry>,
}

struct BlobWriter {
    manifest: Vec<ManifestEntry>,
    blob: Vec<u8>,
}

impl BlobWriter {
    fn push<E: Element>(&mut self, name: String, shape: &[usize], data: &[E]) {
        self.manifest.push(ManifestEntry {
            name,
            shape: shape.to_vec(),
            offset: self.blob.len() as u64,
        });
        for v in data {
            self.blob
                .extend_from_slice(&(v.to_f64() as f32).to_le_bytes());
        }
    }
}

/// Serializes parameters, batch-norm state and (optionally) optimizer
/// moments.
pub fn save_checkpoint<E: Element>(
    model: &DcGct<E>,
    optimizer: Option<&AdamState<E>>,
    path: &Path,
) -> Result<(), CheckpointError> {
    let mut w = BlobWriter {
        manifest: Vec::new(),
        blob: Vec::new(),
    };
    model
        .params
        .visit(&mut |name, t| w.push(format!("param/{name}"), t.shape(), t.data()));
    for (i, s) in model.state.bn.iter().enumerate() {
        w.push(format!("state/bn{i}/mean"), &[s.mean.len()], &s.mean);
        w.push(format!("state/bn{i}/var"), &[s.var.len()], &s.var);
    }
    if let Some(opt) = optimizer {
        let mut names = Vec::new();
        model.params.visit(&mut |name, _| names.push(name));
        for (name, m) in names.iter().zip(&opt.m) {
            w.push(format!("opt/m/{name}"), &[m.len()], m);
        }
        for (name, v) in names.iter().zip(&opt.v) {
            w.push(format!("opt/v/{name}"), &[v.len()], v);
        }
    }
    let header = Header {
        format_version: FORMAT_VERSION,
        config: model.config.clone(),
        topology: model.topology.clone(),
        optimizer_step: optimizer.map(|o| o.step),
        bn_batches: model.state.bn.iter().map(|s| s.batches).collect(),
        manifest: w.manifest,
    };
    let header_bytes =
        serde_json::to_vec(&header).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    file.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
    file.write_all(&header_bytes)?;
    file.write_all(&w.blob)?;
    Ok(())
}

pub struct LoadedCheckpoint<E: Element> {
    pub model: DcGct<E>,
    pub optimizer: Option<AdamState<E>>,
}

struct BlobReader<'a> {
    entries: HashMap<&'a str, (&'a [usize], u64)>,
    blob: &'a [u8],
}

impl BlobReader<'_> {
    fn read<E: Element>(&self, name: &str, expected: &[usize]) -> Result<Vec<E>, CheckpointError> {
        let (shape, offset) = self
            .entries
            .get(name)
            .ok_or_else(|| CheckpointError::ConfigMismatch(format!("missing tensor '{name}'")))?;
        if *shape != expected {
            return Err(CheckpointError::ConfigMismatch(format!(
                "tensor '{name}' has shape {shape:?}, expected {expected:?}"
            )));
        }
        let count: usize = shape.iter().product();
        let start = *offset as usize;
        let end = start + count * 4;
        if end > self.blob.len() {
            return Err(CheckpointError::Truncated {
                need: end,
                got: self.blob.len(),
            });
        }
        Ok(self.blob[start..end]
            .chunks_exact(4)
            .map(|b| E::from_f64(f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64))
            .collect())
    }
}

/// Loads a checkpoint, validating the format version and that every
/// manifest entry matches the shapes the stored config implies.
pub fn load_checkpoint<E: Element>(path: &Path) -> Result<LoadedCheckpoint<E>, CheckpointError> {
    let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut len_bytes = [0u8; 8];
    file.read_exact(&mut len_bytes)
        .map_err(|_| CheckpointError::Malformed("missing header length".into()))?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    let mut header_bytes = vec![0u8; header_len];
    file.read_exact(&mut header_bytes)
        .map_err(|_| CheckpointError::Malformed("missing header".into()))?;
    let header: Header = serde_json::from_slice(&header_bytes)
        .map_err(|e| CheckpointError::Malformed(e.to_string()))?;
    if header.format_version != FORMAT_VERSION {
        return Err(CheckpointError::VersionMismatch {
            found: header.format_version,
        });
    }
    let mut blob = Vec::new();
    file.read_to_end(&mut blob)?;

    let reader = BlobReader {
        entries: header
            .manifest
            .iter()
            .map(|e| (e.name.as_str(), (e.shape.as_slice(), e.offset)))
            .collect(),
        blob: &blob,
    };

    header
        .config
        .validate()
        .map_err(|e| CheckpointError::ConfigMismatch(e.to_string()))?;
    // Shapes come from the stored config; any edit that changes an extent
    // surfaces as a mismatch against the manifest.
    let mut params = ModelParams::<Tensor<E>>::init(&header.config, 0)
        .map_err(|e| CheckpointError::ConfigMismatch(e.to_string()))?;
    let mut status: Result<(), CheckpointError> = Ok(());
    params.visit_mut(&mut |name, t| {
        if status.is_err() {
            return;
        }
        match reader.read::<E>(&format!("param/{name}"), t.shape()) {
            Ok(data) => t.data_mut().copy_from_slice(&data),
            Err(e) => status = Err(e),
        }
    });
    status?;

    let mut state = ModelState::<E>::init(&header.config);
    if header.bn_batches.len() != state.bn.len() {
        return Err(CheckpointError::ConfigMismatch(format!(
            "{} batch-norm sites in file, config implies {}",
            header.bn_batches.len(),
            state.bn.len()
        )));
    }
    for (i, s) in state.bn.iter_mut().enumerate() {
        s.mean = reader.read::<E>(&format!("state/bn{i}/mean"), &[s.mean.len()])?;
        s.var = reader.read::<E>(&format!("state/bn{i}/var"), &[s.var.len()])?;
        s.batches = header.bn_batches[i];
    }

    let optimizer = match header.optimizer_step {
        Some(step) => {
            let mut names = Vec::new();
            params.visit(&mut |name, t| names.push((name, t.numel())));
            let mut m = Vec::with_capacity(names.len());
            let mut v = Vec::with_capacity(names.len());
            for (name, numel) in &names {
                m.push(reader.read::<E>(&format!("opt/m/{name}"), &[*numel])?);
                v.push(reader.read::<E>(&format!("opt/v/{name}"), &[*numel])?);
            }
            Some(AdamState { m, v, step })
        }
        None => None,
    };

    let model = DcGct::from_parts(header.config, header.topology, params, state)
        .map_err(|e| CheckpointError::ConfigMismatch(e.to_string()))?;
    Ok(LoadedCheckpoint { model, optimizer })
}
