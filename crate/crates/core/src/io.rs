//! On-disk formats.
//!
//! - Network spec: UTF-8 JSON `{name, input: {h, w, c}, layers: [...]}`.
//!   Unknown keys are rejected.
//! - Weights: JSON manifest `{layer_id: {dims: [m, c, r, s], offset, length}}`
//!   plus a blob of little-endian f32 values, each block `[m][c][r][s]`
//!   row-major. `offset` and `length` count f32 values, not bytes. The blob
//!   sits next to the manifest with the extension `.bin`.
//! - Dataset: JSON manifest `{n_samples, dims: [h, w, c], labels: [...]}` plus
//!   a `.bin` blob holding the samples back to back, each `[c][h][w]`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::infer::{Tensor, WeightBlock, WeightSet};
use crate::net_ir::{Dims, LayerKind, LayerSpec, NetworkSpec};
use crate::robustness::Dataset;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNetwork {
    name: String,
    input: Dims,
    layers: Vec<Value>,
}

pub fn parse_network(json: &str) -> Result<NetworkSpec> {
    let raw: RawNetwork =
        serde_json::from_str(json).map_err(|e| Error::Format(format!("network spec: {e}")))?;
    let mut layers = Vec::with_capacity(raw.layers.len());
    for (i, value) in raw.layers.into_iter().enumerate() {
        let id = value
            .get("id")
            .and_then(Value::as_str)
            .map(|s| format!("`{s}`"))
            .unwrap_or_else(|| format!("#{i}"));
        if let Some(kind) = value.get("kind").and_then(Value::as_str) {
            if LayerKind::from_name(kind).is_none() {
                return Err(Error::Format(format!("layer {id}: unknown kind `{kind}`")));
            }
        }
        let layer: LayerSpec =
            serde_json::from_value(value).map_err(|e| Error::Format(format!("layer {id}: {e}")))?;
        layers.push(layer);
    }
    Ok(NetworkSpec {
        name: raw.name,
        input: raw.input,
        layers,
    })
}

pub fn network_to_json(net: &NetworkSpec) -> String {
    serde_json::to_string_pretty(net).expect("network spec serializes")
}

pub fn read_network(path: &Path) -> Result<NetworkSpec> {
    parse_network(&fs::read_to_string(path)?)
}

/// Path of the binary blob that accompanies a manifest.
pub fn blob_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

fn decode_f32(bytes: &[u8]) -> Result<Vec<f32>> {
    if !bytes.len().is_multiple_of(4) {
        return Err(Error::Format(format!(
            "blob length {} is not a multiple of 4 bytes",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect())
}

fn encode_f32(values: impl IntoIterator<Item = f32>, out: &mut Vec<u8>) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockEntry {
    pub dims: [usize; 4],
    pub offset: usize,
    pub length: usize,
}

pub fn decode_weights(manifest: &str, blob: &[u8]) -> Result<WeightSet> {
    let entries: BTreeMap<String, BlockEntry> = serde_json::from_str(manifest)
        .map_err(|e| Error::Format(format!("weights manifest: {e}")))?;
    let values = decode_f32(blob)?;
    let mut set = WeightSet::new();
    for (id, e) in entries {
        let [m, c, r, s] = e.dims;
        if e.length != m * c * r * s {
            return Err(Error::Format(format!(
                "weights `{id}`: length {} does not match dims {:?}",
                e.length, e.dims
            )));
        }
        let data = e
            .offset
            .checked_add(e.length)
            .and_then(|end| values.get(e.offset..end))
            .ok_or_else(|| {
                Error::Format(format!(
                    "weights `{id}`: range {}+{} exceeds blob of {} values",
                    e.offset,
                    e.length,
                    values.len()
                ))
            })?;
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format(format!(
                "weights `{id}` contain NaN or infinite values"
            )));
        }
        set.insert(id, WeightBlock::new(m, c, r, s, data.to_vec())?);
    }
    Ok(set)
}

/// Manifest JSON and blob bytes, blocks laid out in id order.
pub fn encode_weights(weights: &WeightSet) -> (String, Vec<u8>) {
    let sorted: BTreeMap<&String, &WeightBlock> = weights.blocks.iter().collect();
    let mut manifest = BTreeMap::new();
    let mut blob = Vec::new();
    let mut offset = 0;
    for (id, block) in sorted {
        manifest.insert(
            id.clone(),
            BlockEntry {
                dims: block.dims(),
                offset,
                length: block.data.len(),
            },
        );
        offset += block.data.len();
        encode_f32(block.data.iter().copied(), &mut blob);
    }
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    (json, blob)
}

pub fn read_weights(manifest: &Path) -> Result<WeightSet> {
    let json = fs::read_to_string(manifest)?;
    let blob = fs::read(blob_path(manifest))?;
    decode_weights(&json, &blob)
}

pub fn write_weights(manifest: &Path, weights: &WeightSet) -> Result<()> {
    let (json, blob) = encode_weights(weights);
    fs::write(manifest, json)?;
    fs::write(blob_path(manifest), blob)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub n_samples: usize,
    /// `[h, w, c]`
    pub dims: [usize; 3],
    pub labels: Vec<usize>,
}

pub fn decode_dataset(manifest: &str, blob: &[u8]) -> Result<Dataset> {
    let man: DatasetManifest = serde_json::from_str(manifest)
        .map_err(|e| Error::Format(format!("dataset manifest: {e}")))?;
    if man.labels.len() != man.n_samples {
        return Err(Error::Format(format!(
            "dataset declares {} samples but has {} labels",
            man.n_samples,
            man.labels.len()
        )));
    }
    let dims = Dims::new(man.dims[0], man.dims[1], man.dims[2]);
    let values = decode_f32(blob)?;
    let per = dims.volume();
    if values.len() != per * man.n_samples {
        return Err(Error::Format(format!(
            "dataset blob holds {} values, expected {} x {per}",
            values.len(),
            man.n_samples
        )));
    }
    let samples = if per == 0 {
        vec![Tensor::zeros(dims); man.n_samples]
    } else {
        values
            .chunks_exact(per)
            .map(|c| Tensor::new(dims, c.to_vec()))
            .collect::<Result<Vec<_>>>()?
    };
    Dataset::new(samples, man.labels)
}

pub fn encode_dataset(data: &Dataset) -> (String, Vec<u8>) {
    let dims = data
        .samples
        .first()
        .map(|s| s.dims())
        .unwrap_or(Dims::new(0, 0, 0));
    let man = DatasetManifest {
        n_samples: data.len(),
        dims: [dims.h, dims.w, dims.c],
        labels: data.labels.clone(),
    };
    let mut blob = Vec::new();
    for s in &data.samples {
        encode_f32(s.data().iter().copied(), &mut blob);
    }
    (
        serde_json::to_string_pretty(&man).expect("manifest serializes"),
        blob,
    )
}

pub fn read_dataset(manifest: &Path) -> Result<Dataset> {
    let json = fs::read_to_string(manifest)?;
    let blob = fs::read(blob_path(manifest))?;
    decode_dataset(&json, &blob)
}

pub fn write_dataset(manifest: &Path, data: &Dataset) -> Result<()> {
    let (json, blob) = encode_dataset(data);
    fs::write(manifest, json)?;
    fs::write(blob_path(manifest), blob)?;
    Ok(())
}
