//! Checkpoint container: magic "NCRF", 1-byte version, little-endian u32
//! header length, JSON header mapping parameter name to
//! `{dtype, shape, byte_offset}`, then the contiguous little-endian f32
//! payload. Save -> load -> save is byte-identical.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{NcrfError, Result};
use crate::model::{ModelLayout, ModelParams};
use crate::numerics::Tensor;

pub const MAGIC: [u8; 4] = *b"NCRF";
pub const VERSION: u8 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct HeaderEntry {
    dtype: String,
    shape: Vec<usize>,
    byte_offset: u64,
}

/// Parameters as read from disk, keyed by group name.
pub type RawCheckpoint = BTreeMap<String, (Vec<usize>, Vec<f32>)>;

pub fn save(path: &Path, params: &ModelParams<f32>) -> Result<()> {
    // header keys are sorted (BTreeMap); the payload follows the same order
    let mut entries: BTreeMap<String, &Tensor<f32>> = BTreeMap::new();
    for (name, tensor) in params.group_names().into_iter().zip(params.groups()) {
        entries.insert(name, tensor);
    }
    let mut header: BTreeMap<&str, HeaderEntry> = BTreeMap::new();
    let mut offset = 0u64;
    for (name, tensor) in &entries {
        header.insert(
            name,
            HeaderEntry {
                dtype: "f32".into(),
                shape: tensor.shape().to_vec(),
                byte_offset: offset,
            },
        );
        offset += 4 * tensor.numel() as u64;
    }
    let header_json =
        serde_json::to_vec(&header).map_err(|e| NcrfError::Checkpoint(e.to_string()))?;

    let mut file = std::fs::File::create(path).map_err(NcrfError::io(path))?;
    let mut write = |bytes: &[u8]| file.write_all(bytes).map_err(NcrfError::io(path));
    write(&MAGIC)?;
    write(&[VERSION])?;
    write(&(header_json.len() as u32).to_le_bytes())?;
    write(&header_json)?;
    for tensor in entries.values() {
        let mut bytes = Vec::with_capacity(4 * tensor.numel());
        for &v in tensor.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        write(&bytes)?;
    }
    Ok(())
}

pub fn load_raw(path: &Path) -> Result<RawCheckpoint> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(NcrfError::io(path))?;
    if bytes.len() < 9 || bytes[..4] != MAGIC {
        return Err(NcrfError::Checkpoint(format!(
            "{} is not a checkpoint (bad magic)",
            path.display()
        )));
    }
    if bytes[4] != VERSION {
        return Err(NcrfError::Checkpoint(format!(
            "unsupported format version {} (expected {VERSION})",
            bytes[4]
        )));
    }
    let header_len = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
    if bytes.len() < 9 + header_len {
        return Err(NcrfError::Checkpoint("truncated header".into()));
    }
    let header: BTreeMap<String, HeaderEntry> = serde_json::from_slice(&bytes[9..9 + header_len])
        .map_err(|e| NcrfError::Checkpoint(format!("header JSON: {e}")))?;
    let payload = &bytes[9 + header_len..];

    let mut out = RawCheckpoint::new();
    for (name, entry) in header {
        if entry.dtype != "f32" {
            return Err(NcrfError::Checkpoint(format!(
                "{name}: unsupported dtype {}",
                entry.dtype
            )));
        }
        let numel: usize = entry.shape.iter().product();
        let start = entry.byte_offset as usize;
        let end = start + 4 * numel;
        if end > payload.len() {
            return Err(NcrfError::Checkpoint(format!("{name}: payload out of range")));
        }
        let data: Vec<f32> = payload[start..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.insert(name, (entry.shape, data));
    }
    Ok(out)
}

/// Load and validate against an expected layout. Presence, absence, and
/// shape of every group are checked, so a baseline checkpoint (no `crf.w`)
/// is refused by a CRF run and vice versa.
pub fn load_model(path: &Path, layout: &ModelLayout) -> Result<ModelParams<f32>> {
    let mut raw = load_raw(path)?;
    let specs = layout.group_specs();
    let mut groups = Vec::with_capacity(specs.len());
    for (name, shape) in &specs {
        let Some((disk_shape, data)) = raw.remove(name) else {
            let hint = if name == "crf.w" {
                " — the checkpoint was trained without the CRF (--no-crf); refusing to use it for CRF inference"
            } else {
                ""
            };
            return Err(NcrfError::Checkpoint(format!(
                "header is missing parameter {name}{hint}"
            )));
        };
        if &disk_shape != shape {
            return Err(NcrfError::Checkpoint(format!(
                "{name}: shape {disk_shape:?} does not match the configured architecture {shape:?}"
            )));
        }
        groups.push(Tensor::new(disk_shape, data)?);
    }
    if let Some(extra) = raw.keys().next() {
        let hint = if extra == "crf.w" {
            " — the checkpoint was trained with the CRF but this run disables it (--no-crf)"
        } else {
            ""
        };
        return Err(NcrfError::Checkpoint(format!(
            "header has unexpected parameter {extra}{hint}"
        )));
    }
    ModelParams::from_groups(layout.clone(), groups)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layout(crf: bool) -> ModelLayout {
        ModelLayout { grid_side: 3, patch_size: 32, channels: [8, 16, 32], crf }
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.ncrf");
        let b = dir.path().join("b.ncrf");
        let params = ModelParams::<f32>::init(layout(true), 11).unwrap();
        save(&a, &params).unwrap();
        let loaded = load_model(&a, &layout(true)).unwrap();
        save(&b, &loaded).unwrap();
        let bytes_a = std::fs::read(&a).unwrap();
        let bytes_b = std::fs::read(&b).unwrap();
        assert_eq!(bytes_a, bytes_b);
        for (x, y) in params.groups().iter().zip(loaded.groups()) {
            assert_eq!(x.data(), y.data());
        }
    }

    #[test]
    fn baseline_checkpoint_is_refused_for_crf_inference() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("baseline.ncrf");
        let params = ModelParams::<f32>::init(layout(false), 0).unwrap();
        save(&path, &params).unwrap();
        let err = load_model(&path, &layout(true)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("crf.w"), "unhelpful error: {msg}");
        assert!(msg.contains("--no-crf"), "unhelpful error: {msg}");
    }

    #[test]
    fn crf_checkpoint_is_refused_for_baseline_inference() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("crf.ncrf");
        let params = ModelParams::<f32>::init(layout(true), 0).unwrap();
        save(&path, &params).unwrap();
        let err = load_model(&path, &layout(false)).unwrap_err();
        assert!(err.to_string().contains("crf.w"));
    }

    #[test]
    fn architecture_mismatch_is_reported_by_shape() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("small.ncrf");
        let mut small = layout(false);
        small.channels = [4, 8, 16];
        let params = ModelParams::<f32>::init(small, 0).unwrap();
        save(&path, &params).unwrap();
        let err = load_model(&path, &layout(false)).unwrap_err();
        assert!(err.to_string().contains("shape"));
    }

    #[test]
    fn junk_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.ncrf");
        std::fs::write(&path, b"PNG....definitely not a checkpoint").unwrap();
        assert!(load_raw(&path).is_err());
    }
}
