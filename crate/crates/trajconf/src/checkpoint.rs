//! Binary checkpoint container.
//!
//! Layout: the 8-byte magic `TRJCKPT\0`, a little-endian `u32` format
//! version, a little-endian `u64` header length, a UTF-8 JSON header
//! (config, normalization, tensor names and shapes), then every parameter as
//! a little-endian `f64` in header order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use trajconf_core::estimator::{
    EstimatorCheckpoint, EstimatorConfig, Normalization, ParamLayout, FORMAT_VERSION,
};

use crate::error::{Error, IoContext, Result};

const MAGIC: &[u8; 8] = b"TRJCKPT\0";

#[derive(Debug, Serialize, Deserialize)]
struct TensorHeader {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: EstimatorConfig,
    normalization: Normalization,
    tensors: Vec<TensorHeader>,
}

pub fn encode(ck: &EstimatorCheckpoint) -> Vec<u8> {
    let header = Header {
        config: ck.config().clone(),
        normalization: ck.normalization(),
        tensors: ck
            .layout()
            .tensors()
            .iter()
            .map(|t| TensorHeader {
                name: t.name.clone(),
                shape: t.shape.clone(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(20 + json.len() + 8 * ck.params().len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for p in ck.params() {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<EstimatorCheckpoint> {
    let fail = |message: String| Error::Checkpoint {
        path: path.to_path_buf(),
        message,
    };
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(fail("not a checkpoint file".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(fail(format!(
            "format version {version} is not supported (expected {FORMAT_VERSION})"
        )));
    }
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let body = &bytes[20..];
    if header_len > body.len() {
        return Err(fail("truncated header".into()));
    }
    let header: Header = serde_json::from_slice(&body[..header_len])
        .map_err(|e| fail(format!("bad header: {e}")))?;
    header
        .config
        .validate()
        .map_err(|e| fail(format!("bad config: {e}")))?;

    let layout = ParamLayout::new(&header.config);
    if layout.tensors().len() != header.tensors.len() {
        return Err(fail(format!(
            "expected {} tensors, header lists {}",
            layout.tensors().len(),
            header.tensors.len()
        )));
    }
    for (want, got) in layout.tensors().iter().zip(&header.tensors) {
        if want.name != got.name || want.shape != got.shape {
            return Err(fail(format!(
                "tensor `{}` {:?} does not match expected `{}` {:?}",
                got.name, got.shape, want.name, want.shape
            )));
        }
    }
    let values = &body[header_len..];
    if values.len() != 8 * layout.total() {
        return Err(fail(format!(
            "expected {} parameter bytes, found {}",
            8 * layout.total(),
            values.len()
        )));
    }
    let params = values
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    EstimatorCheckpoint::from_parts(header.config, header.normalization, params)
        .map_err(|e| fail(e.to_string()))
}

pub fn save(path: impl AsRef<Path>, ck: &EstimatorCheckpoint) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(ck)).at(path)
}

pub fn load(path: impl AsRef<Path>) -> Result<EstimatorCheckpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).at(path)?;
    decode(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> EstimatorCheckpoint {
        let cfg = EstimatorConfig {
            channels: 4,
            head_hidden: 3,
            seed: 9,
            ..EstimatorConfig::new(16)
        };
        EstimatorCheckpoint::initialize(cfg, Normalization { mean: 1.25, std: 0.5 }).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let ck = sample();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        save(&p, &ck).unwrap();
        assert_eq!(load(&p).unwrap(), ck);
    }

    #[test]
    fn rejects_version_and_shape_mismatch() {
        let ck = sample();
        let p = Path::new("m.ckpt");
        let mut bytes = encode(&ck);
        bytes[8] = 99;
        let err = decode(&bytes, p).unwrap_err().to_string();
        assert!(err.contains("version 99"), "{err}");

        let bytes = encode(&ck);
        assert!(decode(&bytes[..bytes.len() - 8], p).is_err());

        // header claims a different shape than the config implies
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let header = std::str::from_utf8(&bytes[20..20 + header_len]).unwrap();
        let forged = header.replacen("[4,1,5]", "[4,1,3]", 1);
        assert_ne!(forged, header);
        let mut out = bytes[..12].to_vec();
        out.extend_from_slice(&(forged.len() as u64).to_le_bytes());
        out.extend_from_slice(forged.as_bytes());
        out.extend_from_slice(&bytes[20 + header_len..]);
        let err = decode(&out, p).unwrap_err().to_string();
        assert!(err.contains("does not match"), "{err}");

        assert!(decode(b"garbage", p).is_err());
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = load("/nonexistent/m.ckpt").unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
