//! Binary model checkpoints.
//!
//! Byte layout, little-endian throughout:
//!
//! ```text
//! magic        8 bytes  b"FWINVCKP"
//! header_len   u64      byte length of the JSON header
//! header       UTF-8 JSON: format version, model class and config,
//!              normalizer statistics, the full hyperparameter dictionary,
//!              and the parameter manifest (ordered names with shapes)
//! payload      f32 arrays concatenated in manifest order
//! payload_len  u64      byte length of the payload (4 * total extents)
//! crc32        u32      IEEE CRC32 of the payload bytes
//! ```
//!
//! Values are stored in 32-bit precision; compute stays 64-bit, so a
//! round-trip reproduces eval outputs to about 1e-6.

use crate::config::RunConfig;
use crate::data::Normalizer;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::seq2seq::{Model, ModelClass, ModelConfig};
use crate::train::TrainedModel;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"FWINVCKP";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    model_class: String,
    model_config: ModelConfig,
    feature_norm: Normalizer,
    target_norm: Normalizer,
    hyperparameters: RunConfig,
    manifest: Vec<ManifestEntry>,
}

/// Serializes a trained model plus the hyperparameters that produced it.
pub fn save(path: &Path, trained: &TrainedModel, hyperparameters: &RunConfig) -> Result<()> {
    let mut manifest = Vec::new();
    let mut payload: Vec<u8> = Vec::new();
    trained.model.visit_params(&mut |name, p| {
        manifest.push(ManifestEntry {
            name,
            shape: p.value.shape().to_vec(),
        });
        for &v in p.value.data() {
            payload.extend_from_slice(&(v as f32).to_le_bytes());
        }
    });
    let header = Header {
        format_version: FORMAT_VERSION,
        model_class: trained.class.name().to_string(),
        model_config: trained.model_cfg.clone(),
        feature_norm: trained.feature_norm.clone(),
        target_norm: trained.target_norm.clone(),
        hyperparameters: hyperparameters.clone(),
        manifest,
    };
    let header_bytes = serde_json::to_vec(&header).expect("header serializes");
    let crc = crc32fast::hash(&payload);

    let mut out = std::fs::File::create(path)?;
    out.write_all(MAGIC)?;
    out.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
    out.write_all(&header_bytes)?;
    out.write_all(&payload)?;
    out.write_all(&(payload.len() as u64).to_le_bytes())?;
    out.write_all(&crc.to_le_bytes())?;
    Ok(())
}

fn corrupt(path: &Path, msg: impl Into<String>) -> Error {
    Error::Numeric(format!("checkpoint {}: {}", path.display(), msg.into()))
}

/// Loads a checkpoint, verifying the trailing length and CRC32.
pub fn load(path: &Path) -> Result<(TrainedModel, RunConfig)> {
    let mut file = std::fs::File::open(path)
        .map_err(|e| Error::Data {
            path: path.display().to_string(),
            line: None,
            msg: format!("cannot open checkpoint: {e}"),
        })?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes)?;
    if bytes.len() < 8 + 8 + 8 + 4 || &bytes[..8] != MAGIC {
        return Err(corrupt(path, "missing magic"));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let header_end = 16 + header_len;
    if bytes.len() < header_end + 12 {
        return Err(corrupt(path, "truncated header"));
    }
    let header: Header = serde_json::from_slice(&bytes[16..header_end])
        .map_err(|e| corrupt(path, format!("invalid header: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(corrupt(
            path,
            format!("unsupported format version {}", header.format_version),
        ));
    }
    let expected_payload: usize = header
        .manifest
        .iter()
        .map(|m| 4 * m.shape.iter().product::<usize>())
        .sum();
    let payload_end = header_end + expected_payload;
    if bytes.len() != payload_end + 12 {
        return Err(corrupt(
            path,
            format!(
                "size mismatch: expected {} bytes, found {}",
                payload_end + 12,
                bytes.len()
            ),
        ));
    }
    let payload = &bytes[header_end..payload_end];
    let trailer_len = u64::from_le_bytes(bytes[payload_end..payload_end + 8].try_into().unwrap());
    if trailer_len as usize != expected_payload {
        return Err(corrupt(path, "payload length trailer mismatch"));
    }
    let stored_crc =
        u32::from_le_bytes(bytes[payload_end + 8..payload_end + 12].try_into().unwrap());
    if crc32fast::hash(payload) != stored_crc {
        return Err(corrupt(path, "CRC mismatch"));
    }

    let class = ModelClass::parse(&header.model_class)?;
    let mut rng = Rng::new(0);
    let mut model = Model::new(class, &header.model_config, &mut rng)?;
    // Fill parameters in manifest order, verifying names and shapes.
    let mut offset = 0usize;
    let mut idx = 0usize;
    let mut fill_err: Option<Error> = None;
    model.visit_params_mut(&mut |name, p| {
        if fill_err.is_some() {
            return;
        }
        let Some(entry) = header.manifest.get(idx) else {
            fill_err = Some(corrupt(path, "manifest shorter than model"));
            return;
        };
        if entry.name != name || entry.shape != p.value.shape() {
            fill_err = Some(corrupt(
                path,
                format!(
                    "manifest entry {idx} is {}{:?}, model expects {}{:?}",
                    entry.name,
                    entry.shape,
                    name,
                    p.value.shape()
                ),
            ));
            return;
        }
        for v in p.value.data_mut() {
            let raw: [u8; 4] = payload[offset..offset + 4].try_into().unwrap();
            *v = f32::from_le_bytes(raw) as f64;
            offset += 4;
        }
        idx += 1;
    });
    if let Some(e) = fill_err {
        return Err(e);
    }
    if idx != header.manifest.len() {
        return Err(corrupt(path, "manifest longer than model"));
    }
    let trained = TrainedModel {
        class,
        model_cfg: header.model_config,
        model,
        feature_norm: header.feature_norm,
        target_norm: header.target_norm,
    };
    Ok((trained, header.hyperparameters))
}
