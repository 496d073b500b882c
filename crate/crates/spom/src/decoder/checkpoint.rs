//! Checkpoint files.
//!
//! Layout (little-endian): magic `LRCK`, version `u16`, config digest
//! `u64`, tensor count `u32`, then per tensor: name (`u16` length + UTF-8),
//! rows `u32`, cols `u32`, and the values as 32-bit floats. Loading rejects
//! a digest mismatch so a checkpoint can never silently run under a
//! different configuration.

use crate::decoder::{DecoderConfig, DecoderParams};
use crate::error::{Error, Result};
use crate::numerics::Matrix;
use std::collections::BTreeMap;
use std::path::Path;

const MAGIC: &[u8; 4] = b"LRCK";
const VERSION: u16 = 1;

/// Serialize parameters with the digest of the configuration they were
/// trained under. Values are narrowed to f32, the storage precision.
pub fn checkpoint_bytes(params: &DecoderParams, config_digest: u64) -> Vec<u8> {
    let names = params.tensor_names();
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&config_digest.to_le_bytes());
    buf.extend_from_slice(&(names.len() as u32).to_le_bytes());
    for name in names {
        let tensor = params.tensor(&name).expect("named tensor");
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(tensor.rows() as u32).to_le_bytes());
        buf.extend_from_slice(&(tensor.cols() as u32).to_le_bytes());
        for &v in tensor.data() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    buf
}

pub fn save_checkpoint(path: &Path, params: &DecoderParams, config_digest: u64) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, checkpoint_bytes(params, config_digest))?;
    Ok(())
}

/// Rebuild parameters from checkpoint bytes.
///
/// `config` must describe the same decoder shape the checkpoint was written
/// with; `expected_digest` is compared against the stored digest.
pub fn params_from_bytes(
    bytes: &[u8],
    config: &DecoderConfig,
    expected_digest: u64,
) -> Result<DecoderParams> {
    let fail = |detail: &str| Error::Format {
        path: "<checkpoint>".into(),
        detail: detail.to_string(),
    };
    if bytes.len() < 18 || &bytes[0..4] != MAGIC {
        return Err(fail("bad magic"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(fail(&format!("unsupported version {version}")));
    }
    let digest = u64::from_le_bytes(bytes[6..14].try_into().unwrap());
    if digest != expected_digest {
        return Err(fail(&format!(
            "config digest mismatch: checkpoint {digest:#018x}, expected {expected_digest:#018x}"
        )));
    }
    let count = u32::from_le_bytes(bytes[14..18].try_into().unwrap()) as usize;

    let mut offset = 18;
    let mut tensors: BTreeMap<String, Matrix> = BTreeMap::new();
    let mut order: Vec<String> = Vec::with_capacity(count);
    for _ in 0..count {
        if bytes.len() < offset + 2 {
            return Err(fail("truncated tensor header"));
        }
        let name_len = u16::from_le_bytes(bytes[offset..offset + 2].try_into().unwrap()) as usize;
        offset += 2;
        if bytes.len() < offset + name_len + 8 {
            return Err(fail("truncated tensor header"));
        }
        let name = std::str::from_utf8(&bytes[offset..offset + name_len])
            .map_err(|_| fail("tensor name is not UTF-8"))?
            .to_string();
        offset += name_len;
        let rows = u32::from_le_bytes(bytes[offset..offset + 4].try_into().unwrap()) as usize;
        let cols = u32::from_le_bytes(bytes[offset + 4..offset + 8].try_into().unwrap()) as usize;
        offset += 8;
        let n_bytes = rows * cols * 4;
        if bytes.len() < offset + n_bytes {
            return Err(fail(&format!("tensor '{name}' truncated")));
        }
        let data: Vec<f64> = bytes[offset..offset + n_bytes]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        offset += n_bytes;
        tensors.insert(name.clone(), Matrix::from_vec(rows, cols, data)?);
        order.push(name);
    }
    if offset != bytes.len() {
        return Err(fail("trailing bytes"));
    }

    let take = |tensors: &mut BTreeMap<String, Matrix>, name: &str| -> Result<Matrix> {
        tensors
            .remove(name)
            .ok_or_else(|| fail(&format!("missing tensor '{name}'")))
    };

    let mut t = tensors;
    let diff_attn = super::AttentionBlockParams {
        w_q: take(&mut t, "diff.w_q")?,
        w_k: take(&mut t, "diff.w_k")?,
        w_v: take(&mut t, "diff.w_v")?,
    };
    let align_attn = super::AttentionBlockParams {
        w_q: take(&mut t, "align.w_q")?,
        w_k: take(&mut t, "align.w_k")?,
        w_v: take(&mut t, "align.w_v")?,
    };
    let mut mlp = Vec::new();
    for i in 0.. {
        if !t.contains_key(&format!("mlp.{i}.w")) {
            break;
        }
        mlp.push((take(&mut t, &format!("mlp.{i}.w"))?, take(&mut t, &format!("mlp.{i}.b"))?));
    }
    if mlp.is_empty() {
        return Err(fail("checkpoint has no mlp layers"));
    }
    let mut projections = BTreeMap::new();
    for (name, tensor) in t {
        match name.strip_prefix("proj.") {
            Some(source) => {
                projections.insert(source.to_string(), tensor);
            }
            None => return Err(fail(&format!("unexpected tensor '{name}'"))),
        }
    }

    let params = DecoderParams {
        projections,
        diff_attn,
        align_attn,
        mlp,
        config: config.clone(),
    };
    for (name, tensor) in [("diff.w_q", &params.diff_attn.w_q), ("diff.w_v", &params.diff_attn.w_v)] {
        if tensor.rows() != config.d_model {
            return Err(fail(&format!(
                "tensor '{name}' has {} rows but config d_model is {}",
                tensor.rows(),
                config.d_model
            )));
        }
    }
    Ok(params)
}

pub fn load_checkpoint(
    path: &Path,
    config: &DecoderConfig,
    expected_digest: u64,
) -> Result<DecoderParams> {
    let bytes = std::fs::read(path)?;
    params_from_bytes(&bytes, config, expected_digest).map_err(|e| match e {
        Error::Format { detail, .. } => Error::Format {
            path: path.display().to_string(),
            detail,
        },
        other => other,
    })
}

/// Round-trip parameters through the f32 storage precision without touching
/// disk. Training uses this so the parameters it reports are exactly the
/// parameters a saved checkpoint loads back.
pub fn round_trip_storage(params: &DecoderParams) -> Result<DecoderParams> {
    let bytes = checkpoint_bytes(params, 0);
    params_from_bytes(&bytes, &params.config, 0)
}
