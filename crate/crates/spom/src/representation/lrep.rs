//! Binary feature-block files.
//!
//! Layout (little-endian): magic `LREP`, version `u16`, source id as
//! `u16` length + UTF-8 bytes, `u32` dim, then `dim` 32-bit floats.

use crate::error::{Error, Result};
use crate::representation::{FeatureBlock, Provenance};
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"LREP";
const VERSION: u16 = 1;

pub fn write_block(path: &Path, block: &FeatureBlock) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut buf = Vec::with_capacity(16 + block.source_id.len() + block.dim * 4);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    let id_bytes = block.source_id.as_bytes();
    if id_bytes.len() > u16::MAX as usize {
        return Err(Error::Config(format!(
            "source id too long: {} bytes",
            id_bytes.len()
        )));
    }
    buf.extend_from_slice(&(id_bytes.len() as u16).to_le_bytes());
    buf.extend_from_slice(id_bytes);
    buf.extend_from_slice(&(block.dim as u32).to_le_bytes());
    for v in &block.values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut file = fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

pub fn read_block(path: &Path) -> Result<FeatureBlock> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let fail = |detail: &str| Error::Format {
        path: path.display().to_string(),
        detail: detail.to_string(),
    };

    if bytes.len() < 8 || &bytes[0..4] != MAGIC {
        return Err(fail("bad magic"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(fail(&format!("unsupported version {version}")));
    }
    let id_len = u16::from_le_bytes([bytes[6], bytes[7]]) as usize;
    let mut offset = 8;
    if bytes.len() < offset + id_len + 4 {
        return Err(fail("truncated header"));
    }
    let source_id = std::str::from_utf8(&bytes[offset..offset + id_len])
        .map_err(|_| fail("source id is not UTF-8"))?
        .to_string();
    offset += id_len;
    let dim = u32::from_le_bytes(bytes[offset..offset + 4].try_into().unwrap()) as usize;
    offset += 4;
    if bytes.len() != offset + dim * 4 {
        return Err(fail(&format!(
            "expected {} value bytes, found {}",
            dim * 4,
            bytes.len() - offset
        )));
    }
    let values = bytes[offset..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(FeatureBlock {
        source_id,
        dim,
        values,
        provenance: Provenance::File,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("ep/before/vit.lrep");
        let block =
            FeatureBlock::new("vit", vec![0.25, -1.5, 3.75e-6, f32::MIN_POSITIVE], Provenance::Synthetic)
                .unwrap();
        write_block(&path, &block).unwrap();
        let back = read_block(&path).unwrap();
        assert_eq!(back.source_id, "vit");
        assert_eq!(back.dim, 4);
        assert_eq!(back.provenance, Provenance::File);
        for (a, b) in block.values.iter().zip(&back.values) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn rejects_bad_magic() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("x.lrep");
        std::fs::write(&path, b"NOPE\x01\x00").unwrap();
        assert!(matches!(read_block(&path), Err(Error::Format { .. })));
    }

    #[test]
    fn rejects_truncated_values() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("t.lrep");
        let block = FeatureBlock::new("vit", vec![1.0, 2.0], Provenance::File).unwrap();
        write_block(&path, &block).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 2);
        std::fs::write(&path, &bytes).unwrap();
        assert!(read_block(&path).is_err());
    }
}
