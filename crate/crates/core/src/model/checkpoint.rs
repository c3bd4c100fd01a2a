//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "SIGILCKP"  u32 version  u64 spec_len  spec JSON
//! u64 param_count
//! per param: u64 name_len  name  u64 rows  u64 cols  u8 decay  rows*cols f64
//! u64 FNV-1a checksum of every preceding byte
//! ```
//!
//! Writes go to a sibling temp file that is renamed into place, so an
//! interrupted save leaves the previous checkpoint untouched.

use std::fs;
use std::path::Path;

use super::{ModelSpec, SigilModel};
use crate::error::{CheckpointError, Result, SigilError};
use crate::matrix::Matrix;

const MAGIC: &[u8; 8] = b"SIGILCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

fn put_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

pub fn encode_checkpoint(model: &SigilModel) -> Vec<u8> {
    let mut buf = Vec::with_capacity(64 + model.params.numel() * 8);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let spec = serde_json::to_vec(&model.spec).expect("model spec serializes");
    put_u64(&mut buf, spec.len() as u64);
    buf.extend_from_slice(&spec);
    put_u64(&mut buf, model.params.len() as u64);
    for p in model.params.iter() {
        put_u64(&mut buf, p.name.len() as u64);
        buf.extend_from_slice(p.name.as_bytes());
        put_u64(&mut buf, p.value.rows() as u64);
        put_u64(&mut buf, p.value.cols() as u64);
        buf.push(p.decay as u8);
        for &x in p.value.as_slice() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    let sum = fnv1a(&buf);
    put_u64(&mut buf, sum);
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(CheckpointError::Truncated)?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize, CheckpointError> {
        let v = self.u64()?;
        usize::try_from(v).ok().filter(|&v| v <= self.bytes.len()).ok_or(CheckpointError::Corrupt)
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<SigilModel, CheckpointError> {
    if bytes.len() < MAGIC.len() {
        return Err(CheckpointError::Truncated);
    }
    if &bytes[..MAGIC.len()] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut r = Reader { bytes, pos: MAGIC.len() };
    let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::VersionMismatch { found: version, expected: CHECKPOINT_VERSION });
    }
    if bytes.len() < 8 + r.pos {
        return Err(CheckpointError::Truncated);
    }
    let body_end = bytes.len() - 8;
    let stored = u64::from_le_bytes(bytes[body_end..].try_into().expect("8 bytes"));
    let r_body = &bytes[..body_end];

    let mut r = Reader { bytes: r_body, pos: r.pos };
    let spec_len = r.len()?;
    let spec_bytes = r.take(spec_len)?;
    let count = r.len()?;
    let mut entries = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let name_len = r.len()?;
        let name = String::from_utf8(r.take(name_len)?.to_vec()).map_err(|_| CheckpointError::Corrupt)?;
        let rows = r.len()?;
        let cols = r.len()?;
        let decay = match r.take(1)?[0] {
            0 => false,
            1 => true,
            _ => return Err(CheckpointError::Corrupt),
        };
        let numel = rows.checked_mul(cols).ok_or(CheckpointError::Corrupt)?;
        let raw = r.take(numel.checked_mul(8).ok_or(CheckpointError::Corrupt)?)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        entries.push((name, decay, Matrix::from_vec(rows, cols, data)));
    }
    if r.pos != r_body.len() {
        return Err(CheckpointError::Corrupt);
    }
    if fnv1a(r_body) != stored {
        return Err(CheckpointError::Corrupt);
    }

    let spec: ModelSpec = serde_json::from_slice(spec_bytes).map_err(|_| CheckpointError::Corrupt)?;
    let mut model = SigilModel::zeroed(spec.clone())
        .map_err(|e| CheckpointError::ArchitectureMismatch(format!("invalid descriptor {spec:?}: {e}")))?;
    if model.params.len() != entries.len() {
        return Err(CheckpointError::ArchitectureMismatch(format!(
            "descriptor implies {} tensors, file has {}",
            model.params.len(),
            entries.len()
        )));
    }
    for (p, (name, decay, value)) in model.params.iter_mut().zip(entries) {
        if p.name != name || p.value.shape() != value.shape() || p.decay != decay {
            return Err(CheckpointError::ArchitectureMismatch(format!(
                "tensor `{name}` {:?} does not match layout `{}` {:?}",
                value.shape(),
                p.name,
                p.value.shape()
            )));
        }
        p.value = value;
    }
    Ok(model)
}

pub fn save_checkpoint(model: &SigilModel, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(model);
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| SigilError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| SigilError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<SigilModel> {
    let bytes = fs::read(path).map_err(|e| SigilError::io(path, e))?;
    Ok(decode_checkpoint(&bytes)?)
}

/// Loads a checkpoint and checks it against the architecture the caller expects.
pub fn load_checkpoint_for(path: &Path, expected: &ModelSpec) -> Result<SigilModel> {
    let model = load_checkpoint(path)?;
    if &model.spec != expected {
        return Err(CheckpointError::ArchitectureMismatch(format!(
            "checkpoint holds {:?}, expected {:?}",
            model.spec, expected
        ))
        .into());
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> SigilModel {
        SigilModel::initialize(ModelSpec::new(10, vec![3, 2], 4, vec![4, 2]), 7).unwrap()
    }

    #[test]
    fn round_trip_is_bitwise() {
        let mut m = model();
        // awkward values survive too
        m.params.as_mut_slice()[0].value.as_mut_slice()[0] = f64::MIN_POSITIVE / 3.0;
        m.params.as_mut_slice()[0].value.as_mut_slice()[1] = -0.0;
        let back = decode_checkpoint(&encode_checkpoint(&m)).unwrap();
        assert_eq!(back.spec, m.spec);
        for (a, b) in back.params.iter().zip(m.params.iter()) {
            let bits = |x: &Matrix| x.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.value), bits(&b.value));
        }
        assert_eq!(back, m);
    }

    #[test]
    fn file_round_trip_and_missing_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let m = model();
        save_checkpoint(&m, &path).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), m);
        assert!(load_checkpoint_for(&path, &m.spec).is_ok());
        let other = ModelSpec::new(10, vec![3, 2], 5, vec![4, 2]);
        assert!(matches!(
            load_checkpoint_for(&path, &other),
            Err(SigilError::Checkpoint(CheckpointError::ArchitectureMismatch(_)))
        ));
        assert!(matches!(load_checkpoint(&dir.path().join("none")), Err(SigilError::Io { .. })));
    }

    #[test]
    fn damaged_files_are_rejected_with_typed_errors() {
        let bytes = encode_checkpoint(&model());
        assert!(matches!(decode_checkpoint(b"NOTACKPTxxxx"), Err(CheckpointError::BadMagic)));
        assert!(matches!(decode_checkpoint(&bytes[..5]), Err(CheckpointError::Truncated)));
        assert!(decode_checkpoint(&bytes[..bytes.len() - 20]).is_err());

        let mut flipped = bytes.clone();
        let mid = bytes.len() / 2;
        flipped[mid] ^= 0x40;
        assert!(decode_checkpoint(&flipped).is_err());

        let mut versioned = bytes.clone();
        versioned[8..12].copy_from_slice(&99u32.to_le_bytes());
        assert!(matches!(
            decode_checkpoint(&versioned),
            Err(CheckpointError::VersionMismatch { found: 99, expected: CHECKPOINT_VERSION })
        ));
    }

    #[test]
    fn every_truncation_point_fails_cleanly() {
        let bytes = encode_checkpoint(&SigilModel::initialize(ModelSpec::new(4, vec![2], 2, vec![2]), 1).unwrap());
        for cut in 0..bytes.len() {
            assert!(decode_checkpoint(&bytes[..cut]).is_err(), "cut at {cut}");
        }
    }
}
