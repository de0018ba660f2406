//! Tensor archive format used for checkpoints and backbone weight files.
//!
//! Layout: `WGAR0001` magic, JSON metadata block, named f64 tensors, and a
//! trailing CRC32 over everything before it. Writes go through a temp file
//! and an atomic rename.

use crate::error::NetError;
use ndarray::{ArrayD, IxDyn};
use serde_json::Value;
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"WGAR0001";

fn push_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn push_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

/// Serialize metadata and tensors, append CRC, write atomically.
pub fn write_archive(
    path: &Path,
    meta: &Value,
    entries: &[(String, ArrayD<f64>)],
) -> Result<(), NetError> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    let meta_bytes = serde_json::to_vec(meta)?;
    push_u32(&mut buf, meta_bytes.len() as u32);
    buf.extend_from_slice(&meta_bytes);
    push_u32(&mut buf, entries.len() as u32);
    for (name, tensor) in entries {
        let name_bytes = name.as_bytes();
        assert!(name_bytes.len() <= u16::MAX as usize, "tensor name too long");
        buf.extend_from_slice(&(name_bytes.len() as u16).to_le_bytes());
        buf.extend_from_slice(name_bytes);
        buf.push(tensor.ndim() as u8);
        for &d in tensor.shape() {
            push_u64(&mut buf, d as u64);
        }
        let std = tensor.as_standard_layout();
        let slice = std.as_slice().expect("standard layout");
        for v in slice {
            push_u64(&mut buf, v.to_bits());
        }
    }
    let crc = crc32fast::hash(&buf);
    push_u32(&mut buf, crc);

    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let tmp = path.with_extension("tmp-write");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(&buf)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Read an archive, verifying magic and CRC.
pub fn read_archive(path: &Path) -> Result<(Value, Vec<(String, ArrayD<f64>)>), NetError> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    if buf.len() < MAGIC.len() + 4 {
        return Err(NetError::Checkpoint(format!(
            "{}: file too short",
            path.display()
        )));
    }
    let (body, crc_bytes) = buf.split_at(buf.len() - 4);
    let stored_crc = u32::from_le_bytes(crc_bytes.try_into().unwrap());
    if crc32fast::hash(body) != stored_crc {
        return Err(NetError::Checkpoint(format!(
            "{}: integrity check failed (corrupt archive)",
            path.display()
        )));
    }
    if &body[..8] != MAGIC {
        return Err(NetError::Checkpoint(format!(
            "{}: bad magic, not a tensor archive",
            path.display()
        )));
    }
    let mut pos = 8usize;
    let mut take = |n: usize| -> Result<&[u8], NetError> {
        if pos + n > body.len() {
            return Err(NetError::Checkpoint(format!(
                "{}: truncated archive",
                path.display()
            )));
        }
        let s = &body[pos..pos + n];
        pos += n;
        Ok(s)
    };

    let meta_len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let meta: Value = serde_json::from_slice(take(meta_len)?)?;
    let n_entries = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let mut entries = Vec::with_capacity(n_entries);
    for _ in 0..n_entries {
        let name_len = u16::from_le_bytes(take(2)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(name_len)?.to_vec())
            .map_err(|_| NetError::Checkpoint("non-utf8 tensor name".into()))?;
        let ndim = take(1)?[0] as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize);
        }
        let count: usize = dims.iter().product();
        let mut data = Vec::with_capacity(count);
        for _ in 0..count {
            data.push(f64::from_bits(u64::from_le_bytes(
                take(8)?.try_into().unwrap(),
            )));
        }
        entries.push((
            name,
            ArrayD::from_shape_vec(IxDyn(&dims), data)
                .map_err(|e| NetError::Checkpoint(format!("bad tensor shape: {e}")))?,
        ));
    }
    Ok((meta, entries))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn archive_round_trip_is_bit_exact() {
        let dir = std::env::temp_dir().join(format!("wg-ar-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("t.wga");
        let meta = serde_json::json!({"kind": "test", "n": 3});
        let entries = vec![
            (
                "a.weight".to_string(),
                ArrayD::from_shape_vec(IxDyn(&[2, 3]), vec![1.5, -0.25, 1e-300, 0.0, -0.0, 3.7])
                    .unwrap(),
            ),
            ("b".to_string(), ArrayD::from_elem(IxDyn(&[1]), f64::MIN_POSITIVE)),
        ];
        write_archive(&path, &meta, &entries).unwrap();
        let (meta2, entries2) = read_archive(&path).unwrap();
        assert_eq!(meta, meta2);
        assert_eq!(entries.len(), entries2.len());
        for ((n1, t1), (n2, t2)) in entries.iter().zip(&entries2) {
            assert_eq!(n1, n2);
            assert_eq!(t1.shape(), t2.shape());
            for (a, b) in t1.iter().zip(t2.iter()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn corrupted_archive_is_rejected() {
        let dir = std::env::temp_dir().join(format!("wg-arc-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("t.wga");
        write_archive(
            &path,
            &serde_json::json!({}),
            &[("x".to_string(), ArrayD::from_elem(IxDyn(&[4]), 2.0))],
        )
        .unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let k = bytes.len() - 10;
        bytes[k] ^= 1;
        std::fs::write(&path, &bytes).unwrap();
        assert!(read_archive(&path).is_err());
        std::fs::remove_dir_all(&dir).ok();
    }
}
