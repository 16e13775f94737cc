//! The "tensor archive" checkpoint format.
//!
//! ```text
//! magic  "TKGT1\n"
//! u32    tensor count
//! per tensor:
//!   u16  name length, name bytes (UTF-8)
//!   u8   rank, rank × u32 dims
//!   f32  × product(dims)
//! ```
//! All integers and floats are little-endian.

use std::io::{self, Read, Write};

use thiserror::Error;

use super::{ParamStore, Real, Tensor};

pub const ARCHIVE_MAGIC: &[u8; 6] = b"TKGT1\n";

#[derive(Debug, Error)]
pub enum ArchiveError {
    #[error("not a tensor archive (bad magic)")]
    BadMagic,
    #[error("tensor archive is truncated or malformed: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub fn write_archive<T: Real, W: Write>(store: &ParamStore<T>, mut w: W) -> Result<(), ArchiveError> {
    w.write_all(ARCHIVE_MAGIC)?;
    w.write_all(&(store.len() as u32).to_le_bytes())?;
    for (name, t) in store.iter() {
        let bytes = name.as_bytes();
        let len = u16::try_from(bytes.len())
            .map_err(|_| ArchiveError::Malformed(format!("name too long: {name}")))?;
        w.write_all(&len.to_le_bytes())?;
        w.write_all(bytes)?;
        let rank = u8::try_from(t.rank())
            .map_err(|_| ArchiveError::Malformed(format!("rank too large for {name}")))?;
        w.write_all(&[rank])?;
        for &d in t.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(t.len() * 4);
        for &v in t.data() {
            buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<(), ArchiveError> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => ArchiveError::Malformed(format!("unexpected end while reading {what}")),
        _ => ArchiveError::Io(e),
    })
}

fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32, ArchiveError> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_archive<T: Real, R: Read>(mut r: R) -> Result<ParamStore<T>, ArchiveError> {
    let mut magic = [0u8; 6];
    r.read_exact(&mut magic).map_err(|_| ArchiveError::BadMagic)?;
    if &magic != ARCHIVE_MAGIC {
        return Err(ArchiveError::BadMagic);
    }
    let count = read_u32(&mut r, "tensor count")?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let mut lb = [0u8; 2];
        read_exact(&mut r, &mut lb, "name length")?;
        let mut name = vec![0u8; u16::from_le_bytes(lb) as usize];
        read_exact(&mut r, &mut name, "name")?;
        let name = String::from_utf8(name).map_err(|_| ArchiveError::Malformed("name is not UTF-8".into()))?;
        let mut rank = [0u8; 1];
        read_exact(&mut r, &mut rank, "rank")?;
        let mut shape = Vec::with_capacity(rank[0] as usize);
        for _ in 0..rank[0] {
            shape.push(read_u32(&mut r, "dims")? as usize);
        }
        let n: usize = shape.iter().product();
        let mut raw = vec![0u8; n * 4];
        read_exact(&mut r, &mut raw, &name)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| T::from_f64(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| ArchiveError::Malformed(e.to_string()))?;
        if store.id(&name).is_some() {
            return Err(ArchiveError::Malformed(format!("duplicate tensor {name}")));
        }
        store.insert(name, t);
    }
    Ok(store)
}
