//! Versioned binary checkpoint format: a named map of tensors with shapes
//! and raw little-endian 64-bit payloads.

use super::{Shape, Tensor, TensorError};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"DRCK";
const VERSION: u16 = 1;

/// Distinguishes trainable parameters from non-trainable buffers (running
/// statistics) inside a checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntryKind {
    Param,
    Buffer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointEntry {
    pub name: String,
    pub kind: EntryKind,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl CheckpointEntry {
    pub fn into_tensor(self) -> Result<Tensor, TensorError> {
        Tensor::new(Shape(self.shape), self.data)
    }
}

pub fn write_checkpoint<W: Write>(
    writer: W,
    entries: &[CheckpointEntry],
) -> Result<(), std::io::Error> {
    let mut w = BufWriter::new(writer);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(entries.len() as u32).to_le_bytes())?;
    for e in entries {
        let name = e.name.as_bytes();
        w.write_all(&(name.len() as u16).to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&[match e.kind {
            EntryKind::Param => 0u8,
            EntryKind::Buffer => 1,
        }])?;
        w.write_all(&[e.shape.len() as u8])?;
        for &d in &e.shape {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in &e.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()
}

pub fn save_checkpoint(path: &Path, entries: &[CheckpointEntry]) -> Result<(), std::io::Error> {
    write_checkpoint(std::fs::File::create(path)?, entries)
}

pub fn read_checkpoint<R: Read>(reader: R) -> Result<Vec<CheckpointEntry>, TensorError> {
    let mut r = BufReader::new(reader);
    let fail = |msg: &str| TensorError::Validation(format!("invalid checkpoint: {msg}"));
    let io = |e: std::io::Error| TensorError::Validation(format!("invalid checkpoint: {e}"));

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != MAGIC {
        return Err(fail("bad magic"));
    }
    let mut vbuf = [0u8; 2];
    r.read_exact(&mut vbuf).map_err(io)?;
    if u16::from_le_bytes(vbuf) != VERSION {
        return Err(fail("unsupported version"));
    }
    let mut cbuf = [0u8; 4];
    r.read_exact(&mut cbuf).map_err(io)?;
    let count = u32::from_le_bytes(cbuf);

    let mut entries = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let mut lbuf = [0u8; 2];
        r.read_exact(&mut lbuf).map_err(io)?;
        let mut name = vec![0u8; u16::from_le_bytes(lbuf) as usize];
        r.read_exact(&mut name).map_err(io)?;
        let name = String::from_utf8(name).map_err(|_| fail("non-utf8 name"))?;
        let mut kind = [0u8; 1];
        r.read_exact(&mut kind).map_err(io)?;
        let kind = match kind[0] {
            0 => EntryKind::Param,
            1 => EntryKind::Buffer,
            _ => return Err(fail("unknown entry kind")),
        };
        let mut ndim = [0u8; 1];
        r.read_exact(&mut ndim).map_err(io)?;
        let mut shape = Vec::with_capacity(ndim[0] as usize);
        for _ in 0..ndim[0] {
            let mut dbuf = [0u8; 4];
            r.read_exact(&mut dbuf).map_err(io)?;
            shape.push(u32::from_le_bytes(dbuf) as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            let mut fbuf = [0u8; 8];
            r.read_exact(&mut fbuf).map_err(io)?;
            data.push(f64::from_le_bytes(fbuf));
        }
        entries.push(CheckpointEntry {
            name,
            kind,
            shape,
            data,
        });
    }
    Ok(entries)
}

pub fn load_checkpoint(path: &Path) -> Result<Vec<CheckpointEntry>, TensorError> {
    let file = std::fs::File::open(path)
        .map_err(|e| TensorError::Validation(format!("cannot open checkpoint: {e}")))?;
    read_checkpoint(file)
}
