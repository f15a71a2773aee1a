//! Binary snapshot files.
//!
//! Layout, all little-endian:
//! `"SEMK"`, version `u32`, dim `u32`, order `u32`, `dim` element counts
//! (`u32`), `dim` bound pairs (`f64`), field count `u32`, time `f64`, step
//! `u64`, then every field as element-local `f64` values (elements and nodes
//! x-fastest).

use std::io::{Read, Write};
use std::path::Path;

use sem_core::{Field, Space};

use crate::error::{CliError, CliResult};

pub const MAGIC: &[u8; 4] = b"SEMK";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotHeader {
    pub dim: usize,
    pub order: usize,
    pub counts: Vec<usize>,
    pub bounds: Vec<[f64; 2]>,
    pub fields: usize,
    pub time: f64,
    pub step: u64,
}

impl SnapshotHeader {
    pub fn for_space(space: &Space, fields: usize, time: f64, step: u64) -> Self {
        let mesh = space.mesh();
        Self {
            dim: space.dim(),
            order: space.order(),
            counts: mesh.counts().to_vec(),
            bounds: mesh.bounds().to_vec(),
            fields,
            time,
            step,
        }
    }

    /// Values per field implied by the header.
    pub fn field_len(&self) -> usize {
        self.counts.iter().product::<usize>() * (self.order + 1).pow(self.dim as u32)
    }

    /// Same discretization (time and step may differ).
    pub fn compatible(&self, other: &Self) -> bool {
        self.dim == other.dim
            && self.order == other.order
            && self.counts == other.counts
            && self.bounds == other.bounds
            && self.fields == other.fields
    }

    pub fn matches_space(&self, space: &Space) -> bool {
        self.dim == space.dim()
            && self.order == space.order()
            && self.counts == space.mesh().counts()
            && self.bounds.as_slice() == space.mesh().bounds()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub header: SnapshotHeader,
    pub fields: Vec<Field>,
}

fn bad(path: &Path, msg: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {msg}", path.display()))
}

pub fn encode(header: &SnapshotHeader, fields: &[Field]) -> Vec<u8> {
    let mut b = Vec::with_capacity(64 + fields.len() * header.field_len() * 8);
    b.extend_from_slice(MAGIC);
    for v in [VERSION, header.dim as u32, header.order as u32] {
        b.extend_from_slice(&v.to_le_bytes());
    }
    for &c in &header.counts {
        b.extend_from_slice(&(c as u32).to_le_bytes());
    }
    for bd in &header.bounds {
        b.extend_from_slice(&bd[0].to_le_bytes());
        b.extend_from_slice(&bd[1].to_le_bytes());
    }
    b.extend_from_slice(&(fields.len() as u32).to_le_bytes());
    b.extend_from_slice(&header.time.to_le_bytes());
    b.extend_from_slice(&header.step.to_le_bytes());
    for f in fields {
        for v in f.iter() {
            b.extend_from_slice(&v.to_le_bytes());
        }
    }
    b
}

pub fn write(path: &Path, header: &SnapshotHeader, fields: &[Field]) -> CliResult<()> {
    if fields.len() != header.fields || fields.iter().any(|f| f.len() != header.field_len()) {
        return Err(bad(path, "field data does not match the header"));
    }
    let mut file = std::fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    file.write_all(&encode(header, fields))
        .map_err(|e| CliError::io(path, e))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take<const K: usize>(&mut self) -> Option<[u8; K]> {
        let s = self.bytes.get(self.pos..self.pos + K)?;
        self.pos += K;
        s.try_into().ok()
    }

    fn u32(&mut self) -> Option<u32> {
        self.take::<4>().map(u32::from_le_bytes)
    }

    fn u64(&mut self) -> Option<u64> {
        self.take::<8>().map(u64::from_le_bytes)
    }

    fn f64(&mut self) -> Option<f64> {
        self.take::<8>().map(f64::from_le_bytes)
    }
}

pub fn decode(path: &Path, bytes: &[u8]) -> CliResult<Snapshot> {
    let truncated = || bad(path, "truncated header");
    let mut c = Cursor { bytes, pos: 0 };
    if c.take::<4>().as_ref() != Some(MAGIC) {
        return Err(bad(path, "not a snapshot file (bad magic)"));
    }
    let version = c.u32().ok_or_else(truncated)?;
    if version != VERSION {
        return Err(bad(path, format!("unsupported format version {version}")));
    }
    let dim = c.u32().ok_or_else(truncated)? as usize;
    if !(1..=3).contains(&dim) {
        return Err(bad(path, format!("bad dimension {dim}")));
    }
    let order = c.u32().ok_or_else(truncated)? as usize;
    let counts = (0..dim)
        .map(|_| c.u32().map(|v| v as usize))
        .collect::<Option<Vec<_>>>()
        .ok_or_else(truncated)?;
    let bounds = (0..dim)
        .map(|_| Some([c.f64()?, c.f64()?]))
        .collect::<Option<Vec<_>>>()
        .ok_or_else(truncated)?;
    let fields = c.u32().ok_or_else(truncated)? as usize;
    let time = c.f64().ok_or_else(truncated)?;
    let step = c.u64().ok_or_else(truncated)?;
    let header = SnapshotHeader {
        dim,
        order,
        counts,
        bounds,
        fields,
        time,
        step,
    };
    let n = header.field_len();
    if n == 0 {
        return Err(bad(path, "header describes an empty mesh"));
    }
    let payload = &bytes[c.pos..];
    let expected = n.checked_mul(fields).and_then(|v| v.checked_mul(8));
    if expected != Some(payload.len()) {
        return Err(bad(
            path,
            format!(
                "payload has {} bytes, header implies {}",
                payload.len(),
                n * fields * 8
            ),
        ));
    }
    let data: Vec<Field> = payload
        .chunks_exact(n * 8)
        .map(|chunk| {
            Field::from_vec(
                chunk
                    .chunks_exact(8)
                    .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
                    .collect(),
            )
        })
        .collect();
    Ok(Snapshot {
        header,
        fields: data,
    })
}

pub fn read(path: &Path) -> CliResult<Snapshot> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| CliError::io(path, e))?;
    decode(path, &bytes)
}
