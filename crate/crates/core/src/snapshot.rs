//! Binary field snapshots.
//!
//! Layout (all little-endian): magic `SRSW`, format version `u32`, grid kind
//! `u8`, `nx: u32`, `ny: u32`, time `f64`, then `nx * ny` `f64` values
//! row-major with `i` fastest.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{GridSpec, Kind, StaggeredField};

pub const MAGIC: &[u8; 4] = b"SRSW";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 1 + 4 + 4 + 8;

pub fn encode(field: &StaggeredField, time: f64) -> Vec<u8> {
    let g = field.grid();
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * g.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(field.kind().code());
    out.extend_from_slice(&(g.nx as u32).to_le_bytes());
    out.extend_from_slice(&(g.ny as u32).to_le_bytes());
    out.extend_from_slice(&time.to_le_bytes());
    for v in field.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Decode a snapshot; `grid` supplies the domain size, which the file does not carry.
pub fn decode(bytes: &[u8], grid: &GridSpec, path: &Path) -> Result<(StaggeredField, f64)> {
    let bad = |reason: String| Error::Snapshot { path: path.to_path_buf(), reason };
    if bytes.len() < HEADER_LEN {
        return Err(bad(format!("file is {} bytes, shorter than the header", bytes.len())));
    }
    if &bytes[0..4] != MAGIC {
        return Err(bad("bad magic".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(bad(format!("unsupported format version {version}")));
    }
    let kind = Kind::from_code(bytes[8]).ok_or_else(|| bad(format!("unknown grid kind {}", bytes[8])))?;
    let nx = u32::from_le_bytes(bytes[9..13].try_into().unwrap()) as usize;
    let ny = u32::from_le_bytes(bytes[13..17].try_into().unwrap()) as usize;
    let time = f64::from_le_bytes(bytes[17..25].try_into().unwrap());
    if nx != grid.nx || ny != grid.ny {
        return Err(bad(format!("grid is {nx}x{ny}, expected {}x{}", grid.nx, grid.ny)));
    }
    let body = &bytes[HEADER_LEN..];
    if body.len() != 8 * nx * ny {
        return Err(bad(format!("expected {} data bytes, found {}", 8 * nx * ny, body.len())));
    }
    let values = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok((StaggeredField::from_values(kind, *grid, values)?, time))
}

pub fn write(path: impl AsRef<Path>, field: &StaggeredField, time: f64) -> Result<()> {
    let path = path.as_ref();
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&encode(field, time)).map_err(|e| Error::io(path, e))
}

pub fn read(path: impl AsRef<Path>, grid: &GridSpec) -> Result<(StaggeredField, f64)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, grid, path)
}

/// Read a snapshot and insist on its staggering.
pub fn read_kind(path: impl AsRef<Path>, grid: &GridSpec, kind: Kind) -> Result<(StaggeredField, f64)> {
    let path = path.as_ref();
    let (field, time) = read(path, grid)?;
    if field.kind() != kind {
        return Err(Error::Snapshot {
            path: path.to_path_buf(),
            reason: format!("expected a {kind:?} field, found {:?}", field.kind()),
        });
    }
    Ok((field, time))
}
