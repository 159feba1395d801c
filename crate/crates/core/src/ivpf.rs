//! `IVPF` binary field dumps.
//!
//! Version 1 (spatial field): magic `IVPF`, u32 version, u32 dim, u32 n,
//! then `n^d` f64 values. Version 2 (phase-space field) adds a u32 `nv` and a
//! u64 time index after `n`, followed by `n^d · nv^d` values with the spatial
//! index outermost. All integers and floats are little-endian.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{ScalarField, TorusGrid};

pub const MAGIC: &[u8; 4] = b"IVPF";
pub const VERSION_FIELD: u32 = 1;
pub const VERSION_PHASE_SPACE: u32 = 2;

/// Raw contents of a phase-space dump.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseSpaceDump {
    pub dim: u32,
    pub n: u32,
    pub nv: u32,
    pub time_index: u64,
    pub values: Vec<f64>,
}

pub fn write_field<W: Write>(mut out: W, field: &ScalarField) -> Result<()> {
    let grid = field.grid();
    out.write_all(MAGIC)?;
    out.write_all(&VERSION_FIELD.to_le_bytes())?;
    out.write_all(&(grid.dim() as u32).to_le_bytes())?;
    out.write_all(&(grid.n() as u32).to_le_bytes())?;
    write_values(&mut out, field.values())
}

pub fn read_field<R: Read>(mut input: R) -> Result<ScalarField> {
    let version = read_header(&mut input)?;
    if version != VERSION_FIELD {
        return Err(Error::Format(format!("expected version 1, found {version}")));
    }
    let dim = read_u32(&mut input)? as usize;
    let n = read_u32(&mut input)? as usize;
    let grid = TorusGrid::new(dim, n).map_err(|e| Error::Format(e.to_string()))?;
    let values = read_values(&mut input, grid.len())?;
    expect_eof(&mut input)?;
    ScalarField::new(grid, values)
}

pub fn write_phase_space<W: Write>(mut out: W, dump: &PhaseSpaceDump) -> Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&VERSION_PHASE_SPACE.to_le_bytes())?;
    out.write_all(&dump.dim.to_le_bytes())?;
    out.write_all(&dump.n.to_le_bytes())?;
    out.write_all(&dump.nv.to_le_bytes())?;
    out.write_all(&dump.time_index.to_le_bytes())?;
    write_values(&mut out, &dump.values)
}

pub fn read_phase_space<R: Read>(mut input: R) -> Result<PhaseSpaceDump> {
    let version = read_header(&mut input)?;
    if version != VERSION_PHASE_SPACE {
        return Err(Error::Format(format!("expected version 2, found {version}")));
    }
    let dim = read_u32(&mut input)?;
    let n = read_u32(&mut input)?;
    let nv = read_u32(&mut input)?;
    let mut buf = [0u8; 8];
    input.read_exact(&mut buf).map_err(truncated)?;
    let time_index = u64::from_le_bytes(buf);
    if !(1..=3).contains(&dim) {
        return Err(Error::Format(format!("dimension {dim} not in 1..=3")));
    }
    let count = (n as usize)
        .checked_pow(dim)
        .and_then(|a| (nv as usize).checked_pow(dim).and_then(|b| a.checked_mul(b)))
        .ok_or_else(|| Error::Format("header sizes overflow".into()))?;
    let values = read_values(&mut input, count)?;
    expect_eof(&mut input)?;
    Ok(PhaseSpaceDump {
        dim,
        n,
        nv,
        time_index,
        values,
    })
}

pub fn save_field(path: &Path, field: &ScalarField) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + 8 * field.values().len());
    write_field(&mut buf, field)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_field(path: &Path) -> Result<ScalarField> {
    read_field(fs::read(path)?.as_slice())
}

pub fn save_phase_space(path: &Path, dump: &PhaseSpaceDump) -> Result<()> {
    let mut buf = Vec::with_capacity(28 + 8 * dump.values.len());
    write_phase_space(&mut buf, dump)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_phase_space(path: &Path) -> Result<PhaseSpaceDump> {
    read_phase_space(fs::read(path)?.as_slice())
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Format("unexpected end of data".into())
    } else {
        Error::Io(e)
    }
}

fn read_header<R: Read>(input: &mut R) -> Result<u32> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic).map_err(truncated)?;
    if &magic != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    read_u32(input)
}

fn read_u32<R: Read>(input: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    input.read_exact(&mut buf).map_err(truncated)?;
    Ok(u32::from_le_bytes(buf))
}

fn write_values<W: Write>(out: &mut W, values: &[f64]) -> Result<()> {
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&bytes)?;
    Ok(())
}

fn read_values<R: Read>(input: &mut R, count: usize) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; count * 8];
    input.read_exact(&mut bytes).map_err(truncated)?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

fn expect_eof<R: Read>(input: &mut R) -> Result<()> {
    let mut extra = [0u8; 1];
    match input.read(&mut extra)? {
        0 => Ok(()),
        _ => Err(Error::Format("trailing bytes after payload".into())),
    }
}
