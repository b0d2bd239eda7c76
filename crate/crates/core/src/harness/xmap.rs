//! XMAP container: an ASCII header `XMAP 1 <H> <W>\n` followed by `H * W`
//! little-endian `f32` values in row-major order.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::Grid;

const MAGIC: &str = "XMAP";
const VERSION: &str = "1";

pub fn encode(grid: &Grid) -> Vec<u8> {
    let header = format!("{MAGIC} {VERSION} {} {}\n", grid.height(), grid.width());
    let mut out = Vec::with_capacity(header.len() + 4 * grid.len());
    out.extend_from_slice(header.as_bytes());
    for &v in grid.as_slice() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<Grid> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Format("missing header line".into()))?;
    let header = std::str::from_utf8(&bytes[..nl])
        .map_err(|_| Error::Format("header is not ASCII".into()))?;
    let fields: Vec<&str> = header.split(' ').collect();
    let [magic, version, h, w] = fields[..] else {
        return Err(Error::Format(format!("bad header `{header}`")));
    };
    if magic != MAGIC || version != VERSION {
        return Err(Error::Format(format!("unsupported header `{header}`")));
    }
    let parse = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::Format(format!("bad dimension `{s}`")))
    };
    let (h, w) = (parse(h)?, parse(w)?);
    let payload = &bytes[nl + 1..];
    if payload.len() != 4 * h * w {
        return Err(Error::Format(format!(
            "payload is {} bytes, expected {}",
            payload.len(),
            4 * h * w
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    Grid::from_vec(h, w, data)
}

pub fn write(path: &Path, grid: &Grid) -> Result<()> {
    fs::write(path, encode(grid)).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<Grid> {
    decode(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// Rounds every value through `f32` so the in-memory grid equals what an
/// XMAP round-trip yields.
pub fn quantize(grid: &Grid) -> Grid {
    grid.map(|v| v as f32 as f64)
}
