//! Binary grid format: a little-endian header
//! (`"OGRD"`, u32 width, u32 height, f64 resolution, f64 origin_x, f64 origin_y)
//! followed by row-major f32 log-odds.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::OccupancyGrid;
use crate::error::{Error, Result};

pub const GRID_MAGIC: &[u8; 4] = b"OGRD";
const HEADER_LEN: usize = 4 + 4 + 4 + 8 * 3;

pub fn write_grid_to<W: Write>(grid: &OccupancyGrid, mut w: W) -> std::io::Result<()> {
    w.write_all(GRID_MAGIC)?;
    w.write_all(&(grid.width() as u32).to_le_bytes())?;
    w.write_all(&(grid.height() as u32).to_le_bytes())?;
    w.write_all(&grid.resolution().to_le_bytes())?;
    w.write_all(&grid.origin()[0].to_le_bytes())?;
    w.write_all(&grid.origin()[1].to_le_bytes())?;
    for &c in grid.cells() {
        w.write_all(&(c as f32).to_le_bytes())?;
    }
    w.flush()
}

pub fn write_grid(grid: &OccupancyGrid, path: impl AsRef<Path>) -> Result<()> {
    let f = File::create(path.as_ref())?;
    write_grid_to(grid, BufWriter::new(f))?;
    Ok(())
}

pub fn read_grid_from<R: Read>(mut r: R, name: &Path) -> Result<OccupancyGrid> {
    let mut header = [0u8; HEADER_LEN];
    r.read_exact(&mut header)
        .map_err(|e| Error::format(name, format!("short header: {e}")))?;
    if &header[0..4] != GRID_MAGIC {
        return Err(Error::format(name, "bad magic"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(header[o..o + 4].try_into().unwrap()) as usize;
    let f64_at = |o: usize| f64::from_le_bytes(header[o..o + 8].try_into().unwrap());
    let width = u32_at(4);
    let height = u32_at(8);
    let resolution = f64_at(12);
    let origin = [f64_at(20), f64_at(28)];

    let n = width
        .checked_mul(height)
        .ok_or_else(|| Error::format(name, "dimensions overflow"))?;
    let mut body = Vec::new();
    r.read_to_end(&mut body)?;
    if body.len() != n * 4 {
        return Err(Error::format(
            name,
            format!("expected {} payload bytes, found {}", n * 4, body.len()),
        ));
    }
    let cells = body
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();
    OccupancyGrid::from_cells(width, height, resolution, origin, cells)
        .map_err(|e| Error::format(name, e.to_string()))
}

pub fn read_grid(path: impl AsRef<Path>) -> Result<OccupancyGrid> {
    let path = path.as_ref();
    let f = File::open(path)?;
    read_grid_from(BufReader::new(f), path)
}
