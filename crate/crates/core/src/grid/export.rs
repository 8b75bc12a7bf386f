//! 8-bit image export: probability `[0, 1]` maps to `[black, white]`,
//! `byte = round_half_up(p * 255)`, row 0 is the north edge.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{logit_to_prob, OccupancyGrid};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageFormat {
    Pgm,
    Png,
}

pub fn prob_to_byte(p: f64) -> u8 {
    (p * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}

pub fn to_gray_bytes(grid: &OccupancyGrid) -> Vec<u8> {
    grid.to_image_rows()
        .into_iter()
        .map(|l| prob_to_byte(logit_to_prob(l)))
        .collect()
}

pub fn write_pgm(grid: &OccupancyGrid, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "P5\n{} {}\n255\n", grid.width(), grid.height())?;
    w.write_all(&to_gray_bytes(grid))?;
    w.flush()?;
    Ok(())
}

pub fn write_png(grid: &OccupancyGrid, path: impl AsRef<Path>) -> Result<()> {
    let img = image::GrayImage::from_raw(
        grid.width() as u32,
        grid.height() as u32,
        to_gray_bytes(grid),
    )
    .expect("buffer sized from grid");
    img.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_is_mid_gray_rounded_up() {
        assert_eq!(prob_to_byte(0.5), 128);
        assert_eq!(prob_to_byte(0.0), 0);
        assert_eq!(prob_to_byte(1.0), 255);
        let g = OccupancyGrid::new(5, 3, 1.0, [0.0, 0.0]).unwrap();
        assert!(to_gray_bytes(&g).iter().all(|&b| b == 128));
    }

    #[test]
    fn north_edge_is_first_row() {
        let mut g = OccupancyGrid::new(2, 2, 1.0, [0.0, 0.0]).unwrap();
        g.set(1, 1, 50.0); // north-east
        let bytes = to_gray_bytes(&g);
        assert_eq!(bytes, vec![128, 255, 128, 128]);
    }

    #[test]
    fn pgm_and_png_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut g = OccupancyGrid::new(4, 3, 1.0, [0.0, 0.0]).unwrap();
        g.set(0, 0, -50.0);
        let pgm = dir.path().join("m.pgm");
        write_pgm(&g, &pgm).unwrap();
        let raw = std::fs::read(&pgm).unwrap();
        assert!(raw.starts_with(b"P5\n4 3\n255\n"));
        assert_eq!(raw.len(), 11 + 12);
        // south-west cell is the first byte of the last row
        assert_eq!(raw[11 + 8], 0);

        let png = dir.path().join("m.png");
        write_png(&g, &png).unwrap();
        let img = image::open(&png).unwrap().to_luma8();
        assert_eq!(img.dimensions(), (4, 3));
        assert_eq!(img.get_pixel(0, 2).0[0], 0);
        assert_eq!(img.get_pixel(3, 0).0[0], 128);
    }
}
