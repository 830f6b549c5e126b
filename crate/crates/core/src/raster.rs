//! Regular-grid heightfield storage with binary and CSV export.
//!
//! Binary layout (little-endian): magic `HFLD`, u32 version, u32 rows,
//! u32 cols, f64 resolution, f64 origin_x, f64 origin_y, then rows*cols
//! row-major f32 heights. Row index walks +y, column index walks +x.

use crate::{Error, Result};
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"HFLD";
const VERSION: u32 = 1;

/// Row-major grid of heights (m) sampled at a fixed resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct HeightRaster {
    rows: usize,
    cols: usize,
    /// Cell edge length (m).
    pub resolution: f64,
    /// World position of cell (0, 0).
    pub origin_x: f64,
    pub origin_y: f64,
    data: Vec<f32>,
}

impl HeightRaster {
    pub fn filled(rows: usize, cols: usize, resolution: f64, origin: (f64, f64), value: f32) -> Self {
        Self {
            rows,
            cols,
            resolution,
            origin_x: origin.0,
            origin_y: origin.1,
            data: vec![value; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f32) {
        self.data[row * self.cols + col] = value;
    }

    /// World xy of a cell center.
    pub fn cell_center(&self, row: usize, col: usize) -> (f64, f64) {
        (self.origin_x + col as f64 * self.resolution, self.origin_y + row as f64 * self.resolution)
    }

    /// Bilinear interpolation at world xy with clamped-edge handling.
    ///
    /// Returns the height and whether the query point was inside the grid.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> (f64, bool) {
        let gx = (x - self.origin_x) / self.resolution;
        let gy = (y - self.origin_y) / self.resolution;
        let in_bounds =
            gx >= 0.0 && gy >= 0.0 && gx <= (self.cols - 1) as f64 && gy <= (self.rows - 1) as f64;
        let gx = gx.clamp(0.0, (self.cols - 1) as f64);
        let gy = gy.clamp(0.0, (self.rows - 1) as f64);
        let c0 = gx.floor() as usize;
        let r0 = gy.floor() as usize;
        let c1 = (c0 + 1).min(self.cols - 1);
        let r1 = (r0 + 1).min(self.rows - 1);
        let tx = gx - c0 as f64;
        let ty = gy - r0 as f64;
        let h00 = self.get(r0, c0) as f64;
        let h01 = self.get(r0, c1) as f64;
        let h10 = self.get(r1, c0) as f64;
        let h11 = self.get(r1, c1) as f64;
        let h = h00 * (1.0 - tx) * (1.0 - ty)
            + h01 * tx * (1.0 - ty)
            + h10 * (1.0 - tx) * ty
            + h11 * tx * ty;
        (h, in_bounds)
    }

    /// Central-difference gradient magnitude at a cell (m per m).
    pub fn gradient_magnitude(&self, row: usize, col: usize) -> f64 {
        let rm = row.saturating_sub(1);
        let rp = (row + 1).min(self.rows - 1);
        let cm = col.saturating_sub(1);
        let cp = (col + 1).min(self.cols - 1);
        let dx = (self.get(row, cp) as f64 - self.get(row, cm) as f64)
            / ((cp - cm) as f64 * self.resolution);
        let dy = (self.get(rp, col) as f64 - self.get(rm, col) as f64)
            / ((rp - rm) as f64 * self.resolution);
        (dx * dx + dy * dy).sqrt()
    }

    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.rows as u32).to_le_bytes())?;
        w.write_all(&(self.cols as u32).to_le_bytes())?;
        w.write_all(&self.resolution.to_le_bytes())?;
        w.write_all(&self.origin_x.to_le_bytes())?;
        w.write_all(&self.origin_y.to_le_bytes())?;
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format(format!("bad raster magic {magic:?}")));
        }
        let mut u32buf = [0u8; 4];
        r.read_exact(&mut u32buf)?;
        let version = u32::from_le_bytes(u32buf);
        if version != VERSION {
            return Err(Error::Format(format!("unsupported raster version {version}")));
        }
        r.read_exact(&mut u32buf)?;
        let rows = u32::from_le_bytes(u32buf) as usize;
        r.read_exact(&mut u32buf)?;
        let cols = u32::from_le_bytes(u32buf) as usize;
        let mut f64buf = [0u8; 8];
        r.read_exact(&mut f64buf)?;
        let resolution = f64::from_le_bytes(f64buf);
        r.read_exact(&mut f64buf)?;
        let origin_x = f64::from_le_bytes(f64buf);
        r.read_exact(&mut f64buf)?;
        let origin_y = f64::from_le_bytes(f64buf);
        if rows == 0 || cols == 0 || rows * cols > 64_000_000 {
            return Err(Error::Format(format!("implausible raster dims {rows}x{cols}")));
        }
        let mut data = vec![0f32; rows * cols];
        let mut f32buf = [0u8; 4];
        for v in data.iter_mut() {
            r.read_exact(&mut f32buf)?;
            *v = f32::from_le_bytes(f32buf);
        }
        Ok(Self { rows, cols, resolution, origin_x, origin_y, data })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_binary(std::io::BufWriter::new(file))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_binary(std::io::BufReader::new(file))
    }

    /// Plain-text dump for inspection: one row per line, comma separated.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        for r in 0..self.rows {
            let mut line = String::new();
            for c in 0..self.cols {
                if c > 0 {
                    line.push(',');
                }
                line.push_str(&format!("{}", self.get(r, c)));
            }
            line.push('\n');
            w.write_all(line.as_bytes())?;
        }
        Ok(())
    }
}
