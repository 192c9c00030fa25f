//! Plain-text rasters of 64-bit floats and 16-bit P2 PGM heatmap output.
//!
//! Raster file format: first line "nx ny", then ny lines of nx
//! whitespace-separated decimal values, row 0 written first and holding the
//! bottom of the domain. Values print with Rust's shortest round-trip float
//! formatting, so write/read cycles are bit-exact.

use crate::{Error, Result};
use std::fmt::Write as _;
use std::io::{BufReader, Read as _, Write as _};
use std::path::Path;

/// Dense nx x ny grid of floats; `data[iy * nx + ix]`, row 0 at the bottom.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    nx: usize,
    ny: usize,
    data: Vec<f64>,
}

impl Raster {
    pub fn new(nx: usize, ny: usize, data: Vec<f64>) -> Raster {
        assert_eq!(data.len(), nx * ny, "raster data length mismatch");
        Raster { nx, ny, data }
    }

    pub fn constant(nx: usize, ny: usize, value: f64) -> Raster {
        Raster::new(nx, ny, vec![value; nx * ny])
    }

    /// Fills cell (ix, iy) with f(ix, iy).
    pub fn from_fn(nx: usize, ny: usize, mut f: impl FnMut(usize, usize) -> f64) -> Raster {
        let mut data = Vec::with_capacity(nx * ny);
        for iy in 0..ny {
            for ix in 0..nx {
                data.push(f(ix, iy));
            }
        }
        Raster::new(nx, ny, data)
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn get(&self, ix: usize, iy: usize) -> f64 {
        self.data[iy * self.nx + ix]
    }

    pub fn set(&mut self, ix: usize, iy: usize, v: f64) {
        self.data[iy * self.nx + ix] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn scaled(&self, s: f64) -> Raster {
        Raster::new(self.nx, self.ny, self.data.iter().map(|v| v * s).collect())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{} {}", self.nx, self.ny).unwrap();
        for iy in 0..self.ny {
            for ix in 0..self.nx {
                if ix > 0 {
                    out.push(' ');
                }
                write!(out, "{}", self.get(ix, iy)).unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Raster> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Io("empty raster file".into()))?;
        let mut it = header.split_whitespace();
        let nx: usize = it
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Error::Io("bad raster header".into()))?;
        let ny: usize = it
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Error::Io("bad raster header".into()))?;
        let mut data = Vec::with_capacity(nx * ny);
        for line in lines {
            for tok in line.split_whitespace() {
                let v: f64 = tok
                    .parse()
                    .map_err(|_| Error::Io(format!("bad raster value {tok:?}")))?;
                data.push(v);
            }
        }
        if data.len() != nx * ny {
            return Err(Error::Io(format!(
                "raster value count {} does not match {nx}x{ny}",
                data.len()
            )));
        }
        Ok(Raster::new(nx, ny, data))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_text().as_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Raster> {
        let mut text = String::new();
        BufReader::new(std::fs::File::open(path)?).read_to_string(&mut text)?;
        Raster::from_text(&text)
    }

    /// 16-bit P2 PGM with values min-max scaled onto 0..=65535; the top image
    /// row holds the top of the domain.
    pub fn to_pgm(&self) -> String {
        let (lo, hi) = (self.min(), self.max());
        let span = if hi > lo { hi - lo } else { 1.0 };
        let mut out = String::new();
        writeln!(out, "P2").unwrap();
        writeln!(out, "{} {}", self.nx, self.ny).unwrap();
        writeln!(out, "65535").unwrap();
        for iy in (0..self.ny).rev() {
            for ix in 0..self.nx {
                if ix > 0 {
                    out.push(' ');
                }
                let g = ((self.get(ix, iy) - lo) / span * 65535.0).round() as u32;
                write!(out, "{}", g.min(65535)).unwrap();
            }
            out.push('\n');
        }
        out
    }
}
