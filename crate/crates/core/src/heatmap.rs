//! Square heatmap grids and their binary file format.
//!
//! File layout: the 8-byte magic `IT2PHM1\0`, the grid side as a
//! little-endian `u32`, then `side²` little-endian `f32` values in
//! row-major order.

use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};

pub const HEATMAP_MAGIC: &[u8; 8] = b"IT2PHM1\0";

/// Row-major `side × side` grid; `get(x, y)` reads column `x` of row `y`.
#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap<T> {
    side: usize,
    data: Vec<T>,
}

impl<T: Scalar> Heatmap<T> {
    pub fn zeros(side: usize) -> Self {
        Self { side, data: vec![T::zero(); side * side] }
    }

    pub fn from_vec(side: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != side * side {
            return Err(Error::Shape(format!("{} values for a {side}x{side} heatmap", data.len())));
        }
        Ok(Self { side, data })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn get(&self, x: usize, y: usize) -> T {
        self.data[y * self.side + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: T) {
        self.data[y * self.side + x] = v;
    }

    /// First maximal cell in row-major order, as `(x, y)`.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, &v) in self.data.iter().enumerate() {
            if v > self.data[best] {
                best = i;
            }
        }
        (best % self.side, best / self.side)
    }

    pub fn max(&self) -> T {
        self.data.iter().copied().fold(T::neg_infinity(), T::max)
    }

    pub fn min(&self) -> T {
        self.data.iter().copied().fold(T::infinity(), T::min)
    }

    pub fn cast<U: Scalar>(&self) -> Heatmap<U> {
        Heatmap { side: self.side, data: self.data.iter().map(|v| lit(v.to_f64().unwrap_or(f64::NAN))).collect() }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 4 * self.data.len());
        out.extend_from_slice(HEATMAP_MAGIC);
        out.extend_from_slice(&(self.side as u32).to_le_bytes());
        for v in &self.data {
            let f = v.to_f32().unwrap_or(f32::NAN);
            out.extend_from_slice(&f.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 {
            return Err(Error::Format { offset: bytes.len(), msg: "missing heatmap magic".into() });
        }
        if &bytes[..8] != HEATMAP_MAGIC {
            return Err(Error::Version(format!("unknown heatmap magic {:?}", String::from_utf8_lossy(&bytes[..8]))));
        }
        if bytes.len() < 12 {
            return Err(Error::Format { offset: bytes.len(), msg: "missing grid size".into() });
        }
        let side = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let want = 12 + 4 * side * side;
        if bytes.len() != want {
            let offset = bytes.len().min(want);
            return Err(Error::Format {
                offset,
                msg: format!("expected {want} bytes for a {side}x{side} heatmap, found {}", bytes.len()),
            });
        }
        let data = bytes[12..]
            .chunks_exact(4)
            .map(|c| lit(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64))
            .collect();
        Ok(Self { side, data })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Nested rows, for JSON payloads.
    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.side).map(|r| r.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect()).collect()
    }
}

impl<T: Scalar> Default for Heatmap<T> {
    fn default() -> Self {
        Self::zeros(0)
    }
}
