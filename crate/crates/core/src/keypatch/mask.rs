use std::path::Path;

use crate::pnm::{self, PnmError};

use super::KeypatchError;

/// Binary lesion mask, row-major, 1 = lesion.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    values: Vec<u8>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, values: Vec<u8>) -> Result<Self, KeypatchError> {
        if height == 0 || width == 0 {
            return Err(KeypatchError::InvalidMask("mask dimensions must be positive".into()));
        }
        if values.len() != height * width {
            return Err(KeypatchError::InvalidMask(format!(
                "expected {} values for a {height}x{width} mask, got {}",
                height * width,
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|&&v| v > 1) {
            return Err(KeypatchError::InvalidMask(format!("mask value {v} is not 0 or 1")));
        }
        Ok(Self { height, width, values })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        assert!(height > 0 && width > 0, "mask dimensions must be positive");
        Self {
            height,
            width,
            values: vec![0; height * width],
        }
    }

    /// Builds a mask from a predicate over `(row, col)`.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut mask = Self::zeros(height, width);
        for r in 0..height {
            for c in 0..width {
                mask.values[r * width + c] = f(r, c) as u8;
            }
        }
        mask
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.values[row * self.width + col] == 1
    }

    /// Lesion test with out-of-image coordinates treated as background.
    #[inline]
    pub fn get_signed(&self, row: isize, col: isize) -> bool {
        row >= 0
            && col >= 0
            && (row as usize) < self.height
            && (col as usize) < self.width
            && self.get(row as usize, col as usize)
    }

    pub fn set(&mut self, row: usize, col: usize, lesion: bool) {
        self.values[row * self.width + col] = lesion as u8;
    }

    pub fn lesion_count(&self) -> usize {
        self.values.iter().filter(|&&v| v == 1).count()
    }

    pub fn coverage(&self) -> f64 {
        self.lesion_count() as f64 / self.values.len() as f64
    }

    /// Checks that both dimensions are multiples of `patch_side`.
    pub fn check_patch_grid(&self, patch_side: usize) -> Result<(), KeypatchError> {
        if patch_side == 0 || !self.height.is_multiple_of(patch_side) || !self.width.is_multiple_of(patch_side) {
            return Err(KeypatchError::InvalidMask(format!(
                "{}x{} mask is not tiled by {patch_side}-pixel patches",
                self.height, self.width
            )));
        }
        Ok(())
    }

    /// Mask as 0/1 reals, the layout the loss functions consume.
    pub fn to_f64(&self) -> Vec<f64> {
        self.values.iter().map(|&v| v as f64).collect()
    }

    /// Decodes a PGM; samples >= 128 are lesion.
    pub fn from_pgm_bytes(bytes: &[u8], origin: &str) -> Result<Self, PnmError> {
        let raster = pnm::decode(bytes, origin)?;
        if raster.channels != 1 {
            return Err(PnmError::Malformed {
                path: origin.to_string(),
                reason: "mask must be a single-channel PGM".into(),
            });
        }
        Ok(Self {
            height: raster.height,
            width: raster.width,
            values: raster.data.iter().map(|&v| (v >= 128) as u8).collect(),
        })
    }

    pub fn to_pgm_bytes(&self) -> Vec<u8> {
        let data: Vec<u8> = self.values.iter().map(|&v| v * 255).collect();
        pnm::encode_pgm(self.width, self.height, &data)
    }

    pub fn read_pgm(path: &Path) -> Result<Self, PnmError> {
        let bytes = std::fs::read(path).map_err(|source| PnmError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_pgm_bytes(&bytes, &path.display().to_string())
    }

    pub fn write_pgm(&self, path: &Path) -> Result<(), PnmError> {
        pnm::write(path, &self.to_pgm_bytes())
    }
}
