//! Dense boolean masks and their 8-bit grayscale PNG form.

use std::path::Path;

use image::{GrayImage, Luma};

use crate::error::{DaamError, Result};

/// Row-major `height × width` boolean mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != height * width {
            return Err(DaamError::DimMismatch(format!(
                "mask data has {} cells, expected {height}x{width}",
                data.len()
            )));
        }
        Ok(Mask { height, width, data })
    }

    pub fn filled(height: usize, width: usize, value: bool) -> Self {
        Mask {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Mask { height, width, data }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.data[row * self.width + col]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    pub fn same_dims(&self, other: &Mask) -> bool {
        self.height == other.height && self.width == other.width
    }

    /// True if every set pixel of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.same_dims(other) && self.data.iter().zip(&other.data).all(|(&a, &b)| !a || b)
    }

    /// Fraction of pixels that are set.
    pub fn coverage(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.count() as f64 / self.data.len() as f64
    }

    /// Loads an 8-bit grayscale PNG; any nonzero pixel is foreground.
    pub fn read_png(path: &Path) -> Result<Self> {
        let img = image::open(path)?.into_luma8();
        let (w, h) = img.dimensions();
        let data = img.pixels().map(|p| p.0[0] != 0).collect();
        Ok(Mask {
            height: h as usize,
            width: w as usize,
            data,
        })
    }

    /// Writes the mask as 8-bit grayscale, 255 for set pixels.
    pub fn write_png(&self, path: &Path) -> Result<()> {
        let mut img = GrayImage::new(self.width as u32, self.height as u32);
        for (i, px) in img.pixels_mut().enumerate() {
            *px = Luma([if self.data[i] { 255 } else { 0 }]);
        }
        crate::render::save_png_gray8(&img, path)
    }
}
