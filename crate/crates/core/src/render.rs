//! Overlay rendering of soft heat maps and hard masks onto the generated
//! image, plus the PNG writers used across the crate.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use image::codecs::png::{CompressionType, FilterType, PngEncoder};
use image::{GrayImage, ImageBuffer, ImageEncoder, Luma, Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::attribution::{normalize_for_display, HardMask, HeatMap};
use crate::error::{DaamError, Result};

pub const DEFAULT_COLORMAP: &str = include_str!("../data/colormap_default.json");

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub position: f64,
    pub rgb: [u8; 3],
}

/// Piecewise-linear RGB ramp.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Colormap {
    pub name: String,
    pub anchors: Vec<Anchor>,
}

impl Colormap {
    pub fn default_ramp() -> Self {
        Colormap::from_json(DEFAULT_COLORMAP).expect("bundled colormap is valid")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let map: Colormap = serde_json::from_str(text)?;
        map.validate()?;
        Ok(map)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| DaamError::io(path, e))?;
        Colormap::from_json(&text)
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(DaamError::InvalidOverlay(m.to_string()));
        if self.anchors.len() < 2 {
            return bad("colormap needs at least two anchors");
        }
        if self.anchors.iter().any(|a| !(0.0..=1.0).contains(&a.position)) {
            return bad("anchor positions must lie in [0, 1]");
        }
        if self.anchors.windows(2).any(|w| w[0].position >= w[1].position) {
            return bad("anchor positions must be strictly increasing");
        }
        if self.anchors[0].position != 0.0 || self.anchors[self.anchors.len() - 1].position != 1.0 {
            return bad("anchors must span 0 to 1");
        }
        Ok(())
    }

    /// Color at `v`, as floats in 0..=255.
    pub fn lookup(&self, v: f64) -> Result<[f64; 3]> {
        if !(0.0..=1.0).contains(&v) {
            return Err(DaamError::OutOfRange(v));
        }
        let to_f = |a: &Anchor| a.rgb.map(f64::from);
        let upper = self
            .anchors
            .iter()
            .position(|a| a.position >= v)
            .expect("last anchor is at 1");
        let hi = &self.anchors[upper];
        if hi.position == v || upper == 0 {
            return Ok(to_f(hi));
        }
        let lo = &self.anchors[upper - 1];
        let t = (v - lo.position) / (hi.position - lo.position);
        let (a, b) = (to_f(lo), to_f(hi));
        Ok([0, 1, 2].map(|i| a[i] + t * (b[i] - a[i])))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DrawMode {
    #[default]
    Soft,
    HardFill,
    HardOutline,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OverlaySpec {
    pub alpha: f64,
    pub colormap: Colormap,
    pub draw_mode: DrawMode,
    pub highlight: [u8; 3],
}

impl Default for OverlaySpec {
    fn default() -> Self {
        OverlaySpec {
            alpha: 0.6,
            colormap: Colormap::default_ramp(),
            draw_mode: DrawMode::Soft,
            highlight: [255, 0, 0],
        }
    }
}

impl OverlaySpec {
    fn check(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(DaamError::InvalidOverlay(format!(
                "alpha {} outside [0, 1]",
                self.alpha
            )));
        }
        self.colormap.validate()
    }
}

fn check_dims(image: &RgbImage, h: usize, w: usize) -> Result<()> {
    if image.height() as usize != h || image.width() as usize != w {
        return Err(DaamError::DimMismatch(format!(
            "image is {}x{}, map is {h}x{w}",
            image.height(),
            image.width()
        )));
    }
    Ok(())
}

fn to_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Blends `(1 − α·v)·image + α·v·color(v)` per pixel, where `v` is the
/// display-normalized attribution, so unattended pixels keep their color.
pub fn render_soft(image: &RgbImage, map: &HeatMap, spec: &OverlaySpec) -> Result<RgbImage> {
    spec.check()?;
    check_dims(image, map.height, map.width)?;
    let norm = normalize_for_display(map);
    let mut out = image.clone();
    for (px, &v) in out.pixels_mut().zip(&norm) {
        let weight = spec.alpha * v;
        if weight == 0.0 {
            continue;
        }
        let color = spec.colormap.lookup(v)?;
        for (ch, col) in px.0.iter_mut().zip(color) {
            *ch = to_u8((1.0 - weight) * *ch as f64 + weight * col);
        }
    }
    Ok(out)
}

/// Pixels of the mask with a 4-neighbour outside the mask or the image.
pub fn outline(mask: &HardMask) -> Vec<bool> {
    let m = &mask.mask;
    let (h, w) = (m.height, m.width);
    let mut out = vec![false; h * w];
    for r in 0..h {
        for c in 0..w {
            if !m.get(r, c) {
                continue;
            }
            let edge = r == 0
                || c == 0
                || r + 1 == h
                || c + 1 == w
                || !m.get(r - 1, c)
                || !m.get(r + 1, c)
                || !m.get(r, c - 1)
                || !m.get(r, c + 1);
            out[r * w + c] = edge;
        }
    }
    out
}

/// `HardFill` blends the highlight color at α inside the mask;
/// `HardOutline` paints the mask boundary in the opaque highlight color.
pub fn render_hard(image: &RgbImage, mask: &HardMask, spec: &OverlaySpec) -> Result<RgbImage> {
    spec.check()?;
    check_dims(image, mask.mask.height, mask.mask.width)?;
    let mut out = image.clone();
    match spec.draw_mode {
        DrawMode::HardOutline => {
            for (px, edge) in out.pixels_mut().zip(outline(mask)) {
                if edge {
                    *px = Rgb(spec.highlight);
                }
            }
        }
        _ => {
            let a = spec.alpha;
            for (px, &set) in out.pixels_mut().zip(&mask.mask.data) {
                if set && a > 0.0 {
                    for c in 0..3 {
                        px.0[c] = to_u8((1.0 - a) * px.0[c] as f64 + a * spec.highlight[c] as f64);
                    }
                }
            }
        }
    }
    Ok(out)
}

fn encoder(path: &Path) -> Result<PngEncoder<BufWriter<File>>> {
    let file = File::create(path).map_err(|e| DaamError::io(path, e))?;
    Ok(PngEncoder::new_with_quality(
        BufWriter::new(file),
        CompressionType::Default,
        FilterType::NoFilter,
    ))
}

/// 8-bit RGB PNG with fixed, non-interlaced encoder settings.
pub fn save_png_rgb(img: &RgbImage, path: &Path) -> Result<()> {
    encoder(path)?.write_image(img.as_raw(), img.width(), img.height(), image::ExtendedColorType::Rgb8)?;
    Ok(())
}

pub fn save_png_gray8(img: &GrayImage, path: &Path) -> Result<()> {
    encoder(path)?.write_image(img.as_raw(), img.width(), img.height(), image::ExtendedColorType::L8)?;
    Ok(())
}

pub fn save_png_gray16(img: &ImageBuffer<Luma<u16>, Vec<u16>>, path: &Path) -> Result<()> {
    let bytes: Vec<u8> = img.as_raw().iter().flat_map(|v| v.to_ne_bytes()).collect();
    encoder(path)?.write_image(&bytes, img.width(), img.height(), image::ExtendedColorType::L16)?;
    Ok(())
}

pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    Ok(image::open(path)?.into_rgb8())
}
