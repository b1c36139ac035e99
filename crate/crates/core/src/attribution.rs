//! Heat maps from attention slices: per-token upscaling to image size,
//! summation over layers and timesteps, word merging and thresholding.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use image::{ImageBuffer, Luma};

use crate::error::{DaamError, Result};
use crate::mask::Mask;
use crate::par::Execution;
use crate::tensor_store::{encode_attn, read_attn_file, Direction, DumpManifest, LayerDescriptor, SliceSource};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UpscaleMode {
    /// Stride-`s` transposed convolution with a constant `1/s²` filter.
    #[default]
    SumPreservingDeconv,
    /// Catmull-Rom bicubic interpolation, clamped at zero.
    Bicubic,
}

impl FromStr for UpscaleMode {
    type Err = DaamError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "deconv" | "sum_preserving_deconv" => Ok(UpscaleMode::SumPreservingDeconv),
            "bicubic" => Ok(UpscaleMode::Bicubic),
            other => Err(DaamError::Usage(format!("unknown upsample mode {other:?}"))),
        }
    }
}

impl fmt::Display for UpscaleMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            UpscaleMode::SumPreservingDeconv => "deconv",
            UpscaleMode::Bicubic => "bicubic",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UpscaleSpec {
    pub mode: UpscaleMode,
    pub scale_factor: usize,
    pub target_height: usize,
    pub target_width: usize,
}

impl UpscaleSpec {
    fn check(&self, height: usize, width: usize) -> Result<()> {
        if self.scale_factor == 0 {
            return Err(DaamError::InvalidSpec("scale factor must be at least 1".into()));
        }
        if self.target_height < height || self.target_width < width {
            return Err(DaamError::InvalidSpec(format!(
                "target {}x{} is smaller than the {height}x{width} slice",
                self.target_height, self.target_width
            )));
        }
        // The upscaled grid must cover the target and overshoot it by less
        // than one stride.
        for (dim, target) in [(height, self.target_height), (width, self.target_width)] {
            let s = self.scale_factor;
            if dim * s < target || (dim - 1) * s >= target {
                return Err(DaamError::ShapeOverflow {
                    slice_dim: dim,
                    stride: s,
                    target,
                });
            }
        }
        Ok(())
    }
}

fn check_plane(plane: &[f64], height: usize, width: usize) -> Result<()> {
    if plane.len() != height * width {
        return Err(DaamError::DimMismatch(format!(
            "plane has {} values, expected {height}x{width}",
            plane.len()
        )));
    }
    Ok(())
}

/// Spreads each cell's score uniformly over its `s × s` block of the
/// output, then crops to the target. Total mass is preserved up to the crop.
pub fn upscale_deconv(plane: &[f64], height: usize, width: usize, spec: &UpscaleSpec) -> Result<Vec<f64>> {
    check_plane(plane, height, width)?;
    spec.check(height, width)?;
    let s = spec.scale_factor;
    let area = (s * s) as f64;
    let scaled: Vec<f64> = plane.iter().map(|v| v / area).collect();

    let (th, tw) = (spec.target_height, spec.target_width);
    let mut out = Vec::with_capacity(th * tw);
    let mut row_buf = Vec::with_capacity(tw);
    for src_row in scaled.chunks_exact(width) {
        row_buf.clear();
        for &v in src_row {
            row_buf.extend(std::iter::repeat_n(v, s));
        }
        row_buf.truncate(tw);
        for _ in 0..s {
            if out.len() == th * tw {
                break;
            }
            out.extend_from_slice(&row_buf);
        }
    }
    Ok(out)
}

const CUBIC_A: f64 = -0.5;

/// Catmull-Rom cubic convolution kernel.
pub fn cubic_kernel(x: f64) -> f64 {
    let x = x.abs();
    if x <= 1.0 {
        ((CUBIC_A + 2.0) * x - (CUBIC_A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((CUBIC_A * x - 5.0 * CUBIC_A) * x + 8.0 * CUBIC_A) * x - 4.0 * CUBIC_A
    } else {
        0.0
    }
}

/// Four (index, weight) taps for output coordinate `out` along an axis of
/// `len` source samples, half-pixel aligned and edge-clamped.
fn cubic_taps(out: usize, s: usize, len: usize) -> [(usize, f64); 4] {
    let u = (out as f64 + 0.5) / s as f64 - 0.5;
    let base = u.floor();
    let t = u - base;
    let base = base as i64;
    let clamp = |i: i64| i.clamp(0, len as i64 - 1) as usize;
    [
        (clamp(base - 1), cubic_kernel(t + 1.0)),
        (clamp(base), cubic_kernel(t)),
        (clamp(base + 1), cubic_kernel(1.0 - t)),
        (clamp(base + 2), cubic_kernel(2.0 - t)),
    ]
}

/// Bicubic upscaling by factor `s`. Negative overshoot is clamped to zero,
/// so the result is not mass-preserving.
pub fn upscale_bicubic(plane: &[f64], height: usize, width: usize, spec: &UpscaleSpec) -> Result<Vec<f64>> {
    check_plane(plane, height, width)?;
    spec.check(height, width)?;
    let s = spec.scale_factor;
    let (th, tw) = (spec.target_height, spec.target_width);

    let col_taps: Vec<_> = (0..tw).map(|c| cubic_taps(c, s, width)).collect();
    // horizontal pass: height × tw
    let mut horiz = vec![0.0; height * tw];
    for r in 0..height {
        let src = &plane[r * width..(r + 1) * width];
        for (c, taps) in col_taps.iter().enumerate() {
            horiz[r * tw + c] = taps.iter().map(|&(i, w)| w * src[i]).sum();
        }
    }
    let mut out = vec![0.0; th * tw];
    for r in 0..th {
        let taps = cubic_taps(r, s, height);
        let dst = &mut out[r * tw..(r + 1) * tw];
        for &(i, w) in &taps {
            for (d, &h) in dst.iter_mut().zip(&horiz[i * tw..(i + 1) * tw]) {
                *d += w * h;
            }
        }
        for d in dst.iter_mut() {
            *d = d.max(0.0);
        }
    }
    Ok(out)
}

pub fn upscale(plane: &[f64], height: usize, width: usize, spec: &UpscaleSpec) -> Result<Vec<f64>> {
    match spec.mode {
        UpscaleMode::SumPreservingDeconv => upscale_deconv(plane, height, width, spec),
        UpscaleMode::Bicubic => upscale_bicubic(plane, height, width, spec),
    }
}

/// Which block directions contribute to a heat map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerFilter(BTreeSet<Direction>);

impl LayerFilter {
    pub fn all() -> Self {
        LayerFilter([Direction::Down, Direction::Mid, Direction::Up].into_iter().collect())
    }

    pub fn only(dirs: impl IntoIterator<Item = Direction>) -> Self {
        LayerFilter(dirs.into_iter().collect())
    }

    pub fn accepts(&self, layer: &LayerDescriptor) -> bool {
        self.0.contains(&layer.direction)
    }

    pub fn select<'a>(&self, manifest: &'a DumpManifest) -> Vec<&'a LayerDescriptor> {
        manifest.layers.iter().filter(|l| self.accepts(l)).collect()
    }
}

impl Default for LayerFilter {
    fn default() -> Self {
        LayerFilter::all()
    }
}

impl FromStr for LayerFilter {
    type Err = DaamError;

    /// Comma-separated list of `down`, `mid`, `up`, or `all`.
    fn from_str(s: &str) -> Result<Self> {
        let mut set = BTreeSet::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part.to_ascii_lowercase().as_str() {
                "all" => set.extend([Direction::Down, Direction::Mid, Direction::Up]),
                "down" => {
                    set.insert(Direction::Down);
                }
                "mid" => {
                    set.insert(Direction::Mid);
                }
                "up" => {
                    set.insert(Direction::Up);
                }
                other => return Err(DaamError::Usage(format!("unknown layer group {other:?}"))),
            }
        }
        if set.is_empty() {
            return Err(DaamError::Usage("empty layer filter".into()));
        }
        Ok(LayerFilter(set))
    }
}

impl fmt::Display for LayerFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<_> = self.0.iter().map(|d| d.as_str()).collect();
        f.write_str(&names.join(","))
    }
}

#[derive(Debug, Clone, Default)]
pub struct AttributionConfig {
    pub mode: UpscaleMode,
    pub layers: LayerFilter,
    pub execution: Execution,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subject {
    Token(usize),
    Word(usize),
}

/// Soft attribution map at image resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatMap {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
    pub subject: Subject,
}

impl HeatMap {
    pub fn zeros(height: usize, width: usize, subject: Subject) -> Self {
        HeatMap {
            height,
            width,
            data: vec![0.0; height * width],
            subject,
        }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(0.0, f64::max)
    }

    /// Row-major position of the first maximum.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, &v) in self.data.iter().enumerate() {
            if v > self.data[best] {
                best = i;
            }
        }
        (best / self.width, best % self.width)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Single-channel `.attn` export (token axis of length 1, f32 values).
    pub fn write_attn(&self, path: &Path) -> Result<()> {
        let data: Vec<f32> = self.data.iter().map(|&v| v as f32).collect();
        let bytes = encode_attn(self.height, self.width, 1, &data)?;
        std::fs::write(path, bytes).map_err(|e| DaamError::io(path, e))
    }

    pub fn read_attn(path: &Path, subject: Subject) -> Result<Self> {
        let (h, w, l, data) = read_attn_file(path)?;
        if l != 1 {
            return Err(DaamError::ShapeMismatch(format!(
                "heat map file {} has {l} channels",
                path.display()
            )));
        }
        Ok(HeatMap {
            height: h,
            width: w,
            data: data.into_iter().map(f64::from).collect(),
            subject,
        })
    }

    /// 16-bit grayscale PNG of the display-normalized map.
    pub fn write_png16(&self, path: &Path) -> Result<()> {
        let norm = normalize_for_display(self);
        let pixels: Vec<u16> = norm.iter().map(|v| (v * 65535.0).round() as u16).collect();
        let img: ImageBuffer<Luma<u16>, Vec<u16>> =
            ImageBuffer::from_raw(self.width as u32, self.height as u32, pixels).expect("buffer matches dimensions");
        crate::render::save_png_gray16(&img, path)
    }
}

/// Binary map: pixels whose attribution reaches `tau` times the maximum.
#[derive(Debug, Clone, PartialEq)]
pub struct HardMask {
    pub mask: Mask,
    pub tau: f64,
    pub source_max: f64,
}

impl HardMask {
    pub fn coverage(&self) -> f64 {
        self.mask.coverage()
    }
}

/// Pixel is set iff `D ≥ τ·max(D)`. A map with maximum 0 yields an empty
/// mask.
///
/// # Panics
/// If `tau` is outside `[0, 1]`.
pub fn threshold(map: &HeatMap, tau: f64) -> HardMask {
    assert!((0.0..=1.0).contains(&tau), "tau {tau} outside [0, 1]");
    let max = map.max();
    let data = if max > 0.0 {
        let cut = tau * max;
        map.data.iter().map(|&v| v >= cut).collect()
    } else {
        vec![false; map.data.len()]
    };
    HardMask {
        mask: Mask {
            height: map.height,
            width: map.width,
            data,
        },
        tau,
        source_max: max,
    }
}

/// `D / max(D)`; all zeros stay zeros.
pub fn normalize_for_display(map: &HeatMap) -> Vec<f64> {
    let max = map.max();
    if max > 0.0 {
        map.data.iter().map(|v| v / max).collect()
    } else {
        vec![0.0; map.data.len()]
    }
}

/// Heat maps for several tokens, reading every slice once.
///
/// In deconv mode the scores are first summed over timesteps at slice
/// resolution and upscaled once per layer (the upscaling is linear). In
/// bicubic mode each slice is upscaled separately because of the zero
/// clamp. Accumulation runs in canonical order for every token, so the
/// result does not depend on [`Execution`].
pub fn token_heat_maps<S: SliceSource>(
    source: &S,
    tokens: &[usize],
    config: &AttributionConfig,
) -> Result<Vec<HeatMap>> {
    let manifest = source.manifest();
    for &t in tokens {
        if t >= manifest.context_length {
            return Err(DaamError::UnknownToken {
                index: t,
                len: manifest.context_length,
            });
        }
    }
    let layers = config.layers.select(manifest);
    if layers.is_empty() {
        return Err(DaamError::EmptySelection);
    }
    let (th, tw) = (manifest.image_height, manifest.image_width);
    let ratio = manifest.pixel_ratio();
    let exec = config.execution;
    let timesteps = manifest.timesteps_ascending();

    let mut maps: Vec<HeatMap> = tokens
        .iter()
        .map(|&t| HeatMap::zeros(th, tw, Subject::Token(t)))
        .collect();

    for layer in layers {
        let spec = UpscaleSpec {
            mode: config.mode,
            scale_factor: layer.scale_factor * ratio,
            target_height: th,
            target_width: tw,
        };
        let (lh, lw) = (layer.slice_height, layer.slice_width);
        spec.check(lh, lw)?;
        match config.mode {
            UpscaleMode::SumPreservingDeconv => {
                let mut acc = vec![vec![0.0f64; lh * lw]; tokens.len()];
                for &t in &timesteps {
                    let slice = source.load_slice(layer, t)?;
                    exec.for_each_mut(&mut acc, |i, a| slice.accumulate_token_plane(tokens[i], a));
                }
                let up = exec.map(&acc, |a| upscale_deconv(a, lh, lw, &spec));
                for (map, up) in maps.iter_mut().zip(up) {
                    add_into(&mut map.data, &up?);
                }
            }
            UpscaleMode::Bicubic => {
                for &t in &timesteps {
                    let slice = source.load_slice(layer, t)?;
                    let up = exec.map(tokens, |&k| upscale_bicubic(&slice.token_plane(k), lh, lw, &spec));
                    for (map, up) in maps.iter_mut().zip(up) {
                        add_into(&mut map.data, &up?);
                    }
                }
            }
        }
    }
    Ok(maps)
}

fn add_into(acc: &mut [f64], x: &[f64]) {
    for (a, v) in acc.iter_mut().zip(x) {
        *a += v;
    }
}

pub fn token_heat_map<S: SliceSource>(source: &S, token: usize, config: &AttributionConfig) -> Result<HeatMap> {
    Ok(token_heat_maps(source, &[token], config)?.remove(0))
}

/// Word maps as the sum of their tokens' maps, tokens in ascending order.
pub fn word_heat_maps<S: SliceSource>(
    source: &S,
    word_indices: &[usize],
    config: &AttributionConfig,
) -> Result<Vec<HeatMap>> {
    let words = source.manifest().words();
    let mut selected = Vec::with_capacity(word_indices.len());
    for &w in word_indices {
        let info = words
            .iter()
            .find(|x| x.word_index == w)
            .ok_or_else(|| DaamError::UnknownWord(format!("word index {w}")))?;
        selected.push(info);
    }
    let tokens: BTreeSet<usize> = selected.iter().flat_map(|w| w.token_indices.iter().copied()).collect();
    let tokens: Vec<usize> = tokens.into_iter().collect();
    let token_maps = token_heat_maps(source, &tokens, config)?;

    let manifest = source.manifest();
    Ok(selected
        .iter()
        .map(|info| {
            let mut map = HeatMap::zeros(
                manifest.image_height,
                manifest.image_width,
                Subject::Word(info.word_index),
            );
            for t in &info.token_indices {
                let pos = tokens.binary_search(t).expect("token collected above");
                add_into(&mut map.data, &token_maps[pos].data);
            }
            map
        })
        .collect())
}

pub fn word_heat_map<S: SliceSource>(source: &S, word_index: usize, config: &AttributionConfig) -> Result<HeatMap> {
    Ok(word_heat_maps(source, &[word_index], config)?.remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn spec(s: usize, th: usize, tw: usize) -> UpscaleSpec {
        UpscaleSpec {
            mode: UpscaleMode::SumPreservingDeconv,
            scale_factor: s,
            target_height: th,
            target_width: tw,
        }
    }

    fn bicubic(s: usize, th: usize, tw: usize) -> UpscaleSpec {
        UpscaleSpec {
            mode: UpscaleMode::Bicubic,
            ..spec(s, th, tw)
        }
    }

    #[test]
    fn deconv_single_cell() {
        let out = upscale_deconv(&[0.8], 1, 1, &spec(2, 2, 2)).unwrap();
        assert_eq!(out, vec![0.2; 4]);
    }

    #[test]
    fn deconv_identity_blocks() {
        let out = upscale_deconv(&[1.0, 0.0, 0.0, 1.0], 2, 2, &spec(2, 4, 4)).unwrap();
        #[rustfmt::skip]
        let expected = [
            0.25, 0.25, 0.0, 0.0,
            0.25, 0.25, 0.0, 0.0,
            0.0, 0.0, 0.25, 0.25,
            0.0, 0.0, 0.25, 0.25,
        ];
        assert_eq!(out, expected);
    }

    #[test]
    fn deconv_crops_bottom_right() {
        // 3 cells at stride 4 cover 12 pixels, cropped to 10
        let plane: Vec<f64> = (0..9).map(|i| i as f64).collect();
        let out = upscale_deconv(&plane, 3, 3, &spec(4, 10, 10)).unwrap();
        assert_eq!(out.len(), 100);
        assert_eq!(out[9 * 10 + 9], 8.0 / 16.0);
        assert_eq!(out[0], 0.0);
    }

    #[test]
    fn overflow_and_bad_specs() {
        assert!(matches!(
            upscale_deconv(&[1.0], 1, 1, &spec(2, 3, 3)),
            Err(DaamError::ShapeOverflow { .. })
        ));
        assert!(matches!(
            upscale_deconv(&[1.0; 4], 2, 2, &spec(4, 4, 4)),
            Err(DaamError::ShapeOverflow { .. })
        ));
        assert!(matches!(
            upscale_deconv(&[1.0], 1, 1, &spec(0, 1, 1)),
            Err(DaamError::InvalidSpec(_))
        ));
        assert!(matches!(
            upscale_deconv(&[1.0; 3], 2, 2, &spec(1, 2, 2)),
            Err(DaamError::DimMismatch(_))
        ));
    }

    #[test]
    fn cubic_kernel_shape() {
        assert_eq!(cubic_kernel(0.0), 1.0);
        assert_eq!(cubic_kernel(1.0), 0.0);
        assert_eq!(cubic_kernel(2.0), 0.0);
        assert_abs_diff_eq!(cubic_kernel(0.5), 0.5625, epsilon = 1e-15);
        assert_abs_diff_eq!(cubic_kernel(1.5), -0.0625, epsilon = 1e-15);
    }

    #[test]
    fn bicubic_reproduces_constants() {
        for s in [1, 2, 3, 4, 8] {
            let out = upscale_bicubic(&[0.4; 9], 3, 3, &bicubic(s, 3 * s, 3 * s)).unwrap();
            for v in out {
                assert_abs_diff_eq!(v, 0.4, epsilon = 1e-12);
            }
        }
        let out = upscale_bicubic(&[1.0], 1, 1, &bicubic(4, 4, 4)).unwrap();
        assert_eq!(out.len(), 16);
        for v in out {
            assert_abs_diff_eq!(v, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn bicubic_clamps_ringing() {
        let plane = [0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0];
        let out = upscale_bicubic(&plane, 3, 3, &bicubic(4, 12, 12)).unwrap();
        assert!(out.iter().all(|&v| v >= 0.0));
        assert!(out.contains(&0.0));
    }

    #[test]
    fn mode_and_filter_parsing() {
        assert_eq!(
            "deconv".parse::<UpscaleMode>().unwrap(),
            UpscaleMode::SumPreservingDeconv
        );
        assert_eq!("bicubic".parse::<UpscaleMode>().unwrap(), UpscaleMode::Bicubic);
        assert!("nearest".parse::<UpscaleMode>().is_err());
        assert_eq!("all".parse::<LayerFilter>().unwrap(), LayerFilter::all());
        assert_eq!(
            "down,up".parse::<LayerFilter>().unwrap(),
            LayerFilter::only([Direction::Down, Direction::Up])
        );
        assert!("sideways".parse::<LayerFilter>().is_err());
        assert!("".parse::<LayerFilter>().is_err());
    }

    fn map(data: Vec<f64>, h: usize, w: usize) -> HeatMap {
        HeatMap {
            height: h,
            width: w,
            data,
            subject: Subject::Token(0),
        }
    }

    #[test]
    fn threshold_examples() {
        let d = map(vec![0.2, 1.0, 0.5, 0.39], 2, 2);
        let m = threshold(&d, 0.4);
        assert_eq!(m.mask.data, vec![false, true, true, false]);
        assert_eq!(m.source_max, 1.0);

        assert!(threshold(&d, 0.0).mask.data.iter().all(|&b| b));
        let z = map(vec![0.0; 4], 2, 2);
        for tau in [0.0, 0.4, 1.0] {
            assert!(threshold(&z, tau).mask.is_empty());
        }
    }

    #[test]
    #[should_panic]
    fn threshold_rejects_bad_tau() {
        threshold(&map(vec![1.0], 1, 1), 1.5);
    }

    #[test]
    fn display_normalization() {
        let d = map(vec![0.5, 2.0, 1.0, 0.0], 2, 2);
        let n = normalize_for_display(&d);
        assert_eq!(n, vec![0.25, 1.0, 0.5, 0.0]);
        let scaled = map(d.data.iter().map(|v| v * 3.0).collect(), 2, 2);
        assert_eq!(normalize_for_display(&scaled), n);
        assert_eq!(normalize_for_display(&map(vec![0.0; 4], 2, 2)), vec![0.0; 4]);
    }

    #[test]
    fn heat_map_attn_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let d = map(vec![0.5, 2.0, 1.0, 0.0, 3.25, 7.0], 2, 3);
        let p = dir.path().join("m.heat.attn");
        d.write_attn(&p).unwrap();
        assert_eq!(HeatMap::read_attn(&p, Subject::Token(0)).unwrap(), d);
    }

    fn plane_strategy() -> impl Strategy<Value = (usize, usize, Vec<f64>)> {
        (1usize..6, 1usize..6).prop_flat_map(|(h, w)| (Just(h), Just(w), prop::collection::vec(0.0f64..1.0, h * w)))
    }

    proptest! {
        #[test]
        fn deconv_is_linear((h, w, f) in plane_strategy(), seed in any::<u64>(), alpha in -2.0f64..2.0, beta in -2.0f64..2.0, s in 1usize..5) {
            let g: Vec<f64> = f.iter().enumerate().map(|(i, v)| ((seed >> (i % 60)) & 7) as f64 * 0.1 + v * 0.5).collect();
            let sp = spec(s, h * s, w * s);
            let combo: Vec<f64> = f.iter().zip(&g).map(|(a, b)| alpha * a + beta * b).collect();
            let lhs = upscale_deconv(&combo, h, w, &sp).unwrap();
            let uf = upscale_deconv(&f, h, w, &sp).unwrap();
            let ug = upscale_deconv(&g, h, w, &sp).unwrap();
            for i in 0..lhs.len() {
                prop_assert!((lhs[i] - (alpha * uf[i] + beta * ug[i])).abs() < 1e-9);
            }
        }

        #[test]
        fn threshold_nests_and_ignores_scale((h, w, d) in plane_strategy(), t1 in 0.0f64..1.0, t2 in 0.0f64..1.0, c in 0.01f64..100.0) {
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            let m = map(d.clone(), h, w);
            prop_assert!(threshold(&m, hi).mask.is_subset_of(&threshold(&m, lo).mask));
            // powers of two keep the comparison exact
            let k = 2f64.powi((c.log2().round()) as i32);
            let scaled = map(d.iter().map(|v| v * k).collect(), h, w);
            prop_assert_eq!(threshold(&scaled, lo).mask, threshold(&m, lo).mask);
        }
    }
}
