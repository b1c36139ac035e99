//! Attention dump directories: `manifest.json` plus one `.attn` file per
//! (layer, timestep).
//!
//! `.attn` layout, all integers little-endian:
//!
//! | offset | size | field                              |
//! |--------|------|------------------------------------|
//! | 0      | 8    | magic `DAAMATTN`                   |
//! | 8      | 1    | version, currently 1               |
//! | 9      | 3    | reserved, zero                     |
//! | 12     | 4    | height (u32)                       |
//! | 16     | 4    | width (u32)                        |
//! | 20     | 4    | tokens (u32)                       |
//! | 24     | 4·n  | row-major f32 data, token fastest  |
//!
//! Slice files are named `<layer_id>_<timestep>.attn`.

use std::borrow::Cow;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{DaamError, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const FORMAT_VERSION: u32 = 1;
pub const ATTN_MAGIC: &[u8; 8] = b"DAAMATTN";
pub const ATTN_VERSION: u8 = 1;
pub const ATTN_HEADER_LEN: usize = 24;
/// Tolerance on the per-cell token sum of a captured softmax.
pub const ROW_SUM_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Down,
    Mid,
    Up,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Down => "down",
            Direction::Mid => "mid",
            Direction::Up => "up",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerDescriptor {
    pub layer_id: String,
    pub direction: Direction,
    /// Downsampling factor of this block relative to the latent grid.
    pub scale_factor: usize,
    pub slice_height: usize,
    pub slice_width: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenRecord {
    pub text: String,
    pub token_index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub word_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pos_tag: Option<String>,
    #[serde(default)]
    pub is_special: bool,
}

impl TokenRecord {
    /// Token text without the tokenizer's end-of-word marker.
    pub fn clean_text(&self) -> &str {
        self.text.strip_suffix("</w>").unwrap_or(&self.text)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DumpManifest {
    pub format_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_id: Option<String>,
    pub prompt: String,
    pub context_length: usize,
    pub image_height: usize,
    pub image_width: usize,
    pub latent_height: usize,
    pub latent_width: usize,
    pub heads_averaged: bool,
    pub timesteps: Vec<i64>,
    pub layers: Vec<LayerDescriptor>,
    pub tokens: Vec<TokenRecord>,
    /// Free-form capture metadata (sampler, guidance, attention pass).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capture: Option<serde_json::Value>,
}

/// A word of the prompt and the tokens it was split into.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordInfo {
    pub word_index: usize,
    pub text: String,
    pub pos_tag: Option<String>,
    pub token_indices: Vec<usize>,
}

fn ceil_relation_holds(slice: usize, scale: usize, latent: usize) -> bool {
    slice * scale >= latent && (slice - 1) * scale < latent
}

impl DumpManifest {
    pub fn validate(&self) -> Result<()> {
        let inv = |msg: String| Err(DaamError::InvariantViolation(msg));
        if self.format_version != FORMAT_VERSION {
            return Err(DaamError::SchemaViolation(format!(
                "format_version: unsupported version {} (expected {FORMAT_VERSION})",
                self.format_version
            )));
        }
        if !self.heads_averaged {
            return inv("heads_averaged must be true for version 1 dumps".into());
        }
        for (name, v) in [
            ("context_length", self.context_length),
            ("image_height", self.image_height),
            ("image_width", self.image_width),
            ("latent_height", self.latent_height),
            ("latent_width", self.latent_width),
        ] {
            if v == 0 {
                return inv(format!("{name} must be positive"));
            }
        }
        if !self.image_height.is_multiple_of(self.latent_height)
            || !self.image_width.is_multiple_of(self.latent_width)
            || self.image_height / self.latent_height != self.image_width / self.latent_width
        {
            return inv(format!(
                "image {}x{} is not an integral, isotropic multiple of latent {}x{}",
                self.image_height, self.image_width, self.latent_height, self.latent_width
            ));
        }

        let mut ids = HashSet::new();
        for layer in &self.layers {
            if layer.layer_id.is_empty()
                || layer
                    .layer_id
                    .chars()
                    .any(|c| c == '/' || c == '\\' || c.is_whitespace())
            {
                return inv(format!("layer_id {:?} is not a valid file stem", layer.layer_id));
            }
            if !ids.insert(layer.layer_id.as_str()) {
                return inv(format!("duplicate layer_id {}", layer.layer_id));
            }
            if layer.scale_factor == 0 || layer.slice_height == 0 || layer.slice_width == 0 {
                return inv(format!("layer {}: zero scale or slice dimension", layer.layer_id));
            }
            if !ceil_relation_holds(layer.slice_height, layer.scale_factor, self.latent_height)
                || !ceil_relation_holds(layer.slice_width, layer.scale_factor, self.latent_width)
            {
                return inv(format!(
                    "layer {}: slice {}x{} at scale {} does not tile latent {}x{}",
                    layer.layer_id,
                    layer.slice_height,
                    layer.slice_width,
                    layer.scale_factor,
                    self.latent_height,
                    self.latent_width
                ));
            }
        }

        let increasing = self.timesteps.windows(2).all(|w| w[0] < w[1]);
        let decreasing = self.timesteps.windows(2).all(|w| w[0] > w[1]);
        if !(increasing || decreasing) {
            return inv("timesteps must be strictly ordered without duplicates".into());
        }

        let mut last_token: Option<usize> = None;
        let mut last_word: Option<usize> = None;
        for tok in &self.tokens {
            if tok.token_index >= self.context_length {
                return inv(format!(
                    "token_index {} exceeds context_length {}",
                    tok.token_index, self.context_length
                ));
            }
            if last_token.is_some_and(|t| tok.token_index <= t) {
                return inv("token_index values must be strictly increasing".into());
            }
            last_token = Some(tok.token_index);
            match (tok.is_special, tok.word_index) {
                (false, None) => {
                    return inv(format!(
                        "non-special token {} ({:?}) has no word_index",
                        tok.token_index, tok.text
                    ))
                }
                (true, Some(_)) => {
                    return inv(format!("special token {} must not carry a word_index", tok.token_index))
                }
                (false, Some(w)) => {
                    if last_word.is_some_and(|lw| w < lw) {
                        return inv("word_index values must be non-decreasing".into());
                    }
                    last_word = Some(w);
                }
                (true, None) => {}
            }
        }
        Ok(())
    }

    /// Ratio between output image pixels and latent cells.
    pub fn pixel_ratio(&self) -> usize {
        self.image_height / self.latent_height
    }

    pub fn layer(&self, layer_id: &str) -> Option<&LayerDescriptor> {
        self.layers.iter().find(|l| l.layer_id == layer_id)
    }

    /// Timesteps in ascending numeric order.
    pub fn timesteps_ascending(&self) -> Vec<i64> {
        let mut ts = self.timesteps.clone();
        ts.sort_unstable();
        ts
    }

    /// Prompt words in word-index order, with their tokens merged.
    pub fn words(&self) -> Vec<WordInfo> {
        let mut by_word: BTreeMap<usize, WordInfo> = BTreeMap::new();
        for tok in &self.tokens {
            let Some(w) = tok.word_index else { continue };
            let entry = by_word.entry(w).or_insert_with(|| WordInfo {
                word_index: w,
                text: String::new(),
                pos_tag: tok.pos_tag.clone(),
                token_indices: Vec::new(),
            });
            entry.text.push_str(tok.clean_text());
            entry.token_indices.push(tok.token_index);
            if entry.pos_tag.is_none() {
                entry.pos_tag = tok.pos_tag.clone();
            }
        }
        by_word.into_values().collect()
    }

    pub fn word(&self, word_index: usize) -> Option<WordInfo> {
        self.words().into_iter().find(|w| w.word_index == word_index)
    }

    /// Identifier used to match the dump against ground-truth annotations.
    pub fn image_id_or(&self, fallback: &str) -> String {
        self.image_id.clone().unwrap_or_else(|| fallback.to_string())
    }
}

/// Reads and validates `manifest.json` from a dump directory.
pub fn read_manifest(dir: &Path) -> Result<DumpManifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = match fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(DaamError::MissingManifest(dir.to_path_buf()))
        }
        Err(e) => return Err(DaamError::io(&path, e)),
    };
    let manifest: DumpManifest = serde_json::from_str(&text).map_err(|e| DaamError::SchemaViolation(e.to_string()))?;
    manifest.validate()?;
    Ok(manifest)
}

pub fn write_manifest(dir: &Path, manifest: &DumpManifest) -> Result<()> {
    let mut text = serde_json::to_string_pretty(manifest)?;
    text.push('\n');
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, text).map_err(|e| DaamError::io(path, e))
}

/// One captured attention score array for a (layer, timestep), already
/// averaged over heads. Indexing is `[(row * width + col) * tokens + token]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionSlice {
    pub layer_id: String,
    pub timestep: i64,
    pub height: usize,
    pub width: usize,
    pub tokens: usize,
    pub data: Vec<f32>,
}

impl AttentionSlice {
    pub fn new(
        layer_id: impl Into<String>,
        timestep: i64,
        height: usize,
        width: usize,
        tokens: usize,
        data: Vec<f32>,
    ) -> Result<Self> {
        if data.len() != height * width * tokens {
            return Err(DaamError::ShapeMismatch(format!(
                "{} values for a {height}x{width}x{tokens} slice",
                data.len()
            )));
        }
        Ok(AttentionSlice {
            layer_id: layer_id.into(),
            timestep,
            height,
            width,
            tokens,
            data,
        })
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, token: usize) -> f32 {
        self.data[(row * self.width + col) * self.tokens + token]
    }

    /// The `height × width` plane of scores for one token, widened to f64.
    pub fn token_plane(&self, token: usize) -> Vec<f64> {
        self.data
            .iter()
            .skip(token)
            .step_by(self.tokens)
            .map(|&v| v as f64)
            .collect()
    }

    /// Adds this slice's plane for `token` into `acc` (length `height·width`).
    pub fn accumulate_token_plane(&self, token: usize, acc: &mut [f64]) {
        debug_assert_eq!(acc.len(), self.height * self.width);
        for (a, &v) in acc.iter_mut().zip(self.data.iter().skip(token).step_by(self.tokens)) {
            *a += v as f64;
        }
    }

    /// Checks the softmax invariants: every score in [0, 1], every cell's
    /// scores summing to 1 within [`ROW_SUM_TOLERANCE`].
    pub fn validate(&self) -> Result<()> {
        for (cell, scores) in self.data.chunks_exact(self.tokens.max(1)).enumerate() {
            let (row, col) = (cell / self.width, cell % self.width);
            let mut sum = 0.0f64;
            for (token, &v) in scores.iter().enumerate() {
                if !(0.0..=1.0).contains(&v) {
                    return Err(DaamError::ValueRangeViolation {
                        row,
                        col,
                        token,
                        value: v,
                    });
                }
                sum += v as f64;
            }
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(DaamError::RowSumViolation {
                    row,
                    col,
                    sum,
                    tolerance: ROW_SUM_TOLERANCE,
                });
            }
        }
        Ok(())
    }
}

/// Encodes an array in the `.attn` format.
pub fn encode_attn(height: usize, width: usize, tokens: usize, data: &[f32]) -> Result<Vec<u8>> {
    if data.len() != height * width * tokens {
        return Err(DaamError::ShapeMismatch(format!(
            "{} values for a {height}x{width}x{tokens} array",
            data.len()
        )));
    }
    let dims: Vec<u32> = [height, width, tokens]
        .iter()
        .map(|&d| u32::try_from(d))
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| DaamError::ShapeMismatch("dimension exceeds u32".into()))?;
    let mut buf = Vec::with_capacity(ATTN_HEADER_LEN + 4 * data.len());
    buf.extend_from_slice(ATTN_MAGIC);
    buf.push(ATTN_VERSION);
    buf.extend_from_slice(&[0, 0, 0]);
    for d in dims {
        buf.extend_from_slice(&d.to_le_bytes());
    }
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    Ok(buf)
}

/// Decodes `.attn` bytes into `(height, width, tokens, data)`.
pub fn decode_attn(path: &Path, bytes: &[u8]) -> Result<(usize, usize, usize, Vec<f32>)> {
    let bad = |reason: &str| DaamError::BadHeader {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    if bytes.len() < ATTN_HEADER_LEN {
        return Err(DaamError::ShapeMismatch(format!(
            "{}: {} bytes is shorter than the header",
            path.display(),
            bytes.len()
        )));
    }
    if &bytes[..8] != ATTN_MAGIC {
        return Err(bad("wrong magic"));
    }
    if bytes[8] != ATTN_VERSION {
        return Err(bad(&format!("unsupported version {}", bytes[8])));
    }
    if bytes[9..12] != [0, 0, 0] {
        return Err(bad("reserved bytes are not zero"));
    }
    let dim = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
    let (h, w, l) = (dim(12), dim(16), dim(20));
    let expected = h
        .checked_mul(w)
        .and_then(|n| n.checked_mul(l))
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(ATTN_HEADER_LEN));
    if expected != Some(bytes.len()) {
        return Err(DaamError::ShapeMismatch(format!(
            "{}: {} bytes on disk for a {h}x{w}x{l} array",
            path.display(),
            bytes.len()
        )));
    }
    let data = bytes[ATTN_HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok((h, w, l, data))
}

pub fn read_attn_file(path: &Path) -> Result<(usize, usize, usize, Vec<f32>)> {
    let bytes = fs::read(path).map_err(|e| DaamError::io(path, e))?;
    decode_attn(path, &bytes)
}

/// Writes a slice to `path` in the `.attn` format.
pub fn write_slice(slice: &AttentionSlice, path: &Path) -> Result<()> {
    if slice.data.iter().any(|v| !v.is_finite()) {
        return Err(DaamError::NonFinite(format!(
            "slice {}@{}",
            slice.layer_id, slice.timestep
        )));
    }
    let bytes = encode_attn(slice.height, slice.width, slice.tokens, &slice.data)?;
    fs::write(path, bytes).map_err(|e| DaamError::io(path, e))
}

pub fn slice_file_name(layer_id: &str, timestep: i64) -> String {
    format!("{layer_id}_{timestep}.attn")
}

/// Anything that can hand out the slices described by a manifest.
pub trait SliceSource: Sync {
    fn manifest(&self) -> &DumpManifest;

    fn load_slice(&self, layer: &LayerDescriptor, timestep: i64) -> Result<Cow<'_, AttentionSlice>>;

    fn read_slice(&self, layer_id: &str, timestep: i64) -> Result<Cow<'_, AttentionSlice>> {
        let manifest = self.manifest();
        let missing = |reason: &str| DaamError::MissingSlice {
            layer_id: layer_id.to_string(),
            timestep,
            reason: reason.to_string(),
        };
        let layer = manifest
            .layer(layer_id)
            .ok_or_else(|| missing("layer not listed in manifest"))?;
        if !manifest.timesteps.contains(&timestep) {
            return Err(missing("timestep not listed in manifest"));
        }
        self.load_slice(layer, timestep)
    }

    /// All slices in canonical order: layers in manifest order, timesteps
    /// ascending within each layer.
    fn iter_slices(&self) -> SliceIter<'_, Self>
    where
        Self: Sized,
    {
        SliceIter::new(self, self.manifest().layers.iter().collect())
    }
}

/// Canonical-order iterator over a [`SliceSource`].
pub struct SliceIter<'a, S: SliceSource> {
    source: &'a S,
    layers: Vec<&'a LayerDescriptor>,
    timesteps: Vec<i64>,
    layer_pos: usize,
    step_pos: usize,
}

impl<'a, S: SliceSource> SliceIter<'a, S> {
    pub fn new(source: &'a S, layers: Vec<&'a LayerDescriptor>) -> Self {
        SliceIter {
            timesteps: source.manifest().timesteps_ascending(),
            source,
            layers,
            layer_pos: 0,
            step_pos: 0,
        }
    }
}

impl<'a, S: SliceSource> Iterator for SliceIter<'a, S> {
    type Item = Result<(&'a LayerDescriptor, i64, Cow<'a, AttentionSlice>)>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.timesteps.is_empty() {
            return None;
        }
        let layer = *self.layers.get(self.layer_pos)?;
        let t = self.timesteps[self.step_pos];
        self.step_pos += 1;
        if self.step_pos == self.timesteps.len() {
            self.step_pos = 0;
            self.layer_pos += 1;
        }
        Some(self.source.load_slice(layer, t).map(|s| (layer, t, s)))
    }
}

fn check_slice_shape(manifest: &DumpManifest, layer: &LayerDescriptor, slice: &AttentionSlice) -> Result<()> {
    if slice.height != layer.slice_height || slice.width != layer.slice_width || slice.tokens != manifest.context_length
    {
        return Err(DaamError::ShapeMismatch(format!(
            "slice {}@{} is {}x{}x{}, manifest declares {}x{}x{}",
            layer.layer_id,
            slice.timestep,
            slice.height,
            slice.width,
            slice.tokens,
            layer.slice_height,
            layer.slice_width,
            manifest.context_length
        )));
    }
    Ok(())
}

/// A dump directory on disk. Slices are read lazily.
#[derive(Debug, Clone)]
pub struct Dump {
    root: PathBuf,
    manifest: DumpManifest,
    validate: bool,
}

impl Dump {
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let manifest = read_manifest(&root)?;
        Ok(Dump {
            root,
            manifest,
            validate: true,
        })
    }

    /// Enables or disables value-range and row-sum checks on every read.
    pub fn with_validation(mut self, validate: bool) -> Self {
        self.validate = validate;
        self
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn slice_path(&self, layer_id: &str, timestep: i64) -> PathBuf {
        self.root.join(slice_file_name(layer_id, timestep))
    }

    /// Image identifier: the manifest's `image_id`, else the directory name.
    pub fn image_id(&self) -> String {
        let fallback = self
            .root
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        self.manifest.image_id_or(&fallback)
    }

    /// Runs full validation over every slice listed in the manifest.
    pub fn validate_all(&self) -> Result<usize> {
        let mut n = 0;
        for item in self.iter_slices() {
            let (_, _, slice) = item?;
            slice.validate()?;
            n += 1;
        }
        Ok(n)
    }
}

impl SliceSource for Dump {
    fn manifest(&self) -> &DumpManifest {
        &self.manifest
    }

    fn load_slice(&self, layer: &LayerDescriptor, timestep: i64) -> Result<Cow<'_, AttentionSlice>> {
        let path = self.slice_path(&layer.layer_id, timestep);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(DaamError::MissingSlice {
                    layer_id: layer.layer_id.clone(),
                    timestep,
                    reason: format!("{} not found", path.display()),
                })
            }
            Err(e) => return Err(DaamError::io(path, e)),
        };
        let (h, w, l, data) = decode_attn(&path, &bytes)?;
        let slice = AttentionSlice::new(layer.layer_id.clone(), timestep, h, w, l, data)?;
        check_slice_shape(&self.manifest, layer, &slice)?;
        if self.validate {
            slice.validate()?;
        }
        Ok(Cow::Owned(slice))
    }
}

/// An in-memory dump, used to build fixtures and in tests.
#[derive(Debug, Clone)]
pub struct MemoryDump {
    manifest: DumpManifest,
    slices: HashMap<(String, i64), AttentionSlice>,
}

impl MemoryDump {
    pub fn new(manifest: DumpManifest) -> Result<Self> {
        manifest.validate()?;
        Ok(MemoryDump {
            manifest,
            slices: HashMap::new(),
        })
    }

    pub fn insert(&mut self, slice: AttentionSlice) -> Result<()> {
        let layer = self
            .manifest
            .layer(&slice.layer_id)
            .ok_or_else(|| DaamError::MissingSlice {
                layer_id: slice.layer_id.clone(),
                timestep: slice.timestep,
                reason: "layer not listed in manifest".into(),
            })?;
        if !self.manifest.timesteps.contains(&slice.timestep) {
            return Err(DaamError::MissingSlice {
                layer_id: slice.layer_id.clone(),
                timestep: slice.timestep,
                reason: "timestep not listed in manifest".into(),
            });
        }
        check_slice_shape(&self.manifest, layer, &slice)?;
        self.slices.insert((slice.layer_id.clone(), slice.timestep), slice);
        Ok(())
    }

    /// Writes `manifest.json` and every slice into `dir`, creating it.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| DaamError::io(dir, e))?;
        write_manifest(dir, &self.manifest)?;
        for item in self.iter_slices() {
            let (layer, t, slice) = item?;
            write_slice(&slice, &dir.join(slice_file_name(&layer.layer_id, t)))?;
        }
        Ok(())
    }
}

impl SliceSource for MemoryDump {
    fn manifest(&self) -> &DumpManifest {
        &self.manifest
    }

    fn load_slice(&self, layer: &LayerDescriptor, timestep: i64) -> Result<Cow<'_, AttentionSlice>> {
        self.slices
            .get(&(layer.layer_id.clone(), timestep))
            .map(Cow::Borrowed)
            .ok_or_else(|| DaamError::MissingSlice {
                layer_id: layer.layer_id.clone(),
                timestep,
                reason: "not loaded".into(),
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest(layers: Vec<LayerDescriptor>, timesteps: Vec<i64>, l: usize) -> DumpManifest {
        DumpManifest {
            format_version: 1,
            image_id: None,
            prompt: "a teapot".into(),
            context_length: l,
            image_height: 64,
            image_width: 64,
            latent_height: 64,
            latent_width: 64,
            heads_averaged: true,
            timesteps,
            layers,
            tokens: vec![
                TokenRecord {
                    text: "<|startoftext|>".into(),
                    token_index: 0,
                    word_index: None,
                    pos_tag: None,
                    is_special: true,
                },
                TokenRecord {
                    text: "a</w>".into(),
                    token_index: 1,
                    word_index: Some(0),
                    pos_tag: Some("DET".into()),
                    is_special: false,
                },
                TokenRecord {
                    text: "tea".into(),
                    token_index: 2,
                    word_index: Some(1),
                    pos_tag: Some("NOUN".into()),
                    is_special: false,
                },
                TokenRecord {
                    text: "pot</w>".into(),
                    token_index: 3,
                    word_index: Some(1),
                    pos_tag: Some("NOUN".into()),
                    is_special: false,
                },
            ],
            capture: None,
        }
    }

    fn layer(id: &str, s: usize, h: usize) -> LayerDescriptor {
        LayerDescriptor {
            layer_id: id.into(),
            direction: Direction::Down,
            scale_factor: s,
            slice_height: h,
            slice_width: h,
        }
    }

    fn uniform_slice(id: &str, t: i64, h: usize, l: usize) -> AttentionSlice {
        AttentionSlice::new(id, t, h, h, l, vec![1.0 / l as f32; h * h * l]).unwrap()
    }

    #[test]
    fn manifest_round_trip_through_directory() {
        let dir = tempfile::tempdir().unwrap();
        let m = manifest(vec![layer("down0", 8, 8)], vec![1, 2], 16);
        let mut dump = MemoryDump::new(m.clone()).unwrap();
        for t in [1, 2] {
            dump.insert(uniform_slice("down0", t, 8, 16)).unwrap();
        }
        dump.write_to(dir.path()).unwrap();
        let read = read_manifest(dir.path()).unwrap();
        assert_eq!(read, m);
        assert_eq!(read.layers.len(), 1);
        assert_eq!(read.timesteps.len(), 2);
        let disk = Dump::open(dir.path()).unwrap();
        assert_eq!(disk.validate_all().unwrap(), 2);
    }

    #[test]
    fn ceil_relation_is_enforced() {
        // 7 * 8 = 56 < 64
        let m = manifest(vec![layer("down0", 8, 7)], vec![1], 16);
        assert!(matches!(m.validate(), Err(DaamError::InvariantViolation(_))));
        // 9 * 8 covers 64 but the ninth row starts past the end
        let m = manifest(vec![layer("down0", 8, 9)], vec![1], 16);
        assert!(matches!(m.validate(), Err(DaamError::InvariantViolation(_))));
        // ceil(60 / 8) = 8
        let mut m = manifest(vec![layer("down0", 8, 8)], vec![1], 16);
        m.latent_height = 60;
        m.latent_width = 60;
        m.image_height = 480;
        m.image_width = 480;
        m.validate().unwrap();
    }

    #[test]
    fn empty_directory_has_no_manifest() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(read_manifest(dir.path()), Err(DaamError::MissingManifest(_))));
    }

    #[test]
    fn schema_errors_name_the_field() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(MANIFEST_FILE), r#"{"format_version": 1}"#).unwrap();
        match read_manifest(dir.path()) {
            Err(DaamError::SchemaViolation(msg)) => assert!(msg.contains("prompt"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
        let mut m = manifest(vec![], vec![], 4);
        m.format_version = 2;
        write_manifest(dir.path(), &m).unwrap();
        assert!(matches!(read_manifest(dir.path()), Err(DaamError::SchemaViolation(_))));
    }

    #[test]
    fn token_and_word_invariants() {
        let mut m = manifest(vec![], vec![3, 2, 1], 4);
        m.validate().unwrap();
        m.timesteps = vec![1, 1];
        assert!(m.validate().is_err());
        m.timesteps = vec![1, 3, 2];
        assert!(m.validate().is_err());

        let mut m = manifest(vec![], vec![], 4);
        m.tokens[1].word_index = None;
        assert!(m.validate().is_err());
        let mut m = manifest(vec![], vec![], 4);
        m.tokens[3].word_index = Some(0);
        assert!(m.validate().is_err());
        let mut m = manifest(vec![], vec![], 3);
        assert!(m.validate().is_err());
        m.context_length = 4;
        m.heads_averaged = false;
        assert!(m.validate().is_err());
    }

    #[test]
    fn words_merge_subword_tokens() {
        let m = manifest(vec![], vec![], 4);
        let words = m.words();
        assert_eq!(words.len(), 2);
        assert_eq!(words[1].text, "teapot");
        assert_eq!(words[1].token_indices, vec![2, 3]);
        assert_eq!(words[1].pos_tag.as_deref(), Some("NOUN"));
    }

    #[test]
    fn slice_validation_classes() {
        let ok = uniform_slice("x", 0, 2, 4);
        ok.validate().unwrap();

        let mut bad = ok.clone();
        bad.data[5] = 1.2;
        assert!(matches!(
            bad.validate(),
            Err(DaamError::ValueRangeViolation {
                row: 0,
                col: 1,
                token: 1,
                ..
            })
        ));

        let zero = AttentionSlice::new("x", 0, 2, 2, 4, vec![0.0; 16]).unwrap();
        assert!(matches!(zero.validate(), Err(DaamError::RowSumViolation { .. })));

        let mut nan = ok.clone();
        nan.data[0] = f32::NAN;
        assert!(nan.validate().is_err());
    }

    #[test]
    fn truncated_file_is_a_shape_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let m = manifest(vec![layer("down0", 8, 8)], vec![1], 16);
        let mut dump = MemoryDump::new(m).unwrap();
        dump.insert(uniform_slice("down0", 1, 8, 16)).unwrap();
        dump.write_to(dir.path()).unwrap();
        let path = dir.path().join("down0_1.attn");
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 4]).unwrap();
        let disk = Dump::open(dir.path()).unwrap();
        assert!(matches!(disk.read_slice("down0", 1), Err(DaamError::ShapeMismatch(_))));
    }

    #[test]
    fn header_checks() {
        let p = Path::new("x.attn");
        let mut bytes = encode_attn(1, 1, 1, &[1.0]).unwrap();
        assert_eq!(bytes.len(), 28);
        assert_eq!(&bytes[..8], b"DAAMATTN");
        assert_eq!(decode_attn(p, &bytes).unwrap(), (1, 1, 1, vec![1.0]));
        bytes[8] = 2;
        assert!(matches!(decode_attn(p, &bytes), Err(DaamError::BadHeader { .. })));
        bytes[8] = 1;
        bytes[10] = 1;
        assert!(matches!(decode_attn(p, &bytes), Err(DaamError::BadHeader { .. })));
        bytes[10] = 0;
        bytes[0] = b'X';
        assert!(matches!(decode_attn(p, &bytes), Err(DaamError::BadHeader { .. })));
    }

    #[test]
    fn read_slice_rejects_unlisted_and_missing() {
        let dir = tempfile::tempdir().unwrap();
        let m = manifest(vec![layer("down0", 8, 8)], vec![1, 2], 16);
        let mut dump = MemoryDump::new(m).unwrap();
        dump.insert(uniform_slice("down0", 1, 8, 16)).unwrap();
        dump.insert(uniform_slice("down0", 2, 8, 16)).unwrap();
        dump.write_to(dir.path()).unwrap();
        fs::remove_file(dir.path().join("down0_2.attn")).unwrap();
        let disk = Dump::open(dir.path()).unwrap();
        assert!(matches!(disk.read_slice("up9", 1), Err(DaamError::MissingSlice { .. })));
        assert!(matches!(
            disk.read_slice("down0", 7),
            Err(DaamError::MissingSlice { .. })
        ));
        let items: Vec<_> = disk.iter_slices().collect();
        assert_eq!(items.len(), 2);
        assert!(items[0].is_ok());
        assert!(matches!(items[1], Err(DaamError::MissingSlice { .. })));
    }

    #[test]
    fn canonical_iteration_order() {
        let m = manifest(vec![layer("a", 8, 8), layer("b", 4, 16)], vec![30, 20, 10], 4);
        let mut dump = MemoryDump::new(m).unwrap();
        for t in [10, 20, 30] {
            dump.insert(uniform_slice("a", t, 8, 4)).unwrap();
            dump.insert(uniform_slice("b", t, 16, 4)).unwrap();
        }
        let order: Vec<(String, i64)> = dump
            .iter_slices()
            .map(|r| r.map(|(l, t, _)| (l.layer_id.clone(), t)).unwrap())
            .collect();
        let expected: Vec<(String, i64)> = [("a", 10), ("a", 20), ("a", 30), ("b", 10), ("b", 20), ("b", 30)]
            .iter()
            .map(|(l, t)| (l.to_string(), *t))
            .collect();
        assert_eq!(order, expected);

        let empty = MemoryDump::new(manifest(vec![layer("a", 8, 8)], vec![], 4)).unwrap();
        assert_eq!(empty.iter_slices().count(), 0);
    }

    #[test]
    fn zero_slice_fails_validation_after_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("z.attn");
        let zero = AttentionSlice::new("z", 0, 2, 2, 3, vec![0.0; 12]).unwrap();
        write_slice(&zero, &path).unwrap();
        let (h, w, l, data) = read_attn_file(&path).unwrap();
        let back = AttentionSlice::new("z", 0, h, w, l, data).unwrap();
        assert_eq!(back, zero);
        assert!(matches!(back.validate(), Err(DaamError::RowSumViolation { .. })));
    }

    #[test]
    fn write_rejects_non_finite() {
        let dir = tempfile::tempdir().unwrap();
        let s = AttentionSlice::new("z", 0, 1, 1, 1, vec![f32::INFINITY]).unwrap();
        assert!(write_slice(&s, &dir.path().join("z.attn")).is_err());
    }
}
