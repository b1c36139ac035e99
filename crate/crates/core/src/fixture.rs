//! Synthetic attention dumps for tests, benches and demos.
//!
//! Generation uses only seeded xoshiro draws and basic arithmetic, so the
//! produced bytes are identical across runs and platforms.

use std::path::Path;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::error::{DaamError, Result};
use crate::mask::Mask;
use crate::render::save_png_rgb;
use crate::seg_eval::{write_annotations, AnnotationEntry};
use crate::tensor_store::{
    AttentionSlice, Direction, DumpManifest, LayerDescriptor, MemoryDump, SliceSource, TokenRecord, FORMAT_VERSION,
};

pub const IMAGE_FILE: &str = "image.png";
pub const ANNOTATION_DIR: &str = "annotations";

const POS_CYCLE: [&str; 10] = [
    "DET", "NOUN", "ADJ", "VERB", "ADP", "NUM", "CCONJ", "PUNCT", "ADV", "PRON",
];

fn special(text: &str, index: usize) -> TokenRecord {
    TokenRecord {
        text: text.into(),
        token_index: index,
        word_index: None,
        pos_tag: None,
        is_special: true,
    }
}

fn word_token(text: &str, index: usize, word: usize, pos: &str) -> TokenRecord {
    TokenRecord {
        text: text.into(),
        token_index: index,
        word_index: Some(word),
        pos_tag: Some(pos.into()),
        is_special: false,
    }
}

/// Normalizes positive weights so they sum to one, stored as f32.
fn normalized(weights: &[f64]) -> impl Iterator<Item = f32> + '_ {
    let sum: f64 = weights.iter().sum();
    weights.iter().map(move |w| (w / sum) as f32)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RandomFixture {
    pub layers: usize,
    pub steps: usize,
    pub tokens: usize,
    pub seed: u64,
    pub latent: usize,
    pub pixel_ratio: usize,
}

impl Default for RandomFixture {
    fn default() -> Self {
        RandomFixture {
            layers: 3,
            steps: 5,
            tokens: 16,
            seed: 1,
            latent: 16,
            pixel_ratio: 4,
        }
    }
}

impl RandomFixture {
    fn check(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(DaamError::Usage("fixture needs at least one layer".into()));
        }
        if self.steps == 0 {
            return Err(DaamError::Usage("fixture needs at least one step".into()));
        }
        if self.tokens < 3 {
            return Err(DaamError::Usage("fixture needs at least 3 tokens".into()));
        }
        if self.latent == 0 || self.pixel_ratio == 0 {
            return Err(DaamError::Usage("latent size and pixel ratio must be positive".into()));
        }
        Ok(())
    }

    /// U-Net-like stack: scale doubles going down, halves coming up, with
    /// a middle block when the layer count is odd.
    fn layer_descriptors(&self) -> Vec<LayerDescriptor> {
        let n = self.layers;
        (0..n)
            .map(|i| {
                let level = i.min(n - 1 - i).min(3);
                let s = 1usize << level;
                let direction = if 2 * i + 1 == n {
                    Direction::Mid
                } else if 2 * i < n {
                    Direction::Down
                } else {
                    Direction::Up
                };
                let dim = self.latent.div_ceil(s);
                LayerDescriptor {
                    layer_id: format!("{}{i}", direction.as_str()),
                    direction,
                    scale_factor: s,
                    slice_height: dim,
                    slice_width: dim,
                }
            })
            .collect()
    }

    /// Tokens between start and end markers; every third word is split
    /// into two subword tokens.
    fn token_records(&self) -> (String, Vec<TokenRecord>) {
        let l = self.tokens;
        let mut tokens = vec![special("<|startoftext|>", 0)];
        let mut words = Vec::new();
        let mut pos = 1;
        let mut word = 0;
        while pos < l - 1 {
            let tag = POS_CYCLE[word % POS_CYCLE.len()];
            if word % 3 == 2 && pos + 1 < l - 1 {
                tokens.push(word_token(&format!("w{word}a"), pos, word, tag));
                tokens.push(word_token(&format!("w{word}b</w>"), pos + 1, word, tag));
                pos += 2;
            } else {
                tokens.push(word_token(&format!("w{word}</w>"), pos, word, tag));
                pos += 1;
            }
            words.push(format!("w{word}"));
            word += 1;
        }
        tokens.push(special("<|endoftext|>", l - 1));
        (words.join(" "), tokens)
    }

    pub fn build(&self) -> Result<MemoryDump> {
        self.check()?;
        let (prompt, tokens) = self.token_records();
        let manifest = DumpManifest {
            format_version: FORMAT_VERSION,
            image_id: Some(format!("random_{}", self.seed)),
            prompt,
            context_length: self.tokens,
            image_height: self.latent * self.pixel_ratio,
            image_width: self.latent * self.pixel_ratio,
            latent_height: self.latent,
            latent_width: self.latent,
            heads_averaged: true,
            timesteps: (0..self.steps as i64).rev().map(|j| j * 20 + 1).collect(),
            layers: self.layer_descriptors(),
            tokens,
            capture: Some(serde_json::json!({ "source": "random-fixture", "seed": self.seed })),
        };
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(self.seed);
        let mut dump = MemoryDump::new(manifest.clone())?;
        let l = self.tokens;
        for layer in &manifest.layers {
            for &t in &manifest.timesteps_ascending() {
                let cells = layer.slice_height * layer.slice_width;
                let mut data = Vec::with_capacity(cells * l);
                let mut weights = vec![0.0f64; l];
                for _ in 0..cells {
                    for w in weights.iter_mut() {
                        *w = rng.random::<f64>() + 1e-3;
                    }
                    data.extend(normalized(&weights));
                }
                dump.insert(AttentionSlice::new(
                    layer.layer_id.clone(),
                    t,
                    layer.slice_height,
                    layer.slice_width,
                    l,
                    data,
                )?)?;
            }
        }
        Ok(dump)
    }

    /// Writes the dump and a placeholder `image.png` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<MemoryDump> {
        let dump = self.build()?;
        dump.write_to(dir)?;
        let m = dump.manifest();
        let img = RgbImage::from_fn(m.image_width as u32, m.image_height as u32, |x, y| {
            Rgb([
                (x * 255 / m.image_width as u32) as u8,
                (y * 255 / m.image_height as u32) as u8,
                128,
            ])
        });
        save_png_rgb(&img, &dir.join(IMAGE_FILE))?;
        Ok(dump)
    }
}

/// Structured dump for "a teapot on a table": the two `teapot` subword
/// tokens attend to a central square, `table` to a bottom band.
pub struct HotSquareFixture;

impl HotSquareFixture {
    pub const LATENT: usize = 16;
    pub const PIXEL_RATIO: usize = 8;
    /// Square in latent cells, `[start, end)` on both axes.
    pub const SQUARE: (usize, usize) = (4, 12);
    /// Band rows in latent cells, `[start, end)`, all columns.
    pub const BAND: (usize, usize) = (12, 16);
    pub const TEAPOT_WORD: usize = 1;
    pub const TABLE_WORD: usize = 4;

    pub fn image_size() -> usize {
        Self::LATENT * Self::PIXEL_RATIO
    }

    /// Ground-truth square at image resolution.
    pub fn square_mask() -> Mask {
        let (a, b) = Self::SQUARE;
        let (a, b) = (a * Self::PIXEL_RATIO, b * Self::PIXEL_RATIO);
        let n = Self::image_size();
        Mask::from_fn(n, n, |r, c| (a..b).contains(&r) && (a..b).contains(&c))
    }

    pub fn band_mask() -> Mask {
        let (a, b) = Self::BAND;
        let (a, b) = (a * Self::PIXEL_RATIO, b * Self::PIXEL_RATIO);
        let n = Self::image_size();
        Mask::from_fn(n, n, |r, _| (a..b).contains(&r))
    }

    fn manifest() -> DumpManifest {
        let tokens = vec![
            special("<|startoftext|>", 0),
            word_token("a</w>", 1, 0, "DET"),
            word_token("tea", 2, 1, "NOUN"),
            word_token("pot</w>", 3, 1, "NOUN"),
            word_token("on</w>", 4, 2, "ADP"),
            word_token("a</w>", 5, 3, "DET"),
            word_token("table</w>", 6, 4, "NOUN"),
            special("<|endoftext|>", 7),
        ];
        let layer = |id: &str, direction, s: usize| LayerDescriptor {
            layer_id: id.into(),
            direction,
            scale_factor: s,
            slice_height: Self::LATENT / s,
            slice_width: Self::LATENT / s,
        };
        DumpManifest {
            format_version: FORMAT_VERSION,
            image_id: Some("hot_square".into()),
            prompt: "a teapot on a table".into(),
            context_length: tokens.len(),
            image_height: Self::image_size(),
            image_width: Self::image_size(),
            latent_height: Self::LATENT,
            latent_width: Self::LATENT,
            heads_averaged: true,
            timesteps: vec![801, 401, 1],
            layers: vec![
                layer("down0", Direction::Down, 1),
                layer("down1", Direction::Down, 2),
                layer("mid0", Direction::Mid, 4),
                layer("up0", Direction::Up, 2),
                layer("up1", Direction::Up, 1),
            ],
            tokens,
            capture: Some(serde_json::json!({ "source": "hot-square-fixture" })),
        }
    }

    /// Unnormalized token weights for a latent cell at the given step.
    fn weights(row: usize, col: usize, step: usize) -> [f64; 8] {
        let (sa, sb) = Self::SQUARE;
        let (ba, bb) = Self::BAND;
        let boost = 1.0 + 0.5 * step as f64;
        let in_square = (sa..sb).contains(&row) && (sa..sb).contains(&col);
        let in_band = (ba..bb).contains(&row);
        // [sot, a, tea, pot, on, a, table, eot]
        if in_square {
            [3.0, 1.0, 6.0 * boost, 6.0 * boost, 1.0, 1.0, 0.5, 1.0]
        } else if in_band {
            [3.0, 1.0, 0.5, 0.5, 1.0, 1.0, 10.0 * boost, 1.0]
        } else {
            [6.0, 1.0, 0.5, 0.5, 1.0, 1.0, 0.5, 1.0]
        }
    }

    pub fn build() -> Result<MemoryDump> {
        let manifest = Self::manifest();
        let mut dump = MemoryDump::new(manifest.clone())?;
        for layer in &manifest.layers {
            let s = layer.scale_factor;
            for (step, &t) in manifest.timesteps_ascending().iter().enumerate() {
                let mut data = Vec::new();
                for r in 0..layer.slice_height {
                    for c in 0..layer.slice_width {
                        // regions are aligned to the coarsest grid, so the
                        // top-left latent cell decides membership
                        data.extend(normalized(&Self::weights(r * s, c * s, step)));
                    }
                }
                dump.insert(AttentionSlice::new(
                    layer.layer_id.clone(),
                    t,
                    layer.slice_height,
                    layer.slice_width,
                    manifest.context_length,
                    data,
                )?)?;
            }
        }
        Ok(dump)
    }

    fn image() -> RgbImage {
        let n = Self::image_size() as u32;
        let square = Self::square_mask();
        let band = Self::band_mask();
        RgbImage::from_fn(n, n, |x, y| {
            let (r, c) = (y as usize, x as usize);
            if square.get(r, c) {
                Rgb([180, 90, 40])
            } else if band.get(r, c) {
                Rgb([110, 70, 30])
            } else {
                Rgb([200, 200, 210])
            }
        })
    }

    /// Writes the dump, `image.png` and `annotations/` into `dir`.
    pub fn write(dir: &Path) -> Result<MemoryDump> {
        let dump = Self::build()?;
        dump.write_to(dir)?;
        save_png_rgb(&Self::image(), &dir.join(IMAGE_FILE))?;
        let ann = dir.join(ANNOTATION_DIR);
        std::fs::create_dir_all(&ann).map_err(|e| DaamError::io(&ann, e))?;
        Self::square_mask().write_png(&ann.join("teapot.png"))?;
        Self::band_mask().write_png(&ann.join("table.png"))?;
        write_annotations(
            &ann,
            &[
                AnnotationEntry {
                    image_id: "hot_square".into(),
                    noun: "teapot".into(),
                    class_label: None,
                    mask_file: Some("teapot.png".into()),
                },
                AnnotationEntry {
                    image_id: "hot_square".into(),
                    noun: "table".into(),
                    class_label: Some("dining table".into()),
                    mask_file: Some("table.png".into()),
                },
            ],
        )?;
        Ok(dump)
    }
}
