//! Word-level pixel attribution maps built from cross-attention scores
//! captured during a text-to-image latent diffusion run.
//!
//! The pipeline reads an attention dump ([`tensor_store`]), upscales and
//! sums the per-token score planes into heat maps ([`attribution`]),
//! binarizes them, and scores the masks as unsupervised segmentation
//! ([`seg_eval`]) or as part-of-speech coverage statistics ([`pos_stats`]).
//! [`render`] draws overlays and [`fixture`] writes synthetic dumps.

pub mod attribution;
pub mod cli;
pub mod error;
pub mod fixture;
pub mod mask;
pub mod par;
pub mod pos_stats;
pub mod render;
pub mod seg_eval;
pub mod tensor_store;

pub use attribution::{
    normalize_for_display, threshold, token_heat_map, token_heat_maps, upscale, upscale_bicubic, upscale_deconv,
    word_heat_map, word_heat_maps, AttributionConfig, HardMask, HeatMap, LayerFilter, Subject, UpscaleMode,
    UpscaleSpec,
};
pub use error::{DaamError, Result};
pub use mask::Mask;
pub use par::Execution;
pub use tensor_store::{
    read_manifest, AttentionSlice, Direction, Dump, DumpManifest, LayerDescriptor, MemoryDump, SliceSource, TokenRecord,
};
