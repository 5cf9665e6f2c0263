//! Contrast enhancement for grayscale MRI slices and pixel-wise scoring of
//! segmentation masks.
//!
//! The enhancement stack covers global histogram equalization, CLAHE, a
//! weighted HE/CLAHE blend and the two sequential HE/CLAHE compositions. The
//! metrics module scores any segmenter's output against ground-truth masks.

pub mod clahe;
pub mod enhance;
pub mod histogram;
pub mod hybrid;
pub mod image;
pub mod metrics;
pub mod pipeline;

/// Carried by every JSON document this crate writes.
pub const SCHEMA_VERSION: u32 = 1;

pub use clahe::{apply_clahe, build_tile_grid, clip_histogram, ClaheError, ClaheParams, TileGrid};
pub use enhance::{EnhancementConfig, Method};
pub use histogram::{compute_cdf, compute_histogram, equalize, he_lut, Cdf, Histogram, IntensityLut};
pub use hybrid::{blend, compose, HybridError, HybridMode, HybridSpec};
pub use image::{
    decode_image, encode_pgm, encode_png, resize, threshold, BinaryMask, GrayImage, ImageError,
    ProbabilityMap,
};
pub use metrics::{
    accuracy, aggregate, bce_loss, confusion, dice, jaccard, mse, ConfusionCounts, MetricsError,
    MetricsReport,
};
