//! Contrast limited adaptive histogram equalization.
//!
//! The image is partitioned into a `tiles_x` x `tiles_y` grid; the last tile
//! on each axis absorbs the remainder pixels. Each tile histogram is clipped
//! at `C = max(1, floor(clip_limit * tile_pixels / 256))`, the excess is
//! spread in a single pass (an equal share to every bin, the leftover one
//! count each to the lowest bins), and the clipped CDF yields the tile's LUT.
//! Output pixels blend the LUTs of the four nearest tile centers bilinearly;
//! beyond the outermost centers the blend clamps to the edge tiles.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::histogram::{compute_cdf, he_lut, Histogram, IntensityLut, LEVELS};
use crate::image::GrayImage;

pub const DEFAULT_TILES: usize = 8;
pub const DEFAULT_CLIP_LIMIT: f64 = 2.0;

#[derive(Debug, Error, PartialEq)]
pub enum ClaheError {
    #[error("a {tiles_x}x{tiles_y} tile grid does not fit a {width}x{height} image")]
    InvalidGrid {
        tiles_x: usize,
        tiles_y: usize,
        width: usize,
        height: usize,
    },
    #[error("clip limit must be a finite value >= 1, got {0}")]
    InvalidClipLimit(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClaheParams {
    pub tiles_x: usize,
    pub tiles_y: usize,
    /// Per-bin ceiling as a multiple of the uniform level `tile_pixels / 256`.
    pub clip_limit: f64,
}

impl Default for ClaheParams {
    fn default() -> Self {
        Self {
            tiles_x: DEFAULT_TILES,
            tiles_y: DEFAULT_TILES,
            clip_limit: DEFAULT_CLIP_LIMIT,
        }
    }
}

impl ClaheParams {
    pub fn new(tiles_x: usize, tiles_y: usize, clip_limit: f64) -> Self {
        Self {
            tiles_x,
            tiles_y,
            clip_limit,
        }
    }

    /// Checks the parameters alone, without an image.
    pub fn validate(&self) -> Result<(), ClaheError> {
        if !(self.clip_limit.is_finite() && self.clip_limit >= 1.0) {
            return Err(ClaheError::InvalidClipLimit(self.clip_limit));
        }
        if self.tiles_x == 0 || self.tiles_y == 0 {
            return Err(ClaheError::InvalidGrid {
                tiles_x: self.tiles_x,
                tiles_y: self.tiles_y,
                width: 0,
                height: 0,
            });
        }
        Ok(())
    }

    fn validate_for(&self, img: &GrayImage) -> Result<(), ClaheError> {
        self.validate()?;
        if self.tiles_x > img.width() || self.tiles_y > img.height() {
            return Err(ClaheError::InvalidGrid {
                tiles_x: self.tiles_x,
                tiles_y: self.tiles_y,
                width: img.width(),
                height: img.height(),
            });
        }
        Ok(())
    }

    /// Clip threshold in counts per bin for a tile of `tile_pixels` pixels.
    pub fn clip_threshold(&self, tile_pixels: usize) -> u64 {
        let raw = (self.clip_limit * tile_pixels as f64 / LEVELS as f64).floor();
        (raw as u64).max(1)
    }
}

/// Cuts bins above `limit` and redistributes the excess in one pass.
///
/// Every bin gets `excess / 256`; the remaining `excess % 256` counts go one
/// each to bins `0..r`. Bins may therefore end above `limit` by at most
/// `ceil(excess / 256)`. Total mass is unchanged.
pub fn clip_histogram(h: &Histogram, limit: u64) -> Histogram {
    assert!(limit >= 1, "clip threshold must be at least 1");
    let mut bins = *h.bins();
    let mut excess = 0;
    for b in bins.iter_mut() {
        if *b > limit {
            excess += *b - limit;
            *b = limit;
        }
    }
    if excess == 0 {
        return h.clone();
    }
    let share = excess / LEVELS as u64;
    let remainder = (excess % LEVELS as u64) as usize;
    for (i, b) in bins.iter_mut().enumerate() {
        *b += share + u64::from(i < remainder);
    }
    Histogram::from_bins(bins)
}

/// Pixel span of one tile along an axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Span {
    pub start: usize,
    pub len: usize,
}

impl Span {
    pub fn end(&self) -> usize {
        self.start + self.len
    }

    /// Center in pixel-index coordinates; half-integral for even lengths.
    pub fn center(&self) -> f64 {
        self.start as f64 + (self.len as f64 - 1.0) / 2.0
    }
}

/// Splits `extent` pixels into `count` spans; the last span takes the remainder.
pub fn partition(extent: usize, count: usize) -> Vec<Span> {
    let base = extent / count;
    (0..count)
        .map(|i| {
            let len = if i + 1 == count { extent - base * i } else { base };
            Span { start: base * i, len }
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct TileGrid {
    cols: Vec<Span>,
    rows: Vec<Span>,
    /// Row-major, `rows.len() * cols.len()` entries.
    luts: Vec<IntensityLut>,
}

impl TileGrid {
    pub fn cols(&self) -> &[Span] {
        &self.cols
    }

    pub fn rows(&self) -> &[Span] {
        &self.rows
    }

    pub fn lut(&self, tx: usize, ty: usize) -> &IntensityLut {
        &self.luts[ty * self.cols.len() + tx]
    }

    pub fn luts(&self) -> &[IntensityLut] {
        &self.luts
    }
}

fn tile_histogram(img: &GrayImage, col: Span, row: Span) -> Histogram {
    img.rows()
        .skip(row.start)
        .take(row.len)
        .map(|r| Histogram::from_pixels(&r[col.start..col.end()]))
        .fold(Histogram::default(), |acc, h| acc.merge(&h))
}

pub fn build_tile_grid(img: &GrayImage, params: &ClaheParams) -> Result<TileGrid, ClaheError> {
    params.validate_for(img)?;
    let cols = partition(img.width(), params.tiles_x);
    let rows = partition(img.height(), params.tiles_y);
    let luts = (0..rows.len() * cols.len())
        .into_par_iter()
        .map(|i| {
            let (col, row) = (cols[i % cols.len()], rows[i / cols.len()]);
            let hist = tile_histogram(img, col, row);
            let clipped = clip_histogram(&hist, params.clip_threshold(col.len * row.len));
            he_lut(&compute_cdf(&clipped))
        })
        .collect();
    Ok(TileGrid { cols, rows, luts })
}

/// Neighbouring tile pair and the weight of the second one.
#[derive(Clone, Copy)]
struct Neighbours {
    lo: usize,
    hi: usize,
    weight: f64,
}

fn neighbours(spans: &[Span], extent: usize) -> Vec<Neighbours> {
    let centers: Vec<f64> = spans.iter().map(Span::center).collect();
    let last = spans.len() - 1;
    (0..extent)
        .map(|p| {
            let p = p as f64;
            if p <= centers[0] {
                return Neighbours {
                    lo: 0,
                    hi: 0,
                    weight: 0.0,
                };
            }
            if p >= centers[last] {
                return Neighbours {
                    lo: last,
                    hi: last,
                    weight: 0.0,
                };
            }
            let lo = centers.partition_point(|&c| c <= p) - 1;
            let weight = (p - centers[lo]) / (centers[lo + 1] - centers[lo]);
            Neighbours {
                lo,
                hi: lo + 1,
                weight,
            }
        })
        .collect()
}

/// Applies CLAHE to `img`.
pub fn apply_clahe(img: &GrayImage, params: &ClaheParams) -> Result<GrayImage, ClaheError> {
    let grid = build_tile_grid(img, params)?;
    Ok(interpolate(img, &grid))
}

/// Blends the grid's tile LUTs over every pixel of `img`.
pub fn interpolate(img: &GrayImage, grid: &TileGrid) -> GrayImage {
    let (width, height) = img.dimensions();
    let xs = neighbours(&grid.cols, width);
    let ys = neighbours(&grid.rows, height);
    let mut out = vec![0u8; width * height];
    out.par_chunks_mut(width)
        .zip(img.pixels().par_chunks(width))
        .zip(ys.par_iter())
        .for_each(|((dst, src), ny)| {
            for ((d, &v), nx) in dst.iter_mut().zip(src).zip(&xs) {
                let at = |tx, ty| f64::from(grid.lut(tx, ty).get(v));
                let top = at(nx.lo, ny.lo) + nx.weight * (at(nx.hi, ny.lo) - at(nx.lo, ny.lo));
                let bottom = at(nx.lo, ny.hi) + nx.weight * (at(nx.hi, ny.hi) - at(nx.lo, ny.hi));
                let blended = top + ny.weight * (bottom - top);
                *d = (blended + 0.5).floor().clamp(0.0, 255.0) as u8;
            }
        });
    GrayImage::new(width, height, out).expect("dimensions preserved")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::histogram::{compute_histogram, equalize};
    use proptest::prelude::*;

    #[test]
    fn clip_without_excess_is_identity() {
        let mut bins = [0; LEVELS];
        bins[3] = 5;
        bins[9] = 7;
        let h = Histogram::from_bins(bins);
        assert_eq!(clip_histogram(&h, 7), h);
    }

    #[test]
    fn clip_spreads_one_count_per_bin() {
        let mut bins = [0; LEVELS];
        bins[0] = 512;
        let out = clip_histogram(&Histogram::from_bins(bins), 256);
        assert_eq!(out.bins()[0], 257);
        assert!(out.bins()[1..].iter().all(|&b| b == 1));
        assert_eq!(out.total(), 512);
    }

    #[test]
    fn clip_remainder_goes_to_low_bins() {
        let mut bins = [0; LEVELS];
        bins[7] = 4;
        let out = clip_histogram(&Histogram::from_bins(bins), 1);
        assert_eq!(&out.bins()[..8], &[1, 1, 1, 0, 0, 0, 0, 1]);
        assert_eq!(out.total(), 4);
    }

    #[test]
    fn clip_threshold_rule() {
        let p = ClaheParams::new(1, 1, 2.0);
        assert_eq!(p.clip_threshold(16384), 128);
        assert_eq!(p.clip_threshold(4), 1);
        assert_eq!(ClaheParams::new(1, 1, 1.5).clip_threshold(1000), 5);
    }

    #[test]
    fn partition_absorbs_remainder() {
        assert_eq!(
            partition(10, 3),
            vec![
                Span { start: 0, len: 3 },
                Span { start: 3, len: 3 },
                Span { start: 6, len: 4 }
            ]
        );
        let even = partition(256, 2);
        assert_eq!((even[0].len, even[1].len), (128, 128));
    }

    #[test]
    fn grid_validation() {
        let img = GrayImage::filled(4, 4, 0);
        assert!(matches!(
            apply_clahe(&img, &ClaheParams::new(5, 1, 2.0)),
            Err(ClaheError::InvalidGrid { .. })
        ));
        assert!(matches!(
            apply_clahe(&img, &ClaheParams::new(0, 1, 2.0)),
            Err(ClaheError::InvalidGrid { .. })
        ));
        assert_eq!(
            apply_clahe(&img, &ClaheParams::new(1, 1, 0.5)).unwrap_err(),
            ClaheError::InvalidClipLimit(0.5)
        );
        assert!(ClaheParams::new(1, 1, f64::NAN).validate().is_err());
    }

    #[test]
    fn single_tile_unclipped_matches_global_he() {
        let data: Vec<u8> = (0..64u32).map(|i| (i * 37 % 251) as u8).collect();
        let img = GrayImage::new(8, 8, data).unwrap();
        let grid = build_tile_grid(&img, &ClaheParams::new(1, 1, 256.0)).unwrap();
        let global = he_lut(&compute_cdf(&compute_histogram(&img)));
        assert_eq!(grid.lut(0, 0), &global);
        assert_eq!(
            apply_clahe(&img, &ClaheParams::new(1, 1, 256.0)).unwrap(),
            equalize(&img)
        );
    }

    #[test]
    fn tiny_constant_tiles_stay_saturated() {
        // C = 1 on 2x2 tiles: the 3 excess counts land below level 7, so
        // cum[7] still equals the tile total.
        let img = GrayImage::filled(4, 4, 7);
        let grid = build_tile_grid(&img, &ClaheParams::new(2, 2, 1.0)).unwrap();
        assert!(grid.luts().iter().all(|lut| lut.get(7) == 255));
    }

    #[test]
    fn constant_tile_clipping_lowers_level() {
        // 16x16 tiles, C = 1, excess 255: bins 0..=254 gain one count each,
        // so cum[7] = 7 + 2 = 9 of 256 and round(255 * 9 / 256) = 9.
        let img = GrayImage::filled(32, 32, 7);
        let grid = build_tile_grid(&img, &ClaheParams::new(2, 2, 1.0)).unwrap();
        assert!(grid.luts().iter().all(|lut| lut.get(7) == 9));
        assert!(apply_clahe(&img, &ClaheParams::new(2, 2, 1.0))
            .unwrap()
            .pixels()
            .iter()
            .all(|&v| v == 9));
    }

    #[test]
    fn even_grid_partition() {
        let img = GrayImage::filled(256, 256, 1);
        let grid = build_tile_grid(&img, &ClaheParams::new(2, 2, 2.0)).unwrap();
        assert!(grid.cols().iter().chain(grid.rows()).all(|s| s.len == 128));
    }

    #[test]
    fn tile_center_takes_tile_lut() {
        let data: Vec<u8> = (0..15 * 9).map(|i: u32| (i * 97 % 256) as u8).collect();
        let img = GrayImage::new(15, 9, data).unwrap();
        let params = ClaheParams::new(3, 3, 2.0);
        let grid = build_tile_grid(&img, &params).unwrap();
        let out = apply_clahe(&img, &params).unwrap();
        // 5x3 tiles: centers at x = 2, 7, 12 and y = 1, 4, 7
        for (ty, y) in [1usize, 4, 7].into_iter().enumerate() {
            for (tx, x) in [2usize, 7, 12].into_iter().enumerate() {
                assert_eq!(out.get(x, y), grid.lut(tx, ty).get(img.get(x, y)));
            }
        }
    }

    proptest! {
        #[test]
        fn clip_conserves_mass(bins in proptest::collection::vec(0u64..2000, LEVELS), limit in 1u64..600) {
            let mut arr = [0; LEVELS];
            arr.copy_from_slice(&bins);
            let h = Histogram::from_bins(arr);
            let excess: u64 = arr.iter().map(|&b| b.saturating_sub(limit)).sum();
            let out = clip_histogram(&h, limit);
            prop_assert_eq!(out.total(), h.total());
            let bound = limit + excess.div_ceil(LEVELS as u64);
            prop_assert!(out.bins().iter().all(|&b| b <= bound));
        }

        #[test]
        fn partition_is_exact(extent in 1usize..500, count in 1usize..20) {
            prop_assume!(count <= extent);
            let spans = partition(extent, count);
            prop_assert_eq!(spans[0].start, 0);
            prop_assert_eq!(spans.last().unwrap().end(), extent);
            prop_assert!(spans.windows(2).all(|w| w[0].end() == w[1].start && w[0].len > 0));
        }

        #[test]
        fn tile_luts_monotone(w in 1usize..40, h in 1usize..40, tx in 1usize..6, ty in 1usize..6,
                              clip in 1.0f64..8.0, seed in any::<u64>()) {
            prop_assume!(tx <= w && ty <= h);
            let data = (0..w * h).map(|i| ((i as u64).wrapping_mul(seed | 1) >> 7) as u8).collect();
            let img = GrayImage::new(w, h, data).unwrap();
            let grid = build_tile_grid(&img, &ClaheParams::new(tx, ty, clip)).unwrap();
            prop_assert!(grid.luts().iter().all(IntensityLut::is_monotone));
        }
    }
}
