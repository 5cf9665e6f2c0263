//! Naive reference implementations used as test oracles.
//!
//! Nothing here calls into the library's histogram, CLAHE or metric code;
//! only the image container is shared.

#![allow(dead_code)]

use mri_enhance::GrayImage;
use rand::rngs::StdRng;
use rand::Rng;

pub fn random_image(rng: &mut StdRng, max_w: usize, max_h: usize) -> GrayImage {
    let w = rng.gen_range(1..=max_w);
    let h = rng.gen_range(1..=max_h);
    let data = (0..w * h).map(|_| rng.gen()).collect();
    GrayImage::new(w, h, data).unwrap()
}

/// Values confined to a narrow band around a random base level.
pub fn low_contrast_image(rng: &mut StdRng, w: usize, h: usize) -> GrayImage {
    let spread: u8 = rng.gen_range(2..=24);
    let base: u8 = rng.gen_range(0..=255 - spread);
    let data = (0..w * h).map(|_| base + rng.gen_range(0..=spread)).collect();
    GrayImage::new(w, h, data).unwrap()
}

/// 8x8, left half 50, right half 200.
pub fn two_region() -> GrayImage {
    let data = (0..64).map(|i| if i % 8 < 4 { 50 } else { 200 }).collect();
    GrayImage::new(8, 8, data).unwrap()
}

fn level(count: usize, total: usize) -> u8 {
    (255.0 * count as f64 / total as f64 + 0.5).floor() as u8
}

/// Per-pixel equalization: count every pixel at or below this one.
pub fn brute_force_equalize(img: &GrayImage) -> GrayImage {
    let px = img.pixels();
    let out = px
        .iter()
        .map(|&v| level(px.iter().filter(|&&w| w <= v).count(), px.len()))
        .collect();
    GrayImage::new(img.width(), img.height(), out).unwrap()
}

fn tile_index(p: usize, extent: usize, tiles: usize) -> usize {
    (p / (extent / tiles)).min(tiles - 1)
}

/// Straightforward CLAHE with the same contract as the library:
/// remainder pixels join the last tile, the clip excess is dealt out one
/// count at a time starting from bin 0, and pixel values blend the LUTs of
/// the surrounding tile centers.
pub fn reference_clahe(img: &GrayImage, tiles_x: usize, tiles_y: usize, clip_limit: f64) -> GrayImage {
    let (w, h) = img.dimensions();
    let mut luts = vec![[0u8; 256]; tiles_x * tiles_y];
    let mut centers_x = vec![0.0; tiles_x];
    let mut centers_y = vec![0.0; tiles_y];

    for ty in 0..tiles_y {
        for tx in 0..tiles_x {
            let mut hist = [0usize; 256];
            let mut n = 0;
            let (mut sum_x, mut sum_y) = (0usize, 0usize);
            for y in 0..h {
                for x in 0..w {
                    if tile_index(x, w, tiles_x) == tx && tile_index(y, h, tiles_y) == ty {
                        hist[img.get(x, y) as usize] += 1;
                        n += 1;
                        sum_x += x;
                        sum_y += y;
                    }
                }
            }
            centers_x[tx] = sum_x as f64 / n as f64;
            centers_y[ty] = sum_y as f64 / n as f64;

            let limit = ((clip_limit * n as f64 / 256.0).floor() as usize).max(1);
            let mut excess = 0;
            for b in hist.iter_mut() {
                if *b > limit {
                    excess += *b - limit;
                    *b = limit;
                }
            }
            for k in 0..excess {
                hist[k % 256] += 1;
            }

            let lut = &mut luts[ty * tiles_x + tx];
            let mut cum = 0;
            for v in 0..256 {
                cum += hist[v];
                lut[v] = level(cum, n);
            }
        }
    }

    let bracket = |p: f64, centers: &[f64]| -> (usize, usize, f64) {
        let last = centers.len() - 1;
        if p <= centers[0] {
            return (0, 0, 0.0);
        }
        if p >= centers[last] {
            return (last, last, 0.0);
        }
        let mut lo = 0;
        while centers[lo + 1] <= p {
            lo += 1;
        }
        (lo, lo + 1, (p - centers[lo]) / (centers[lo + 1] - centers[lo]))
    };

    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        let (y0, y1, wy) = bracket(y as f64, &centers_y);
        for x in 0..w {
            let (x0, x1, wx) = bracket(x as f64, &centers_x);
            let v = img.get(x, y) as usize;
            let at = |tx: usize, ty: usize| f64::from(luts[ty * tiles_x + tx][v]);
            let top = at(x0, y0) + wx * (at(x1, y0) - at(x0, y0));
            let bottom = at(x0, y1) + wx * (at(x1, y1) - at(x0, y1));
            let value = top + wy * (bottom - top);
            out.push((value + 0.5).floor() as u8);
        }
    }
    GrayImage::new(w, h, out).unwrap()
}

/// Sup-norm distance between an image's cumulative distribution and the
/// uniform diagonal `(v + 1) / 256`.
pub fn cdf_deviation_from_diagonal(img: &GrayImage) -> f64 {
    let n = img.len() as f64;
    (0..256)
        .map(|v| {
            let below = img.pixels().iter().filter(|&&p| p as usize <= v).count() as f64;
            (below / n - (v as f64 + 1.0) / 256.0).abs()
        })
        .fold(0.0, f64::max)
}

pub fn max_bin_fraction(img: &GrayImage) -> f64 {
    let mut counts = [0usize; 256];
    for &p in img.pixels() {
        counts[p as usize] += 1;
    }
    *counts.iter().max().unwrap() as f64 / img.len() as f64
}
