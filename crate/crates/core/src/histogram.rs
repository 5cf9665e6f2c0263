//! Intensity histograms, cumulative distributions and global histogram
//! equalization.
//!
//! Equalization maps level `v` to `round(255 * cum[v] / total)`. The
//! cumulative count is normalized by the full pixel count with no offset for
//! the darkest occupied level, so the darkest level keeps its share of the
//! range and a constant image maps to 255.

use serde::Serialize;

use crate::image::GrayImage;

pub const LEVELS: usize = 256;

/// `round(255 * num / den)` with ties rounded up, in exact integer arithmetic.
pub(crate) fn scale_to_level(num: u64, den: u64) -> u8 {
    debug_assert!(den > 0 && num <= den);
    ((2 * 255 * num + den) / (2 * den)) as u8
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Histogram {
    bins: [u64; LEVELS],
    total: u64,
}

impl Default for Histogram {
    fn default() -> Self {
        Self {
            bins: [0; LEVELS],
            total: 0,
        }
    }
}

impl Histogram {
    pub fn from_bins(bins: [u64; LEVELS]) -> Self {
        Self {
            total: bins.iter().sum(),
            bins,
        }
    }

    /// Counts the values of any pixel slice.
    pub fn from_pixels<'a>(pixels: impl IntoIterator<Item = &'a u8>) -> Self {
        let mut h = Self::default();
        for &v in pixels {
            h.bins[v as usize] += 1;
        }
        h.total = h.bins.iter().sum();
        h
    }

    pub fn bins(&self) -> &[u64; LEVELS] {
        &self.bins
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn max_bin(&self) -> u64 {
        self.bins.iter().copied().max().unwrap_or(0)
    }

    /// Adds another histogram's counts; used to combine per-stripe passes.
    pub fn merge(mut self, other: &Histogram) -> Self {
        for (a, b) in self.bins.iter_mut().zip(other.bins.iter()) {
            *a += b;
        }
        self.total += other.total;
        self
    }
}

pub fn compute_histogram(img: &GrayImage) -> Histogram {
    Histogram::from_pixels(img.pixels())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Cdf {
    cum: [u64; LEVELS],
    total: u64,
}

impl Cdf {
    pub fn cum(&self) -> &[u64; LEVELS] {
        &self.cum
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    /// Cumulative probability `cum[v] / total`.
    pub fn prob(&self, v: u8) -> f64 {
        self.cum[v as usize] as f64 / self.total as f64
    }

    pub fn probs(&self) -> Vec<f64> {
        (0..LEVELS).map(|v| self.prob(v as u8)).collect()
    }

    /// Lowest level with a non-zero count.
    pub fn first_occupied(&self) -> Option<u8> {
        self.cum.iter().position(|&c| c > 0).map(|v| v as u8)
    }
}

/// Running sum of the bins. Panics on an empty histogram.
pub fn compute_cdf(h: &Histogram) -> Cdf {
    assert!(h.total > 0, "cdf of an empty histogram");
    let mut cum = [0u64; LEVELS];
    let mut acc = 0;
    for (c, &b) in cum.iter_mut().zip(h.bins.iter()) {
        acc += b;
        *c = acc;
    }
    Cdf { cum, total: h.total }
}

/// 256-entry intensity transfer table.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IntensityLut {
    map: [u8; LEVELS],
}

impl IntensityLut {
    pub fn identity() -> Self {
        let mut map = [0u8; LEVELS];
        for (i, m) in map.iter_mut().enumerate() {
            *m = i as u8;
        }
        Self { map }
    }

    pub fn get(&self, v: u8) -> u8 {
        self.map[v as usize]
    }

    pub fn as_array(&self) -> &[u8; LEVELS] {
        &self.map
    }

    pub fn is_monotone(&self) -> bool {
        self.map.windows(2).all(|w| w[0] <= w[1])
    }

    pub fn apply(&self, img: &GrayImage) -> GrayImage {
        img.map(|v| self.map[v as usize])
    }
}

pub fn he_lut(cdf: &Cdf) -> IntensityLut {
    let mut map = [0u8; LEVELS];
    for (m, &c) in map.iter_mut().zip(cdf.cum.iter()) {
        *m = scale_to_level(c, cdf.total);
    }
    IntensityLut { map }
}

/// Global histogram equalization.
pub fn equalize(img: &GrayImage) -> GrayImage {
    he_lut(&compute_cdf(&compute_histogram(img))).apply(img)
}

/// Serializable histogram/CDF table for plotting.
#[derive(Clone, Debug, Serialize)]
pub struct HistogramExport {
    pub schema_version: u32,
    pub total: u64,
    pub bins: Vec<u64>,
    pub cum: Vec<u64>,
    pub prob: Vec<f64>,
}

impl HistogramExport {
    pub fn new(h: &Histogram) -> Self {
        let cdf = compute_cdf(h);
        Self {
            schema_version: crate::SCHEMA_VERSION,
            total: h.total,
            bins: h.bins.to_vec(),
            cum: cdf.cum.to_vec(),
            prob: cdf.probs(),
        }
    }

    /// `level,count,cum,prob` rows, one per intensity level.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("level,count,cum,prob\n");
        for level in 0..LEVELS {
            out.push_str(&format!(
                "{level},{},{},{}\n",
                self.bins[level], self.cum[level], self.prob[level]
            ));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("histogram export serializes")
    }
}
