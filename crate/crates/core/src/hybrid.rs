//! HE/CLAHE hybrids: a per-pixel weighted blend and the two sequential
//! compositions.

use thiserror::Error;

use crate::clahe::{apply_clahe, ClaheError, ClaheParams};
use crate::histogram::equalize;
use crate::image::GrayImage;

pub const DEFAULT_ALPHA: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum HybridError {
    #[error("blend weight must lie in [0, 1], got {0}")]
    InvalidAlpha(f64),
    #[error("{0:?} is not a {1} mode")]
    WrongMode(HybridMode, &'static str),
    #[error(transparent)]
    Clahe(#[from] ClaheError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HybridMode {
    WeightedBlend,
    HeThenClahe,
    ClaheThenHe,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HybridSpec {
    pub mode: HybridMode,
    /// Weight of the HE image; only read by `WeightedBlend`.
    pub alpha: f64,
    pub clahe: ClaheParams,
}

impl HybridSpec {
    pub fn blend(alpha: f64, clahe: ClaheParams) -> Self {
        Self {
            mode: HybridMode::WeightedBlend,
            alpha,
            clahe,
        }
    }

    pub fn sequence(mode: HybridMode, clahe: ClaheParams) -> Self {
        Self {
            mode,
            alpha: DEFAULT_ALPHA,
            clahe,
        }
    }

    pub fn validate(&self) -> Result<(), HybridError> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(HybridError::InvalidAlpha(self.alpha));
        }
        self.clahe.validate()?;
        Ok(())
    }
}

/// `round(clahe + alpha * (he - clahe))`, i.e. `alpha * he + (1 - alpha) * clahe`.
///
/// The difference form is exact at both endpoints and monotone in `alpha`.
pub fn blend_pixel(he: u8, clahe: u8, alpha: f64) -> u8 {
    let base = f64::from(clahe);
    let v = base + alpha * (f64::from(he) - base);
    (v + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Weighted blend of the HE and CLAHE results, both computed on `img`.
pub fn blend(img: &GrayImage, spec: &HybridSpec) -> Result<GrayImage, HybridError> {
    if spec.mode != HybridMode::WeightedBlend {
        return Err(HybridError::WrongMode(spec.mode, "blend"));
    }
    spec.validate()?;
    let he = equalize(img);
    let cl = apply_clahe(img, &spec.clahe)?;
    let data = he
        .pixels()
        .iter()
        .zip(cl.pixels())
        .map(|(&h, &c)| blend_pixel(h, c, spec.alpha))
        .collect();
    Ok(GrayImage::new(img.width(), img.height(), data).expect("dimensions preserved"))
}

/// Sequential application in the order named by the mode.
pub fn compose(img: &GrayImage, spec: &HybridSpec) -> Result<GrayImage, HybridError> {
    spec.clahe.validate()?;
    match spec.mode {
        HybridMode::HeThenClahe => Ok(apply_clahe(&equalize(img), &spec.clahe)?),
        HybridMode::ClaheThenHe => Ok(equalize(&apply_clahe(img, &spec.clahe)?)),
        HybridMode::WeightedBlend => Err(HybridError::WrongMode(spec.mode, "sequential")),
    }
}
