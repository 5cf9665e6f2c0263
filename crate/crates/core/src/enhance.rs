//! Method selector shared by the library entry point, the config file and the CLI.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::clahe::{apply_clahe, ClaheParams};
use crate::histogram::equalize;
use crate::hybrid::{blend, compose, HybridError, HybridMode, HybridSpec, DEFAULT_ALPHA};
use crate::image::GrayImage;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    #[default]
    None,
    He,
    Clahe,
    Blend,
    HeClahe,
    ClaheHe,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::None,
        Method::He,
        Method::Clahe,
        Method::Blend,
        Method::HeClahe,
        Method::ClaheHe,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::None => "none",
            Method::He => "he",
            Method::Clahe => "clahe",
            Method::Blend => "blend",
            Method::HeClahe => "he-clahe",
            Method::ClaheHe => "clahe-he",
        }
    }

    pub fn uses_clahe(self) -> bool {
        !matches!(self, Method::None | Method::He)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| {
            format!("unknown method `{s}` (expected none, he, clahe, blend, he-clahe or clahe-he)")
        })
    }
}

/// A method plus every tunable it may need.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnhancementConfig {
    pub method: Method,
    pub clahe: ClaheParams,
    pub alpha: f64,
}

impl Default for EnhancementConfig {
    fn default() -> Self {
        Self {
            method: Method::None,
            clahe: ClaheParams::default(),
            alpha: DEFAULT_ALPHA,
        }
    }
}

impl EnhancementConfig {
    pub fn new(method: Method) -> Self {
        Self {
            method,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), HybridError> {
        if self.method.uses_clahe() {
            self.clahe.validate()?;
        }
        if self.method == Method::Blend && !(0.0..=1.0).contains(&self.alpha) {
            return Err(HybridError::InvalidAlpha(self.alpha));
        }
        Ok(())
    }

    pub fn apply(&self, img: &GrayImage) -> Result<GrayImage, HybridError> {
        match self.method {
            Method::None => Ok(img.clone()),
            Method::He => Ok(equalize(img)),
            Method::Clahe => Ok(apply_clahe(img, &self.clahe)?),
            Method::Blend => blend(img, &HybridSpec::blend(self.alpha, self.clahe)),
            Method::HeClahe => compose(img, &HybridSpec::sequence(HybridMode::HeThenClahe, self.clahe)),
            Method::ClaheHe => compose(img, &HybridSpec::sequence(HybridMode::ClaheThenHe, self.clahe)),
        }
    }
}
