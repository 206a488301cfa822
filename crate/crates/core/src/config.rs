//! Tunable thresholds, loaded from a TOML file.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matcher::{FusionWeights, MatcherParams};
use crate::minutiae_map::{EncoderParams, DEFAULT_SIGMA_O, DEFAULT_SIGMA_S, DEFAULT_THRESHOLD};
use crate::ridge::{DEFAULT_ALPHA, DEFAULT_ROI_THRESHOLD};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub sigma_s: f64,
    pub sigma_o: f64,
    /// Decode threshold `m_t`.
    pub threshold: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig { sigma_s: DEFAULT_SIGMA_S, sigma_o: DEFAULT_SIGMA_O, threshold: DEFAULT_THRESHOLD }
    }
}

impl EncoderConfig {
    pub fn params(&self) -> Result<EncoderParams> {
        EncoderParams::new(self.sigma_s, self.sigma_o)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RidgeConfig {
    pub alpha: f64,
    /// ROI quality threshold `s_r`.
    pub roi_threshold: f64,
}

impl Default for RidgeConfig {
    fn default() -> Self {
        RidgeConfig { alpha: DEFAULT_ALPHA, roi_threshold: DEFAULT_ROI_THRESHOLD }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TextureConfig {
    pub stride: usize,
    pub border_margin: usize,
    /// Overrides the threshold stored with the codebook.
    pub d0: Option<f64>,
}

impl Default for TextureConfig {
    fn default() -> Self {
        TextureConfig { stride: 32, border_margin: 16, d0: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    /// Worker threads; 0 means one per available core.
    pub workers: usize,
    pub top_k: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig { workers: 0, top_k: 20 }
    }
}

impl SearchConfig {
    pub fn worker_count(&self) -> usize {
        if self.workers > 0 {
            self.workers
        } else {
            std::thread::available_parallelism().map_or(1, |n| n.get())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub encoder: EncoderConfig,
    pub ridge: RidgeConfig,
    pub matcher: MatcherParams,
    pub fusion: FusionWeights,
    pub texture: TextureConfig,
    pub search: SearchConfig,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Config::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(what.to_string()));
        if !(self.encoder.sigma_s > 0.0 && self.encoder.sigma_o > 0.0) {
            return bad("encoder widths must be positive");
        }
        if self.texture.stride == 0 {
            return bad("texture stride must be positive");
        }
        if self.matcher.tau_d <= 0.0 || self.matcher.tau_theta <= 0.0 {
            return bad("matcher kernel widths must be positive");
        }
        let w = &self.fusion;
        if w.minutiae.iter().chain([&w.texture]).any(|x| !(*x >= 0.0)) {
            return bad("fusion weights must be non-negative");
        }
        if self.texture.d0.is_some_and(|d| !(d > 0.0)) {
            return bad("d0 must be positive");
        }
        Ok(())
    }
}
