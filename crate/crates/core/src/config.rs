//! Detector parameters.

use serde::{Deserialize, Serialize};

use crate::ransac::RansacConfig;

/// Every tunable of the detection pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    /// Gaussian sigma of the 1-D smoothing, as a fraction of the larger
    /// image (or patch) dimension.
    pub sigma_factor: f64,
    /// Extremum threshold for module detection, in standard deviations of
    /// the gradient signal.
    pub module_threshold: f64,
    /// Extremum threshold for crossing detection on patches.
    pub patch_threshold: f64,
    /// RANSAC inlier distance as a fraction of the cell size.
    pub inlier_fraction: f64,
    pub ransac_iterations: usize,
    /// Smallest accepted consensus, as a fraction of all correspondences.
    pub min_inlier_fraction: f64,
    /// Side length of the rectified crossing patches in samples.
    pub patch_px: usize,
    pub seed: u64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            sigma_factor: 0.01,
            module_threshold: 2.0,
            patch_threshold: 1.5,
            inlier_fraction: 0.05,
            ransac_iterations: 2000,
            min_inlier_fraction: 0.25,
            patch_px: 64,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("invalid detector configuration: {0}")]
pub struct ConfigError(pub String);

impl DetectorConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            ("sigma_factor", self.sigma_factor),
            ("module_threshold", self.module_threshold),
            ("patch_threshold", self.patch_threshold),
            ("inlier_fraction", self.inlier_fraction),
            ("min_inlier_fraction", self.min_inlier_fraction),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ConfigError(format!("{name} must be positive, got {v}")));
            }
        }
        if self.min_inlier_fraction > 1.0 {
            return Err(ConfigError("min_inlier_fraction must not exceed 1".into()));
        }
        if self.ransac_iterations == 0 {
            return Err(ConfigError("ransac_iterations must be positive".into()));
        }
        if self.patch_px < 8 {
            return Err(ConfigError(format!(
                "patch_px must be at least 8, got {}",
                self.patch_px
            )));
        }
        Ok(())
    }

    pub fn ransac(&self) -> RansacConfig {
        RansacConfig {
            iterations: self.ransac_iterations,
            inlier_fraction: self.inlier_fraction,
            min_inlier_fraction: self.min_inlier_fraction,
            seed: self.seed,
            ..RansacConfig::default()
        }
    }
}
