//! Pipeline tunables, a flat `key = value` file format and a stable hash of
//! the resolved values.

use std::fmt::Write as _;
use std::str::FromStr;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::features::DetectorParams;
use crate::geometry::{BundleConfig, CameraIntrinsics, RansacParams, ResectionParams, TriangulationParams};
use crate::reconstruct::FilterParams;
use crate::semantics::OobVotes;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("unknown key '{0}'")]
    UnknownKey(String),
    #[error("{key}: invalid value '{value}'")]
    BadValue { key: String, value: String },
    #[error("{0}")]
    OutOfRange(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub focal_px: f64,
    pub image_width: usize,
    pub image_height: usize,
    pub max_features: usize,
    pub ratio_test: f64,
    pub semantic_filter: bool,
    pub min_inlier_fraction: f64,
    pub ransac_threshold_px: f64,
    pub ransac_iterations: usize,
    pub seed: u64,
    pub min_pair_inliers: usize,
    pub triangulation_max_reproj_px: f64,
    pub min_triangulation_angle_deg: f64,
    pub seed_pair_min_parallax_deg: f64,
    pub resection_threshold_px: f64,
    pub min_resection_inliers: usize,
    pub ba_every: usize,
    pub ba_max_iterations: usize,
    pub ba_tolerance: f64,
    /// Iteration cap for the bundle adjustments run while growing.
    pub ba_intermediate_iterations: usize,
    pub filter_max_reproj_px: f64,
    pub filter_knn: usize,
    pub filter_std: f64,
    pub oob_votes: OobVotes,
    pub use_gcps: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            focal_px: 800.0,
            image_width: 800,
            image_height: 600,
            max_features: 2000,
            ratio_test: 0.8,
            semantic_filter: true,
            min_inlier_fraction: 0.15,
            ransac_threshold_px: 1.5,
            ransac_iterations: 2000,
            seed: 42,
            min_pair_inliers: 15,
            triangulation_max_reproj_px: 4.0,
            min_triangulation_angle_deg: 1.0,
            seed_pair_min_parallax_deg: 2.0,
            resection_threshold_px: 4.0,
            min_resection_inliers: 12,
            ba_every: 3,
            ba_max_iterations: 50,
            ba_tolerance: 1e-8,
            ba_intermediate_iterations: 10,
            filter_max_reproj_px: 4.0,
            filter_knn: 8,
            filter_std: 2.0,
            oob_votes: OobVotes::Clamp,
            use_gcps: true,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::BadValue { key: key.into(), value: value.into() })
}

impl PipelineConfig {
    /// Set one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "focal_px" => self.focal_px = parse(key, value)?,
            "image_width" => self.image_width = parse(key, value)?,
            "image_height" => self.image_height = parse(key, value)?,
            "max_features" => self.max_features = parse(key, value)?,
            "ratio_test" => self.ratio_test = parse(key, value)?,
            "semantic_filter" => self.semantic_filter = parse(key, value)?,
            "min_inlier_fraction" => self.min_inlier_fraction = parse(key, value)?,
            "ransac_threshold_px" => self.ransac_threshold_px = parse(key, value)?,
            "ransac_iterations" => self.ransac_iterations = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "min_pair_inliers" => self.min_pair_inliers = parse(key, value)?,
            "triangulation_max_reproj_px" => self.triangulation_max_reproj_px = parse(key, value)?,
            "min_triangulation_angle_deg" => self.min_triangulation_angle_deg = parse(key, value)?,
            "seed_pair_min_parallax_deg" => self.seed_pair_min_parallax_deg = parse(key, value)?,
            "resection_threshold_px" => self.resection_threshold_px = parse(key, value)?,
            "min_resection_inliers" => self.min_resection_inliers = parse(key, value)?,
            "ba_every" => self.ba_every = parse(key, value)?,
            "ba_max_iterations" => self.ba_max_iterations = parse(key, value)?,
            "ba_tolerance" => self.ba_tolerance = parse(key, value)?,
            "ba_intermediate_iterations" => self.ba_intermediate_iterations = parse(key, value)?,
            "filter_max_reproj_px" => self.filter_max_reproj_px = parse(key, value)?,
            "filter_knn" => self.filter_knn = parse(key, value)?,
            "filter_std" => self.filter_std = parse(key, value)?,
            "oob_votes" => self.oob_votes = parse(key, value)?,
            "use_gcps" => self.use_gcps = parse(key, value)?,
            _ => return Err(ConfigError::UnknownKey(key.into())),
        }
        Ok(())
    }

    /// Canonical `key = value` text, one line per key in a fixed order.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: &dyn std::fmt::Display| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("focal_px", &self.focal_px);
        kv("image_width", &self.image_width);
        kv("image_height", &self.image_height);
        kv("max_features", &self.max_features);
        kv("ratio_test", &self.ratio_test);
        kv("semantic_filter", &self.semantic_filter);
        kv("min_inlier_fraction", &self.min_inlier_fraction);
        kv("ransac_threshold_px", &self.ransac_threshold_px);
        kv("ransac_iterations", &self.ransac_iterations);
        kv("seed", &self.seed);
        kv("min_pair_inliers", &self.min_pair_inliers);
        kv("triangulation_max_reproj_px", &self.triangulation_max_reproj_px);
        kv("min_triangulation_angle_deg", &self.min_triangulation_angle_deg);
        kv("seed_pair_min_parallax_deg", &self.seed_pair_min_parallax_deg);
        kv("resection_threshold_px", &self.resection_threshold_px);
        kv("min_resection_inliers", &self.min_resection_inliers);
        kv("ba_every", &self.ba_every);
        kv("ba_max_iterations", &self.ba_max_iterations);
        kv("ba_tolerance", &self.ba_tolerance);
        kv("ba_intermediate_iterations", &self.ba_intermediate_iterations);
        kv("filter_max_reproj_px", &self.filter_max_reproj_px);
        kv("filter_knn", &self.filter_knn);
        kv("filter_std", &self.filter_std);
        kv("oob_votes", &self.oob_votes);
        kv("use_gcps", &self.use_gcps);
        s
    }

    /// Apply a flat `key = value` file on top of the current values. Blank
    /// lines and `#` comments are ignored.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (k, raw) in text.lines().enumerate() {
            let l = raw.trim();
            if l.is_empty() || l.starts_with('#') {
                continue;
            }
            let Some((key, value)) = l.split_once('=') else {
                return Err(ConfigError::Syntax { line: k + 1, reason: "expected 'key = value'".into() });
            };
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let mut c = Self::default();
        c.apply_text(text)?;
        c.validate()?;
        Ok(c)
    }

    /// Hex SHA-256 of [`Self::to_text`].
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_text().as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::OutOfRange(m.into()));
        for (name, f) in [("ratio_test", self.ratio_test), ("min_inlier_fraction", self.min_inlier_fraction)] {
            if !(0.0..=1.0).contains(&f) {
                return bad(&format!("{name} must lie in [0, 1]"));
            }
        }
        let positive = [
            ("focal_px", self.focal_px),
            ("ransac_threshold_px", self.ransac_threshold_px),
            ("triangulation_max_reproj_px", self.triangulation_max_reproj_px),
            ("resection_threshold_px", self.resection_threshold_px),
            ("ba_tolerance", self.ba_tolerance),
            ("filter_max_reproj_px", self.filter_max_reproj_px),
            ("filter_std", self.filter_std),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return bad(&format!("{name} must be positive"));
            }
        }
        if self.min_triangulation_angle_deg < 0.0 || self.seed_pair_min_parallax_deg < 0.0 {
            return bad("angles must be non-negative");
        }
        if self.image_width == 0 || self.image_height == 0 || self.max_features == 0 {
            return bad("image size and max_features must be positive");
        }
        if self.ransac_iterations == 0 || self.ba_every == 0 {
            return bad("ransac_iterations and ba_every must be positive");
        }
        if self.min_pair_inliers < 8 || self.min_resection_inliers < 6 {
            return bad("min_pair_inliers must be >= 8 and min_resection_inliers >= 6");
        }
        Ok(())
    }

    pub fn intrinsics(&self) -> CameraIntrinsics {
        CameraIntrinsics {
            focal: self.focal_px,
            cx: (self.image_width as f64 - 1.0) / 2.0,
            cy: (self.image_height as f64 - 1.0) / 2.0,
            width: self.image_width,
            height: self.image_height,
        }
    }

    pub fn detector(&self) -> DetectorParams {
        DetectorParams::default()
    }

    pub fn pair_ransac(&self) -> RansacParams {
        RansacParams {
            threshold_px: self.ransac_threshold_px,
            iterations: self.ransac_iterations,
            seed: self.seed,
            min_inliers: self.min_pair_inliers,
            ..RansacParams::default()
        }
    }

    pub fn resection(&self) -> ResectionParams {
        let d = ResectionParams::default();
        ResectionParams {
            ransac: RansacParams {
                threshold_px: self.resection_threshold_px,
                iterations: self.ransac_iterations,
                seed: self.seed,
                min_inliers: self.min_resection_inliers,
                ..d.ransac
            },
            ..d
        }
    }

    pub fn triangulation(&self) -> TriangulationParams {
        TriangulationParams {
            max_reproj_px: self.triangulation_max_reproj_px,
            min_parallax_deg: self.min_triangulation_angle_deg,
        }
    }

    pub fn bundle(&self) -> BundleConfig {
        BundleConfig { max_iterations: self.ba_max_iterations, tolerance: self.ba_tolerance }
    }

    pub fn filter(&self) -> FilterParams {
        FilterParams {
            max_reproj_px: self.filter_max_reproj_px,
            knn: self.filter_knn,
            std_multiplier: self.filter_std,
            until_stable: false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_text() {
        let c = PipelineConfig::default();
        assert_eq!(PipelineConfig::from_text(&c.to_text()).unwrap(), c);
        assert_eq!(c.hash().len(), 64);
        assert_eq!(c.hash(), PipelineConfig::default().hash());
    }

    #[test]
    fn file_overrides_and_hash_changes() {
        let c = PipelineConfig::from_text("# tuned\nratio_test = 0.7\n\nsemantic_filter=false\n").unwrap();
        assert_eq!(c.ratio_test, 0.7);
        assert!(!c.semantic_filter);
        assert_ne!(c.hash(), PipelineConfig::default().hash());
    }

    #[test]
    fn errors_are_specific() {
        assert_eq!(PipelineConfig::from_text("nope = 1"), Err(ConfigError::UnknownKey("nope".into())));
        assert!(matches!(PipelineConfig::from_text("seed 4"), Err(ConfigError::Syntax { line: 1, .. })));
        assert!(matches!(PipelineConfig::from_text("ratio_test = x"), Err(ConfigError::BadValue { .. })));
        assert!(matches!(PipelineConfig::from_text("min_inlier_fraction = 1.5"), Err(ConfigError::OutOfRange(_))));
        assert!(matches!(PipelineConfig::from_text("oob_votes = maybe"), Err(ConfigError::BadValue { .. })));
    }

    #[test]
    fn default_intrinsics_are_centered() {
        let i = PipelineConfig::default().intrinsics();
        assert_eq!((i.cx, i.cy, i.width, i.height), (399.5, 299.5, 800, 600));
        i.validate().unwrap();
    }
}
