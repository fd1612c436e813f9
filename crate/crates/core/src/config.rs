//! Run configuration shared by the command-line tools.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::calibrate;
use crate::error::{Error, Result};
use crate::estimator::{ExtractConfig, FitMode};
use crate::export::{DescriptorStrategy, ExportConfig, ExportMode};
use crate::pipeline::MatchConfig;

/// Every tunable of a run. Missing keys take their defaults; unknown keys
/// are an error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub min_views: usize,
    pub ratio: f64,
    pub abs_threshold: Option<f64>,
    pub root_sift: bool,
    pub r2_max: f64,
    pub max_residual: f64,
    pub max_asymmetry: f64,
    pub lambertian_eps: f64,
    pub trim_worst_view: bool,
    pub fit_mode: FitMode,
    pub stereo_baseline: Option<f64>,
    pub descriptor_strategy: DescriptorStrategy,
    pub descriptor_len: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            min_views: 5,
            ratio: 0.8,
            abs_threshold: None,
            root_sift: false,
            r2_max: calibrate::R2_MAX,
            max_residual: calibrate::DEFAULT_MAX_RESIDUAL,
            max_asymmetry: calibrate::DEFAULT_MAX_ASYMMETRY,
            lambertian_eps: calibrate::DEFAULT_LAMBERTIAN_EPS,
            trim_worst_view: false,
            fit_mode: FitMode::Unconstrained,
            stereo_baseline: None,
            descriptor_strategy: DescriptorStrategy::Identical,
            descriptor_len: 128,
        }
    }
}

impl RunConfig {
    /// Parse TOML or JSON, chosen by file extension (`.json` is JSON,
    /// anything else TOML).
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: RunConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.min_views < 4 {
            return Err(Error::Config(format!("min_views must be >= 4, got {}", self.min_views)));
        }
        if !(self.ratio > 0.0 && self.ratio <= 1.0) {
            return Err(Error::Config(format!("ratio must be in (0, 1], got {}", self.ratio)));
        }
        if !(0.0..=1.0).contains(&self.r2_max) {
            return Err(Error::Config(format!("r2_max must be in [0, 1], got {}", self.r2_max)));
        }
        for (name, x) in [
            ("max_residual", self.max_residual),
            ("max_asymmetry", self.max_asymmetry),
            ("lambertian_eps", self.lambertian_eps),
        ] {
            if x.is_nan() || x < 0.0 {
                return Err(Error::Config(format!("{name} must be >= 0, got {x}")));
            }
        }
        if let Some(b) = self.stereo_baseline {
            if b.is_nan() || b <= 0.0 {
                return Err(Error::Config(format!("stereo_baseline must be > 0, got {b}")));
            }
        }
        self.descriptor_strategy.validate()?;
        Ok(())
    }

    pub fn extract(&self) -> ExtractConfig {
        ExtractConfig {
            min_views: self.min_views,
            r2_max: self.r2_max,
            max_residual: self.max_residual,
            max_asymmetry: self.max_asymmetry,
            lambertian_eps: self.lambertian_eps,
            trim_worst_view: self.trim_worst_view,
            fit_mode: self.fit_mode,
        }
    }

    pub fn matching(&self) -> MatchConfig {
        MatchConfig { ratio: self.ratio, abs_threshold: self.abs_threshold, min_views: self.min_views }
    }

    pub fn export(&self, mode: ExportMode) -> ExportConfig {
        ExportConfig {
            mode,
            baseline: self.stereo_baseline,
            strategy: self.descriptor_strategy,
            lambertian_eps: self.lambertian_eps,
            descriptor_len: self.descriptor_len,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn toml_and_json_configs() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cfg.toml");
        std::fs::File::create(&p).unwrap().write_all(b"min_views = 7\nratio = 0.7\nlambertian_eps = 0.1\n").unwrap();
        let c = RunConfig::load(&p).unwrap();
        assert_eq!((c.min_views, c.ratio, c.lambertian_eps), (7, 0.7, 0.1));
        assert_eq!(c.r2_max, 0.65);

        let p = dir.path().join("cfg.json");
        std::fs::write(&p, r#"{"r2_max": 0.5, "descriptor_strategy": {"bias": {"scale": 3.0, "offset": 0.1}}}"#).unwrap();
        let c = RunConfig::load(&p).unwrap();
        assert_eq!(c.r2_max, 0.5);
        assert_eq!(c.descriptor_strategy, DescriptorStrategy::Bias { scale: 3.0, offset: 0.1 });
    }

    #[test]
    fn bad_configs() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cfg.toml");
        std::fs::write(&p, "no_such_key = 1\n").unwrap();
        assert!(matches!(RunConfig::load(&p), Err(Error::Config(_))));
        std::fs::write(&p, "descriptor_strategy = \"fancy\"\n").unwrap();
        assert!(matches!(RunConfig::load(&p), Err(Error::Config(_))));
        std::fs::write(&p, "ratio = 1.5\n").unwrap();
        assert!(matches!(RunConfig::load(&p), Err(Error::Config(_))));
    }

    #[test]
    fn default_round_trips_through_json() {
        let c = RunConfig::default();
        let back: RunConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }
}
