//! Pipeline configuration: one TOML section per stage plus ablation switches.
//!
//! Every key has a default, unknown keys are rejected, and any key can be
//! overridden with a `section.key=value` string.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::association::AssociationConfig;
use crate::pose::RansacConfig;
use crate::projection::ProjectionConfig;
use crate::retrieval::RetrievalConfig;

/// Environment variable that replaces every seed in the configuration.
pub const SEED_ENV: &str = "RELOC_SEED";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(String),
    #[error("invalid override '{0}': expected section.key=value")]
    Override(String),
    #[error("invalid config value: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MappingConfig {
    /// Spacing of projecting poses along the trajectory.
    pub interval_m: f64,
    /// Radius of the local map rendered at each projecting pose.
    pub max_dist_m: f64,
}

impl Default for MappingConfig {
    fn default() -> Self {
        MappingConfig {
            interval_m: 1.0,
            max_dist_m: 50.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClaheConfig {
    pub clip_limit: f64,
    pub tiles: usize,
}

impl Default for ClaheConfig {
    fn default() -> Self {
        ClaheConfig {
            clip_limit: 2.0,
            tiles: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub global: String,
    pub local: String,
    pub ratio: f32,
    /// Keypoint budget for query images.
    pub max_kp: usize,
    /// Keypoint budget for map panoramas, which span four faces.
    pub max_kp_map: usize,
    /// Keypoint budget for second-stage crops.
    pub max_kp_crop: usize,
    /// Short side the query is resized to before global description.
    pub query_short_side: usize,
    /// Resample the query into panorama face geometry for global description
    /// and local matching.
    pub query_face_warp: bool,
    /// Resize factor applied to the query before local matching when it is
    /// not face-warped. Zero picks the factor that matches the panorama's
    /// central angular resolution.
    pub local_query_scale: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            global: "hog-gist".into(),
            local: "harris-patch".into(),
            ratio: 0.85,
            max_kp: 1024,
            max_kp_map: 4096,
            max_kp_crop: 512,
            query_short_side: 480,
            query_face_warp: true,
            local_query_scale: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub use_hec: bool,
    pub use_equalization: bool,
    pub use_covis_cluster: bool,
    pub use_two_stage: bool,
    pub use_covis_filter: bool,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            use_hec: true,
            use_equalization: true,
            use_covis_cluster: true,
            use_two_stage: true,
            use_covis_filter: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub mapping: MappingConfig,
    pub projection: ProjectionConfig,
    pub clahe: ClaheConfig,
    pub features: FeatureConfig,
    pub retrieval: RetrievalConfig,
    pub association: AssociationConfig,
    pub ransac: RansacConfig,
    pub ablation: AblationConfig,
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validated()
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    /// Applies `section.key=value` overrides. Values are parsed as TOML
    /// scalars, falling back to a bare string.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self, ConfigError> {
        if overrides.is_empty() {
            return Ok(self.clone());
        }
        let mut root = toml::Value::try_from(self).map_err(|e| ConfigError::Parse(e.to_string()))?;
        for item in overrides {
            let item = item.as_ref();
            let (key, raw) = item.split_once('=').ok_or_else(|| ConfigError::Override(item.into()))?;
            let (section, field) = key.trim().split_once('.').ok_or_else(|| ConfigError::Override(item.into()))?;
            let value = parse_scalar(raw.trim());
            let table = root
                .get_mut(section)
                .and_then(|v| v.as_table_mut())
                .ok_or_else(|| ConfigError::Parse(format!("unknown section '{section}'")))?;
            table.insert(field.to_string(), value);
        }
        let cfg: PipelineConfig = root.try_into().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        cfg.validated()
    }

    /// Replaces all seeds with `seed`.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.ransac.seed = seed;
        self
    }

    /// Applies [`SEED_ENV`] when set.
    pub fn with_env_seed(self) -> Result<Self, ConfigError> {
        match env_seed()? {
            Some(s) => Ok(self.with_seed(s)),
            None => Ok(self),
        }
    }

    /// Projection settings with the HEC ablation switch applied.
    pub fn projection(&self) -> ProjectionConfig {
        ProjectionConfig {
            use_hec: self.ablation.use_hec,
            ..self.projection
        }
    }

    pub fn validated(self) -> Result<Self, ConfigError> {
        let inv = |m: String| Err(ConfigError::Invalid(m));
        self.projection().validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if !(self.mapping.interval_m > 0.0) || !(self.mapping.max_dist_m > 0.0) {
            return inv("mapping distances must be positive".into());
        }
        if self.clahe.tiles == 0 || !(self.clahe.clip_limit >= 0.0) {
            return inv("clahe needs tiles >= 1 and clip_limit >= 0".into());
        }
        let f = &self.features;
        if !(f.ratio > 0.0 && f.ratio <= 1.0) {
            return inv(format!("features.ratio {} outside (0, 1]", f.ratio));
        }
        if f.max_kp == 0 || f.max_kp_map == 0 || f.max_kp_crop == 0 || f.query_short_side == 0 || !(f.local_query_scale >= 0.0) {
            return inv("feature budgets and sizes must be positive".into());
        }
        crate::features::global_extractor(&f.global).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        crate::features::local_extractor(&f.local).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.retrieval.validate().map_err(ConfigError::Invalid)?;
        self.association.validate().map_err(ConfigError::Invalid)?;
        self.ransac.validate().map_err(ConfigError::Invalid)?;
        Ok(self)
    }
}

/// Reads [`SEED_ENV`]; an unparsable value is an error.
pub fn env_seed() -> Result<Option<u64>, ConfigError> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| ConfigError::Invalid(format!("{SEED_ENV}='{s}' is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

fn parse_scalar(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_roundtrip_through_toml() {
        let cfg = PipelineConfig::default();
        let text = cfg.to_toml_string();
        assert_eq!(PipelineConfig::from_toml_str(&text).unwrap(), cfg);
        assert_eq!(PipelineConfig::from_toml_str("").unwrap(), cfg);
    }

    #[test]
    fn partial_file_and_unknown_keys() {
        let cfg = PipelineConfig::from_toml_str("[retrieval]\nk = 20\n").unwrap();
        assert_eq!(cfg.retrieval.k, 20);
        assert_eq!(cfg.retrieval.k_prime, RetrievalConfig::default().k_prime);
        assert!(PipelineConfig::from_toml_str("[retrieval]\nkk = 20\n").is_err());
        assert!(PipelineConfig::from_toml_str("[nope]\n").is_err());
    }

    #[test]
    fn overrides() {
        let cfg = PipelineConfig::default()
            .with_overrides(&["ransac.inlier_thresh_px=3.5", "features.global=hog-gist", "ablation.use_hec=false"])
            .unwrap();
        assert_eq!(cfg.ransac.inlier_thresh_px, 3.5);
        assert!(!cfg.ablation.use_hec);
        assert!(!cfg.projection().use_hec);
        assert!(PipelineConfig::default().with_overrides(&["ransac"]).is_err());
        assert!(PipelineConfig::default().with_overrides(&["ransac.bogus=1"]).is_err());
        assert!(PipelineConfig::default().with_overrides(&["features.ratio=1.5"]).is_err());
        let err = PipelineConfig::default().with_overrides(&["features.local=orb"]).unwrap_err();
        assert!(err.to_string().contains("harris-patch"), "{err}");
    }

    #[test]
    fn seed_override() {
        assert_eq!(PipelineConfig::default().with_seed(99).ransac.seed, 99);
    }
}
