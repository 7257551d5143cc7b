//! Whole-pipeline configuration as one JSON document.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::augmentation::AugmentationConfig;
use crate::bev::GridConfig;
use crate::codec::{AnchorSpec, CodecConfig};
use crate::dataset::DEFAULT_MIN_POINTS;
use crate::eval::EvalConfig;
use crate::lidar2radar::RadarizationConfig;
use crate::synth::{PerturbationSpec, SceneSpec};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("bad override {0:?}: expected key.path=value")]
    BadOverride(String),
    #[error("override path {0:?} does not name a config key")]
    UnknownKey(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub input: Option<String>,
    pub output: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TargetConfig {
    pub anchors: AnchorSpec,
    pub stride: usize,
    pub classes: Vec<String>,
    pub score_threshold: f64,
    pub nms_iou_threshold: f64,
}

impl Default for TargetConfig {
    fn default() -> Self {
        let c = CodecConfig::default();
        Self {
            anchors: c.anchors,
            stride: c.stride,
            classes: c.classes,
            score_threshold: c.score_threshold,
            nms_iou_threshold: c.nms_iou_threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub paths: Paths,
    pub radarization: RadarizationConfig,
    pub augmentation: AugmentationConfig,
    pub gt_min_points: usize,
    pub grid: GridConfig,
    pub targets: TargetConfig,
    pub evaluation: EvalConfig,
    pub synth: SceneSpec,
    pub detections: PerturbationSpec,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            paths: Paths::default(),
            radarization: RadarizationConfig::default(),
            augmentation: AugmentationConfig::default(),
            gt_min_points: DEFAULT_MIN_POINTS,
            grid: GridConfig::default(),
            targets: TargetConfig::default(),
            evaluation: EvalConfig::default(),
            synth: SceneSpec::default(),
            detections: PerturbationSpec::default(),
        }
    }
}

impl PipelineConfig {
    /// Parses `json` (or the defaults when `None`), applies `key.path=value`
    /// overrides, then validates.
    pub fn load(json: Option<&str>, overrides: &[String]) -> Result<Self, ConfigError> {
        let base: Self = match json {
            Some(text) => serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?,
            None => Self::default(),
        };
        // Round-trip through a full document so overrides can target keys
        // the file left at their defaults.
        let mut value = serde_json::to_value(&base).expect("config serializes");
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let cfg: Self = serde_json::from_value(value).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let inv = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        self.radarization.validate().map_err(|e| inv(&e))?;
        self.augmentation.validate().map_err(|e| inv(&e))?;
        self.grid.validate().map_err(|e| inv(&e))?;
        self.synth.validate().map_err(|e| inv(&e))?;
        crate::codec::AnchorGrid::new(&self.codec()).map_err(|e| inv(&e))?;
        if !(0.0..=1.0).contains(&self.evaluation.iou_threshold) {
            return Err(ConfigError::Invalid("evaluation.iou_threshold must lie in [0, 1]".into()));
        }
        let d = &self.detections;
        if !(0.0..=1.0).contains(&d.drop_rate) || d.fp_rate < 0.0 || d.position_sigma < 0.0 || d.yaw_sigma < 0.0 {
            return Err(ConfigError::Invalid("detection perturbation parameters out of range".into()));
        }
        Ok(())
    }

    pub fn codec(&self) -> CodecConfig {
        CodecConfig {
            anchors: self.targets.anchors.clone(),
            grid: self.grid,
            stride: self.targets.stride,
            classes: self.targets.classes.clone(),
            score_threshold: self.targets.score_threshold,
            nms_iou_threshold: self.targets.nms_iou_threshold,
        }
    }
}

/// Sets `a.b.c=value` in `doc`. The value is parsed as JSON, falling back to
/// a plain string. The key must already exist.
pub fn apply_override(doc: &mut Value, spec: &str) -> Result<(), ConfigError> {
    let (path, raw) = spec.split_once('=').ok_or_else(|| ConfigError::BadOverride(spec.to_string()))?;
    if path.is_empty() {
        return Err(ConfigError::BadOverride(spec.to_string()));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cur = doc;
    for key in path.split('.') {
        cur = match cur {
            Value::Object(map) => map.get_mut(key).ok_or_else(|| ConfigError::UnknownKey(path.to_string()))?,
            Value::Array(items) => key
                .parse::<usize>()
                .ok()
                .and_then(|i| items.get_mut(i))
                .ok_or_else(|| ConfigError::UnknownKey(path.to_string()))?,
            _ => return Err(ConfigError::UnknownKey(path.to_string())),
        };
    }
    *cur = value;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let c = PipelineConfig::load(None, &[]).unwrap();
        assert_eq!(c, PipelineConfig::default());
    }

    #[test]
    fn overrides_apply() {
        let c = PipelineConfig::load(
            Some(r#"{"seed": 3}"#),
            &["radarization.range_noise_sigma=0.3".into(), "augmentation.rotation_range.1=0.5".into()],
        )
        .unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.radarization.range_noise_sigma, 0.3);
        assert_eq!(c.augmentation.rotation_range, [-std::f64::consts::FRAC_PI_4, 0.5]);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(PipelineConfig::load(Some(r#"{"sed": 3}"#), &[]), Err(ConfigError::Parse(_))));
        assert!(matches!(PipelineConfig::load(None, &["nope.x=1".into()]), Err(ConfigError::UnknownKey(_))));
        assert!(matches!(PipelineConfig::load(None, &["seed".into()]), Err(ConfigError::BadOverride(_))));
        assert!(matches!(
            PipelineConfig::load(None, &["radarization.elevation_scale=2".into()]),
            Err(ConfigError::Invalid(_))
        ));
    }
}
