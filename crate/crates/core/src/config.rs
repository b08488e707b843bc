//! Run configuration shared by every CLI subcommand. Defaults are the
//! reference hyperparameters; a JSON file may override any subset and
//! command-line flags override the file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{NormalizationMode, TilingParams, VisibilityMode};
use crate::evaluation::{ApMode, EvalParams, DEFAULT_MAX_DETS};
use crate::geometry::{NmsParams, OverlapMetric};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// One orthomosaic with its DSM and AOI polygons. Raster paths are bases
/// of native raster pairs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceInput {
    pub name: String,
    pub rgb: PathBuf,
    pub dsm: PathBuf,
    pub aoi: PathBuf,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputPaths {
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub sources: Vec<SourceInput>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub annotations: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub regions: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub predictions: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub inputs: InputPaths,
    pub tile_size: u32,
    pub overlap: f64,
    pub max_black_fraction: f64,
    pub min_visible_fraction: f64,
    pub visibility: VisibilityMode,
    /// Species with more crowns than this get their own class.
    pub species_threshold: usize,
    pub normalization: NormalizationMode,
    pub pps: u32,
    pub maxima_window: u32,
    pub min_height: Option<f64>,
    pub nms_score_threshold: f64,
    pub nms_iou_threshold: f64,
    pub nms_class_aware: bool,
    pub nms_overlap: OverlapMetric,
    pub ap_mode: ApMode,
    pub max_dets: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            inputs: InputPaths::default(),
            tile_size: 1024,
            overlap: 0.5,
            max_black_fraction: 0.8,
            min_visible_fraction: 0.2,
            visibility: VisibilityMode::Area,
            species_threshold: 20,
            normalization: NormalizationMode::PerTile,
            pps: 100,
            maxima_window: 100,
            min_height: None,
            nms_score_threshold: 0.5,
            nms_iou_threshold: 0.5,
            nms_class_aware: false,
            nms_overlap: OverlapMetric::Mask,
            ap_mode: ApMode::Coco,
            max_dets: DEFAULT_MAX_DETS,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.to_string(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text, &path.display().to_string())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.tile_size == 0 {
            return bad("tile_size must be positive".into());
        }
        if !(0.0..1.0).contains(&self.overlap) {
            return bad(format!("overlap {} outside [0, 1)", self.overlap));
        }
        for (name, v) in [
            ("max_black_fraction", self.max_black_fraction),
            ("min_visible_fraction", self.min_visible_fraction),
            ("nms_score_threshold", self.nms_score_threshold),
            ("nms_iou_threshold", self.nms_iou_threshold),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} {v} outside [0, 1]"));
            }
        }
        if self.pps == 0 {
            return bad("pps must be at least 1".into());
        }
        if self.maxima_window == 0 {
            return bad("maxima_window must be at least 1".into());
        }
        if self.max_dets == 0 {
            return bad("max_dets must be at least 1".into());
        }
        if self.min_height.is_some_and(|h| !h.is_finite()) {
            return bad("min_height must be finite".into());
        }
        Ok(())
    }

    pub fn tiling_params(&self) -> TilingParams {
        TilingParams {
            tile_size: self.tile_size,
            overlap: self.overlap,
            max_black_fraction: self.max_black_fraction,
            min_visible_fraction: self.min_visible_fraction,
            visibility: self.visibility,
        }
    }

    pub fn nms_params(&self) -> NmsParams {
        NmsParams {
            score_threshold: self.nms_score_threshold,
            iou_threshold: self.nms_iou_threshold,
            class_aware: self.nms_class_aware,
            overlap: self.nms_overlap,
        }
    }

    pub fn eval_params(&self) -> EvalParams {
        EvalParams {
            ap_mode: self.ap_mode,
            max_dets: self.max_dets,
        }
    }

    /// The configuration as embedded in outputs.
    pub fn to_value(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reference_values() {
        let c = RunConfig::default();
        assert_eq!(c.tile_size, 1024);
        assert_eq!(c.overlap, 0.5);
        assert_eq!(c.max_black_fraction, 0.8);
        assert_eq!(c.min_visible_fraction, 0.2);
        assert_eq!(c.maxima_window, 100);
        assert_eq!(c.pps, 100);
        assert_eq!((c.nms_score_threshold, c.nms_iou_threshold), (0.5, 0.5));
        assert_eq!(c.species_threshold, 20);
        assert_eq!(c.tiling_params(), TilingParams::default());
        assert_eq!(c.nms_params(), NmsParams::default());
        assert!(c.validate().is_ok());
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let c = RunConfig::from_json(r#"{"tile_size": 512, "ap_mode": "ap50"}"#, "cfg").unwrap();
        assert_eq!(c.tile_size, 512);
        assert_eq!(c.ap_mode, ApMode::Ap50);
        assert_eq!(c.overlap, 0.5);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(
            RunConfig::from_json(r#"{"tile_sise": 512}"#, "cfg"),
            Err(ConfigError::Parse { .. })
        ));
        assert!(RunConfig::from_json(r#"{"inputs": {"manifets": "x"}}"#, "cfg").is_err());
    }

    #[test]
    fn out_of_range_rejected() {
        for text in [
            r#"{"tile_size": 0}"#,
            r#"{"overlap": 1.0}"#,
            r#"{"max_black_fraction": 1.5}"#,
            r#"{"nms_iou_threshold": -0.1}"#,
            r#"{"pps": 0}"#,
        ] {
            assert!(matches!(RunConfig::from_json(text, "cfg"), Err(ConfigError::Invalid(_))), "{text}");
        }
    }

    #[test]
    fn round_trips_through_json() {
        let c = RunConfig {
            min_height: Some(2.0),
            ..RunConfig::default()
        };
        let back = RunConfig::from_json(&c.to_value().to_string(), "echo").unwrap();
        assert_eq!(back, c);
    }
}
