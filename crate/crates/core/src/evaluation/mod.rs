//! Scoring of instance-mask predictions against tiled ground truth:
//! greedy IoU matching, per-class AP, mAP, count-weighted mAP, the
//! single-class collapse and best-match mIoU.

mod io;
mod matching;
mod metrics;

use std::collections::BTreeMap;

use log::warn;
use thiserror::Error;

use crate::dataset::{Split, TileManifest};
use crate::geometry::{rasterize_polygon, BinaryMask, GeometryError, ScoredInstance};

pub use io::{read_predictions, write_report, MaskRecord, PredictionRecord, REPORT_CSV, REPORT_JSON};
pub use matching::{match_instances, MatchParams, MatchTable, TileMatch};
pub use metrics::{
    aggregate, average_precision, average_precision_at, evaluate, interpolated_ap,
    single_class_metrics, Aggregate, ApMode, ClassResult, EvalParams, EvalReport, SingleClassMetrics,
};

/// Detections kept per tile (highest fused score first) before matching.
pub const DEFAULT_MAX_DETS: usize = 300;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("score {value} outside [0, 1]")]
    InvalidScore { value: f64 },
    #[error("prediction for unknown tile `{0}`")]
    UnknownTile(String),
    #[error("class id {class_id} outside the {num_classes} known classes")]
    InvalidClass { class_id: u32, num_classes: usize },
    #[error("tile `{tile_id}`: mask is {got:?}, tile is {expected:?}")]
    DimensionMismatch {
        tile_id: String,
        expected: (u32, u32),
        got: (u32, u32),
    },
    #[error("tile `{0}`: prediction mask has no set pixels")]
    EmptyMask(String),
    #[error("ground truth has no instances")]
    EmptyGroundTruth,
    #[error("{0}")]
    Aggregate(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: line {line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{0}")]
    Output(String),
}

/// Mean of the two scores when a secondary score (e.g. a segmenter's own
/// IoU estimate) is present, the primary score otherwise.
pub fn fuse_scores(primary: f64, secondary: Option<f64>) -> Result<f64, EvalError> {
    let check = |v: f64| {
        if (0.0..=1.0).contains(&v) {
            Ok(v)
        } else {
            Err(EvalError::InvalidScore { value: v })
        }
    };
    let p = check(primary)?;
    match secondary {
        Some(s) => Ok(0.5 * (p + check(s)?)),
        None => Ok(p),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GtInstance {
    pub mask: BinaryMask,
    pub class_id: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GtTile {
    pub width: u32,
    pub height: u32,
    pub instances: Vec<GtInstance>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthSet {
    pub class_names: Vec<String>,
    pub tiles: BTreeMap<String, GtTile>,
    /// Instances dropped while building the set.
    pub warnings: Vec<String>,
}

impl GroundTruthSet {
    pub fn new(class_names: Vec<String>, tiles: BTreeMap<String, GtTile>) -> Result<Self, EvalError> {
        for (id, t) in &tiles {
            for inst in &t.instances {
                if inst.class_id as usize >= class_names.len() {
                    return Err(EvalError::InvalidClass {
                        class_id: inst.class_id,
                        num_classes: class_names.len(),
                    });
                }
                if (inst.mask.width(), inst.mask.height()) != (t.width, t.height) {
                    return Err(EvalError::DimensionMismatch {
                        tile_id: id.clone(),
                        expected: (t.width, t.height),
                        got: (inst.mask.width(), inst.mask.height()),
                    });
                }
                if inst.mask.is_empty() {
                    return Err(EvalError::EmptyMask(id.clone()));
                }
            }
        }
        Ok(GroundTruthSet {
            class_names,
            tiles,
            warnings: Vec::new(),
        })
    }

    /// Rasterizes the labels of every tile in `split` (every tile not
    /// excluded by the leakage rule when `split` is `None`). Labels that
    /// cover no pixel center are dropped with a warning.
    pub fn from_manifest(manifest: &TileManifest, split: Option<Split>) -> Result<Self, EvalError> {
        let mut tiles = BTreeMap::new();
        let mut warnings = Vec::new();
        let selected = manifest.active_tiles().filter(|t| split.is_none() || t.split == split);
        for t in selected {
            let (w, h) = (t.window.width, t.window.height);
            let mut instances = Vec::with_capacity(t.labels.len());
            for l in &t.labels {
                let mask = rasterize_polygon(&l.polygon, w, h)?;
                if mask.is_empty() {
                    let msg = format!(
                        "tile `{}`: label `{}` covers no pixel center and is ignored",
                        t.tile_id, l.annotation_id
                    );
                    warn!("{msg}");
                    warnings.push(msg);
                    continue;
                }
                instances.push(GtInstance {
                    mask,
                    class_id: l.class_id,
                });
            }
            tiles.insert(
                t.tile_id.clone(),
                GtTile {
                    width: w,
                    height: h,
                    instances,
                },
            );
        }
        let mut set = GroundTruthSet::new(manifest.class_map.class_names(), tiles)?;
        set.warnings = warnings;
        Ok(set)
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// `n_c`: ground-truth instances per class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for t in self.tiles.values() {
            for i in &t.instances {
                counts[i.class_id as usize] += 1;
            }
        }
        counts
    }

    pub fn num_instances(&self) -> usize {
        self.tiles.values().map(|t| t.instances.len()).sum()
    }
}

/// One predicted instance; `score2` is an optional secondary confidence
/// fused with `score` by [`fuse_scores`].
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub class_id: u32,
    pub score: f64,
    pub score2: Option<f64>,
    pub mask: BinaryMask,
}

impl Prediction {
    pub fn fused_score(&self) -> Result<f64, EvalError> {
        fuse_scores(self.score, self.score2)
    }

    /// The instance as seen by NMS: same mask and class, fused score.
    pub fn to_scored(&self) -> Result<ScoredInstance, EvalError> {
        Ok(ScoredInstance::new(self.mask.clone(), self.class_id, self.fused_score()?)?)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PredictionSet {
    pub tiles: BTreeMap<String, Vec<Prediction>>,
}

impl PredictionSet {
    pub fn push(&mut self, tile_id: impl Into<String>, p: Prediction) {
        self.tiles.entry(tile_id.into()).or_default().push(p);
    }

    pub fn len(&self) -> usize {
        self.tiles.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Drops predictions on tiles of `manifest` that `gt` leaves out (other
    /// splits, fully blacked-out tiles). Unknown tile ids are kept so that
    /// evaluation still reports them.
    pub fn restrict_to(&mut self, gt: &GroundTruthSet, manifest: &TileManifest) {
        let known: std::collections::BTreeSet<&str> = manifest.tiles.iter().map(|t| t.tile_id.as_str()).collect();
        self.tiles.retain(|id, _| gt.tiles.contains_key(id) || !known.contains(id.as_str()));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fusion() {
        assert!((fuse_scores(0.8, Some(0.6)).unwrap() - 0.7).abs() < 1e-12);
        assert_eq!(fuse_scores(0.8, None).unwrap(), 0.8);
        assert_eq!(fuse_scores(1.0, Some(1.0)).unwrap(), 1.0);
        assert!(matches!(fuse_scores(1.2, None), Err(EvalError::InvalidScore { .. })));
        assert!(matches!(fuse_scores(0.5, Some(-0.1)), Err(EvalError::InvalidScore { .. })));
        assert!(fuse_scores(f64::NAN, None).is_err());
    }

    #[test]
    fn gt_set_rejects_bad_instances() {
        let tile = |m: BinaryMask, c: u32| {
            [(
                "t".to_string(),
                GtTile {
                    width: 4,
                    height: 4,
                    instances: vec![GtInstance { mask: m, class_id: c }],
                },
            )]
            .into_iter()
            .collect::<BTreeMap<_, _>>()
        };
        let names = vec!["a".to_string(), "other".to_string()];
        let full = BinaryMask::from_fn(4, 4, |_, _| true);
        assert!(GroundTruthSet::new(names.clone(), tile(full.clone(), 1)).is_ok());
        assert!(matches!(
            GroundTruthSet::new(names.clone(), tile(full, 2)),
            Err(EvalError::InvalidClass { .. })
        ));
        assert!(matches!(
            GroundTruthSet::new(names.clone(), tile(BinaryMask::zeros(4, 4), 0)),
            Err(EvalError::EmptyMask(_))
        ));
        assert!(matches!(
            GroundTruthSet::new(names, tile(BinaryMask::from_fn(3, 4, |_, _| true), 0)),
            Err(EvalError::DimensionMismatch { .. })
        ));
    }
}
