//! Crown annotations, species grouping, tiling of orthomosaics and spatial
//! train/val/test splits.

mod io;
mod splits;
mod tiling;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{GeometryError, Polygon};
use crate::raster::{GeoTransform, PixelWindow, RasterError};

pub use io::{
    read_annotations, read_manifest, read_polygons, read_split_regions, write_manifest,
    DatasetSummary, MANIFEST_FILE, SUMMARY_FILE, TILES_DIR,
};
pub use splits::{assign_splits, validate_splits, MissingClass, SplitReport, SplitTotals};
pub use tiling::{
    clip_labels_to_tile, generate_tiles, write_tile_rasters, NormalizationMode, TiledSource,
    TilingParams, VisibilityMode,
};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: String, message: String },
    #[error("DSM is not aligned to the RGB grid: {0}")]
    Unaligned(String),
    #[error("split regions overlap: {0}")]
    OverlappingRegions(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// One delineated tree crown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrownAnnotation {
    pub id: String,
    /// CRS coordinates.
    pub polygon: Polygon,
    /// Lowercase species code such as `piba`.
    pub species: String,
    pub site_id: String,
}

pub const OTHER_LABEL: &str = "other";

/// Species-to-class grouping. Kept species come first in descending order
/// of annotation count; every other species maps to the trailing `other`
/// class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassMap {
    pub kept_species: Vec<String>,
    pub other_label: String,
    /// Species with more than this many annotations get their own class.
    pub threshold: usize,
}

impl ClassMap {
    pub fn from_counts(counts: &BTreeMap<String, usize>, threshold: usize) -> Self {
        let mut kept: Vec<(&String, usize)> = counts
            .iter()
            .filter(|(s, &n)| n > threshold && s.as_str() != OTHER_LABEL)
            .map(|(s, &n)| (s, n))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        ClassMap {
            kept_species: kept.into_iter().map(|(s, _)| s.clone()).collect(),
            other_label: OTHER_LABEL.to_string(),
            threshold,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.kept_species.len() + 1
    }

    pub fn other_class(&self) -> u32 {
        self.kept_species.len() as u32
    }

    pub fn class_of(&self, species: &str) -> u32 {
        self.kept_species
            .iter()
            .position(|s| s == species)
            .map_or(self.other_class(), |i| i as u32)
    }

    pub fn class_name(&self, class_id: u32) -> Option<&str> {
        let i = class_id as usize;
        match i.cmp(&self.kept_species.len()) {
            std::cmp::Ordering::Less => Some(&self.kept_species[i]),
            std::cmp::Ordering::Equal => Some(&self.other_label),
            std::cmp::Ordering::Greater => None,
        }
    }

    pub fn class_names(&self) -> Vec<String> {
        let mut names = self.kept_species.clone();
        names.push(self.other_label.clone());
        names
    }
}

/// Groups species with more than `threshold` crowns across all sites into
/// their own classes and the rest into `other`.
pub fn build_class_map(annotations: &[CrownAnnotation], threshold: usize) -> ClassMap {
    let mut counts = BTreeMap::new();
    for a in annotations {
        *counts.entry(a.species.clone()).or_insert(0usize) += 1;
    }
    ClassMap::from_counts(&counts, threshold)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
    /// Excluded: the tile footprint touches regions of two splits, or its
    /// center lies in no region.
    Unassigned,
}

impl Split {
    pub const ASSIGNABLE: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::Unassigned => "unassigned",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            "unassigned" => Ok(Split::Unassigned),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}

/// A geographic block assigned wholesale to one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRegion {
    pub polygon: Polygon,
    pub split: Split,
}

/// A crown clipped to a tile, in tile-pixel coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileLabel {
    pub annotation_id: String,
    pub polygon: Polygon,
    pub class_id: u32,
    pub species: String,
    pub visible_fraction: f64,
}

/// One line of `manifest.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tile {
    pub tile_id: String,
    pub source: String,
    pub window: PixelWindow,
    /// Geotransform of the tile itself (origin at its top-left pixel).
    pub geotransform: GeoTransform,
    /// `[min_x, min_y, max_x, max_y]` in CRS units.
    pub geo_bounds: [f64; 4],
    pub black_fraction: f64,
    /// `None` until split assignment has run.
    pub split: Option<Split>,
    pub labels: Vec<TileLabel>,
}

/// Tile records plus the dataset-level metadata written to `dataset.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileManifest {
    pub class_map: ClassMap,
    pub params: TilingParams,
    pub sources: Vec<SourceInfo>,
    pub tiles: Vec<Tile>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceInfo {
    pub name: String,
    pub rgb_sha256: String,
    pub dsm_sha256: String,
}

impl TileManifest {
    /// Tiles that take part in downstream counts (everything not excluded
    /// by the leakage rule).
    pub fn active_tiles(&self) -> impl Iterator<Item = &Tile> {
        self.tiles
            .iter()
            .filter(|t| t.split != Some(Split::Unassigned))
    }

    pub fn check_unique_ids(&self) -> Result<(), DatasetError> {
        let mut seen = std::collections::HashSet::new();
        for t in &self.tiles {
            if !seen.insert(t.tile_id.as_str()) {
                return Err(DatasetError::InvalidParameter(format!(
                    "duplicate tile id `{}`",
                    t.tile_id
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counts(pairs: &[(&str, usize)]) -> BTreeMap<String, usize> {
        pairs.iter().map(|&(s, n)| (s.to_string(), n)).collect()
    }

    #[test]
    fn class_map_orders_by_count() {
        let cm = ClassMap::from_counts(&counts(&[("a", 25), ("b", 10), ("c", 30)]), 20);
        assert_eq!(cm.class_names(), vec!["c", "a", "other"]);
        assert_eq!(cm.class_of("b"), 2);
        assert_eq!(cm.class_of("c"), 0);
        assert_eq!(cm.class_of("never-seen"), 2);
    }

    #[test]
    fn threshold_is_strict() {
        let cm = ClassMap::from_counts(&counts(&[("a", 20), ("b", 21)]), 20);
        assert_eq!(cm.kept_species, vec!["b"]);
    }

    #[test]
    fn all_rare_gives_only_other() {
        let cm = ClassMap::from_counts(&counts(&[("a", 3), ("b", 20)]), 20);
        assert_eq!(cm.class_names(), vec!["other"]);
        assert_eq!(cm.num_classes(), 1);
    }

    #[test]
    fn site_totals_give_nine_classes() {
        let cm = ClassMap::from_counts(
            &counts(&[
                ("piba", 5379),
                ("pima", 925),
                ("pist", 992),
                ("pigl", 9079),
                ("thoc", 763),
                ("ulam", 419),
                ("beal", 23),
                ("acsa", 78),
                ("other", 1842),
            ]),
            20,
        );
        assert_eq!(cm.num_classes(), 9);
        assert_eq!(
            cm.class_names(),
            vec!["pigl", "piba", "pist", "pima", "thoc", "ulam", "acsa", "beal", "other"]
        );
    }

    #[test]
    fn build_from_annotations_counts_species() {
        let poly = Polygon::from_exterior(vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]]).unwrap();
        let ann: Vec<CrownAnnotation> = ["x", "y", "y"]
            .iter()
            .enumerate()
            .map(|(i, s)| CrownAnnotation {
                id: i.to_string(),
                polygon: poly.clone(),
                species: s.to_string(),
                site_id: "s".into(),
            })
            .collect();
        let cm = build_class_map(&ann, 1);
        assert_eq!(cm.class_names(), vec!["y", "other"]);
    }
}
