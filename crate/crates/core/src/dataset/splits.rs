use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{ClassMap, DatasetError, Split, SplitRegion, Tile};
use crate::geometry::{clip_polygon_to_rect, Rect};

fn check_regions(regions: &[SplitRegion]) -> Result<(), DatasetError> {
    for (i, a) in regions.iter().enumerate() {
        if a.split == Split::Unassigned {
            return Err(DatasetError::InvalidParameter(format!(
                "split region {i} has split `unassigned`"
            )));
        }
        for (j, b) in regions.iter().enumerate().skip(i + 1) {
            if a.split != b.split && a.polygon.interiors_overlap(&b.polygon) {
                return Err(DatasetError::OverlappingRegions(format!(
                    "region {i} ({}) and region {j} ({})",
                    a.split, b.split
                )));
            }
        }
    }
    Ok(())
}

/// Assigns every tile to the split whose region contains the tile's
/// geographic center. Tiles whose footprint overlaps regions of two
/// different splits, or whose center lies in no region, become
/// [`Split::Unassigned`].
pub fn assign_splits(tiles: &[Tile], regions: &[SplitRegion]) -> Result<Vec<Tile>, DatasetError> {
    check_regions(regions)?;
    let mut out = tiles.to_vec();
    for tile in &mut out {
        let (w, h) = (f64::from(tile.window.width), f64::from(tile.window.height));
        let footprint = Rect::new(0.0, 0.0, w, h)?;
        // slivers left by the geo/pixel round trip on shared edges
        let eps = 1e-9 * footprint.area();
        let center = tile.geotransform.pixel_to_geo([0.5 * w, 0.5 * h]);

        let mut touching = BTreeSet::new();
        let mut center_split = None;
        for region in regions {
            let gt = tile.geotransform;
            let Ok(local) = region.polygon.map_coords(|c| gt.geo_to_pixel(c)) else {
                continue;
            };
            if clip_polygon_to_rect(&local, &footprint).is_some_and(|p| p.area() > eps) {
                touching.insert(region.split);
            }
            if center_split.is_none() && region.polygon.contains(center) {
                center_split = Some(region.split);
            }
        }
        tile.split = Some(match (touching.len(), center_split) {
            (1, Some(s)) => s,
            _ => Split::Unassigned,
        });
    }
    Ok(out)
}

/// Tile totals per split, in the shape reported alongside a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SplitTotals {
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub total: usize,
}

impl SplitTotals {
    pub fn is_consistent(&self) -> bool {
        self.train + self.val + self.test == self.total
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MissingClass {
    pub split: Split,
    pub class_id: u32,
    pub class_name: String,
}

/// Per-split tile and label counts with the classes missing from any split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitReport {
    pub passed: bool,
    pub totals: SplitTotals,
    pub unassigned_tiles: usize,
    /// Tiles that never went through split assignment.
    pub unsplit_tiles: usize,
    pub label_counts: BTreeMap<Split, Vec<usize>>,
    pub missing: Vec<MissingClass>,
}

/// Checks that every class has at least one label in every split.
pub fn validate_splits(tiles: &[Tile], class_map: &ClassMap) -> SplitReport {
    let n = class_map.num_classes();
    let mut label_counts: BTreeMap<Split, Vec<usize>> =
        Split::ASSIGNABLE.iter().map(|&s| (s, vec![0; n])).collect();
    let mut tile_counts: BTreeMap<Split, usize> = BTreeMap::new();
    let mut unsplit = 0;
    for t in tiles {
        let Some(split) = t.split else {
            unsplit += 1;
            continue;
        };
        *tile_counts.entry(split).or_default() += 1;
        if let Some(counts) = label_counts.get_mut(&split) {
            for l in &t.labels {
                if let Some(c) = counts.get_mut(l.class_id as usize) {
                    *c += 1;
                }
            }
        }
    }
    let missing: Vec<MissingClass> = label_counts
        .iter()
        .flat_map(|(&split, counts)| {
            counts
                .iter()
                .enumerate()
                .filter(|(_, &c)| c == 0)
                .map(move |(i, _)| MissingClass {
                    split,
                    class_id: i as u32,
                    class_name: class_map.class_name(i as u32).unwrap_or("?").to_string(),
                })
        })
        .collect();
    let get = |s: Split| tile_counts.get(&s).copied().unwrap_or(0);
    let totals = SplitTotals {
        train: get(Split::Train),
        val: get(Split::Val),
        test: get(Split::Test),
        total: get(Split::Train) + get(Split::Val) + get(Split::Test),
    };
    SplitReport {
        passed: missing.is_empty() && unsplit == 0,
        totals,
        unassigned_tiles: get(Split::Unassigned),
        unsplit_tiles: unsplit,
        label_counts,
        missing,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::TileLabel;
    use crate::geometry::Polygon;
    use crate::raster::{GeoTransform, PixelWindow};

    fn rect_poly(x0: f64, y0: f64, x1: f64, y1: f64) -> Polygon {
        Polygon::from_exterior(vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1]]).unwrap()
    }

    fn tile_at(x0: u32, y0: u32, size: u32, classes: &[u32]) -> Tile {
        let gt = GeoTransform::north_up(0.0, 0.0, 1.0).shifted(x0, y0);
        Tile {
            tile_id: format!("t{x0}_{y0}"),
            source: "s".into(),
            window: PixelWindow::new(x0, y0, size, size),
            geotransform: gt,
            geo_bounds: [0.0; 4],
            black_fraction: 0.0,
            split: None,
            labels: classes
                .iter()
                .map(|&c| TileLabel {
                    annotation_id: "a".into(),
                    polygon: rect_poly(0.0, 0.0, 1.0, 1.0),
                    class_id: c,
                    species: "x".into(),
                    visible_fraction: 1.0,
                })
                .collect(),
        }
    }

    #[test]
    fn center_and_straddle() {
        // CRS y is negated pixel row
        let regions = vec![
            SplitRegion {
                polygon: rect_poly(0.0, -100.0, 50.0, 0.0),
                split: Split::Train,
            },
            SplitRegion {
                polygon: rect_poly(50.0, -100.0, 100.0, 0.0),
                split: Split::Val,
            },
        ];
        let tiles = vec![tile_at(0, 0, 20, &[0]), tile_at(40, 0, 20, &[0]), tile_at(60, 0, 20, &[0])];
        let out = assign_splits(&tiles, &regions).unwrap();
        let splits: Vec<_> = out.iter().map(|t| t.split.unwrap()).collect();
        assert_eq!(splits, vec![Split::Train, Split::Unassigned, Split::Val]);
    }

    #[test]
    fn shared_edge_survives_inexact_pixel_size() {
        // 0.05 m pixels: region edges at 12.8 m do not round-trip exactly
        let base = GeoTransform::north_up(500_000.0, 5_000_000.0, 0.05);
        let band = |i: f64, split| SplitRegion {
            polygon: rect_poly(500_000.0 + 12.8 * i, 4_999_987.2, 500_000.0 + 12.8 * (i + 1.0), 5_000_000.0),
            split,
        };
        let regions = vec![band(0.0, Split::Train), band(1.0, Split::Val), band(2.0, Split::Test)];
        let tiles: Vec<Tile> = [0, 256, 512]
            .iter()
            .map(|&x0| Tile {
                geotransform: base.shifted(x0, 0),
                ..tile_at(x0, 0, 256, &[0])
            })
            .collect();
        let splits: Vec<_> = assign_splits(&tiles, &regions).unwrap().iter().map(|t| t.split.unwrap()).collect();
        assert_eq!(splits, vec![Split::Train, Split::Val, Split::Test]);
    }

    #[test]
    fn center_outside_every_region_is_unassigned() {
        let regions = vec![SplitRegion {
            polygon: rect_poly(0.0, -5.0, 5.0, 0.0),
            split: Split::Test,
        }];
        let out = assign_splits(&[tile_at(0, 0, 20, &[0])], &regions).unwrap();
        assert_eq!(out[0].split, Some(Split::Unassigned));
    }

    #[test]
    fn overlapping_regions_rejected() {
        let regions = vec![
            SplitRegion {
                polygon: rect_poly(0.0, 0.0, 10.0, 10.0),
                split: Split::Train,
            },
            SplitRegion {
                polygon: rect_poly(5.0, 5.0, 15.0, 15.0),
                split: Split::Test,
            },
        ];
        assert!(matches!(
            assign_splits(&[], &regions),
            Err(DatasetError::OverlappingRegions(_))
        ));
        // same split may overlap
        let same = vec![
            regions[0].clone(),
            SplitRegion {
                split: Split::Train,
                ..regions[1].clone()
            },
        ];
        assert!(assign_splits(&[], &same).is_ok());
    }

    #[test]
    fn validation_names_missing_class() {
        let cm = ClassMap::from_counts(&[("a".to_string(), 30)].into_iter().collect(), 20);
        let mut tiles = vec![
            tile_at(0, 0, 4, &[0, 1]),
            tile_at(4, 0, 4, &[0, 1]),
            tile_at(8, 0, 4, &[0]),
        ];
        for (t, s) in tiles.iter_mut().zip([Split::Train, Split::Val, Split::Test]) {
            t.split = Some(s);
        }
        let report = validate_splits(&tiles, &cm);
        assert!(!report.passed);
        assert_eq!(
            report.missing,
            vec![MissingClass {
                split: Split::Test,
                class_id: 1,
                class_name: "other".into()
            }]
        );
        tiles[2].labels = tile_at(8, 0, 4, &[0, 1]).labels;
        let report = validate_splits(&tiles, &cm);
        assert!(report.passed);
        assert_eq!(report.totals.total, 3);
    }

    #[test]
    fn site_split_totals_are_consistent() {
        let totals = SplitTotals {
            train: 15_742,
            val: 6_691,
            test: 3_995,
            total: 26_428,
        };
        assert!(totals.is_consistent());
        assert!(!SplitTotals { total: 26_427, ..totals }.is_consistent());
    }
}
