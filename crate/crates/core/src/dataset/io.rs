use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use geojson::{Feature, FeatureCollection, GeometryValue};
use serde::{Deserialize, Serialize};

use super::{
    validate_splits, ClassMap, CrownAnnotation, DatasetError, SourceInfo, Split, SplitRegion,
    SplitTotals, Tile, TileManifest, TilingParams,
};
use crate::geometry::Polygon;

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const SUMMARY_FILE: &str = "dataset.json";
/// Subdirectory of a dataset holding the per-tile rasters.
pub const TILES_DIR: &str = "tiles";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn format_err(path: &Path, message: impl Into<String>) -> DatasetError {
    DatasetError::Format {
        path: path.display().to_string(),
        message: message.into(),
    }
}

fn read_collection(path: &Path) -> Result<FeatureCollection, DatasetError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    text.parse::<FeatureCollection>()
        .map_err(|e| format_err(path, e.to_string()))
}

fn polygon_from_rings(rings: &[Vec<geojson::Position>]) -> Result<Polygon, DatasetError> {
    let ring = |r: &Vec<geojson::Position>| r.iter().map(|p| [p[0], p[1]]).collect::<Vec<_>>();
    let Some((ext, holes)) = rings.split_first() else {
        return Err(crate::geometry::GeometryError::InvalidGeometry("polygon without rings".into()).into());
    };
    Ok(Polygon::new(ring(ext), holes.iter().map(ring).collect())?)
}

fn feature_polygons(path: &Path, idx: usize, f: &Feature) -> Result<Vec<Polygon>, DatasetError> {
    let Some(geom) = &f.geometry else {
        return Err(format_err(path, format!("feature {idx} has no geometry")));
    };
    match &geom.value {
        GeometryValue::Polygon { coordinates } => Ok(vec![polygon_from_rings(coordinates)?]),
        GeometryValue::MultiPolygon { coordinates } => {
            coordinates.iter().map(|p| polygon_from_rings(p)).collect()
        }
        other => Err(format_err(
            path,
            format!("feature {idx}: expected Polygon or MultiPolygon, found {}", other.type_name()),
        )),
    }
}

fn string_property(f: &Feature, key: &str) -> Option<String> {
    match f.properties.as_ref()?.get(key)? {
        serde_json::Value::String(s) => Some(s.clone()),
        serde_json::Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

/// Polygons of every feature (AOIs); multipolygons are flattened.
pub fn read_polygons(path: &Path) -> Result<Vec<Polygon>, DatasetError> {
    let fc = read_collection(path)?;
    let mut out = Vec::new();
    for (i, f) in fc.features.iter().enumerate() {
        out.extend(feature_polygons(path, i, f)?);
    }
    Ok(out)
}

/// Crown polygons with a `species` property. The id comes from the feature
/// id, then an `id` property, then the feature index; the site from an
/// optional `site` property.
pub fn read_annotations(path: &Path) -> Result<Vec<CrownAnnotation>, DatasetError> {
    let fc = read_collection(path)?;
    let mut out = Vec::with_capacity(fc.features.len());
    for (i, f) in fc.features.iter().enumerate() {
        let species = string_property(f, "species")
            .map(|s| s.trim().to_lowercase())
            .filter(|s| !s.is_empty())
            .ok_or_else(|| format_err(path, format!("feature {i} has no `species` property")))?;
        let id = match &f.id {
            Some(geojson::feature::Id::String(s)) => s.clone(),
            Some(geojson::feature::Id::Number(n)) => n.to_string(),
            None => string_property(f, "id").unwrap_or_else(|| i.to_string()),
        };
        let site_id = string_property(f, "site").unwrap_or_default();
        let mut polys = feature_polygons(path, i, f)?;
        if polys.len() != 1 {
            return Err(format_err(
                path,
                format!("feature {i} ({id}): a crown must be a single polygon, found {}", polys.len()),
            ));
        }
        out.push(CrownAnnotation {
            id,
            polygon: polys.remove(0),
            species,
            site_id,
        });
    }
    Ok(out)
}

/// Split regions: features with a `split` property of `train`, `val` or `test`.
pub fn read_split_regions(path: &Path) -> Result<Vec<SplitRegion>, DatasetError> {
    let fc = read_collection(path)?;
    let mut out = Vec::new();
    for (i, f) in fc.features.iter().enumerate() {
        let split: Split = string_property(f, "split")
            .ok_or_else(|| format_err(path, format!("feature {i} has no `split` property")))?
            .parse()
            .map_err(|e: String| format_err(path, format!("feature {i}: {e}")))?;
        if split == Split::Unassigned {
            return Err(format_err(path, format!("feature {i}: split must be train, val or test")));
        }
        for polygon in feature_polygons(path, i, f)? {
            out.push(SplitRegion { polygon, split });
        }
    }
    Ok(out)
}

/// Contents of `dataset.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub class_map: ClassMap,
    pub params: TilingParams,
    pub sources: Vec<SourceInfo>,
    pub tile_count: usize,
    pub totals: SplitTotals,
    pub unassigned_tiles: usize,
    pub unsplit_tiles: usize,
    /// Label counts per class, keyed by split; `all` covers every active tile.
    pub label_counts: BTreeMap<String, Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
}

impl DatasetSummary {
    pub fn from_manifest(m: &TileManifest, config: Option<serde_json::Value>) -> Self {
        let report = validate_splits(&m.tiles, &m.class_map);
        let mut label_counts: BTreeMap<String, Vec<usize>> = report
            .label_counts
            .iter()
            .map(|(s, c)| (s.to_string(), c.clone()))
            .collect();
        let mut all = vec![0usize; m.class_map.num_classes()];
        for t in m.active_tiles() {
            for l in &t.labels {
                if let Some(c) = all.get_mut(l.class_id as usize) {
                    *c += 1;
                }
            }
        }
        label_counts.insert("all".into(), all);
        DatasetSummary {
            class_map: m.class_map.clone(),
            params: m.params,
            sources: m.sources.clone(),
            tile_count: m.tiles.len(),
            totals: report.totals,
            unassigned_tiles: report.unassigned_tiles,
            unsplit_tiles: report.unsplit_tiles,
            label_counts,
            config,
        }
    }
}

/// Writes `manifest.jsonl` and `dataset.json` into `dir`.
pub fn write_manifest(
    dir: &Path,
    manifest: &TileManifest,
    config: Option<serde_json::Value>,
) -> Result<(), DatasetError> {
    manifest.check_unique_ids()?;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let path = dir.join(MANIFEST_FILE);
    let mut buf = Vec::new();
    for t in &manifest.tiles {
        serde_json::to_writer(&mut buf, t).map_err(|e| format_err(&path, e.to_string()))?;
        buf.push(b'\n');
    }
    fs::File::create(&path)
        .and_then(|mut f| f.write_all(&buf))
        .map_err(io_err(&path))?;

    let summary = DatasetSummary::from_manifest(manifest, config);
    let path = dir.join(SUMMARY_FILE);
    let mut text =
        serde_json::to_string_pretty(&summary).map_err(|e| format_err(&path, e.to_string()))?;
    text.push('\n');
    fs::write(&path, text).map_err(io_err(&path))
}

fn manifest_paths(path: &Path) -> (PathBuf, PathBuf) {
    if path.is_dir() {
        (path.join(MANIFEST_FILE), path.join(SUMMARY_FILE))
    } else {
        let dir = path.parent().unwrap_or_else(|| Path::new("."));
        (path.to_path_buf(), dir.join(SUMMARY_FILE))
    }
}

/// Reads a manifest given either its directory or the `manifest.jsonl`
/// path; `dataset.json` must sit next to it.
pub fn read_manifest(path: &Path) -> Result<(TileManifest, DatasetSummary), DatasetError> {
    let (manifest_path, summary_path) = manifest_paths(path);
    let text = fs::read_to_string(&summary_path).map_err(io_err(&summary_path))?;
    let summary: DatasetSummary =
        serde_json::from_str(&text).map_err(|e| format_err(&summary_path, e.to_string()))?;
    let file = fs::File::open(&manifest_path).map_err(io_err(&manifest_path))?;
    let mut tiles = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(&manifest_path))?;
        if line.trim().is_empty() {
            continue;
        }
        let tile: Tile = serde_json::from_str(&line)
            .map_err(|e| format_err(&manifest_path, format!("line {}: {e}", i + 1)))?;
        tiles.push(tile);
    }
    let manifest = TileManifest {
        class_map: summary.class_map.clone(),
        params: summary.params,
        sources: summary.sources.clone(),
        tiles,
    };
    manifest.check_unique_ids()?;
    Ok((manifest, summary))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_annotations_and_regions() {
        let dir = tempfile::tempdir().unwrap();
        let crowns = dir.path().join("crowns.geojson");
        fs::write(
            &crowns,
            r#"{"type":"FeatureCollection","features":[
              {"type":"Feature","id":"c1","properties":{"species":"PIBA","site":"b1"},
               "geometry":{"type":"Polygon","coordinates":[[[0,0],[2,0],[2,2],[0,2],[0,0]]]}},
              {"type":"Feature","properties":{"species":"pigl","id":7},
               "geometry":{"type":"Polygon","coordinates":[[[5,5],[6,5],[6,6],[5,5]]]}}
            ]}"#,
        )
        .unwrap();
        let anns = read_annotations(&crowns).unwrap();
        assert_eq!(anns[0].id, "c1");
        assert_eq!(anns[0].species, "piba");
        assert_eq!(anns[0].site_id, "b1");
        assert_eq!(anns[0].polygon.area(), 4.0);
        assert_eq!(anns[1].id, "7");

        let regions = dir.path().join("regions.geojson");
        fs::write(
            &regions,
            r#"{"type":"FeatureCollection","features":[
              {"type":"Feature","properties":{"split":"test"},
               "geometry":{"type":"MultiPolygon","coordinates":[
                 [[[0,0],[1,0],[1,1],[0,0]]], [[[3,3],[4,3],[4,4],[3,3]]]]}}
            ]}"#,
        )
        .unwrap();
        let r = read_split_regions(&regions).unwrap();
        assert_eq!(r.len(), 2);
        assert!(r.iter().all(|x| x.split == Split::Test));
    }

    #[test]
    fn missing_species_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.geojson");
        fs::write(
            &p,
            r#"{"type":"FeatureCollection","features":[{"type":"Feature","properties":{},
               "geometry":{"type":"Polygon","coordinates":[[[0,0],[1,0],[1,1],[0,0]]]}}]}"#,
        )
        .unwrap();
        assert!(matches!(read_annotations(&p), Err(DatasetError::Format { .. })));
    }
}
