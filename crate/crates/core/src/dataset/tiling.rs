use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ClassMap, CrownAnnotation, DatasetError, SourceInfo, Tile, TileLabel};
use crate::geometry::{clip_polygon_to_rect, rasterize_polygon, rasterize_polygons, Polygon, Rect};
use crate::raster::{
    self, black_fraction, max_valid, normalize_dsm, normalize_dsm_by, GeoTransform, PixelWindow,
    RasterData, RasterGrid, DEFAULT_NODATA,
};

/// How the visible share of a crown inside a tile is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VisibilityMode {
    /// Clipped polygon area over full polygon area.
    #[default]
    Area,
    /// Rasterized pixel count inside the tile over the full pixel count.
    PixelCount,
}

/// Which extent a DSM tile is divided by before export.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationMode {
    #[default]
    PerTile,
    PerOrthomosaic,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TilingParams {
    pub tile_size: u32,
    pub overlap: f64,
    pub max_black_fraction: f64,
    pub min_visible_fraction: f64,
    pub visibility: VisibilityMode,
}

impl Default for TilingParams {
    fn default() -> Self {
        TilingParams {
            tile_size: 1024,
            overlap: 0.5,
            max_black_fraction: 0.8,
            min_visible_fraction: 0.2,
            visibility: VisibilityMode::Area,
        }
    }
}

impl TilingParams {
    pub fn stride(&self) -> u32 {
        ((f64::from(self.tile_size) * (1.0 - self.overlap)).round() as u32).max(1)
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.tile_size == 0 {
            return Err(DatasetError::InvalidParameter("tile_size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.overlap) {
            return Err(DatasetError::InvalidParameter(format!(
                "overlap {} outside [0, 1)",
                self.overlap
            )));
        }
        for (name, v) in [
            ("max_black_fraction", self.max_black_fraction),
            ("min_visible_fraction", self.min_visible_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(DatasetError::InvalidParameter(format!("{name} {v} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Slack on the visibility comparison so that a crown sitting exactly on
/// the threshold is not lost to rounding.
const VISIBILITY_EPS: f64 = 1e-9;

/// An annotation mapped into the pixel frame of a source raster.
struct PixelCrown<'a> {
    ann: &'a CrownAnnotation,
    polygon: Polygon,
    bounds: Rect,
    area: f64,
    class_id: u32,
}

fn to_pixel_space<'a>(
    annotations: &'a [CrownAnnotation],
    gt: &GeoTransform,
    class_map: &ClassMap,
) -> Vec<PixelCrown<'a>> {
    annotations
        .iter()
        .filter_map(|ann| match ann.polygon.map_coords(|c| gt.geo_to_pixel(c)) {
            Ok(polygon) => Some(PixelCrown {
                ann,
                bounds: polygon.bounds(),
                area: polygon.area(),
                polygon,
                class_id: class_map.class_of(&ann.species),
            }),
            Err(e) => {
                log::warn!("skipping annotation {}: {e}", ann.id);
                None
            }
        })
        .collect()
}

fn window_rect(w: PixelWindow) -> Rect {
    Rect {
        min_x: f64::from(w.x0),
        min_y: f64::from(w.y0),
        max_x: f64::from(w.x0 + w.width),
        max_y: f64::from(w.y0 + w.height),
    }
}

fn pixel_fraction(polygon: &Polygon, bounds: &Rect, rect: &Rect) -> f64 {
    // rasterize in a frame anchored at the polygon's bounding box
    let ox = bounds.min_x.floor();
    let oy = bounds.min_y.floor();
    let w = (bounds.max_x.ceil() - ox).max(1.0) as u32;
    let h = (bounds.max_y.ceil() - oy).max(1.0) as u32;
    let Ok(mask) = rasterize_polygon(&polygon.translate(-ox, -oy), w, h) else {
        return 0.0;
    };
    if mask.is_empty() {
        return 0.0;
    }
    let mut inside = 0u64;
    for x in 0..w {
        let cx = ox + f64::from(x) + 0.5;
        if cx < rect.min_x || cx >= rect.max_x {
            continue;
        }
        for y in 0..h {
            let cy = oy + f64::from(y) + 0.5;
            if cy >= rect.min_y && cy < rect.max_y && mask.get(x, y) {
                inside += 1;
            }
        }
    }
    inside as f64 / mask.area() as f64
}

fn clip_prepared(
    crowns: &[PixelCrown<'_>],
    window: PixelWindow,
    min_visible: f64,
    mode: VisibilityMode,
) -> Vec<TileLabel> {
    let rect = window_rect(window);
    let mut labels = Vec::new();
    for crown in crowns {
        if !crown.bounds.intersects(&rect) || crown.area <= 0.0 {
            continue;
        }
        let Some(clipped) = clip_polygon_to_rect(&crown.polygon, &rect) else {
            continue;
        };
        let visible = match mode {
            VisibilityMode::Area => clipped.area() / crown.area,
            VisibilityMode::PixelCount => pixel_fraction(&crown.polygon, &crown.bounds, &rect),
        }
        .min(1.0);
        if visible + VISIBILITY_EPS < min_visible {
            continue;
        }
        labels.push(TileLabel {
            annotation_id: crown.ann.id.clone(),
            polygon: clipped.translate(-rect.min_x, -rect.min_y),
            class_id: crown.class_id,
            species: crown.ann.species.clone(),
            visible_fraction: visible,
        });
    }
    labels
}

/// Clips CRS-space annotations to a pixel window of the raster described
/// by `geotransform`, keeping crowns with at least `min_visible` of their
/// extent inside. Output polygons are in tile-pixel coordinates.
pub fn clip_labels_to_tile(
    annotations: &[CrownAnnotation],
    geotransform: &GeoTransform,
    window: PixelWindow,
    class_map: &ClassMap,
    min_visible: f64,
    mode: VisibilityMode,
) -> Vec<TileLabel> {
    let crowns = to_pixel_space(annotations, geotransform, class_map);
    clip_prepared(&crowns, window, min_visible, mode)
}

/// Tiles cut from one orthomosaic together with the AOI-masked rasters
/// their pixels come from.
#[derive(Debug, Clone)]
pub struct TiledSource {
    pub source: SourceInfo,
    pub tiles: Vec<Tile>,
    /// RGB with every pixel outside the AOIs set to `(0, 0, 0)`.
    pub rgb: RasterGrid,
    /// DSM with every pixel outside the AOIs set to nodata.
    pub dsm: RasterGrid,
}

fn check_aligned(rgb: &RasterGrid, dsm: &RasterGrid) -> Result<(), DatasetError> {
    if rgb.bands() != 3 {
        return Err(DatasetError::Unaligned("RGB raster must have 3 bands".into()));
    }
    if dsm.bands() != 1 {
        return Err(DatasetError::Unaligned("DSM raster must have 1 band".into()));
    }
    if (rgb.width(), rgb.height()) != (dsm.width(), dsm.height()) {
        return Err(DatasetError::Unaligned(format!(
            "RGB is {}x{}, DSM is {}x{}",
            rgb.width(),
            rgb.height(),
            dsm.width(),
            dsm.height()
        )));
    }
    if rgb.geotransform() != dsm.geotransform() {
        return Err(DatasetError::Unaligned("geotransforms differ".into()));
    }
    if rgb.crs() != dsm.crs() {
        return Err(DatasetError::Unaligned(format!(
            "CRS `{}` vs `{}`",
            rgb.crs(),
            dsm.crs()
        )));
    }
    Ok(())
}

/// Window origins along one axis: a `stride` grid anchored at `start`,
/// covering `[start, end)` with windows that fit inside `limit`.
fn axis_origins(start: u32, end: u32, tile: u32, stride: u32, limit: u32) -> Vec<u32> {
    let mut out = Vec::new();
    let mut x = start;
    while x < end && u64::from(x) + u64::from(tile) <= u64::from(limit) {
        out.push(x);
        x += stride;
    }
    out
}

/// Cuts one orthomosaic/DSM pair into overlapping square tiles.
///
/// Pixels outside the AOIs are blacked out (RGB) and set to nodata (DSM).
/// Candidate windows lie on a stride grid anchored at the top-left of the
/// AOI bounding box, enumerated row-major. A window becomes a tile iff its
/// black fraction is at most `max_black_fraction` and at least one crown
/// keeps `min_visible_fraction` of its extent inside it.
pub fn generate_tiles(
    source_name: &str,
    rgb: &RasterGrid,
    dsm: &RasterGrid,
    aoi: &[Polygon],
    annotations: &[CrownAnnotation],
    class_map: &ClassMap,
    params: &TilingParams,
) -> Result<TiledSource, DatasetError> {
    params.validate()?;
    check_aligned(rgb, dsm)?;
    let gt = *rgb.geotransform();
    let (width, height) = (rgb.width(), rgb.height());
    let source = SourceInfo {
        name: source_name.to_string(),
        rgb_sha256: rgb.checksum(),
        dsm_sha256: dsm.checksum(),
    };

    let aoi_px: Vec<Polygon> = aoi
        .iter()
        .map(|p| p.map_coords(|c| gt.geo_to_pixel(c)))
        .collect::<Result<_, _>>()?;
    let aoi_mask = rasterize_polygons(&aoi_px, width, height)?;

    let (rgb, dsm) = mask_outside(rgb, dsm, |x, y| aoi_mask.get(x, y))?;
    let Some(bbox) = aoi_mask.bbox() else {
        log::warn!("{source_name}: AOIs do not cover any pixel of the raster; no tiles emitted");
        return Ok(TiledSource {
            source,
            tiles: Vec::new(),
            rgb,
            dsm,
        });
    };

    let tile = params.tile_size;
    let stride = params.stride();
    let xs = axis_origins(bbox.x0, bbox.x1 + 1, tile, stride, width);
    let ys = axis_origins(bbox.y0, bbox.y1 + 1, tile, stride, height);
    let windows: Vec<PixelWindow> = ys
        .iter()
        .flat_map(|&y| xs.iter().map(move |&x| PixelWindow::new(x, y, tile, tile)))
        .collect();

    let crowns = to_pixel_space(annotations, &gt, class_map);
    let tiles = windows
        .par_iter()
        .map(|&window| -> Result<Option<Tile>, DatasetError> {
            let black = black_fraction(&rgb, window)?;
            if black > params.max_black_fraction {
                return Ok(None);
            }
            let labels = clip_prepared(
                &crowns,
                window,
                params.min_visible_fraction,
                params.visibility,
            );
            if labels.is_empty() {
                return Ok(None);
            }
            let tile_gt = gt.shifted(window.x0, window.y0);
            Ok(Some(Tile {
                tile_id: format!("{source_name}_x{:05}_y{:05}", window.x0, window.y0),
                source: source_name.to_string(),
                window,
                geotransform: tile_gt,
                geo_bounds: geo_bounds(&tile_gt, window.width, window.height),
                black_fraction: black,
                split: None,
                labels,
            }))
        })
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .flatten()
        .collect();

    Ok(TiledSource {
        source,
        tiles,
        rgb,
        dsm,
    })
}

fn geo_bounds(gt: &GeoTransform, w: u32, h: u32) -> [f64; 4] {
    let corners = [
        [0.0, 0.0],
        [f64::from(w), 0.0],
        [0.0, f64::from(h)],
        [f64::from(w), f64::from(h)],
    ]
    .map(|c| gt.pixel_to_geo(c));
    let (mut b0, mut b1, mut b2, mut b3) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for [x, y] in corners {
        b0 = b0.min(x);
        b1 = b1.min(y);
        b2 = b2.max(x);
        b3 = b3.max(y);
    }
    [b0, b1, b2, b3]
}

fn mask_outside(
    rgb: &RasterGrid,
    dsm: &RasterGrid,
    inside: impl Fn(u32, u32) -> bool + Sync,
) -> Result<(RasterGrid, RasterGrid), DatasetError> {
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let plane = w * h;
    let RasterData::U8(src_rgb) = rgb.data() else {
        return Err(DatasetError::Unaligned("RGB raster must be uint8".into()));
    };
    let src_dsm = dsm.values()?;
    let nodata = dsm.nodata().unwrap_or(DEFAULT_NODATA);
    let mut out_rgb = src_rgb.clone();
    let mut out_dsm = src_dsm.to_vec();
    for y in 0..h {
        for x in 0..w {
            if !inside(x as u32, y as u32) {
                let i = y * w + x;
                out_rgb[i] = 0;
                out_rgb[plane + i] = 0;
                out_rgb[2 * plane + i] = 0;
                out_dsm[i] = nodata as f32;
            }
        }
    }
    Ok((
        rgb.with_data(RasterData::U8(out_rgb), rgb.nodata())?,
        dsm.with_data(RasterData::F32(out_dsm), Some(nodata))?,
    ))
}

/// Writes `<tile_id>_rgb` and `<tile_id>_dsm` native rasters for every
/// tile into `dir`, normalizing the DSM as requested.
pub fn write_tile_rasters(
    tiled: &TiledSource,
    dir: &Path,
    normalization: NormalizationMode,
) -> Result<(), DatasetError> {
    let ortho_max = match normalization {
        NormalizationMode::PerOrthomosaic => Some(max_valid(&tiled.dsm)?.ok_or_else(|| {
            raster::RasterError::Degenerate(format!("{}: DSM has no valid pixels", tiled.source.name))
        })?),
        _ => None,
    };
    tiled.tiles.par_iter().try_for_each(|t| -> Result<(), DatasetError> {
        let rgb = tiled.rgb.crop(t.window)?;
        let dsm = tiled.dsm.crop(t.window)?;
        let dsm = match (normalization, ortho_max) {
            (NormalizationMode::PerTile, _) => normalize_dsm(&dsm).map_err(|e| {
                raster::RasterError::Degenerate(format!("tile {}: {e}", t.tile_id))
            })?,
            (NormalizationMode::PerOrthomosaic, Some(max)) => normalize_dsm_by(&dsm, max)?,
            _ => dsm,
        };
        raster::write_raster(&rgb, &dir.join(format!("{}_rgb", t.tile_id)))?;
        raster::write_raster(&dsm, &dir.join(format!("{}_dsm", t.tile_id)))?;
        Ok(())
    })
}
