//! Synthetic scenes and brute-force references shared by the integration
//! tests.
#![allow(dead_code)]

pub mod eval_oracle;

use std::f64::consts::TAU;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crownforge::dataset::TileManifest;
use crownforge::evaluation::{MaskRecord, PredictionRecord};
use crownforge::geometry::{BinaryMask, Coord, Polygon};
use crownforge::raster::{write_raster, GeoTransform, RasterGrid};

pub const CRS: &str = "EPSG:32618";

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Union of 1..=3 random axis-aligned rectangles; never empty.
pub fn random_mask(rng: &mut ChaCha8Rng, w: u32, h: u32) -> BinaryMask {
    let rects: Vec<(u32, u32, u32, u32)> = (0..rng.random_range(1..=3))
        .map(|_| {
            let x0 = rng.random_range(0..w);
            let y0 = rng.random_range(0..h);
            let x1 = rng.random_range(x0 + 1..=w);
            let y1 = rng.random_range(y0 + 1..=h);
            (x0, y0, x1, y1)
        })
        .collect();
    BinaryMask::from_fn(w, h, |x, y| {
        rects.iter().any(|&(x0, y0, x1, y1)| x >= x0 && x < x1 && y >= y0 && y < y1)
    })
}

/// Independent per-pixel bit pattern with the given density (may be empty).
pub fn noise_mask(rng: &mut ChaCha8Rng, w: u32, h: u32, density: f64) -> BinaryMask {
    let bits: Vec<u8> = (0..w * h).map(|_| u8::from(rng.random_bool(density))).collect();
    BinaryMask::from_row_major(w, h, &bits).unwrap()
}

/// Mask moved by `(dx, dy)` pixels, cropped to the frame.
pub fn shifted(m: &BinaryMask, dx: i32, dy: i32) -> BinaryMask {
    BinaryMask::from_fn(m.width(), m.height(), |x, y| {
        let (sx, sy) = (x as i32 - dx, y as i32 - dy);
        sx >= 0 && sy >= 0 && (sx as u32) < m.width() && (sy as u32) < m.height() && m.get(sx as u32, sy as u32)
    })
}

pub fn brute_iou(a: &BinaryMask, b: &BinaryMask) -> f64 {
    let (mut inter, mut union) = (0u64, 0u64);
    for y in 0..a.height() {
        for x in 0..a.width() {
            let (p, q) = (a.get(x, y), b.get(x, y));
            inter += u64::from(p && q);
            union += u64::from(p || q);
        }
    }
    inter as f64 / union as f64
}

/// Even-odd ray casting over every ring.
pub fn point_in_rings(rings: &[Vec<Coord>], [px, py]: Coord) -> bool {
    let mut inside = false;
    for ring in rings {
        let n = ring.len();
        for i in 0..n {
            let [x1, y1] = ring[i];
            let [x2, y2] = ring[(i + 1) % n];
            if (y1 > py) != (y2 > py) {
                let x = x1 + (py - y1) * (x2 - x1) / (y2 - y1);
                if px < x {
                    inside = !inside;
                }
            }
        }
    }
    inside
}

/// Star-shaped polygon around `center` with `n` vertices at increasing
/// angles; returns the ring and its exact area (sum of center triangles).
pub fn random_star(rng: &mut ChaCha8Rng, center: Coord, n: usize, rmin: f64, rmax: f64) -> (Vec<Coord>, f64) {
    let mut angles: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * TAU).collect();
    angles.sort_by(f64::total_cmp);
    let radii: Vec<f64> = (0..n).map(|_| rng.random_range(rmin..rmax)).collect();
    let ring = angles
        .iter()
        .zip(&radii)
        .map(|(a, r)| [center[0] + r * a.cos(), center[1] + r * a.sin()])
        .collect();
    let area = (0..n)
        .map(|i| {
            let j = (i + 1) % n;
            let mut d = angles[j] - angles[i];
            if j == 0 {
                d += TAU;
            }
            0.5 * radii[i] * radii[j] * d.sin()
        })
        .sum();
    (ring, area)
}

pub fn regular_polygon(center: Coord, radius: f64, n: usize) -> Vec<Coord> {
    (0..n)
        .map(|i| {
            let a = TAU * i as f64 / n as f64;
            [center[0] + radius * a.cos(), center[1] + radius * a.sin()]
        })
        .collect()
}

pub fn rect_ring(x0: f64, y0: f64, x1: f64, y1: f64) -> Vec<Coord> {
    vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1]]
}

// ---------------------------------------------------------------------------
// GeoJSON

fn closed(ring: &[Coord]) -> Vec<[f64; 2]> {
    let mut r = ring.to_vec();
    r.push(ring[0]);
    r
}

pub fn polygon_feature(ring: &[Coord], properties: Value) -> Value {
    json!({
        "type": "Feature",
        "properties": properties,
        "geometry": {"type": "Polygon", "coordinates": [closed(ring)]},
    })
}

pub fn write_collection(path: &Path, features: Vec<Value>) {
    let fc = json!({"type": "FeatureCollection", "features": features});
    fs::write(path, serde_json::to_string(&fc).unwrap()).unwrap();
}

// ---------------------------------------------------------------------------
// Scenes: everything in pixel space, converted to CRS through `gt`.

#[derive(Debug, Clone)]
pub struct Crown {
    pub ring: Vec<Coord>,
    pub species: String,
    pub height: f64,
}

#[derive(Debug, Clone)]
pub struct Scene {
    pub width: u32,
    pub height: u32,
    pub gt: GeoTransform,
    pub aoi: Vec<Vec<Coord>>,
    pub crowns: Vec<Crown>,
}

pub fn scene_gt() -> GeoTransform {
    GeoTransform::north_up(500_000.0, 5_000_000.0, 0.05)
}

impl Scene {
    pub fn to_geo(&self, ring: &[Coord]) -> Vec<Coord> {
        ring.iter().map(|&p| self.gt.pixel_to_geo(p)).collect()
    }

    pub fn aoi_polygons(&self) -> Vec<Polygon> {
        self.aoi.iter().map(|r| Polygon::from_exterior(self.to_geo(r)).unwrap()).collect()
    }

    pub fn annotations(&self) -> Vec<crownforge::dataset::CrownAnnotation> {
        self.crowns
            .iter()
            .enumerate()
            .map(|(i, c)| crownforge::dataset::CrownAnnotation {
                id: format!("c{i}"),
                polygon: Polygon::from_exterior(self.to_geo(&c.ring)).unwrap(),
                species: c.species.clone(),
                site_id: "s".into(),
            })
            .collect()
    }

    /// Non-black RGB everywhere; tiling blacks out what lies outside the AOIs.
    pub fn rgb(&self) -> RasterGrid {
        let n = (self.width * self.height) as usize;
        let mut data = vec![0u8; 3 * n];
        for (i, px) in data.iter_mut().enumerate() {
            *px = 60 + (i % 97) as u8;
        }
        RasterGrid::rgb(self.width, self.height, self.gt, CRS, data).unwrap()
    }

    /// Flat ground at 1 m plus a cone per crown.
    pub fn dsm(&self) -> RasterGrid {
        let (w, h) = (self.width as usize, self.height as usize);
        let mut data = vec![1.0f32; w * h];
        for c in &self.crowns {
            let p = Polygon::from_exterior(c.ring.clone()).unwrap();
            let b = p.bounds();
            let [cx, cy] = b.center();
            let r = 0.5 * b.width().max(b.height());
            let x0 = b.min_x.floor().max(0.0) as usize;
            let y0 = b.min_y.floor().max(0.0) as usize;
            let x1 = (b.max_x.ceil() as usize).min(w);
            let y1 = (b.max_y.ceil() as usize).min(h);
            for y in y0..y1 {
                for x in x0..x1 {
                    let d = ((x as f64 + 0.5 - cx).powi(2) + (y as f64 + 0.5 - cy).powi(2)).sqrt();
                    if d < r {
                        let v = 1.0 + c.height * (1.0 - d / r);
                        let cell = &mut data[y * w + x];
                        *cell = cell.max(v as f32);
                    }
                }
            }
        }
        RasterGrid::dsm(self.width, self.height, self.gt, CRS, Some(-9999.0), data).unwrap()
    }
}

/// Two Gaussian crowns 300 px apart, heights 18 and 12, on an otherwise
/// empty 1024² DSM tile; returns the tile and the peak pixels.
pub fn two_bump_dsm() -> (RasterGrid, [(f64, f64); 2]) {
    let peaks = [(362.0, 512.0), (662.0, 512.0)];
    let mut values = Vec::with_capacity(1024 * 1024);
    for y in 0..1024 {
        for x in 0..1024 {
            let v: f64 = peaks
                .iter()
                .zip([18.0, 12.0])
                .map(|(&(px, py), h)| {
                    let d2 = (f64::from(x) - px).powi(2) + (f64::from(y) - py).powi(2);
                    h * (-d2 / (2.0 * 60.0 * 60.0)).exp()
                })
                .sum();
            values.push(v as f32);
        }
    }
    let grid = RasterGrid::dsm(1024, 1024, GeoTransform::north_up(0.0, 0.0, 1.0), CRS, Some(-9999.0), values).unwrap();
    (grid, peaks)
}

pub const SPECIES: [&str; 4] = ["pigl", "piba", "thoc", "acsa"];

/// Crowns on a jittered lattice of `spacing` pixels with radii in
/// `[rmin, rmax]`, species drawn with decreasing frequency.
pub fn lattice_crowns(rng: &mut ChaCha8Rng, width: u32, height: u32, spacing: f64, rmin: f64, rmax: f64) -> Vec<Crown> {
    let mut crowns = Vec::new();
    let mut y = spacing / 2.0;
    while y < f64::from(height) {
        let mut x = spacing / 2.0;
        while x < f64::from(width) {
            let jitter = spacing * 0.2;
            let c = [x + rng.random_range(-jitter..jitter), y + rng.random_range(-jitter..jitter)];
            let r = rng.random_range(rmin..rmax);
            let u: f64 = rng.random();
            let species = if u < 0.45 {
                SPECIES[0]
            } else if u < 0.75 {
                SPECIES[1]
            } else if u < 0.95 {
                SPECIES[2]
            } else {
                SPECIES[3]
            };
            crowns.push(Crown {
                ring: regular_polygon(c, r, 12),
                species: species.into(),
                height: rng.random_range(5.0..20.0),
            });
            x += spacing;
        }
        y += spacing;
    }
    crowns
}

pub struct ScenePaths {
    pub rgb: PathBuf,
    pub dsm: PathBuf,
    pub aoi: PathBuf,
    pub annotations: PathBuf,
}

pub fn write_scene(dir: &Path, scene: &Scene) -> ScenePaths {
    fs::create_dir_all(dir).unwrap();
    let paths = ScenePaths {
        rgb: dir.join("ortho"),
        dsm: dir.join("dsm"),
        aoi: dir.join("aoi.geojson"),
        annotations: dir.join("crowns.geojson"),
    };
    write_raster(&scene.rgb(), &paths.rgb).unwrap();
    write_raster(&scene.dsm(), &paths.dsm).unwrap();
    write_collection(
        &paths.aoi,
        scene.aoi.iter().map(|r| polygon_feature(&scene.to_geo(r), json!({}))).collect(),
    );
    write_collection(
        &paths.annotations,
        scene
            .crowns
            .iter()
            .enumerate()
            .map(|(i, c)| polygon_feature(&scene.to_geo(&c.ring), json!({"id": format!("c{i}"), "species": c.species})))
            .collect(),
    );
    paths
}

/// Vertical bands of equal width assigned train / val / test in turn.
pub fn write_band_regions(path: &Path, scene: &Scene, bands: usize) {
    let splits = ["train", "val", "test"];
    let w = f64::from(scene.width) / bands as f64;
    let features = (0..bands)
        .map(|b| {
            let ring = rect_ring(w * b as f64, 0.0, w * (b + 1) as f64, f64::from(scene.height));
            polygon_feature(&scene.to_geo(&ring), json!({"split": splits[b % 3]}))
        })
        .collect();
    write_collection(path, features);
}

/// Plausible model output for every active tile of a manifest: each label
/// is re-detected with a small offset (sometimes with the wrong class),
/// duplicated at a lower score, and a few spurious masks are added.
/// Masks are written as COCO-style polygons.
pub fn synthetic_predictions(rng: &mut ChaCha8Rng, manifest: &TileManifest) -> Vec<PredictionRecord> {
    let nc = manifest.class_map.num_classes() as u32;
    let mut out = Vec::new();
    for t in manifest.active_tiles() {
        let (w, h) = (t.window.width, t.window.height);
        let poly = |ring: Vec<Coord>| MaskRecord::Polygon {
            width: w,
            height: h,
            data: vec![ring.iter().flat_map(|p| [p[0], p[1]]).collect()],
        };
        for l in &t.labels {
            let (dx, dy) = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            let ring: Vec<Coord> = l.polygon.exterior().iter().map(|p| [p[0] + dx, p[1] + dy]).collect();
            let class_id = if rng.random_bool(0.85) { l.class_id } else { rng.random_range(0..nc) };
            let score = rng.random_range(0.55..1.0);
            out.push(PredictionRecord {
                tile_id: t.tile_id.clone(),
                class_id,
                score,
                score2: Some(rng.random_range(0.5..1.0)),
                mask: poly(ring.clone()),
            });
            if rng.random_bool(0.5) {
                let ring2: Vec<Coord> = ring.iter().map(|p| [p[0] + 1.0, p[1]]).collect();
                out.push(PredictionRecord {
                    tile_id: t.tile_id.clone(),
                    class_id,
                    score: score * 0.9,
                    score2: Some(0.5),
                    mask: poly(ring2),
                });
            }
        }
        for _ in 0..rng.random_range(0..3) {
            let c = [rng.random_range(20.0..f64::from(w) - 20.0), rng.random_range(20.0..f64::from(h) - 20.0)];
            out.push(PredictionRecord {
                tile_id: t.tile_id.clone(),
                class_id: rng.random_range(0..nc),
                score: rng.random_range(0.3..0.9),
                score2: None,
                mask: poly(regular_polygon(c, rng.random_range(4.0..12.0), 8)),
            });
        }
    }
    out
}

pub fn write_jsonl<T: serde::Serialize>(path: &Path, records: &[T]) {
    let mut text = String::new();
    for r in records {
        text.push_str(&serde_json::to_string(r).unwrap());
        text.push('\n');
    }
    fs::write(path, text).unwrap();
}
