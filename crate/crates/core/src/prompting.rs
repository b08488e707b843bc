//! Point prompts for promptable segmenters: regular grids and local
//! elevation maxima of a DSM tile.

use std::collections::VecDeque;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::{RasterError, RasterGrid};

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("points per side must be at least 1, got {0}")]
    InvalidPps(u32),
    #[error("maximum-filter window must be at least 1 pixel, got {0}")]
    InvalidWindow(u32),
    #[error("tile size must be positive")]
    InvalidTileSize,
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptSource {
    Grid,
    DsmMaxima,
}

/// A point in tile-pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointPrompt {
    pub x: f64,
    pub y: f64,
    pub source: PromptSource,
    pub elevation: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PromptParams {
    Grid {
        tile_size: u32,
        pps: u32,
    },
    DsmMaxima {
        window: u32,
        #[serde(skip_serializing_if = "Option::is_none")]
        min_height: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptSet {
    pub tile_id: String,
    pub source: PromptSource,
    pub params: PromptParams,
    pub prompts: Vec<PointPrompt>,
}

#[derive(Serialize, Deserialize)]
struct PromptRecord {
    tile_id: String,
    source: PromptSource,
    params: PromptParams,
    points: Vec<Vec<f64>>,
}

impl PromptSet {
    pub fn with_tile_id(mut self, tile_id: impl Into<String>) -> Self {
        self.tile_id = tile_id.into();
        self
    }

    /// One JSON line: `{tile_id, source, params, points: [[x, y, elevation?], ...]}`.
    pub fn to_json_line(&self) -> Result<String, PromptError> {
        let record = PromptRecord {
            tile_id: self.tile_id.clone(),
            source: self.source,
            params: self.params,
            points: self
                .prompts
                .iter()
                .map(|p| {
                    let mut v = vec![p.x, p.y];
                    v.extend(p.elevation);
                    v
                })
                .collect(),
        };
        Ok(serde_json::to_string(&record)?)
    }

    pub fn from_json_line(line: &str) -> Result<PromptSet, PromptError> {
        let r: PromptRecord = serde_json::from_str(line)?;
        Ok(PromptSet {
            tile_id: r.tile_id,
            source: r.source,
            params: r.params,
            prompts: r
                .points
                .iter()
                .map(|p| PointPrompt {
                    x: p.first().copied().unwrap_or_default(),
                    y: p.get(1).copied().unwrap_or_default(),
                    source: r.source,
                    elevation: p.get(2).copied(),
                })
                .collect(),
        })
    }
}

pub fn write_prompts<W: Write>(mut out: W, sets: &[PromptSet]) -> Result<(), PromptError> {
    for s in sets {
        writeln!(out, "{}", s.to_json_line()?)?;
    }
    Ok(())
}

/// `pps x pps` points at `((i + 0.5) * tile_size / pps, (j + 0.5) * tile_size / pps)`,
/// row by row.
pub fn grid_prompts(tile_size: u32, pps: u32) -> Result<PromptSet, PromptError> {
    if pps < 1 {
        return Err(PromptError::InvalidPps(pps));
    }
    if tile_size == 0 {
        return Err(PromptError::InvalidTileSize);
    }
    let step = f64::from(tile_size) / f64::from(pps);
    let prompts = (0..pps)
        .flat_map(|j| {
            (0..pps).map(move |i| PointPrompt {
                x: (f64::from(i) + 0.5) * step,
                y: (f64::from(j) + 0.5) * step,
                source: PromptSource::Grid,
                elevation: None,
            })
        })
        .collect();
    Ok(PromptSet {
        tile_id: String::new(),
        source: PromptSource::Grid,
        params: PromptParams::Grid { tile_size, pps },
        prompts,
    })
}

/// Sliding maximum along one line with a window of `size` samples covering
/// `[i - size/2, i - size/2 + size - 1]`, clipped to the line.
fn sliding_max_line(input: &[f64], size: usize, out: &mut [f64]) {
    let n = input.len();
    let back = size / 2;
    let fwd = size - 1 - back;
    let mut deque: VecDeque<usize> = VecDeque::new();
    let mut next = 0usize;
    for (i, slot) in out.iter_mut().enumerate() {
        let hi = (i + fwd).min(n - 1);
        while next <= hi {
            while deque.back().is_some_and(|&b| input[b] <= input[next]) {
                deque.pop_back();
            }
            deque.push_back(next);
            next += 1;
        }
        let lo = i.saturating_sub(back);
        while deque.front().is_some_and(|&f| f < lo) {
            deque.pop_front();
        }
        *slot = input[*deque.front().expect("window is never empty")];
    }
}

/// Square maximum filter of side `size` with windows clipped at the
/// borders; invalid pixels are passed as `-inf`.
pub fn maximum_filter(values: &[f64], width: usize, height: usize, size: usize) -> Vec<f64> {
    let mut rows = vec![0.0; values.len()];
    for y in 0..height {
        let r = y * width..(y + 1) * width;
        sliding_max_line(&values[r.clone()], size, &mut rows[r]);
    }
    let mut out = vec![0.0; values.len()];
    let mut col = vec![0.0; height];
    let mut col_out = vec![0.0; height];
    for x in 0..width {
        for y in 0..height {
            col[y] = rows[y * width + x];
        }
        sliding_max_line(&col, size, &mut col_out);
        for y in 0..height {
            out[y * width + x] = col_out[y];
        }
    }
    out
}

/// Local elevation maxima of a DSM tile.
///
/// A valid pixel is a candidate when it equals the maximum of the clipped
/// `window x window` neighbourhood around it. Candidates are grouped into
/// 8-connected plateaus and each plateau yields one prompt at its centroid
/// rounded to the nearest pixel; if that pixel is not on the plateau the
/// closest plateau pixel is used. Prompt coordinates are pixel indices
/// (`x` = column, `y` = row).
pub fn dsm_local_maxima(
    dsm: &RasterGrid,
    window: u32,
    min_height: Option<f64>,
) -> Result<PromptSet, PromptError> {
    if window < 1 {
        return Err(PromptError::InvalidWindow(window));
    }
    let raw = dsm.values()?;
    let (w, h) = (dsm.width() as usize, dsm.height() as usize);
    let values: Vec<f64> = raw
        .iter()
        .map(|&v| {
            if dsm.is_valid_value(v) {
                f64::from(v)
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();
    let filtered = maximum_filter(&values, w, h, window as usize);
    let candidate: Vec<bool> = values
        .iter()
        .zip(&filtered)
        .map(|(&v, &m)| v.is_finite() && v == m && min_height.is_none_or(|t| v >= t))
        .collect();

    let mut seen = vec![false; w * h];
    let mut prompts = Vec::new();
    let mut stack = Vec::new();
    let mut component = Vec::new();
    for start in 0..w * h {
        if !candidate[start] || seen[start] {
            continue;
        }
        component.clear();
        seen[start] = true;
        stack.push(start);
        while let Some(i) = stack.pop() {
            component.push(i);
            let (x, y) = ((i % w) as i64, (i / w) as i64);
            for dy in -1..=1i64 {
                for dx in -1..=1i64 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if candidate[j] && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        component.sort_unstable();
        let n = component.len() as f64;
        let cx = component.iter().map(|&i| (i % w) as f64).sum::<f64>() / n;
        let cy = component.iter().map(|&i| (i / w) as f64).sum::<f64>() / n;
        let (rx, ry) = (cx.round() as usize, cy.round() as usize);
        let pick = if rx < w && ry < h && candidate[ry * w + rx] && component.binary_search(&(ry * w + rx)).is_ok() {
            ry * w + rx
        } else {
            *component
                .iter()
                .min_by(|&&a, &&b| {
                    let d = |i: usize| ((i % w) as f64 - cx).powi(2) + ((i / w) as f64 - cy).powi(2);
                    d(a).total_cmp(&d(b))
                })
                .expect("component is non-empty")
        };
        prompts.push(PointPrompt {
            x: (pick % w) as f64,
            y: (pick / w) as f64,
            source: PromptSource::DsmMaxima,
            elevation: Some(values[pick]),
        });
    }
    Ok(PromptSet {
        tile_id: String::new(),
        source: PromptSource::DsmMaxima,
        params: PromptParams::DsmMaxima { window, min_height },
        prompts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::GeoTransform;

    fn dsm(w: u32, h: u32, f: impl Fn(u32, u32) -> f32) -> RasterGrid {
        let data = (0..h).flat_map(|y| (0..w).map(move |x| (x, y))).map(|(x, y)| f(x, y)).collect();
        RasterGrid::dsm(w, h, GeoTransform::north_up(0.0, 0.0, 1.0), "c", Some(-9999.0), data).unwrap()
    }

    #[test]
    fn grid_single_point_is_center() {
        let g = grid_prompts(1024, 1).unwrap();
        assert_eq!(g.prompts.len(), 1);
        assert_eq!((g.prompts[0].x, g.prompts[0].y), (512.0, 512.0));
    }

    #[test]
    fn grid_counts_and_positions() {
        assert_eq!(grid_prompts(1024, 10).unwrap().prompts.len(), 100);
        assert_eq!(grid_prompts(1024, 100).unwrap().prompts.len(), 10_000);
        let pts: Vec<(f64, f64)> = grid_prompts(4, 2).unwrap().prompts.iter().map(|p| (p.x, p.y)).collect();
        assert_eq!(pts, vec![(1.0, 1.0), (3.0, 1.0), (1.0, 3.0), (3.0, 3.0)]);
        assert!(matches!(grid_prompts(4, 0), Err(PromptError::InvalidPps(0))));
    }

    #[test]
    fn single_peak() {
        let d = dsm(64, 48, |x, y| 100.0 - ((x as f32 - 20.0).abs() + (y as f32 - 30.0).abs()));
        let p = dsm_local_maxima(&d, 9, None).unwrap();
        assert_eq!(p.prompts.len(), 1);
        assert_eq!((p.prompts[0].x, p.prompts[0].y), (20.0, 30.0));
        assert_eq!(p.prompts[0].elevation, Some(100.0));
    }

    #[test]
    fn constant_tile_gives_centroid() {
        let d = dsm(1024, 1024, |_, _| 7.0);
        let p = dsm_local_maxima(&d, 100, None).unwrap();
        assert_eq!(p.prompts.len(), 1);
        // centroid 511.5 rounds half away from zero
        assert_eq!((p.prompts[0].x, p.prompts[0].y), (512.0, 512.0));
    }

    #[test]
    fn ring_plateau_snaps_onto_plateau() {
        // a square ring of 5.0 around a 1.0 interior; centroid falls in the hole
        let d = dsm(21, 21, |x, y| {
            let r = (x as i32 - 10).abs().max((y as i32 - 10).abs());
            if r == 6 { 5.0 } else { 1.0 }
        });
        let p = dsm_local_maxima(&d, 3, None).unwrap();
        let ring: Vec<_> = p.prompts.iter().filter(|q| q.elevation == Some(5.0)).collect();
        assert_eq!(ring.len(), 1);
        let (x, y) = (ring[0].x as i32, ring[0].y as i32);
        assert_eq!((x - 10).abs().max((y - 10).abs()), 6);
    }

    #[test]
    fn all_nodata_is_empty() {
        let d = dsm(10, 10, |_, _| -9999.0);
        assert!(dsm_local_maxima(&d, 5, None).unwrap().prompts.is_empty());
    }

    #[test]
    fn min_height_filters() {
        let d = dsm(30, 10, |x, _| if x == 5 { 3.0 } else if x == 25 { 10.0 } else { 0.0 });
        assert_eq!(dsm_local_maxima(&d, 5, Some(5.0)).unwrap().prompts.len(), 1);
    }

    #[test]
    fn sliding_max_even_window_offsets() {
        // size 4 covers [i-2, i+1]
        let input = [5.0, 1.0, 1.0, 1.0, 1.0, 9.0];
        let mut out = [0.0; 6];
        sliding_max_line(&input, 4, &mut out);
        assert_eq!(out, [5.0, 5.0, 5.0, 1.0, 9.0, 9.0]);
    }

    #[test]
    fn json_line_round_trip() {
        let d = dsm(16, 16, |x, y| (x + y) as f32);
        let set = dsm_local_maxima(&d, 5, None).unwrap().with_tile_id("t0");
        let line = set.to_json_line().unwrap();
        assert!(line.starts_with(r#"{"tile_id":"t0","source":"dsm_maxima","params":{"window":5}"#));
        assert_eq!(PromptSet::from_json_line(&line).unwrap(), set);
    }
}
