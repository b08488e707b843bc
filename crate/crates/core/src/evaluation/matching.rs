use rayon::prelude::*;

use super::{EvalError, GroundTruthSet, PredictionSet, DEFAULT_MAX_DETS};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MatchParams {
    pub max_dets: usize,
    /// Match across classes (all labels collapsed to class 0).
    pub class_agnostic: bool,
}

impl Default for MatchParams {
    fn default() -> Self {
        MatchParams {
            max_dets: DEFAULT_MAX_DETS,
            class_agnostic: false,
        }
    }
}

/// Matching outcome for one tile.
#[derive(Debug, Clone, PartialEq)]
pub struct TileMatch {
    pub tile_id: String,
    /// Indices into the tile's predictions in processing order (descending
    /// fused score, input order on ties), truncated to `max_dets`.
    pub order: Vec<usize>,
    /// Fused scores aligned with `order`.
    pub scores: Vec<f64>,
    /// Classes aligned with `order`; all 0 under class-agnostic matching.
    pub pred_classes: Vec<u32>,
    pub gt_classes: Vec<u32>,
    /// `matches[t][k]`: ground truth taken by the k-th processed prediction
    /// at threshold `t`, `None` for a false positive.
    pub matches: Vec<Vec<Option<usize>>>,
}

impl TileMatch {
    pub fn unmatched_gt(&self, t: usize) -> Vec<usize> {
        let mut taken = vec![false; self.gt_classes.len()];
        for g in self.matches[t].iter().flatten() {
            taken[*g] = true;
        }
        (0..taken.len()).filter(|&g| !taken[g]).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchTable {
    pub thresholds: Vec<f64>,
    pub class_agnostic: bool,
    /// Every ground-truth tile, in tile-id order.
    pub tiles: Vec<TileMatch>,
}

impl MatchTable {
    pub fn num_gt(&self, class_id: u32) -> usize {
        self.tiles
            .iter()
            .map(|t| t.gt_classes.iter().filter(|&&c| c == class_id).count())
            .sum()
    }

    /// `(tp, fp, fn)` for one class at threshold index `t`.
    pub fn counts(&self, t: usize, class_id: u32) -> (usize, usize, usize) {
        let (mut tp, mut fp) = (0, 0);
        for tile in &self.tiles {
            for (k, m) in tile.matches[t].iter().enumerate() {
                if tile.pred_classes[k] == class_id {
                    if m.is_some() {
                        tp += 1;
                    } else {
                        fp += 1;
                    }
                }
            }
        }
        (tp, fp, self.num_gt(class_id) - tp)
    }
}

/// Per-tile data shared by every matching pass: fused scores, score order
/// and the full prediction x ground-truth IoU matrix.
pub(crate) struct PreparedTile {
    pub tile_id: String,
    pub gt_classes: Vec<u32>,
    pub pred_classes: Vec<u32>,
    pub scores: Vec<f64>,
    pub order: Vec<usize>,
    /// `ious[p][g]` with `p` an input index.
    pub ious: Vec<Vec<f64>>,
}

pub(crate) fn prepare(gt: &GroundTruthSet, preds: &PredictionSet) -> Result<Vec<PreparedTile>, EvalError> {
    let nc = gt.num_classes();
    let mut fused = Vec::with_capacity(preds.tiles.len());
    for (tile_id, list) in &preds.tiles {
        let Some(t) = gt.tiles.get(tile_id) else {
            return Err(EvalError::UnknownTile(tile_id.clone()));
        };
        let mut scores = Vec::with_capacity(list.len());
        for p in list {
            if p.class_id as usize >= nc {
                return Err(EvalError::InvalidClass {
                    class_id: p.class_id,
                    num_classes: nc,
                });
            }
            if (p.mask.width(), p.mask.height()) != (t.width, t.height) {
                return Err(EvalError::DimensionMismatch {
                    tile_id: tile_id.clone(),
                    expected: (t.width, t.height),
                    got: (p.mask.width(), p.mask.height()),
                });
            }
            if p.mask.is_empty() {
                return Err(EvalError::EmptyMask(tile_id.clone()));
            }
            scores.push(p.fused_score()?);
        }
        fused.push((tile_id.as_str(), scores));
    }

    let tiles: Vec<(&String, _)> = gt.tiles.iter().collect();
    tiles
        .par_iter()
        .map(|&(tile_id, t)| {
            let list = preds.tiles.get(tile_id).map(Vec::as_slice).unwrap_or(&[]);
            let scores = fused
                .iter()
                .find(|(id, _)| *id == tile_id.as_str())
                .map(|(_, s)| s.clone())
                .unwrap_or_default();
            let mut order: Vec<usize> = (0..list.len()).collect();
            order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
            let ious = list
                .iter()
                .map(|p| {
                    t.instances
                        .iter()
                        .map(|g| p.mask.iou(&g.mask))
                        .collect::<Result<Vec<f64>, _>>()
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok(PreparedTile {
                tile_id: tile_id.clone(),
                gt_classes: t.instances.iter().map(|g| g.class_id).collect(),
                pred_classes: list.iter().map(|p| p.class_id).collect(),
                scores,
                order,
                ious,
            })
        })
        .collect()
}

fn match_tile(p: &PreparedTile, thresholds: &[f64], params: &MatchParams) -> TileMatch {
    let order: Vec<usize> = p.order.iter().copied().take(params.max_dets).collect();
    let class = |c: u32| if params.class_agnostic { 0 } else { c };
    let gt_classes: Vec<u32> = p.gt_classes.iter().map(|&c| class(c)).collect();
    let pred_classes: Vec<u32> = order.iter().map(|&i| class(p.pred_classes[i])).collect();
    let matches = thresholds
        .iter()
        .map(|&t| {
            let mut taken = vec![false; gt_classes.len()];
            order
                .iter()
                .zip(&pred_classes)
                .map(|(&pi, &pc)| {
                    let mut best: Option<(usize, f64)> = None;
                    for (g, &gc) in gt_classes.iter().enumerate() {
                        if taken[g] || gc != pc {
                            continue;
                        }
                        let v = p.ious[pi][g];
                        if v >= t && best.is_none_or(|(_, b)| v > b) {
                            best = Some((g, v));
                        }
                    }
                    best.map(|(g, _)| {
                        taken[g] = true;
                        g
                    })
                })
                .collect()
        })
        .collect();
    TileMatch {
        tile_id: p.tile_id.clone(),
        scores: order.iter().map(|&i| p.scores[i]).collect(),
        order,
        pred_classes,
        gt_classes,
        matches,
    }
}

pub(crate) fn match_prepared(tiles: &[PreparedTile], thresholds: &[f64], params: &MatchParams) -> MatchTable {
    MatchTable {
        thresholds: thresholds.to_vec(),
        class_agnostic: params.class_agnostic,
        tiles: tiles
            .par_iter()
            .map(|t| match_tile(t, thresholds, params))
            .collect(),
    }
}

/// Greedy matching at each IoU threshold. Predictions are processed in
/// descending fused score; each takes the unmatched ground truth of its
/// class with the highest IoU (lowest index on ties) provided that IoU
/// reaches the threshold, and is a false positive otherwise.
pub fn match_instances(
    gt: &GroundTruthSet,
    preds: &PredictionSet,
    thresholds: &[f64],
    params: &MatchParams,
) -> Result<MatchTable, EvalError> {
    let prepared = prepare(gt, preds)?;
    Ok(match_prepared(&prepared, thresholds, params))
}
