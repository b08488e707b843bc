//! Random evaluation scenes and exhaustive reference implementations of
//! matching, precision-recall AP and best-match mIoU.

use std::collections::BTreeMap;

use rand::RngExt;
use rand_chacha::ChaCha8Rng;

use super::{brute_iou, random_mask, shifted};
use crownforge::evaluation::{GroundTruthSet, GtInstance, GtTile, Prediction, PredictionSet};

pub const SIDE: u32 = 48;

/// Up to `max_tiles` tiles of `SIDE`², at most `max_gt` ground truths and
/// `max_pred` predictions in total over `classes` classes. Predictions are
/// mostly jittered copies of ground truths; scores sit on a coarse grid so
/// that ties occur.
pub fn random_scene(
    rng: &mut ChaCha8Rng,
    max_tiles: usize,
    max_gt: usize,
    max_pred: usize,
    classes: u32,
) -> (GroundTruthSet, PredictionSet) {
    let n_tiles = rng.random_range(1..=max_tiles);
    let n_gt = rng.random_range(1..=max_gt);
    let n_pred = rng.random_range(0..=max_pred);
    let mut tiles: BTreeMap<String, GtTile> = (0..n_tiles)
        .map(|i| {
            (
                format!("t{i}"),
                GtTile {
                    width: SIDE,
                    height: SIDE,
                    instances: Vec::new(),
                },
            )
        })
        .collect();
    let ids: Vec<String> = tiles.keys().cloned().collect();
    for _ in 0..n_gt {
        let id = &ids[rng.random_range(0..n_tiles)];
        let inst = GtInstance {
            mask: random_mask(rng, SIDE, SIDE),
            class_id: rng.random_range(0..classes),
        };
        tiles.get_mut(id).unwrap().instances.push(inst);
    }
    let gt = GroundTruthSet::new((0..classes).map(|c| format!("c{c}")).collect(), tiles).unwrap();

    let mut preds = PredictionSet::default();
    let mut made = 0;
    while made < n_pred {
        let id = &ids[rng.random_range(0..n_tiles)];
        let tile = &gt.tiles[id];
        let (mask, class_id) = if !tile.instances.is_empty() && rng.random_bool(0.75) {
            let g = &tile.instances[rng.random_range(0..tile.instances.len())];
            let m = shifted(&g.mask, rng.random_range(-3..=3), rng.random_range(-3..=3));
            let c = if rng.random_bool(0.8) { g.class_id } else { rng.random_range(0..classes) };
            (m, c)
        } else {
            (random_mask(rng, SIDE, SIDE), rng.random_range(0..classes))
        };
        if mask.is_empty() {
            continue;
        }
        let score = f64::from(rng.random_range(1..=20u32)) / 20.0;
        let score2 = rng.random_bool(0.4).then(|| f64::from(rng.random_range(0..=4u32)) / 4.0);
        preds.push(
            id.clone(),
            Prediction {
                class_id,
                score,
                score2,
                mask,
            },
        );
        made += 1;
    }
    (gt, preds)
}

fn fused(p: &Prediction) -> f64 {
    match p.score2 {
        Some(s) => (p.score + s) / 2.0,
        None => p.score,
    }
}

/// Processing order by repeated selection: highest score first, lowest
/// input index among equal scores.
pub fn selection_order(scores: &[f64]) -> Vec<usize> {
    let mut left: Vec<usize> = (0..scores.len()).collect();
    let mut out = Vec::new();
    while !left.is_empty() {
        let mut best = 0;
        for k in 1..left.len() {
            if scores[left[k]] > scores[left[best]] {
                best = k;
            }
        }
        out.push(left.remove(best));
    }
    out
}

/// Greedy matching of one tile at threshold `t`, in processing order:
/// `(prediction index, matched ground truth)`.
pub fn match_tile(gt: &GtTile, preds: &[Prediction], t: f64, agnostic: bool, max_dets: usize) -> Vec<(usize, Option<usize>)> {
    let scores: Vec<f64> = preds.iter().map(fused).collect();
    let mut taken = vec![false; gt.instances.len()];
    let mut out = Vec::new();
    for p in selection_order(&scores).into_iter().take(max_dets) {
        let mut best: Option<(usize, f64)> = None;
        for (g, inst) in gt.instances.iter().enumerate() {
            if taken[g] || (!agnostic && inst.class_id != preds[p].class_id) {
                continue;
            }
            let v = brute_iou(&preds[p].mask, &inst.mask);
            if v >= t && best.is_none_or(|(_, b)| v > b) {
                best = Some((g, v));
            }
        }
        if let Some((g, _)) = best {
            taken[g] = true;
        }
        out.push((p, best.map(|b| b.0)));
    }
    out
}

/// Ranked `(score, hit)` detections of one class (all classes when
/// `class` is `None`) and the matching ground-truth count.
pub fn detections(
    gt: &GroundTruthSet,
    preds: &PredictionSet,
    t: f64,
    class: Option<u32>,
    max_dets: usize,
) -> (Vec<(f64, bool)>, usize) {
    let mut dets = Vec::new();
    let mut n_gt = 0;
    for (id, tile) in &gt.tiles {
        n_gt += tile.instances.iter().filter(|g| class.is_none_or(|c| g.class_id == c)).count();
        let list = preds.tiles.get(id).map(Vec::as_slice).unwrap_or(&[]);
        for (p, m) in match_tile(tile, list, t, class.is_none(), max_dets) {
            if class.is_none_or(|c| list[p].class_id == c) {
                dets.push((fused(&list[p]), m.is_some()));
            }
        }
    }
    // stable insertion sort by descending score
    for i in 1..dets.len() {
        let mut j = i;
        while j > 0 && dets[j - 1].0 < dets[j].0 {
            dets.swap(j - 1, j);
            j -= 1;
        }
    }
    (dets, n_gt)
}

/// 101-point AP by definition: at each recall level, the best precision
/// over every cut of the ranking that reaches it.
pub fn pr_oracle_ap(dets: &[(f64, bool)], n_gt: usize) -> f64 {
    let mut total = 0.0;
    for k in 0..=100 {
        let r = f64::from(k) / 100.0;
        let mut best = 0.0f64;
        for cut in 1..=dets.len() {
            let tp = dets[..cut].iter().filter(|d| d.1).count();
            let recall = tp as f64 / n_gt as f64;
            if recall >= r {
                best = best.max(tp as f64 / cut as f64);
            }
        }
        total += best;
    }
    total / 101.0
}

/// Mean over ground truths of the best IoU with any prediction of the tile.
pub fn miou_oracle(gt: &GroundTruthSet, preds: &PredictionSet) -> f64 {
    let mut sum = 0.0;
    let mut n = 0;
    for (id, tile) in &gt.tiles {
        let list = preds.tiles.get(id).map(Vec::as_slice).unwrap_or(&[]);
        for g in &tile.instances {
            sum += list.iter().map(|p| brute_iou(&p.mask, &g.mask)).fold(0.0, f64::max);
            n += 1;
        }
    }
    sum / f64::from(n)
}

pub fn coco_thresholds() -> Vec<f64> {
    (0..10).map(|i| f64::from(50 + 5 * i) / 100.0).collect()
}
