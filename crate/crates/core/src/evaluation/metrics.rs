use log::warn;
use serde::{Deserialize, Serialize};

use super::matching::{match_prepared, prepare, PreparedTile};
use super::{EvalError, GroundTruthSet, MatchParams, MatchTable, PredictionSet, DEFAULT_MAX_DETS};

/// IoU threshold regime behind AP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApMode {
    /// 0.50, 0.55, ..., 0.95.
    #[default]
    Coco,
    Ap50,
}

impl ApMode {
    pub fn thresholds(self) -> Vec<f64> {
        match self {
            ApMode::Coco => (0..10).map(|i| f64::from(50 + 5 * i) / 100.0).collect(),
            ApMode::Ap50 => vec![0.5],
        }
    }
}

impl std::str::FromStr for ApMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "coco" => Ok(ApMode::Coco),
            "ap50" => Ok(ApMode::Ap50),
            other => Err(format!("unknown AP mode `{other}` (expected coco or ap50)")),
        }
    }
}

/// 101-point interpolated AP of a detection list against `n_gt` ground
/// truths. Detections are `(score, is_true_positive)`; they are ranked by
/// descending score with ties kept in the given order. `None` when there is
/// no ground truth.
pub fn interpolated_ap(detections: &[(f64, bool)], n_gt: usize) -> Option<f64> {
    if n_gt == 0 {
        return None;
    }
    let mut ranked: Vec<&(f64, bool)> = detections.iter().collect();
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut recall = Vec::with_capacity(ranked.len());
    let mut precision = Vec::with_capacity(ranked.len());
    for &&(_, hit) in &ranked {
        if hit {
            tp += 1;
        } else {
            fp += 1;
        }
        recall.push(tp as f64 / n_gt as f64);
        precision.push(tp as f64 / (tp + fp) as f64);
    }
    for i in (1..precision.len()).rev() {
        precision[i - 1] = precision[i - 1].max(precision[i]);
    }
    let sum: f64 = (0..=100)
        .map(|k| {
            let r = f64::from(k) / 100.0;
            let i = recall.partition_point(|&x| x < r);
            precision.get(i).copied().unwrap_or(0.0)
        })
        .sum();
    Some(sum / 101.0)
}

fn detections(table: &MatchTable, t: usize, class_id: u32) -> Vec<(f64, bool)> {
    table
        .tiles
        .iter()
        .flat_map(|tile| {
            tile.pred_classes
                .iter()
                .zip(&tile.scores)
                .zip(&tile.matches[t])
                .filter(move |((&c, _), _)| c == class_id)
                .map(|((_, &s), m)| (s, m.is_some()))
        })
        .collect()
}

/// AP of one class at threshold index `t` of the table.
pub fn average_precision_at(table: &MatchTable, t: usize, class_id: u32) -> Option<f64> {
    interpolated_ap(&detections(table, t, class_id), table.num_gt(class_id))
}

/// AP of one class averaged over every threshold of the table; `None` when
/// the class has no ground truth.
pub fn average_precision(table: &MatchTable, class_id: u32) -> Option<f64> {
    let n = table.thresholds.len();
    let mut sum = 0.0;
    for t in 0..n {
        sum += average_precision_at(table, t, class_id)?;
    }
    Some(sum / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    /// Unweighted mean over classes.
    pub map: f64,
    /// Mean weighted by per-class ground-truth counts.
    pub wmap: f64,
}

pub fn aggregate(aps: &[f64], counts: &[usize]) -> Result<Aggregate, EvalError> {
    if aps.len() != counts.len() {
        return Err(EvalError::Aggregate(format!(
            "{} AP values but {} class counts",
            aps.len(),
            counts.len()
        )));
    }
    if aps.is_empty() {
        return Err(EvalError::Aggregate("no classes to aggregate".into()));
    }
    if let Some(bad) = aps.iter().find(|a| !(0.0..=1.0).contains(*a)) {
        return Err(EvalError::Aggregate(format!("AP {bad} outside [0, 1]")));
    }
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(EvalError::Aggregate("class counts sum to zero".into()));
    }
    // Both as weighted sums so equal counts give bit-identical results:
    // n / (k * n) and 1 / k round to the same f64.
    let uniform = 1.0 / aps.len() as f64;
    let map = aps.iter().map(|a| a * uniform).sum::<f64>();
    let wmap = aps
        .iter()
        .zip(counts)
        .map(|(a, &n)| a * (n as f64 / total as f64))
        .sum::<f64>();
    Ok(Aggregate { map, wmap })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SingleClassMetrics {
    /// AP with every label collapsed to one class.
    pub map: f64,
    pub map50: f64,
    /// Mean over ground truths of the best IoU reached by any prediction in
    /// the same tile.
    pub miou: f64,
}

fn best_match_miou(tiles: &[PreparedTile]) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for t in tiles {
        for g in 0..t.gt_classes.len() {
            sum += t.ious.iter().map(|row| row[g]).fold(0.0, f64::max);
            n += 1;
        }
    }
    sum / n as f64
}

fn single_class_prepared(tiles: &[PreparedTile], thresholds: &[f64], max_dets: usize) -> SingleClassMetrics {
    let params = MatchParams {
        max_dets,
        class_agnostic: true,
    };
    let table = match_prepared(tiles, thresholds, &params);
    SingleClassMetrics {
        map: average_precision(&table, 0).unwrap_or(0.0),
        map50: average_precision_at(&table, 0, 0).unwrap_or(0.0),
        miou: best_match_miou(tiles),
    }
}

pub fn single_class_metrics(
    gt: &GroundTruthSet,
    preds: &PredictionSet,
    params: &EvalParams,
) -> Result<SingleClassMetrics, EvalError> {
    if gt.num_instances() == 0 {
        return Err(EvalError::EmptyGroundTruth);
    }
    let prepared = prepare(gt, preds)?;
    Ok(single_class_prepared(&prepared, &params.ap_mode.thresholds(), params.max_dets))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalParams {
    pub ap_mode: ApMode,
    pub max_dets: usize,
}

impl Default for EvalParams {
    fn default() -> Self {
        EvalParams {
            ap_mode: ApMode::Coco,
            max_dets: DEFAULT_MAX_DETS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassResult {
    pub class_id: u32,
    pub name: String,
    pub n_gt: usize,
    /// Under the report's AP mode; absent when the class has no ground truth.
    pub ap: Option<f64>,
    pub ap50: Option<f64>,
    /// Match counts at IoU 0.5.
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ap_mode: ApMode,
    pub iou_thresholds: Vec<f64>,
    pub max_dets: usize,
    pub classes: Vec<ClassResult>,
    pub map: Option<f64>,
    pub wmap: Option<f64>,
    pub map50: Option<f64>,
    pub wmap50: Option<f64>,
    pub map_single: f64,
    pub map_single50: f64,
    pub miou: f64,
    pub num_tiles: usize,
    pub num_gt: usize,
    pub num_predictions: usize,
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
}

fn aggregate_defined(classes: &[ClassResult], pick: impl Fn(&ClassResult) -> Option<f64>) -> Option<Aggregate> {
    let (aps, counts): (Vec<f64>, Vec<usize>) =
        classes.iter().filter_map(|c| pick(c).map(|a| (a, c.n_gt))).unzip();
    aggregate(&aps, &counts).ok()
}

/// Full evaluation: per-class AP and AP50, mAP, wmAP, single-class mAP and
/// best-match mIoU. IoUs are computed once and shared by every pass.
pub fn evaluate(gt: &GroundTruthSet, preds: &PredictionSet, params: &EvalParams) -> Result<EvalReport, EvalError> {
    if gt.num_instances() == 0 {
        return Err(EvalError::EmptyGroundTruth);
    }
    let prepared = prepare(gt, preds)?;
    let thresholds = params.ap_mode.thresholds();
    let per_class = MatchParams {
        max_dets: params.max_dets,
        class_agnostic: false,
    };
    let table = match_prepared(&prepared, &thresholds, &per_class);
    let mut warnings = gt.warnings.clone();
    let classes: Vec<ClassResult> = gt
        .class_counts()
        .into_iter()
        .enumerate()
        .map(|(c, n_gt)| {
            let c = c as u32;
            let name = gt.class_names[c as usize].clone();
            if n_gt == 0 {
                let msg = format!("class `{name}` has no ground truth; its AP is undefined and excluded");
                warn!("{msg}");
                warnings.push(msg);
            }
            let (tp, fp, fn_) = table.counts(0, c);
            ClassResult {
                class_id: c,
                name,
                n_gt,
                ap: average_precision(&table, c),
                ap50: average_precision_at(&table, 0, c),
                tp,
                fp,
                fn_,
            }
        })
        .collect();
    let all = aggregate_defined(&classes, |c| c.ap);
    let all50 = aggregate_defined(&classes, |c| c.ap50);
    let single = single_class_prepared(&prepared, &thresholds, params.max_dets);
    Ok(EvalReport {
        ap_mode: params.ap_mode,
        iou_thresholds: thresholds,
        max_dets: params.max_dets,
        map: all.map(|a| a.map),
        wmap: all.map(|a| a.wmap),
        map50: all50.map(|a| a.map),
        wmap50: all50.map(|a| a.wmap),
        classes,
        map_single: single.map,
        map_single50: single.map50,
        miou: single.miou,
        num_tiles: gt.tiles.len(),
        num_gt: gt.num_instances(),
        num_predictions: preds.len(),
        warnings,
        config: None,
    })
}
