use serde::{Deserialize, Serialize};

use super::mask::BinaryMask;
use super::GeometryError;

/// A mask with a class and a confidence score.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredInstance {
    pub mask: BinaryMask,
    pub class_id: u32,
    pub score: f64,
}

impl ScoredInstance {
    pub fn new(mask: BinaryMask, class_id: u32, score: f64) -> Result<Self, GeometryError> {
        let inst = ScoredInstance {
            mask,
            class_id,
            score,
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(0.0..=1.0).contains(&self.score) {
            return Err(GeometryError::InvalidInstance(format!(
                "score {} outside [0, 1]",
                self.score
            )));
        }
        if self.mask.is_empty() {
            return Err(GeometryError::InvalidInstance("mask has no set pixels".into()));
        }
        Ok(())
    }
}

/// How overlap between two instances is measured during suppression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverlapMetric {
    #[default]
    Mask,
    /// IoU of the masks' tight bounding boxes.
    Box,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NmsParams {
    pub score_threshold: f64,
    pub iou_threshold: f64,
    /// Only suppress instances that share a class id.
    pub class_aware: bool,
    pub overlap: OverlapMetric,
}

impl Default for NmsParams {
    fn default() -> Self {
        NmsParams {
            score_threshold: 0.5,
            iou_threshold: 0.5,
            class_aware: false,
            overlap: OverlapMetric::Mask,
        }
    }
}

pub fn overlap(
    metric: OverlapMetric,
    a: &BinaryMask,
    b: &BinaryMask,
) -> Result<f64, GeometryError> {
    match metric {
        OverlapMetric::Mask => a.iou(b),
        OverlapMetric::Box => {
            if !a.same_shape(b) {
                return Err(GeometryError::DimensionMismatch(format!(
                    "{}x{} vs {}x{}",
                    a.width(),
                    a.height(),
                    b.width(),
                    b.height()
                )));
            }
            match (a.bbox(), b.bbox()) {
                (Some(ba), Some(bb)) => Ok(ba.iou(&bb)),
                _ => Err(GeometryError::EmptyUnion),
            }
        }
    }
}

/// Greedy suppression; returns indices into `instances` of the kept
/// instances, by descending score with ties in input order.
pub fn nms_indices(
    instances: &[ScoredInstance],
    params: &NmsParams,
) -> Result<Vec<usize>, GeometryError> {
    for (name, t) in [
        ("score_threshold", params.score_threshold),
        ("iou_threshold", params.iou_threshold),
    ] {
        if !(0.0..=1.0).contains(&t) {
            return Err(GeometryError::InvalidThreshold { name, value: t });
        }
    }
    for inst in instances {
        inst.validate()?;
    }
    let mut order: Vec<usize> = (0..instances.len())
        .filter(|&i| instances[i].score >= params.score_threshold)
        .collect();
    order.sort_by(|&a, &b| instances[b].score.total_cmp(&instances[a].score));

    let mut kept: Vec<usize> = Vec::new();
    'candidates: for i in order {
        let cand = &instances[i];
        for &k in &kept {
            let other = &instances[k];
            if params.class_aware && other.class_id != cand.class_id {
                continue;
            }
            if overlap(params.overlap, &cand.mask, &other.mask)? > params.iou_threshold {
                continue 'candidates;
            }
        }
        kept.push(i);
    }
    Ok(kept)
}

pub fn nms(
    instances: &[ScoredInstance],
    params: &NmsParams,
) -> Result<Vec<ScoredInstance>, GeometryError> {
    Ok(nms_indices(instances, params)?
        .into_iter()
        .map(|i| instances[i].clone())
        .collect())
}
