//! COCO-style mean-average-precision: thresholds 0.50:0.05:0.95, area
//! buckets 32²/96², all-point (precision envelope) interpolation.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::geometry::{iou, BBox};
use crate::refiner::Detection;

pub const IOU_THRESHOLDS: [f64; 10] = [0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95];
const SMALL_AREA: f64 = 32.0 * 32.0;
const MEDIUM_AREA: f64 = 96.0 * 96.0;

/// The six mAP variants. Buckets with no ground truth are `None`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MapReport {
    pub map: Option<f64>,
    pub map50: Option<f64>,
    pub map75: Option<f64>,
    pub map_s: Option<f64>,
    pub map_m: Option<f64>,
    pub map_l: Option<f64>,
    /// Per-class AP averaged over the 10 IoU thresholds.
    pub per_class: Vec<(u32, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum AreaBucket {
    All,
    Small,
    Medium,
    Large,
}

fn in_bucket(b: &BBox<f64>, bucket: AreaBucket) -> bool {
    let a = b.area();
    match bucket {
        AreaBucket::All => true,
        AreaBucket::Small => a < SMALL_AREA,
        AreaBucket::Medium => (SMALL_AREA..=MEDIUM_AREA).contains(&a),
        AreaBucket::Large => a > MEDIUM_AREA,
    }
}

/// AP for one class at one IoU threshold. Detections are ranked by
/// descending score (stable on ties); each is greedily matched to the
/// unmatched truth with the highest IoU ≥ `iou_thr`. Returns `None` when
/// there is no ground truth.
pub fn average_precision(
    dets: &[(BBox<f64>, f64)],
    truths: &[BBox<f64>],
    iou_thr: f64,
) -> Option<f64> {
    if truths.is_empty() {
        return None;
    }
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b].1.partial_cmp(&dets[a].1).unwrap_or(std::cmp::Ordering::Equal)
    });

    let mut matched = vec![false; truths.len()];
    let mut tp = Vec::with_capacity(dets.len());
    for &di in &order {
        let mut best: Option<(usize, f64)> = None;
        for (ti, truth) in truths.iter().enumerate() {
            if matched[ti] {
                continue;
            }
            let overlap = iou(&dets[di].0, truth);
            if overlap >= iou_thr {
                let better = match best {
                    None => true,
                    Some((_, b)) => overlap > b,
                };
                if better {
                    best = Some((ti, overlap));
                }
            }
        }
        match best {
            Some((ti, _)) => {
                matched[ti] = true;
                tp.push(true);
            }
            None => tp.push(false),
        }
    }

    // precision-recall points, then the all-point interpolated area
    let n_truth = truths.len() as f64;
    let mut cum_tp = 0usize;
    let mut precisions = Vec::with_capacity(tp.len());
    let mut recalls = Vec::with_capacity(tp.len());
    for (i, &hit) in tp.iter().enumerate() {
        if hit {
            cum_tp += 1;
        }
        precisions.push(cum_tp as f64 / (i + 1) as f64);
        recalls.push(cum_tp as f64 / n_truth);
    }
    // precision envelope: running max from the right
    for i in (0..precisions.len().saturating_sub(1)).rev() {
        precisions[i] = precisions[i].max(precisions[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for i in 0..precisions.len() {
        if recalls[i] > prev_recall {
            ap += (recalls[i] - prev_recall) * precisions[i];
            prev_recall = recalls[i];
        }
    }
    Some(ap)
}

fn bucket_map(dets: &[Detection], truths: &[Detection], bucket: AreaBucket) -> Option<f64> {
    let classes: BTreeSet<u32> = truths
        .iter()
        .filter(|t| in_bucket(&t.bbox, bucket))
        .map(|t| t.class_id)
        .collect();
    if classes.is_empty() {
        return None;
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for &class in &classes {
        let class_truths: Vec<BBox<f64>> = truths
            .iter()
            .filter(|t| t.class_id == class && in_bucket(&t.bbox, bucket))
            .map(|t| t.bbox)
            .collect();
        let class_dets: Vec<(BBox<f64>, f64)> = dets
            .iter()
            .filter(|d| d.class_id == class && in_bucket(&d.bbox, bucket))
            .map(|d| (d.bbox, d.score))
            .collect();
        for &thr in &IOU_THRESHOLDS {
            if let Some(ap) = average_precision(&class_dets, &class_truths, thr) {
                total += ap;
                count += 1;
            }
        }
    }
    (count > 0).then(|| total / count as f64)
}

fn threshold_map(dets: &[Detection], truths: &[Detection], thr: f64) -> Option<f64> {
    let classes: BTreeSet<u32> = truths.iter().map(|t| t.class_id).collect();
    let mut total = 0.0;
    let mut count = 0usize;
    for &class in &classes {
        let class_truths: Vec<BBox<f64>> = truths
            .iter()
            .filter(|t| t.class_id == class)
            .map(|t| t.bbox)
            .collect();
        let class_dets: Vec<(BBox<f64>, f64)> = dets
            .iter()
            .filter(|d| d.class_id == class)
            .map(|d| (d.bbox, d.score))
            .collect();
        if let Some(ap) = average_precision(&class_dets, &class_truths, thr) {
            total += ap;
            count += 1;
        }
    }
    (count > 0).then(|| total / count as f64)
}

/// Computes all six mAP variants plus per-class AP.
pub fn evaluate(dets: &[Detection], truths: &[Detection]) -> MapReport {
    let classes: BTreeSet<u32> = truths.iter().map(|t| t.class_id).collect();
    let mut per_class = Vec::new();
    for &class in &classes {
        let class_truths: Vec<BBox<f64>> = truths
            .iter()
            .filter(|t| t.class_id == class)
            .map(|t| t.bbox)
            .collect();
        let class_dets: Vec<(BBox<f64>, f64)> = dets
            .iter()
            .filter(|d| d.class_id == class)
            .map(|d| (d.bbox, d.score))
            .collect();
        let mut total = 0.0;
        let mut count = 0;
        for &thr in &IOU_THRESHOLDS {
            if let Some(ap) = average_precision(&class_dets, &class_truths, thr) {
                total += ap;
                count += 1;
            }
        }
        if count > 0 {
            per_class.push((class, total / count as f64));
        }
    }

    MapReport {
        map: bucket_map(dets, truths, AreaBucket::All),
        map50: threshold_map(dets, truths, 0.50),
        map75: threshold_map(dets, truths, 0.75),
        map_s: bucket_map(dets, truths, AreaBucket::Small),
        map_m: bucket_map(dets, truths, AreaBucket::Medium),
        map_l: bucket_map(dets, truths, AreaBucket::Large),
        per_class,
    }
}
