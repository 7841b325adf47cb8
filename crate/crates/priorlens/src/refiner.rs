//! Pseudo-label refinement: confidence thresholding, IoU-chained tracklets
//! over fixed-length clips, vanishing-region recovery, and majority-class
//! relabeling of tracklets whose fitted line crosses the region.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::geometry::{iou, BBox, Point2, PARALLEL_TOL};
use crate::vanishing::{fit_line, identify_region, pairwise_intersections, VanishingRegion};
use crate::Line2;

/// One pseudo-labeled RoI.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub frame: usize,
    pub bbox: BBox<f64>,
    pub class_id: u32,
    pub score: f64,
}

/// A chain of detections across consecutive frames, identified by indices
/// into the detection list it was built from.
#[derive(Debug, Clone)]
pub struct Tracklet {
    pub det_indices: Vec<usize>,
    pub start_frame: usize,
    pub fitted_line: Option<Line2>,
}

impl Tracklet {
    pub fn len(&self) -> usize {
        self.det_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.det_indices.is_empty()
    }

    pub fn centers(&self, dets: &[Detection]) -> Vec<Point2<f64>> {
        self.det_indices
            .iter()
            .map(|&i| dets[i].bbox.center())
            .collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RefinerConfig {
    /// Confidence threshold σ.
    pub sigma: f64,
    /// Clip length in frames; chains run over frames k..k+d.
    pub d: usize,
    /// Minimum IoU to extend a chain.
    pub min_iou: f64,
    /// DBSCAN ε in percent of the image diagonal.
    pub eps: f64,
    /// DBSCAN MinPts.
    pub min_pts: usize,
}

impl Default for RefinerConfig {
    fn default() -> Self {
        RefinerConfig {
            sigma: 0.9,
            d: 5,
            min_iou: 0.1,
            eps: 1.0,
            min_pts: 2,
        }
    }
}

/// Outcome summary of one [`refine`] run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RefineReport {
    pub input_count: usize,
    pub kept_count: usize,
    pub tracklet_count: usize,
    pub intersection_count: usize,
    pub region: Option<VanishingRegion<f64>>,
    pub relabel_count: usize,
    pub no_region: bool,
}

/// Keeps detections with score ≥ sigma, preserving order.
pub fn threshold_filter(dets: &[Detection], sigma: f64) -> Vec<Detection> {
    dets.iter().filter(|d| d.score >= sigma).copied().collect()
}

fn frame_index(dets: &[Detection]) -> BTreeMap<usize, Vec<usize>> {
    let mut by_frame: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, d) in dets.iter().enumerate() {
        by_frame.entry(d.frame).or_default().push(i);
    }
    by_frame
}

/// Builds tracklets for one clip: every detection in frame `start` begins
/// a chain that greedily claims the next-frame box maximizing IoU, up to
/// frame `start + d`. Matching is one-to-one within the clip; starters are
/// processed in descending score order (ties by input order) and IoU ties
/// break toward the lowest index. A chain stops when the best IoU falls
/// below `min_iou`.
pub fn build_tracklets(dets: &[Detection], start: usize, cfg: &RefinerConfig) -> Vec<Tracklet> {
    let by_frame = frame_index(dets);
    build_tracklets_indexed(dets, &by_frame, start, cfg)
}

fn build_tracklets_indexed(
    dets: &[Detection],
    by_frame: &BTreeMap<usize, Vec<usize>>,
    start: usize,
    cfg: &RefinerConfig,
) -> Vec<Tracklet> {
    let mut starters: Vec<usize> = by_frame.get(&start).cloned().unwrap_or_default();
    starters.sort_by(|&a, &b| {
        dets[b]
            .score
            .partial_cmp(&dets[a].score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });

    let mut claimed = vec![false; dets.len()];
    let mut tracklets = Vec::new();
    for s in starters {
        let mut chain = vec![s];
        claimed[s] = true;
        let mut cur = s;
        for frame in start + 1..=start + cfg.d {
            let Some(candidates) = by_frame.get(&frame) else { break };
            let mut best: Option<(usize, f64)> = None;
            for &cand in candidates {
                if claimed[cand] {
                    continue;
                }
                let overlap = iou(&dets[cur].bbox, &dets[cand].bbox);
                let better = match best {
                    None => true,
                    Some((_, b)) => overlap > b,
                };
                if better {
                    best = Some((cand, overlap));
                }
            }
            match best {
                Some((cand, overlap)) if overlap >= cfg.min_iou => {
                    claimed[cand] = true;
                    chain.push(cand);
                    cur = cand;
                }
                _ => break,
            }
        }
        tracklets.push(Tracklet {
            det_indices: chain,
            start_frame: start,
            fitted_line: None,
        });
    }
    tracklets
}

/// Runs [`build_tracklets`] at clip starts {0, d, 2d, …} over the whole
/// video and concatenates the results. Consecutive clips share their
/// boundary frame, so a boundary detection can close one clip's chain and
/// open the next one's.
pub fn build_all_tracklets(dets: &[Detection], cfg: &RefinerConfig) -> Vec<Tracklet> {
    let by_frame = frame_index(dets);
    let Some((&max_frame, _)) = by_frame.iter().next_back() else {
        return Vec::new();
    };
    let mut tracklets = Vec::new();
    let mut start = 0;
    while start <= max_frame {
        tracklets.extend(build_tracklets_indexed(dets, &by_frame, start, cfg));
        start += cfg.d;
    }
    tracklets
}

/// Fits a total-least-squares line through each tracklet's box centers.
/// Tracklets with fewer than two detections, or with all-coincident
/// centers, keep `fitted_line = None`.
pub fn fit_tracklet_lines(tracklets: &mut [Tracklet], dets: &[Detection]) {
    for t in tracklets.iter_mut() {
        if t.len() >= 2 {
            t.fitted_line = fit_line(&t.centers(dets)).ok();
        }
    }
}

/// Replaces every member's class with the tracklet's majority class, for
/// tracklets whose fitted line passes within the region (line distance to
/// the region centroid ≤ region radius). Majority ties break toward the
/// class with the greatest summed confidence, then the lowest class id.
/// Returns the number of detections whose class actually changed.
pub fn relabel(
    tracklets: &[Tracklet],
    dets: &mut [Detection],
    region: &VanishingRegion<f64>,
) -> usize {
    let mut changes = 0;
    for t in tracklets {
        let Some(line) = &t.fitted_line else { continue };
        // small absolute slack so an exactly-concurrent scene (radius 0)
        // still admits its own generating lines
        if line.distance(&region.centroid) > region.radius + 1e-6 {
            continue;
        }
        let mut freq: BTreeMap<u32, (usize, f64)> = BTreeMap::new();
        for &i in &t.det_indices {
            let e = freq.entry(dets[i].class_id).or_insert((0, 0.0));
            e.0 += 1;
            e.1 += dets[i].score;
        }
        let (&majority, _) = freq
            .iter()
            .max_by(|(ca, (na, sa)), (cb, (nb, sb))| {
                na.cmp(nb)
                    .then(sa.partial_cmp(sb).unwrap_or(std::cmp::Ordering::Equal))
                    .then(cb.cmp(ca)) // lower class id wins the final tie
            })
            .expect("tracklet is nonempty");
        for &i in &t.det_indices {
            if dets[i].class_id != majority {
                dets[i].class_id = majority;
                changes += 1;
            }
        }
    }
    changes
}

/// The full four-step pipeline: threshold → tracklets → vanishing region →
/// relabel. Only `class_id` fields ever change. When no region is found
/// the thresholded detections are returned unchanged with `no_region` set.
pub fn refine(
    dets: &[Detection],
    image_w: f64,
    image_h: f64,
    cfg: &RefinerConfig,
) -> (Vec<Detection>, RefineReport) {
    let mut kept = threshold_filter(dets, cfg.sigma);
    let mut tracklets = build_all_tracklets(&kept, cfg);
    fit_tracklet_lines(&mut tracklets, &kept);

    let lines: Vec<Line2> = tracklets.iter().filter_map(|t| t.fitted_line).collect();
    let intersections = pairwise_intersections(&lines, PARALLEL_TOL);
    let eps_px = cfg.eps / 100.0 * (image_w * image_w + image_h * image_h).sqrt();
    let region = identify_region(&intersections, eps_px, cfg.min_pts);

    let mut report = RefineReport {
        input_count: dets.len(),
        kept_count: kept.len(),
        tracklet_count: tracklets.len(),
        intersection_count: intersections.points.len(),
        region: region.clone(),
        relabel_count: 0,
        no_region: region.is_none(),
    };
    if let Some(region) = region {
        report.relabel_count = relabel(&tracklets, &mut kept, &region);
    }
    (kept, report)
}
