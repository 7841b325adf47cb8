//! Collinearity-masked self-attention over RoI features.
//!
//! The stack holds RoI features for a clip (n RoIs × t frames × c channels)
//! plus each RoI's box center. Queries come from one reference frame; keys
//! and values are the whole stack. For each query we pick the most similar
//! RoI per frame, score how collinear those centers are, and use the score
//! to weight the attention map before the value product.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Point2;
use crate::scalar::Real;

/// Below this vector magnitude (pixels) two consecutive centers count as
/// coincident and their angle as aligned.
const COINCIDENT_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum AttentionError {
    #[error("feature stack shape mismatch: expected {expected} values, got {actual}")]
    BadShape { expected: usize, actual: usize },
    #[error("feature stack needs t >= 2, n >= 1, c >= 1 (got n={n}, t={t}, c={c})")]
    BadDims { n: usize, t: usize, c: usize },
    #[error("reference frame {frame} out of range (t = {t})")]
    BadReferenceFrame { frame: usize, t: usize },
    #[error("attention map shape {rows}x{cols} does not match stack (n={n}, t={t})")]
    MapMismatch {
        rows: usize,
        cols: usize,
        n: usize,
        t: usize,
    },
}

/// RoI features for one clip. `values` is frame-major, RoI-major within a
/// frame: value index = (frame·n + roi)·c + channel. `centers` follows the
/// same frame-major layout.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStack<R> {
    pub n: usize,
    pub t: usize,
    pub c: usize,
    pub values: Vec<R>,
    pub centers: Vec<Point2<R>>,
}

impl<R: Real> FeatureStack<R> {
    pub fn new(
        n: usize,
        t: usize,
        c: usize,
        values: Vec<R>,
        centers: Vec<Point2<R>>,
    ) -> Result<Self, AttentionError> {
        if n < 1 || t < 2 || c < 1 {
            return Err(AttentionError::BadDims { n, t, c });
        }
        if values.len() != n * t * c {
            return Err(AttentionError::BadShape {
                expected: n * t * c,
                actual: values.len(),
            });
        }
        if centers.len() != n * t {
            return Err(AttentionError::BadShape {
                expected: n * t,
                actual: centers.len(),
            });
        }
        Ok(FeatureStack {
            n,
            t,
            c,
            values,
            centers,
        })
    }

    /// Feature vector of RoI `j` in frame `k`.
    pub fn feature(&self, j: usize, k: usize) -> &[R] {
        let base = (k * self.n + j) * self.c;
        &self.values[base..base + self.c]
    }

    /// Box center of RoI `j` in frame `k`.
    pub fn center(&self, j: usize, k: usize) -> Point2<R> {
        self.centers[k * self.n + j]
    }
}

/// Raw attention map A = Q·Kᵀ: one row per query RoI, n·t columns in the
/// same frame-major order as the stack (column = frame·n + roi).
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap<R> {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<R>,
}

impl<R: Real> AttentionMap<R> {
    pub fn at(&self, row: usize, col: usize) -> R {
        self.values[row * self.cols + col]
    }
}

/// Per-query most-similar RoI indices, one per frame, with their centers.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySelection<R> {
    /// `indices[i][k]` = RoI index in frame k most similar to query i.
    pub indices: Vec<Vec<usize>>,
    /// Matching box centers, `centers[i][k]`.
    pub centers: Vec<Vec<Point2<R>>>,
}

/// Mask over the attention map. In `motion_prior` mode every entry of row i
/// is either mᵢ (selected trajectory) or 1−mᵢ.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorMask<R> {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<R>,
    /// When set, `apply_masked_attention` row-softmaxes A before the value
    /// product (the ablation's "softmax" competitor).
    pub softmax: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    MotionPrior,
    None,
    Softmax,
    Binary,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttentionConfig {
    /// Frame supplying the query slice Q.
    pub reference_frame: usize,
    pub mask_mode: MaskMode,
    pub binary_threshold: f64,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        AttentionConfig {
            reference_frame: 0,
            mask_mode: MaskMode::MotionPrior,
            binary_threshold: 0.5,
        }
    }
}

/// A = Q·Kᵀ where Q is the reference frame's n×c slice and K the full
/// (n·t)×c matrix. Raw dot products: no softmax, no 1/√c scaling.
pub fn attention_map<R: Real>(
    stack: &FeatureStack<R>,
    cfg: &AttentionConfig,
) -> Result<AttentionMap<R>, AttentionError> {
    if cfg.reference_frame >= stack.t {
        return Err(AttentionError::BadReferenceFrame {
            frame: cfg.reference_frame,
            t: stack.t,
        });
    }
    let (n, t) = (stack.n, stack.t);
    let cols = n * t;
    let mut values = Vec::with_capacity(n * cols);
    for i in 0..n {
        let q = stack.feature(i, cfg.reference_frame);
        for k in 0..t {
            for j in 0..n {
                let key = stack.feature(j, k);
                let dot: R = q.iter().zip(key).map(|(&a, &b)| a * b).sum();
                values.push(dot);
            }
        }
    }
    Ok(AttentionMap {
        rows: n,
        cols,
        values,
    })
}

/// Per query and frame, the argmax RoI index over the frame's column block.
/// Ties break toward the lowest index.
pub fn select_trajectory<R: Real>(
    map: &AttentionMap<R>,
    stack: &FeatureStack<R>,
) -> Result<TrajectorySelection<R>, AttentionError> {
    if map.rows != stack.n || map.cols != stack.n * stack.t {
        return Err(AttentionError::MapMismatch {
            rows: map.rows,
            cols: map.cols,
            n: stack.n,
            t: stack.t,
        });
    }
    let mut indices = Vec::with_capacity(map.rows);
    let mut centers = Vec::with_capacity(map.rows);
    for i in 0..map.rows {
        let mut idx = Vec::with_capacity(stack.t);
        let mut ctr = Vec::with_capacity(stack.t);
        for k in 0..stack.t {
            let mut best = 0usize;
            let mut best_val = map.at(i, k * stack.n);
            for j in 1..stack.n {
                let v = map.at(i, k * stack.n + j);
                if v > best_val {
                    best = j;
                    best_val = v;
                }
            }
            idx.push(best);
            ctr.push(stack.center(best, k));
        }
        indices.push(idx);
        centers.push(ctr);
    }
    Ok(TrajectorySelection { indices, centers })
}

/// Collinearity score in [0, 1] of a center sequence: 1 for points on a
/// straight monotone path, 0 for a full reversal at every step.
///
/// For each interior point the cosine of the angle between the vectors to
/// its predecessor and successor is computed; the score averages the
/// cosines over the defined interior angles and maps [-1, 1] to [1, 0].
/// Coincident consecutive centers count as aligned (cosine −1), so a
/// stationary object scores 1. Two points score 1.
pub fn alignment_score<R: Real>(centers: &[Point2<R>]) -> R {
    let t = centers.len();
    assert!(t >= 2, "alignment_score needs at least two centers");
    let tol = R::of(COINCIDENT_TOL);
    let mut sum = R::zero();
    let mut count = 0usize;
    for k in 1..t.saturating_sub(1) {
        let ux = centers[k - 1].x - centers[k].x;
        let uy = centers[k - 1].y - centers[k].y;
        let vx = centers[k + 1].x - centers[k].x;
        let vy = centers[k + 1].y - centers[k].y;
        let nu = (ux * ux + uy * uy).sqrt();
        let nv = (vx * vx + vy * vy).sqrt();
        let cos = if nu < tol || nv < tol {
            -R::one()
        } else {
            ((ux * vx + uy * vy) / (nu * nv))
                .max(-R::one())
                .min(R::one())
        };
        sum += cos;
        count += 1;
    }
    if count == 0 {
        return R::one();
    }
    let half = R::of(0.5);
    let m = -sum / (R::of(2.0) * R::from_usize(count).unwrap()) + half;
    m.max(R::zero()).min(R::one())
}

/// Builds the mask for the given mode from the trajectory selection and
/// per-query scores.
pub fn build_mask<R: Real>(
    sel: &TrajectorySelection<R>,
    scores: &[R],
    mode: MaskMode,
    binary_threshold: R,
    n: usize,
    t: usize,
) -> PriorMask<R> {
    let cols = n * t;
    let rows = sel.indices.len();
    let mut values = vec![R::one(); rows * cols];
    match mode {
        MaskMode::None => {}
        MaskMode::Softmax => {
            return PriorMask {
                rows,
                cols,
                values,
                softmax: true,
            };
        }
        MaskMode::MotionPrior | MaskMode::Binary => {
            for i in 0..rows {
                let m = scores[i];
                for k in 0..t {
                    for j in 0..n {
                        let raw = if sel.indices[i][k] == j { m } else { R::one() - m };
                        values[i * cols + k * n + j] = if mode == MaskMode::Binary {
                            if raw >= binary_threshold {
                                R::one()
                            } else {
                                R::zero()
                            }
                        } else {
                            raw
                        };
                    }
                }
            }
        }
    }
    PriorMask {
        rows,
        cols,
        values,
        softmax: false,
    }
}

/// R_attn = [Mask ⊙ A] · V with V the full (n·t)×c matrix; output is n×c
/// row-major. With the softmax flag set, A is row-softmaxed first.
pub fn apply_masked_attention<R: Real>(
    map: &AttentionMap<R>,
    mask: &PriorMask<R>,
    stack: &FeatureStack<R>,
) -> Result<Vec<R>, AttentionError> {
    if map.rows != mask.rows || map.cols != mask.cols {
        return Err(AttentionError::MapMismatch {
            rows: mask.rows,
            cols: mask.cols,
            n: stack.n,
            t: stack.t,
        });
    }
    if map.cols != stack.n * stack.t {
        return Err(AttentionError::MapMismatch {
            rows: map.rows,
            cols: map.cols,
            n: stack.n,
            t: stack.t,
        });
    }
    let mut out = vec![R::zero(); map.rows * stack.c];
    let mut row_buf = vec![R::zero(); map.cols];
    for i in 0..map.rows {
        if mask.softmax {
            let row = &map.values[i * map.cols..(i + 1) * map.cols];
            let max = row.iter().cloned().fold(R::neg_infinity(), R::max);
            let mut z = R::zero();
            for (dst, &v) in row_buf.iter_mut().zip(row) {
                *dst = (v - max).exp();
                z += *dst;
            }
            for dst in row_buf.iter_mut() {
                *dst /= z;
            }
        } else {
            row_buf.copy_from_slice(&map.values[i * map.cols..(i + 1) * map.cols]);
        }
        for col in 0..map.cols {
            let w = mask.values[i * map.cols + col] * row_buf[col];
            if w == R::zero() {
                continue;
            }
            let (k, j) = (col / stack.n, col % stack.n);
            let v = stack.feature(j, k);
            for ch in 0..stack.c {
                out[i * stack.c + ch] += w * v[ch];
            }
        }
    }
    Ok(out)
}

/// Output of the full pipeline: fused n×c features and per-query scores.
#[derive(Debug, Clone)]
pub struct AttentionOutput<R> {
    pub features: Vec<R>,
    pub scores: Vec<R>,
    pub selection: TrajectorySelection<R>,
}

/// Full pipeline: attention map → per-frame argmax trajectory →
/// collinearity score per query → mask → masked value product.
pub fn motion_prior_attention<R: Real>(
    stack: &FeatureStack<R>,
    cfg: &AttentionConfig,
) -> Result<AttentionOutput<R>, AttentionError> {
    let map = attention_map(stack, cfg)?;
    let sel = select_trajectory(&map, stack)?;
    let scores: Vec<R> = sel.centers.iter().map(|c| alignment_score(c)).collect();
    let mask = build_mask(
        &sel,
        &scores,
        cfg.mask_mode,
        R::of(cfg.binary_threshold),
        stack.n,
        stack.t,
    );
    let features = apply_masked_attention(&map, &mask, stack)?;
    Ok(AttentionOutput {
        features,
        scores,
        selection: sel,
    })
}
