//! Detection-head losses: smooth-L1 box regression, cross-entropy
//! classification, and a finite-difference gradient checker.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::BBox;
use crate::scalar::Real;

pub const NUM_CLASSES: usize = 10;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("probability at the true class must be positive, got {0}")]
    NonPositiveTruthProb(f64),
    #[error("class distribution needs exactly one true class")]
    BadOneHot,
}

/// A matched prediction / ground-truth box pair.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BoxPair<R> {
    pub pred: BBox<R>,
    pub truth: BBox<R>,
}

/// Predicted class probabilities plus a one-hot ground truth over the
/// 10 classes.
#[derive(Debug, Clone)]
pub struct ClassDistribution<R> {
    pub probs: [R; NUM_CLASSES],
    pub truth: [R; NUM_CLASSES],
}

impl<R: Real> ClassDistribution<R> {
    pub fn new(probs: [R; NUM_CLASSES], true_class: usize) -> Self {
        let mut truth = [R::zero(); NUM_CLASSES];
        truth[true_class] = R::one();
        ClassDistribution { probs, truth }
    }

    fn true_class(&self) -> Result<usize, LossError> {
        let ones = self
            .truth
            .iter()
            .enumerate()
            .filter(|(_, &v)| v == R::one())
            .map(|(i, _)| i)
            .collect::<Vec<_>>();
        match ones.as_slice() {
            [i] => Ok(*i),
            _ => Err(LossError::BadOneHot),
        }
    }
}

/// Huber-style smooth L1: 0.5δ² for |δ| < 1, |δ| − 0.5 otherwise.
pub fn smooth_l1<R: Real>(delta: R) -> R {
    let half = R::of(0.5);
    if delta.abs() < R::one() {
        half * delta * delta
    } else {
        delta.abs() - half
    }
}

/// Derivative of [`smooth_l1`]: δ inside the quadratic branch, ±1 outside.
pub fn smooth_l1_grad<R: Real>(delta: R) -> R {
    if delta.abs() < R::one() {
        delta
    } else {
        delta.signum()
    }
}

/// Sum of smooth-L1 terms over the four box elements of every pair.
/// Empty input sums to 0.
pub fn bbox_loss<R: Real>(pairs: &[BoxPair<R>]) -> R {
    pairs
        .iter()
        .flat_map(|p| {
            [
                p.truth.x - p.pred.x,
                p.truth.y - p.pred.y,
                p.truth.w - p.pred.w,
                p.truth.h - p.pred.h,
            ]
        })
        .map(smooth_l1)
        .sum()
}

/// Gradient of [`bbox_loss`] with respect to the predicted box fields,
/// flattened as [x, y, w, h] per pair.
pub fn bbox_loss_grad<R: Real>(pairs: &[BoxPair<R>]) -> Vec<R> {
    pairs
        .iter()
        .flat_map(|p| {
            [
                p.truth.x - p.pred.x,
                p.truth.y - p.pred.y,
                p.truth.w - p.pred.w,
                p.truth.h - p.pred.h,
            ]
        })
        .map(|d| -smooth_l1_grad(d))
        .collect()
}

/// Cross entropy −Σ y·ln p over all samples (natural log).
pub fn cls_loss<R: Real>(dists: &[ClassDistribution<R>]) -> Result<R, LossError> {
    let mut total = R::zero();
    for d in dists {
        let tc = d.true_class()?;
        let p = d.probs[tc];
        if p <= R::zero() {
            return Err(LossError::NonPositiveTruthProb(
                p.to_f64().unwrap_or(f64::NAN),
            ));
        }
        total -= p.ln();
    }
    Ok(total)
}

/// Gradient of [`cls_loss`] with respect to the probabilities of one
/// sample: −y_c / p_c.
pub fn cls_loss_grad<R: Real>(dist: &ClassDistribution<R>) -> Result<[R; NUM_CLASSES], LossError> {
    let tc = dist.true_class()?;
    let mut g = [R::zero(); NUM_CLASSES];
    g[tc] = -R::one() / dist.probs[tc];
    Ok(g)
}

/// Unweighted sum of box and classification losses.
pub fn total_loss<R: Real>(
    pairs: &[BoxPair<R>],
    dists: &[ClassDistribution<R>],
) -> Result<R, LossError> {
    Ok(bbox_loss(pairs) + cls_loss(dists)?)
}

/// Central-difference check of an analytic gradient. Returns the maximum
/// relative error over the parameters, skipping any parameter whose
/// perturbation straddles a point the caller marked non-smooth.
///
/// `loss_fn` evaluates the loss at a parameter vector; `analytic` is the
/// gradient claimed at `params`; `skip` marks parameters to leave out
/// (e.g. box deltas within `kink_margin` of the Huber kink).
pub fn gradient_check<F: Fn(&[f64]) -> f64>(
    loss_fn: F,
    params: &[f64],
    analytic: &[f64],
    h: f64,
    skip: &[bool],
) -> f64 {
    assert_eq!(params.len(), analytic.len());
    let mut max_rel = 0.0f64;
    let mut x = params.to_vec();
    for i in 0..params.len() {
        if skip.get(i).copied().unwrap_or(false) {
            continue;
        }
        x[i] = params[i] + h;
        let fp = loss_fn(&x);
        x[i] = params[i] - h;
        let fm = loss_fn(&x);
        x[i] = params[i];
        let numeric = (fp - fm) / (2.0 * h);
        let denom = numeric.abs().max(analytic[i].abs()).max(1e-12);
        max_rel = max_rel.max((numeric - analytic[i]).abs() / denom);
    }
    max_rel
}

/// Convenience driver for the CLI: random box pairs and class
/// distributions, returning (bbox max rel err, cls max rel err).
pub fn gradient_check_report(seed: u64, kink_margin: f64) -> (f64, f64) {
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    let mut rng = StdRng::seed_from_u64(seed);
    let h = 1e-4;

    let mut bbox_max = 0.0f64;
    for _ in 0..100 {
        let truth = BBox::new(
            rng.gen_range(-5.0..5.0),
            rng.gen_range(-5.0..5.0),
            rng.gen_range(0.0..5.0),
            rng.gen_range(0.0..5.0),
        );
        let pred = BBox::new(
            truth.x + rng.gen_range(-2.0..2.0),
            truth.y + rng.gen_range(-2.0..2.0),
            truth.w + rng.gen_range(-2.0..2.0),
            truth.h + rng.gen_range(-2.0..2.0),
        );
        let pair = BoxPair { pred, truth };
        let params = [pred.x, pred.y, pred.w, pred.h];
        let analytic = bbox_loss_grad(&[pair]);
        let deltas = [
            truth.x - pred.x,
            truth.y - pred.y,
            truth.w - pred.w,
            truth.h - pred.h,
        ];
        let skip: Vec<bool> = deltas
            .iter()
            .map(|d: &f64| (d.abs() - 1.0).abs() < kink_margin)
            .collect();
        let err = gradient_check(
            |p| {
                let moved = BoxPair {
                    pred: BBox::new(p[0], p[1], p[2], p[3]),
                    truth,
                };
                bbox_loss(&[moved])
            },
            &params,
            &analytic,
            h,
            &skip,
        );
        bbox_max = bbox_max.max(err);
    }

    let mut cls_max = 0.0f64;
    for _ in 0..100 {
        let tc = rng.gen_range(0..NUM_CLASSES);
        // keep the checked probability away from 0, where the h^2/p^2
        // truncation error of central differences would dominate
        let p_true = rng.gen_range(0.2..0.9);
        let mut probs = [0.0f64; NUM_CLASSES];
        let mut z = 0.0;
        for (i, p) in probs.iter_mut().enumerate() {
            if i != tc {
                *p = rng.gen_range(0.05..1.0);
                z += *p;
            }
        }
        for (i, p) in probs.iter_mut().enumerate() {
            if i != tc {
                *p *= (1.0 - p_true) / z;
            }
        }
        probs[tc] = p_true;
        let dist = ClassDistribution::new(probs, tc);
        let analytic = cls_loss_grad(&dist).unwrap();
        let err = gradient_check(
            |p| {
                let mut arr = [0.0f64; NUM_CLASSES];
                arr.copy_from_slice(p);
                let d = ClassDistribution::new(arr, tc);
                cls_loss(&[d]).unwrap()
            },
            &probs,
            &analytic,
            h,
            &[false; NUM_CLASSES],
        );
        cls_max = cls_max.max(err);
    }

    (bbox_max, cls_max)
}
