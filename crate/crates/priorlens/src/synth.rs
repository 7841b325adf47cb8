//! Deterministic synthetic traffic scenes with a known vanishing point.
//!
//! Objects move outward along straight rays through the vanishing point at
//! constant speed; box centers get Gaussian noise, class labels get
//! corrupted at a configurable rate. Everything is a pure function of the
//! spec (seeded ChaCha8 streams), so acceptance tests can pin exact seeds.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::attention::FeatureStack;
use crate::geometry::{BBox, Point2};
use crate::losses::NUM_CLASSES;
use crate::refiner::Detection;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSpec {
    pub image_w: f64,
    pub image_h: f64,
    pub vp: Point2<f64>,
    pub n_objects: usize,
    pub t: usize,
    /// [min, max] speed in pixels/frame.
    pub speed_range: [f64; 2],
    /// [min, max] box side length in pixels.
    pub box_size_range: [f64; 2],
    /// Gaussian sigma on box centers, pixels.
    pub center_noise_sigma: f64,
    /// Fraction of labels corrupted; must stay < 0.5 so the per-window
    /// repair can keep the true class a strict majority.
    pub class_corruption_rate: f64,
    pub score_range: [f64; 2],
    pub seed: u64,
    /// Window (in frames) over which corruption is capped to a strict
    /// minority per object; matches the refiner's clip length so majority
    /// voting over any tracklet recovers the true class.
    pub clip_len: usize,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            image_w: 1920.0,
            image_h: 1080.0,
            vp: Point2::new(960.0, 540.0),
            n_objects: 12,
            t: 30,
            speed_range: [4.0, 8.0],
            box_size_range: [30.0, 50.0],
            center_noise_sigma: 2.0,
            class_corruption_rate: 0.2,
            score_range: [0.9, 1.0],
            seed: 0,
            clip_len: 5,
        }
    }
}

/// One generated object's clean trajectory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObjectTrack {
    pub class_id: u32,
    /// First frame the object is visible (always 0 here).
    pub first_frame: usize,
    /// One box per visible frame.
    pub boxes: Vec<BBox<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthScene {
    /// Pseudo labels with corrupted classes.
    pub detections: Vec<Detection>,
    /// Same boxes and scores with clean classes.
    pub truth: Vec<Detection>,
    pub true_vp: Point2<f64>,
    pub image_w: f64,
    pub image_h: f64,
    pub objects: Vec<ObjectTrack>,
}

fn inside(b: &BBox<f64>, w: f64, h: f64) -> bool {
    b.x >= 0.0 && b.y >= 0.0 && b.x + b.w <= w && b.y + b.h <= h
}

/// Generates a scene. Objects are terminated (not clipped) once their box
/// would leave the image.
pub fn generate(spec: &SceneSpec) -> SynthScene {
    assert!(spec.class_corruption_rate < 0.5, "corruption rate must be < 0.5");
    assert!(spec.n_objects >= 1 && spec.t >= 2);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.center_noise_sigma.max(0.0)).unwrap();

    let mut objects = Vec::with_capacity(spec.n_objects);
    let mut per_object_frames: Vec<Vec<(usize, BBox<f64>, f64)>> = Vec::new();

    let min_dim = spec.image_w.min(spec.image_h);
    for obj in 0..spec.n_objects {
        // spread directions around the circle, staggered starting radii so
        // boxes near the vanishing point do not pile up
        let angle = std::f64::consts::TAU * obj as f64 / spec.n_objects as f64
            + rng.gen_range(-0.08..0.08);
        let (uy, ux) = angle.sin_cos();
        let r0 = rng.gen_range(0.15..0.35) * min_dim;
        let speed = rng.gen_range(spec.speed_range[0]..=spec.speed_range[1]);
        let side_w = rng.gen_range(spec.box_size_range[0]..=spec.box_size_range[1]);
        let side_h = rng.gen_range(spec.box_size_range[0]..=spec.box_size_range[1]);
        let class_id = rng.gen_range(1..=NUM_CLASSES as u32);

        let mut frames = Vec::new();
        let mut boxes = Vec::new();
        for k in 0..spec.t {
            let r = r0 + speed * k as f64;
            let cx = spec.vp.x + ux * r + noise.sample(&mut rng);
            let cy = spec.vp.y + uy * r + noise.sample(&mut rng);
            let b = BBox::new(cx - side_w / 2.0, cy - side_h / 2.0, side_w, side_h);
            if !inside(&b, spec.image_w, spec.image_h) {
                break;
            }
            let score = rng.gen_range(spec.score_range[0]..=spec.score_range[1]);
            frames.push((k, b, score));
            boxes.push(b);
        }
        per_object_frames.push(frames);
        objects.push(ObjectTrack {
            class_id,
            first_frame: 0,
            boxes,
        });
    }

    // corrupt classes i.i.d., then repair so the true class keeps a strict
    // majority within every clip-aligned window of each object
    let mut corrupted: Vec<Vec<Option<u32>>> = Vec::with_capacity(spec.n_objects);
    for (obj, frames) in per_object_frames.iter().enumerate() {
        let true_class = objects[obj].class_id;
        let mut flags: Vec<Option<u32>> = frames
            .iter()
            .map(|_| {
                if rng.gen::<f64>() < spec.class_corruption_rate {
                    let mut wrong = rng.gen_range(1..=NUM_CLASSES as u32 - 1);
                    if wrong >= true_class {
                        wrong += 1;
                    }
                    Some(wrong)
                } else {
                    None
                }
            })
            .collect();
        if spec.clip_len >= 1 {
            repair_windows(&mut flags, frames, spec.clip_len);
        }
        corrupted.push(flags);
    }

    let mut detections = Vec::new();
    let mut truth = Vec::new();
    for (obj, frames) in per_object_frames.iter().enumerate() {
        for (pos, &(frame, bbox, score)) in frames.iter().enumerate() {
            let clean = objects[obj].class_id;
            truth.push(Detection {
                frame,
                bbox,
                class_id: clean,
                score,
            });
            detections.push(Detection {
                frame,
                bbox,
                class_id: corrupted[obj][pos].unwrap_or(clean),
                score,
            });
        }
    }
    // frame-major ordering, objects in id order within a frame
    detections.sort_by_key(|d| d.frame);
    truth.sort_by_key(|d| d.frame);

    SynthScene {
        detections,
        truth,
        true_vp: spec.vp,
        image_w: spec.image_w,
        image_h: spec.image_h,
        objects,
    }
}

/// Caps corruption to a strict minority in every window [s, s+clip] with
/// s a multiple of `clip` (the spans tracklets are built over). Excess
/// corrupted frames are restored, highest frame first.
fn repair_windows(
    flags: &mut [Option<u32>],
    frames: &[(usize, BBox<f64>, f64)],
    clip: usize,
) {
    let Some(&(last_frame, _, _)) = frames.last() else { return };
    let mut start = 0usize;
    while start <= last_frame {
        let in_window: Vec<usize> = frames
            .iter()
            .enumerate()
            .filter(|(_, (f, _, _))| *f >= start && *f <= start + clip)
            .map(|(i, _)| i)
            .collect();
        let len = in_window.len();
        let cap = if len >= 3 { (len - 1) / 2 } else { 0 };
        let mut count = in_window.iter().filter(|&&i| flags[i].is_some()).count();
        for &i in in_window.iter().rev() {
            if count <= cap {
                break;
            }
            if flags[i].is_some() {
                flags[i] = None;
                count -= 1;
            }
        }
        start += clip;
    }
}

/// Builds a feature stack from the objects that stay visible for the whole
/// clip: one unit feature vector per object, re-used every frame with a
/// little noise, so cross-frame dot-product argmax recovers identity.
/// Centers come from the (noisy) generated boxes.
pub fn feature_stack_from_scene(
    scene: &SynthScene,
    channels: usize,
    seed: u64,
) -> Option<FeatureStack<f64>> {
    let t = scene
        .objects
        .iter()
        .map(|o| o.boxes.len())
        .max()
        .unwrap_or(0);
    if t < 2 {
        return None;
    }
    let survivors: Vec<&ObjectTrack> = scene
        .objects
        .iter()
        .filter(|o| o.boxes.len() == t)
        .collect();
    let n = survivors.len();
    if n == 0 {
        return None;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.05).unwrap();
    let base: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let mut v: Vec<f64> = (0..channels).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            v.iter_mut().for_each(|x| *x /= norm);
            v
        })
        .collect();

    let mut values = Vec::with_capacity(n * t * channels);
    let mut centers = Vec::with_capacity(n * t);
    for k in 0..t {
        for (j, obj) in survivors.iter().enumerate() {
            let mut v: Vec<f64> = base[j]
                .iter()
                .map(|&x| x + noise.sample(&mut rng))
                .collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            v.iter_mut().for_each(|x| *x /= norm);
            values.extend(v);
            centers.push(obj.boxes[k].center());
        }
    }
    FeatureStack::new(n, t, channels, values, centers).ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::{attention_map, select_trajectory, AttentionConfig};
    use crate::vanishing::fit_line;

    fn small_spec(seed: u64) -> SceneSpec {
        SceneSpec {
            image_w: 800.0,
            image_h: 600.0,
            vp: Point2::new(400.0, 300.0),
            n_objects: 5,
            t: 10,
            speed_range: [3.0, 6.0],
            box_size_range: [20.0, 30.0],
            center_noise_sigma: 0.0,
            class_corruption_rate: 0.0,
            score_range: [0.9, 1.0],
            seed,
            clip_len: 5,
        }
    }

    #[test]
    fn zero_noise_centers_collinear_with_vp() {
        let scene = generate(&small_spec(1));
        for obj in &scene.objects {
            assert!(obj.boxes.len() >= 2, "object terminated too early");
            let mut pts: Vec<Point2<f64>> = obj.boxes.iter().map(|b| b.center()).collect();
            pts.push(scene.true_vp);
            let line = fit_line(&pts).unwrap();
            for p in &pts {
                assert!(line.distance(p) < 1e-6);
            }
        }
    }

    #[test]
    fn same_seed_same_scene() {
        let a = generate(&small_spec(9));
        let b = generate(&small_spec(9));
        assert_eq!(a.detections, b.detections);
        assert_eq!(a.truth, b.truth);
    }

    #[test]
    fn corruption_count_within_binomial_band() {
        let spec = SceneSpec {
            n_objects: 25,
            t: 25,
            class_corruption_rate: 0.2,
            clip_len: 0, // raw i.i.d. corruption for the count check
            seed: 4,
            ..SceneSpec::default()
        };
        let scene = generate(&spec);
        let total = scene.detections.len();
        assert!(total >= 500, "want >= 500 labels, got {total}");
        let corrupted = scene
            .detections
            .iter()
            .zip(&scene.truth)
            .filter(|(d, t)| d.class_id != t.class_id)
            .count() as f64;
        let n = total as f64;
        let mean = 0.2 * n;
        let sigma = (n * 0.2 * 0.8).sqrt();
        assert!(
            (corrupted - mean).abs() <= 3.0 * sigma,
            "corrupted {corrupted} outside 3-sigma of Binomial({n}, 0.2)"
        );
    }

    #[test]
    fn repair_keeps_majority_per_window() {
        let spec = SceneSpec {
            class_corruption_rate: 0.4,
            seed: 13,
            ..SceneSpec::default()
        };
        let scene = generate(&spec);
        // group by object via truth boxes (objects emitted in order)
        for obj in &scene.objects {
            let frames: Vec<(usize, u32, u32)> = scene
                .detections
                .iter()
                .zip(&scene.truth)
                .filter(|(_, t)| obj.boxes.contains(&t.bbox) && t.class_id == obj.class_id)
                .map(|(d, t)| (d.frame, d.class_id, t.class_id))
                .collect();
            let mut start = 0;
            let last = frames.iter().map(|f| f.0).max().unwrap_or(0);
            while start <= last {
                let window: Vec<_> = frames
                    .iter()
                    .filter(|(f, _, _)| *f >= start && *f <= start + spec.clip_len)
                    .collect();
                let bad = window.iter().filter(|(_, d, t)| d != t).count();
                assert!(
                    bad * 2 < window.len().max(1),
                    "window at {start}: {bad}/{} corrupted",
                    window.len()
                );
                start += spec.clip_len;
            }
        }
    }

    #[test]
    fn boxes_stay_in_bounds() {
        let scene = generate(&SceneSpec {
            seed: 3,
            center_noise_sigma: 4.0,
            ..SceneSpec::default()
        });
        for d in &scene.truth {
            assert!(inside(&d.bbox, scene.image_w, scene.image_h));
        }
    }

    #[test]
    fn noiseless_stack_argmax_recovers_identity() {
        let scene = generate(&small_spec(6));
        let stack = feature_stack_from_scene(&scene, 16, 99).unwrap();
        let map = attention_map(&stack, &AttentionConfig::default()).unwrap();
        let sel = select_trajectory(&map, &stack).unwrap();
        for i in 0..stack.n {
            for k in 0..stack.t {
                assert_eq!(sel.indices[i][k], i, "query {i} frame {k}");
            }
        }
    }

    #[test]
    fn single_object_stack() {
        let spec = SceneSpec {
            n_objects: 1,
            ..small_spec(2)
        };
        let scene = generate(&spec);
        let stack = feature_stack_from_scene(&scene, 8, 1).unwrap();
        assert_eq!(stack.n, 1);
    }

    #[test]
    fn identity_recovery_rate_over_seeds() {
        let mut hits = 0usize;
        let mut total = 0usize;
        for seed in 0..50u64 {
            let spec = SceneSpec {
                n_objects: 5,
                t: 8,
                ..small_spec(seed)
            };
            let scene = generate(&spec);
            let Some(stack) = feature_stack_from_scene(&scene, 16, seed.wrapping_add(1000)) else {
                continue;
            };
            let map = attention_map(&stack, &AttentionConfig::default()).unwrap();
            let sel = select_trajectory(&map, &stack).unwrap();
            for i in 0..stack.n {
                for k in 0..stack.t {
                    total += 1;
                    if sel.indices[i][k] == i {
                        hits += 1;
                    }
                }
            }
        }
        let rate = hits as f64 / total as f64;
        assert!(rate >= 0.95, "identity recovery rate {rate}");
    }
}
