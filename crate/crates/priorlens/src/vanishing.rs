//! Vanishing-region recovery: total-least-squares line fits of tracklet
//! centers, pairwise line intersections, DBSCAN over the intersection
//! cloud, and extraction of the densest cluster.

use serde::{Deserialize, Serialize};

use crate::geometry::{line_intersection, GeometryError, Line2, Point2};
use crate::scalar::Real;

/// Pairwise intersection points plus the (tracklet, tracklet) pair that
/// produced each one.
#[derive(Debug, Clone)]
pub struct IntersectionSet<R> {
    pub points: Vec<Point2<R>>,
    pub provenance: Vec<(usize, usize)>,
}

/// The densest cluster of intersection points.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VanishingRegion<R> {
    pub centroid: Point2<R>,
    pub members: Vec<Point2<R>>,
    /// Max member distance to the centroid.
    pub radius: R,
}

/// DBSCAN label for one point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClusterLabel {
    Noise,
    Cluster(usize),
}

/// Orthogonal (total-least-squares) line through the centroid along the
/// principal direction of the points. Exact for collinear inputs and
/// handles vertical lines, which the slope form cannot.
pub fn fit_line<R: Real>(points: &[Point2<R>]) -> Result<Line2<R>, GeometryError> {
    if points.len() < 2 {
        return Err(GeometryError::TooFewPoints(points.len()));
    }
    let count = R::from_usize(points.len()).unwrap();
    let mut cx = R::zero();
    let mut cy = R::zero();
    for p in points {
        cx += p.x;
        cy += p.y;
    }
    cx /= count;
    cy /= count;

    let mut sxx = R::zero();
    let mut sxy = R::zero();
    let mut syy = R::zero();
    for p in points {
        let dx = p.x - cx;
        let dy = p.y - cy;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if sxx == R::zero() && syy == R::zero() {
        return Err(GeometryError::CoincidentPoints);
    }
    // principal direction of the 2x2 scatter matrix
    let theta = R::of(0.5) * (R::of(2.0) * sxy).atan2(sxx - syy);
    let (dy, dx) = theta.sin_cos();
    Ok(Line2::through_direction(&Point2::new(cx, cy), dx, dy))
}

/// Sum of squared orthogonal residuals of `points` against `line`.
pub fn orthogonal_residual<R: Real>(line: &Line2<R>, points: &[Point2<R>]) -> R {
    points
        .iter()
        .map(|p| {
            let d = line.eval(p);
            d * d
        })
        .sum()
}

/// One intersection point per unordered non-parallel line pair.
pub fn pairwise_intersections<R: Real>(
    lines: &[Line2<R>],
    parallel_tol: R,
) -> IntersectionSet<R> {
    let mut points = Vec::new();
    let mut provenance = Vec::new();
    for i in 0..lines.len() {
        for j in i + 1..lines.len() {
            if let Some(p) = line_intersection(&lines[i], &lines[j], parallel_tol) {
                if p.is_finite() {
                    points.push(p);
                    provenance.push((i, j));
                }
            }
        }
    }
    IntersectionSet { points, provenance }
}

/// Classic DBSCAN with the Euclidean metric and closed-ball neighborhoods
/// (distance ≤ eps). Labeling is deterministic for a given input order.
pub fn dbscan<R: Real>(points: &[Point2<R>], eps: R, min_pts: usize) -> Vec<ClusterLabel> {
    let n = points.len();
    let mut labels = vec![None::<ClusterLabel>; n];
    let mut next_cluster = 0usize;

    let neighbors = |idx: usize| -> Vec<usize> {
        (0..n)
            .filter(|&j| points[idx].dist(&points[j]) <= eps)
            .collect()
    };

    for i in 0..n {
        if labels[i].is_some() {
            continue;
        }
        let seed = neighbors(i);
        if seed.len() < min_pts {
            labels[i] = Some(ClusterLabel::Noise);
            continue;
        }
        let cluster = next_cluster;
        next_cluster += 1;
        labels[i] = Some(ClusterLabel::Cluster(cluster));
        let mut queue: Vec<usize> = seed;
        let mut qi = 0;
        while qi < queue.len() {
            let j = queue[qi];
            qi += 1;
            match labels[j] {
                Some(ClusterLabel::Noise) => labels[j] = Some(ClusterLabel::Cluster(cluster)),
                Some(_) => continue,
                None => {
                    labels[j] = Some(ClusterLabel::Cluster(cluster));
                    let nb = neighbors(j);
                    if nb.len() >= min_pts {
                        queue.extend(nb);
                    }
                }
            }
        }
    }
    labels.into_iter().map(|l| l.unwrap()).collect()
}

/// Runs DBSCAN on the intersection set and returns the largest cluster as
/// the vanishing region, or `None` when every point is noise. Size ties
/// break toward the cluster with the smallest mean distance to its own
/// centroid, then the lowest cluster id.
pub fn identify_region<R: Real>(
    set: &IntersectionSet<R>,
    eps: R,
    min_pts: usize,
) -> Option<VanishingRegion<R>> {
    let labels = dbscan(&set.points, eps, min_pts);
    let n_clusters = labels
        .iter()
        .filter_map(|l| match l {
            ClusterLabel::Cluster(id) => Some(id + 1),
            ClusterLabel::Noise => None,
        })
        .max()?;

    let mut best: Option<(usize, R, usize)> = None; // (size, mean dist, id)
    for id in 0..n_clusters {
        let members: Vec<&Point2<R>> = set
            .points
            .iter()
            .zip(&labels)
            .filter(|(_, l)| **l == ClusterLabel::Cluster(id))
            .map(|(p, _)| p)
            .collect();
        let size = members.len();
        let count = R::from_usize(size).unwrap();
        let cx = members.iter().map(|p| p.x).sum::<R>() / count;
        let cy = members.iter().map(|p| p.y).sum::<R>() / count;
        let centroid = Point2::new(cx, cy);
        let mean_dist = members.iter().map(|p| p.dist(&centroid)).sum::<R>() / count;
        let better = match &best {
            None => true,
            Some((bsize, bdist, _)) => size > *bsize || (size == *bsize && mean_dist < *bdist),
        };
        if better {
            best = Some((size, mean_dist, id));
        }
    }

    let (_, _, id) = best?;
    let members: Vec<Point2<R>> = set
        .points
        .iter()
        .zip(&labels)
        .filter(|(_, l)| **l == ClusterLabel::Cluster(id))
        .map(|(p, _)| *p)
        .collect();
    let count = R::from_usize(members.len()).unwrap();
    let cx = members.iter().map(|p| p.x).sum::<R>() / count;
    let cy = members.iter().map(|p| p.y).sum::<R>() / count;
    let centroid = Point2::new(cx, cy);
    let radius = members
        .iter()
        .map(|p| p.dist(&centroid))
        .fold(R::zero(), R::max);
    Some(VanishingRegion {
        centroid,
        members,
        radius,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::PARALLEL_TOL;
    use proptest::prelude::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn pt(x: f64, y: f64) -> Point2<f64> {
        Point2::new(x, y)
    }

    #[test]
    fn fit_line_exact_interpolation() {
        let pts: Vec<_> = (0..5).map(|i| pt(i as f64, 2.0 * i as f64 + 1.0)).collect();
        let l = fit_line(&pts).unwrap();
        assert!((l.slope() - 2.0).abs() < 1e-9);
        assert!((l.intercept() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn fit_line_vertical() {
        let pts = [pt(3.0, 0.0), pt(3.0, 5.0), pt(3.0, 9.0)];
        let l = fit_line(&pts).unwrap();
        // normal must be (±1, 0), c = ∓3
        assert!(l.b.abs() < 1e-12, "b = {}", l.b);
        assert!((l.a.abs() - 1.0).abs() < 1e-12);
        assert!(l.distance(&pt(3.0, 100.0)) < 1e-9);
    }

    #[test]
    fn fit_line_coincident_errors() {
        let pts = [pt(1.0, 1.0); 4];
        assert!(fit_line(&pts).is_err());
        assert!(fit_line(&pts[..1]).is_err());
    }

    #[test]
    fn fit_line_beats_sampled_directions() {
        let mut rng = StdRng::seed_from_u64(5);
        for _ in 0..20 {
            let pts: Vec<_> = (0..30)
                .map(|_| pt(rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0)))
                .collect();
            let fitted = fit_line(&pts).unwrap();
            let res = orthogonal_residual(&fitted, &pts);
            // oracle: sweep 360 directions through the centroid
            let n = pts.len() as f64;
            let cx = pts.iter().map(|p| p.x).sum::<f64>() / n;
            let cy = pts.iter().map(|p| p.y).sum::<f64>() / n;
            for k in 0..360 {
                let th = (k as f64).to_radians();
                let cand = Line2::through_direction(&pt(cx, cy), th.cos(), th.sin());
                assert!(
                    res <= orthogonal_residual(&cand, &pts) + 1e-9,
                    "beaten at {k} deg"
                );
            }
        }
    }

    #[test]
    fn fit_line_rotation_equivariant() {
        let mut rng = StdRng::seed_from_u64(13);
        for _ in 0..20 {
            let pts: Vec<_> = (0..15)
                .map(|_| pt(rng.gen_range(-10.0..10.0), rng.gen_range(-5.0..5.0)))
                .collect();
            let angle: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let (s, c) = angle.sin_cos();
            let rotated: Vec<_> = pts
                .iter()
                .map(|p| pt(c * p.x - s * p.y, s * p.x + c * p.y))
                .collect();
            let l = fit_line(&pts).unwrap();
            let lr = fit_line(&rotated).unwrap();
            // rotate the fitted normal and compare residuals on rotated data
            let rot_normal = Line2::new(c * l.a - s * l.b, s * l.a + c * l.b, l.c);
            let direct = orthogonal_residual(&lr, &rotated);
            let via_rotation = orthogonal_residual(&rot_normal, &rotated);
            assert!((direct - via_rotation).abs() < 1e-6);
        }
    }

    #[test]
    fn intersections_concurrent() {
        let p = pt(5.0, 5.0);
        let lines = [
            Line2::through_direction(&p, 1.0, 0.0),
            Line2::through_direction(&p, 0.0, 1.0),
            Line2::through_direction(&p, 1.0, 1.0),
        ];
        let set = pairwise_intersections(&lines, PARALLEL_TOL);
        assert_eq!(set.points.len(), 3);
        for q in &set.points {
            assert!(q.dist(&p) < 1e-9);
        }
    }

    #[test]
    fn intersections_skip_parallel() {
        let lines = [
            Line2::new(0.0, 1.0, 0.0),  // y = 0
            Line2::new(0.0, 1.0, -5.0), // y = 5
            Line2::new(1.0, 0.0, -2.0), // x = 2
        ];
        let set = pairwise_intersections(&lines, PARALLEL_TOL);
        assert_eq!(set.points.len(), 2);
        assert_eq!(set.provenance, vec![(0, 2), (1, 2)]);
    }

    #[test]
    fn intersections_on_both_lines() {
        let mut rng = StdRng::seed_from_u64(77);
        let lines: Vec<Line2<f64>> = (0..4)
            .map(|_| {
                Line2::through_direction(
                    &pt(rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0)),
                    rng.gen_range(-1.0..1.0f64),
                    rng.gen_range(0.1..1.0f64),
                )
            })
            .collect();
        let set = pairwise_intersections(&lines, PARALLEL_TOL);
        assert_eq!(set.points.len(), 6);
        for (p, &(i, j)) in set.points.iter().zip(&set.provenance) {
            assert!(lines[i].distance(p) < 1e-6);
            assert!(lines[j].distance(p) < 1e-6);
        }
    }

    #[test]
    fn dbscan_small_cases() {
        assert_eq!(dbscan(&[pt(0.0, 0.0)], 1.0, 2), vec![ClusterLabel::Noise]);
        assert_eq!(
            dbscan(&[pt(0.0, 0.0), pt(0.5, 0.0)], 1.0, 2),
            vec![ClusterLabel::Cluster(0), ClusterLabel::Cluster(0)]
        );
    }

    /// Connected components of the eps-distance graph (union-find).
    fn eps_graph_components(points: &[Point2<f64>], eps: f64) -> Vec<Vec<usize>> {
        let n = points.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut Vec<usize>, i: usize) -> usize {
            if parent[i] != i {
                let r = find(parent, parent[i]);
                parent[i] = r;
            }
            parent[i]
        }
        for i in 0..n {
            for j in i + 1..n {
                if points[i].dist(&points[j]) <= eps {
                    let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                    parent[a] = b;
                }
            }
        }
        let mut comps: std::collections::HashMap<usize, Vec<usize>> = Default::default();
        for i in 0..n {
            let r = find(&mut parent, i);
            comps.entry(r).or_default().push(i);
        }
        comps.into_values().collect()
    }

    fn partition_of(labels: &[ClusterLabel]) -> Vec<Vec<usize>> {
        let mut map: std::collections::HashMap<usize, Vec<usize>> = Default::default();
        let mut singles = Vec::new();
        for (i, l) in labels.iter().enumerate() {
            match l {
                ClusterLabel::Cluster(id) => map.entry(*id).or_default().push(i),
                ClusterLabel::Noise => singles.push(vec![i]),
            }
        }
        let mut out: Vec<Vec<usize>> = map.into_values().chain(singles).collect();
        for c in out.iter_mut() {
            c.sort_unstable();
        }
        out.sort();
        out
    }

    #[test]
    fn dbscan_minpts2_equals_graph_components() {
        let mut rng = StdRng::seed_from_u64(42);
        for _ in 0..200 {
            let n = rng.gen_range(1..=300usize);
            let points: Vec<_> = (0..n)
                .map(|_| pt(rng.gen_range(0.0..50.0), rng.gen_range(0.0..50.0)))
                .collect();
            let eps = rng.gen_range(0.5..5.0);
            let labels = dbscan(&points, eps, 2);
            let got = partition_of(&labels);
            let mut expect: Vec<Vec<usize>> = eps_graph_components(&points, eps);
            for c in expect.iter_mut() {
                c.sort_unstable();
            }
            expect.sort();
            assert_eq!(got, expect);
        }
    }

    #[test]
    fn dbscan_permutation_invariant() {
        let mut rng = StdRng::seed_from_u64(8);
        let points: Vec<_> = (0..60)
            .map(|_| pt(rng.gen_range(0.0..20.0), rng.gen_range(0.0..20.0)))
            .collect();
        let labels = dbscan(&points, 2.0, 3);
        let mut perm: Vec<usize> = (0..points.len()).collect();
        use rand::seq::SliceRandom;
        perm.shuffle(&mut rng);
        let shuffled: Vec<_> = perm.iter().map(|&i| points[i]).collect();
        let labels2 = dbscan(&shuffled, 2.0, 3);
        // compare set-of-sets in original index space
        let p1 = partition_of(&labels);
        let mut map2: std::collections::HashMap<usize, Vec<usize>> = Default::default();
        let mut singles = Vec::new();
        for (pos, l) in labels2.iter().enumerate() {
            match l {
                ClusterLabel::Cluster(id) => map2.entry(*id).or_default().push(perm[pos]),
                ClusterLabel::Noise => singles.push(vec![perm[pos]]),
            }
        }
        let mut p2: Vec<Vec<usize>> = map2.into_values().chain(singles).collect();
        for c in p2.iter_mut() {
            c.sort_unstable();
        }
        p2.sort();
        assert_eq!(p1, p2);
    }

    #[test]
    fn region_single_cluster_mean() {
        let points = vec![pt(1.0, 1.0), pt(1.2, 1.0), pt(1.0, 1.4), pt(0.8, 1.2)];
        let set = IntersectionSet {
            provenance: (0..points.len()).map(|i| (i, i)).collect(),
            points,
        };
        let region = identify_region(&set, 1.0, 2).unwrap();
        assert!((region.centroid.x - 1.0).abs() < 1e-12);
        assert!((region.centroid.y - 1.15).abs() < 1e-12);
    }

    #[test]
    fn region_excludes_outliers() {
        let mut rng = StdRng::seed_from_u64(2);
        let mut points: Vec<_> = (0..10)
            .map(|_| pt(50.0 + rng.gen_range(-1.0..1.0), 50.0 + rng.gen_range(-1.0..1.0)))
            .collect();
        points.push(pt(500.0, 0.0));
        points.push(pt(0.0, 500.0));
        points.push(pt(500.0, 500.0));
        let set = IntersectionSet {
            provenance: (0..points.len()).map(|i| (i, i)).collect(),
            points,
        };
        let region = identify_region(&set, 3.0, 2).unwrap();
        assert_eq!(region.members.len(), 10);
        assert!(region.centroid.dist(&pt(50.0, 50.0)) < 1.5);
        // oracle: largest eps-graph component
        let comps = eps_graph_components(&set.points, 3.0);
        let largest = comps.iter().map(|c| c.len()).max().unwrap();
        assert_eq!(region.members.len(), largest);
    }

    #[test]
    fn region_none_when_all_noise() {
        let points = vec![pt(0.0, 0.0), pt(100.0, 0.0), pt(0.0, 100.0)];
        let set = IntersectionSet {
            provenance: vec![(0, 0); 3],
            points,
        };
        assert!(identify_region(&set, 1.0, 2).is_none());
    }

    proptest! {
        #[test]
        fn region_centroid_is_member_mean(
            pts in prop::collection::vec((0.0..30.0f64, 0.0..30.0f64), 2..40),
            eps in 1.0..6.0f64,
        ) {
            let points: Vec<_> = pts.into_iter().map(|(x, y)| pt(x, y)).collect();
            let set = IntersectionSet { provenance: vec![(0, 0); points.len()], points };
            if let Some(region) = identify_region(&set, eps, 2) {
                let n = region.members.len() as f64;
                let mx = region.members.iter().map(|p| p.x).sum::<f64>() / n;
                let my = region.members.iter().map(|p| p.y).sum::<f64>() / n;
                prop_assert!((region.centroid.x - mx).abs() < 1e-12);
                prop_assert!((region.centroid.y - my).abs() < 1e-12);
            }
        }
    }
}
