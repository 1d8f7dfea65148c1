//! Trajectory evaluation metrics.

use serde::Serialize;

use crate::config::Config;
use crate::error::{Error, Result};
use crate::scene_io::{Scene, Trajectory};
use crate::spatial::{idw_interpolate, KdTree};
use crate::Point;

/// Default inlier thresholds in metres.
pub const INLIER_THRESHOLDS: [f64; 5] = [0.75, 1.0, 1.25, 1.5, 2.0];

/// `n` points spaced uniformly by arc length along the polyline.
pub fn resample(points: &[Point], n: usize) -> Vec<Point> {
    if points.is_empty() || n == 0 {
        return Vec::new();
    }
    if points.len() == 1 || n == 1 {
        return vec![points[0]; n];
    }
    let mut cum = Vec::with_capacity(points.len());
    cum.push(0.0);
    for w in points.windows(2) {
        cum.push(cum.last().unwrap() + (w[1] - w[0]).norm());
    }
    let total = *cum.last().unwrap();
    if total == 0.0 {
        return vec![points[0]; n];
    }
    let mut out = Vec::with_capacity(n);
    let mut seg = 0;
    for j in 0..n {
        let s = total * j as f64 / (n - 1) as f64;
        while seg + 2 < cum.len() && cum[seg + 1] < s {
            seg += 1;
        }
        let len = cum[seg + 1] - cum[seg];
        let t = if len > 0.0 { ((s - cum[seg]) / len).clamp(0.0, 1.0) } else { 0.0 };
        out.push(points[seg] + (points[seg + 1] - points[seg]) * t);
    }
    out
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn paired_distances(pred: &[Point], gt: &[Point], samples: usize) -> Vec<f64> {
    resample(pred, samples)
        .iter()
        .zip(&resample(gt, samples))
        .map(|(a, b)| (a - b).norm())
        .collect()
}

/// Median per-index distance after common arc-length resampling.
pub fn trajectory_aed(pred: &Trajectory, gt: &Trajectory, samples: usize) -> f64 {
    median(&paired_distances(pred.points(), gt.points(), samples))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Inlier {
    pub threshold: f64,
    pub ratio: f64,
}

/// Fraction of resampled indices within each threshold.
pub fn inlier_ratio(pred: &Trajectory, gt: &Trajectory, thresholds: &[f64], samples: usize) -> Vec<Inlier> {
    let d = paired_distances(pred.points(), gt.points(), samples);
    thresholds
        .iter()
        .map(|&threshold| Inlier {
            threshold,
            ratio: d.iter().filter(|&&x| x <= threshold).count() as f64 / d.len() as f64,
        })
        .collect()
}

/// Object points of a scene, indexed for distance queries.
pub struct Obstacles {
    tree: KdTree,
}

impl Obstacles {
    pub fn new(scene: &Scene) -> Self {
        let pts: Vec<Point> = scene.object_indices().iter().map(|&i| *scene.point(i)).collect();
        Obstacles { tree: KdTree::new(&pts) }
    }

    pub fn distance(&self, p: &Point) -> f64 {
        self.tree.nearest(p).map_or(f64::INFINITY, |(_, d2)| d2.sqrt())
    }
}

/// Fraction of points closer than `threshold` to an object point.
pub fn collision_ratio(points: &[Point], obstacles: &Obstacles, threshold: f64) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    points.iter().filter(|p| obstacles.distance(p) < threshold).count() as f64 / points.len() as f64
}

/// Mean feature discrepancy between source points (interpolated in the
/// target scene) and predicted points (interpolated in the reference scene).
pub fn feature_distance(
    src: &Trajectory,
    pred: &Trajectory,
    scene_tgt: &Scene,
    scene_ref: &Scene,
    k: usize,
    samples: usize,
) -> f64 {
    let tt = KdTree::new(scene_tgt.points());
    let tr = KdTree::new(scene_ref.points());
    let a = resample(src.points(), samples);
    let b = resample(pred.points(), samples);
    let total: f64 = a
        .iter()
        .zip(&b)
        .map(|(p, q)| {
            let fa = idw_interpolate(&tt, scene_tgt.features(), scene_tgt.dim(), p, k);
            let fb = idw_interpolate(&tr, scene_ref.features(), scene_ref.dim(), q, k);
            fa.iter().zip(&fb).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
        })
        .sum();
    total / a.len() as f64
}

/// Mean relative change of segment length. Trajectories with equal point
/// counts are compared segment by segment; otherwise both are resampled.
pub fn length_distortion(src: &Trajectory, pred: &Trajectory, samples: usize) -> f64 {
    let (a, b) = if src.len() == pred.len() {
        (src.points().to_vec(), pred.points().to_vec())
    } else {
        (resample(src.points(), samples), resample(pred.points(), samples))
    };
    let ratios: Vec<f64> = a
        .windows(2)
        .zip(b.windows(2))
        .filter_map(|(s, p)| {
            let ls = (s[1] - s[0]).norm();
            (ls > 0.0).then(|| ((p[1] - p[0]).norm() - ls).abs() / ls)
        })
        .collect();
    ratios.iter().sum::<f64>() / ratios.len().max(1) as f64
}

/// Median distance between index-aligned waypoints.
pub fn waypoint_aed(pred: &[Point], gt: &[Point]) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::Mismatch(format!(
            "{} predicted waypoints vs {} ground-truth waypoints",
            pred.len(),
            gt.len()
        )));
    }
    Ok(median(&pred.iter().zip(gt).map(|(a, b)| (a - b).norm()).collect::<Vec<_>>()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub trajectory_aed: f64,
    pub waypoint_aed: Option<f64>,
    pub inlier_ratio: Vec<Inlier>,
    pub collision_ratio: f64,
    pub feature_distance: Option<f64>,
    pub length_distortion: Option<f64>,
}

impl MetricReport {
    /// Best value per ground-truth dependent metric: smallest distances,
    /// largest inlier ratios.
    pub fn best_of(reports: &[MetricReport]) -> Option<MetricReport> {
        let mut it = reports.iter();
        let mut best = it.next()?.clone();
        for r in it {
            best.trajectory_aed = best.trajectory_aed.min(r.trajectory_aed);
            best.waypoint_aed = match (best.waypoint_aed, r.waypoint_aed) {
                (Some(a), Some(b)) => Some(a.min(b)),
                (a, b) => a.or(b),
            };
            for (b, x) in best.inlier_ratio.iter_mut().zip(&r.inlier_ratio) {
                b.ratio = b.ratio.max(x.ratio);
            }
        }
        Some(best)
    }
}

/// Source-side inputs for the source-dependent metrics.
pub struct SourceSide<'a> {
    pub trajectory: &'a Trajectory,
    pub scene: &'a Scene,
}

/// Full report of `pred` against every ground truth, reduced to the best
/// values.
pub fn evaluate(
    pred: &Trajectory,
    gts: &[Trajectory],
    scene_ref: &Scene,
    source: Option<SourceSide<'_>>,
    config: &Config,
) -> Result<MetricReport> {
    if gts.is_empty() {
        return Err(Error::Mismatch("no ground-truth trajectories".into()));
    }
    let n = config.resample_count;
    let obstacles = Obstacles::new(scene_ref);
    let collision = collision_ratio(pred.points(), &obstacles, config.collision_threshold);
    let (feature, distortion) = match &source {
        Some(s) => (
            Some(feature_distance(s.trajectory, pred, s.scene, scene_ref, config.idw_k, n)),
            Some(length_distortion(s.trajectory, pred, n)),
        ),
        None => (None, None),
    };
    let reports: Vec<MetricReport> = gts
        .iter()
        .map(|gt| {
            let waypoint_aed = match (pred.waypoints(), gt.waypoints()) {
                (Some(a), Some(b)) if a.len() == b.len() => waypoint_aed(&a, &b).ok(),
                _ => None,
            };
            MetricReport {
                trajectory_aed: trajectory_aed(pred, gt, n),
                waypoint_aed,
                inlier_ratio: inlier_ratio(pred, gt, &INLIER_THRESHOLDS, n),
                collision_ratio: collision,
                feature_distance: feature,
                length_distortion: distortion,
            }
        })
        .collect();
    Ok(MetricReport::best_of(&reports).unwrap())
}
