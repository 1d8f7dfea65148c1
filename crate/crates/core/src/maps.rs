//! Per-cluster smooth maps: similarity seeds refined by 3D thin-plate splines.
//!
//! A map evaluates as
//!
//! ```text
//! phi(x) = L x + t + sum_k w_k * |x - c_k|
//! ```
//!
//! with the biharmonic kernel `U(r) = r` and side conditions
//! `sum_k w_k = 0`, `sum_k w_k c_k^T = 0`.

use nalgebra::{DMatrix, Dyn, Matrix3, Matrix3x4, LU};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::Config;
use crate::scene_io::{bounds_of, Scene};
use crate::spatial::{farthest_point_sample, KdTree};
use crate::{Point, Vec3};

#[derive(Debug, Clone, PartialEq)]
pub struct SmoothMap {
    pub control_points: Vec<Point>,
    pub weights: Vec<Vec3>,
    pub linear: Matrix3<f64>,
    pub translation: Vec3,
    pub regularization: f64,
    /// Set when the fit fell back to an affine map.
    pub degenerate: bool,
}

impl SmoothMap {
    pub fn identity() -> Self {
        SmoothMap::affine(Matrix3::identity(), Vec3::zeros())
    }

    pub fn affine(linear: Matrix3<f64>, translation: Vec3) -> Self {
        SmoothMap {
            control_points: Vec::new(),
            weights: Vec::new(),
            linear,
            translation,
            regularization: 0.0,
            degenerate: false,
        }
    }

    pub fn apply(&self, x: &Point) -> Point {
        let mut y = self.linear * x.coords + self.translation;
        for (c, w) in self.control_points.iter().zip(&self.weights) {
            y += w * (x - c).norm();
        }
        Point::from(y)
    }

    pub fn apply_all(&self, xs: &[Point]) -> Vec<Point> {
        xs.iter().map(|x| self.apply(x)).collect()
    }

    /// `[L | t]`.
    pub fn affine_matrix(&self) -> Matrix3x4<f64> {
        let mut m = Matrix3x4::zeros();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.linear);
        m.set_column(3, &self.translation);
        m
    }
}

/// Singular values of the centered control coordinates, descending.
fn spread(points: &[Point]) -> [f64; 3] {
    let n = points.len() as f64;
    let mean = points.iter().fold(Vec3::zeros(), |a, p| a + p.coords) / n;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p.coords - mean;
        cov += d * d.transpose();
    }
    let mut s: Vec<f64> = cov.symmetric_eigenvalues().iter().map(|v| v.max(0.0).sqrt()).collect();
    s.sort_by(|a, b| b.total_cmp(a));
    [s[0], s[1], s[2]]
}

fn centroid(points: &[Point]) -> Vec3 {
    points.iter().fold(Vec3::zeros(), |a, p| a + p.coords) / points.len().max(1) as f64
}

/// Least-squares affine map closest to the identity, used when the controls
/// cannot support a spline (fewer than four or coplanar).
pub fn fit_affine_fallback(source: &[Point], targets: &[Point]) -> SmoothMap {
    if source.is_empty() {
        let mut m = SmoothMap::identity();
        m.degenerate = true;
        return m;
    }
    let ms = centroid(source);
    let mt = centroid(targets);
    let n = source.len();
    let xc = DMatrix::from_fn(n, 3, |i, a| source[i][a] - ms[a]);
    let dc = DMatrix::from_fn(n, 3, |i, a| (targets[i][a] - mt[a]) - (source[i][a] - ms[a]));
    let scale = xc.abs().max().max(1e-300);
    let m = xc
        .clone()
        .svd(true, true)
        .pseudo_inverse(1e-9 * scale)
        .map(|pinv| pinv * dc)
        .unwrap_or_else(|_| DMatrix::zeros(3, 3));
    let linear = Matrix3::identity() + Matrix3::from_fn(|r, c| m[(c, r)]);
    let translation = mt - linear * ms;
    let mut out = SmoothMap::affine(linear, translation);
    out.degenerate = true;
    out
}

/// Regularized 3D thin-plate spline through `(source[k], targets[k])`.
///
/// With `regularization = 0` the map interpolates the controls. Fewer than
/// four or coplanar controls, or a singular system, yield the affine
/// fallback with `degenerate` set.
pub fn fit_tps(source: &[Point], targets: &[Point], regularization: f64) -> SmoothMap {
    TpsSystem::new(source, regularization).fit(targets)
}

/// Factored spline system for a fixed control set, reusable across target
/// sets.
pub struct TpsSystem {
    source: Vec<Point>,
    mean: Vec3,
    regularization: f64,
    /// `None` when the controls cannot carry a spline.
    lu: Option<LU<f64, Dyn, Dyn>>,
}

impl TpsSystem {
    pub fn new(source: &[Point], regularization: f64) -> Self {
        let n = source.len();
        let mean = centroid(source);
        let usable = n >= 4 && {
            let s = spread(source);
            s[0] > 0.0 && s[2] > 1e-9 * s[0]
        };
        let lu = usable.then(|| {
            let size = n + 4;
            let mut a = DMatrix::zeros(size, size);
            for i in 0..n {
                for j in i + 1..n {
                    let r = (source[i] - source[j]).norm();
                    a[(i, j)] = r;
                    a[(j, i)] = r;
                }
                a[(i, i)] = regularization;
                let c = source[i].coords - mean;
                let row = [1.0, c.x, c.y, c.z];
                for (k, v) in row.iter().enumerate() {
                    a[(i, n + k)] = *v;
                    a[(n + k, i)] = *v;
                }
            }
            a.lu()
        });
        TpsSystem {
            source: source.to_vec(),
            mean,
            regularization,
            lu,
        }
    }

    pub fn fit(&self, targets: &[Point]) -> SmoothMap {
        let source = &self.source;
        assert_eq!(source.len(), targets.len(), "control/target count mismatch");
        let n = source.len();
        let Some(lu) = &self.lu else {
            return fit_affine_fallback(source, targets);
        };
        let mut b = DMatrix::zeros(n + 4, 3);
        for (i, t) in targets.iter().enumerate() {
            for ax in 0..3 {
                b[(i, ax)] = t[ax];
            }
        }
        let Some(sol) = lu.solve(&b) else {
            log::warn!("singular spline system with {n} controls; using affine fallback");
            return fit_affine_fallback(source, targets);
        };
        if sol.iter().any(|v| !v.is_finite()) {
            return fit_affine_fallback(source, targets);
        }
        let weights = (0..n).map(|i| Vec3::new(sol[(i, 0)], sol[(i, 1)], sol[(i, 2)])).collect();
        let offset = Vec3::new(sol[(n, 0)], sol[(n, 1)], sol[(n, 2)]);
        // y = offset + L (x - mean) with L[r][c] = sol[n + 1 + c][r]
        let linear = Matrix3::from_fn(|r, c| sol[(n + 1 + c, r)]);
        SmoothMap {
            control_points: source.to_vec(),
            weights,
            linear,
            translation: offset - linear * self.mean,
            regularization: self.regularization,
            degenerate: false,
        }
    }
}

/// Similarity transform `T(x) = S R F (x - o_t) + o_r` from seed enumeration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimilaritySeed {
    pub rotation_index: usize,
    pub reflection_index: usize,
    pub scaled: bool,
    pub target_node: usize,
    pub reference_node: usize,
    #[serde(skip)]
    pub linear: Matrix3<f64>,
    #[serde(skip)]
    pub translation: Vec3,
}

impl SimilaritySeed {
    pub fn apply(&self, x: &Point) -> Point {
        Point::from(self.linear * x.coords + self.translation)
    }

    pub fn as_map(&self) -> SmoothMap {
        SmoothMap::affine(self.linear, self.translation)
    }
}

/// Identity, flip-x, flip-z, flip-xz.
pub fn reflection(index: usize) -> Matrix3<f64> {
    match index {
        0 => Matrix3::identity(),
        1 => Matrix3::from_diagonal(&Vec3::new(-1.0, 1.0, 1.0)),
        2 => Matrix3::from_diagonal(&Vec3::new(1.0, 1.0, -1.0)),
        _ => Matrix3::from_diagonal(&Vec3::new(-1.0, 1.0, -1.0)),
    }
}

/// Rotation by `2 pi k / n` about +y.
pub fn y_rotation(k: usize, n: usize) -> Matrix3<f64> {
    let theta = std::f64::consts::TAU * k as f64 / n.max(1) as f64;
    let (s, c) = theta.sin_cos();
    // snap the exact quarter turns so duplicates collapse
    let snap = |v: f64| if v.abs() < 1e-15 { 0.0 } else { v };
    let (s, c) = (snap(s), snap(c));
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

fn extents(points: &[Point]) -> Vec3 {
    let (lo, hi) = bounds_of(points);
    hi - lo
}

/// Enumerates similarity seeds for a cluster pair: every target/reference
/// node centroid pair, `n_rotations` y-rotations, four reflections, with and
/// without per-axis bounding-box scaling. Exact duplicates are dropped.
///
/// `tgt_points` / `ref_points` define the bounding boxes used for scaling.
pub fn enumerate_seeds(
    tgt_points: &[Point],
    ref_points: &[Point],
    tgt_nodes: &[Point],
    ref_nodes: &[Point],
    n_rotations: usize,
) -> Vec<SimilaritySeed> {
    let ref_ext = extents(ref_points);
    let mut bases: Vec<(usize, usize, bool, Matrix3<f64>)> = Vec::new();
    for r in 0..n_rotations.max(1) {
        for f in 0..4 {
            let rf = y_rotation(r, n_rotations) * reflection(f);
            let rotated: Vec<Point> = tgt_points.iter().map(|p| Point::from(rf * p.coords)).collect();
            let tgt_ext = extents(&rotated);
            let scale = Vec3::from_fn(|a, _| {
                let (t, q) = (tgt_ext[a], ref_ext[a]);
                if t > 1e-9 && q > 1e-9 && t.is_finite() && q.is_finite() {
                    q / t
                } else {
                    1.0
                }
            });
            bases.push((r, f, false, rf));
            bases.push((r, f, true, Matrix3::from_diagonal(&scale) * rf));
        }
    }
    let mut seeds: Vec<SimilaritySeed> = Vec::new();
    for (tn, ot) in tgt_nodes.iter().enumerate() {
        for (rn, or) in ref_nodes.iter().enumerate() {
            for (r, f, scaled, linear) in &bases {
                let translation = or.coords - linear * ot.coords;
                let dup = seeds.iter().any(|s| {
                    (s.linear - linear).abs().max() < 1e-12 && (s.translation - translation).abs().max() < 1e-12
                });
                if !dup {
                    seeds.push(SimilaritySeed {
                        rotation_index: *r,
                        reflection_index: *f,
                        scaled: *scaled,
                        target_node: tn,
                        reference_node: rn,
                        linear: *linear,
                        translation,
                    });
                }
            }
        }
    }
    seeds
}

/// Points and features of one cluster, with a spatial index over the points.
#[derive(Debug, Clone)]
pub struct ClusterCloud {
    pub points: Vec<Point>,
    pub features: Vec<f64>,
    pub dim: usize,
    pub is_object: Vec<bool>,
    tree: KdTree,
}

impl ClusterCloud {
    pub fn new(points: Vec<Point>, features: Vec<f64>, dim: usize, is_object: Vec<bool>) -> Self {
        let tree = KdTree::new(&points);
        ClusterCloud {
            points,
            features,
            dim,
            is_object,
            tree,
        }
    }

    pub fn from_scene(scene: &Scene, indices: &[usize]) -> Self {
        let points = indices.iter().map(|&i| *scene.point(i)).collect();
        let features = indices.iter().flat_map(|&i| scene.feature(i).iter().copied()).collect();
        let is_object = indices.iter().map(|&i| !scene.is_open_space(i)).collect();
        ClusterCloud::new(points, features, scene.dim(), is_object)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn feature(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn tree(&self) -> &KdTree {
        &self.tree
    }

    pub fn object_points(&self) -> Vec<Point> {
        self.points
            .iter()
            .zip(&self.is_object)
            .filter(|(_, &o)| o)
            .map(|(p, _)| *p)
            .collect()
    }
}

fn feature_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Mean feature discrepancy between each target point and the reference
/// cluster point nearest to its warped position.
pub fn feature_cost(map: &SmoothMap, tgt: &ClusterCloud, reference: &ClusterCloud) -> f64 {
    feature_cost_with(map, tgt, reference, None)
}

/// `radii[i * c + j]`: distance from target point `i` to control `j` of
/// `map` (`c` controls); gives the same result as [`feature_cost`].
fn feature_cost_with(map: &SmoothMap, tgt: &ClusterCloud, reference: &ClusterCloud, radii: Option<&[f64]>) -> f64 {
    if tgt.is_empty() || reference.is_empty() {
        return f64::INFINITY;
    }
    let c = map.control_points.len();
    let total: f64 = tgt
        .points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let warped = match radii {
                Some(r) => {
                    let mut y = map.linear * p.coords + map.translation;
                    for (w, r) in map.weights.iter().zip(&r[i * c..(i + 1) * c]) {
                        y += w * *r;
                    }
                    Point::from(y)
                }
                None => map.apply(p),
            };
            let (q, _) = reference.tree.nearest(&warped).unwrap();
            feature_gap(tgt.feature(i), reference.feature(q))
        })
        .sum();
    total / tgt.len() as f64
}

/// Point-to-control distance table entries beyond which no table is built.
const RADII_TABLE_LIMIT: usize = 8_000_000;

#[derive(Debug, Clone)]
pub struct MapCandidate {
    pub map: SmoothMap,
    pub seed: SimilaritySeed,
    pub feat_cost: f64,
    pub target_cluster: usize,
    pub reference_cluster: usize,
    pub rank: usize,
}

/// Inputs for fitting the candidates of one matched cluster pair.
pub struct ClusterPair<'a> {
    pub target_cluster: usize,
    pub reference_cluster: usize,
    pub rank: usize,
    pub tgt: &'a ClusterCloud,
    pub reference: &'a ClusterCloud,
    pub tgt_nodes: &'a [Point],
    pub ref_nodes: &'a [Point],
    /// All reference scene points and their index, for correspondences.
    pub ref_scene_points: &'a [Point],
    pub ref_scene_tree: &'a KdTree,
}

const RESIDUAL_SAMPLES: usize = 128;

/// Fits and scores candidate maps for one cluster pair, returning at most
/// `config.top_m` candidates sorted by ascending feature cost.
pub fn fit_cluster_candidates(pair: &ClusterPair<'_>, config: &Config) -> Vec<MapCandidate> {
    if pair.tgt.is_empty() || pair.reference.is_empty() || pair.tgt_nodes.is_empty() || pair.ref_nodes.is_empty() {
        log::warn!(
            "cluster pair ({}, {}) has no points or nodes; no candidates",
            pair.target_cluster,
            pair.reference_cluster
        );
        return Vec::new();
    }
    let tgt_objects = pair.tgt.object_points();
    let ref_objects = pair.reference.object_points();
    let (tgt_box, ref_box) = if tgt_objects.is_empty() || ref_objects.is_empty() {
        (pair.tgt.points.clone(), pair.reference.points.clone())
    } else {
        (tgt_objects.clone(), ref_objects.clone())
    };
    let mut seeds = enumerate_seeds(&tgt_box, &ref_box, pair.tgt_nodes, pair.ref_nodes, config.n_rotations);

    // Rank seeds by how well the similarity alone lands target objects on
    // reference objects, and keep the best `seed_cap`.
    if seeds.len() > config.seed_cap {
        let probe_set = if tgt_objects.is_empty() { &pair.tgt.points } else { &tgt_objects };
        let probe: Vec<Point> = farthest_point_sample(probe_set, RESIDUAL_SAMPLES, 0)
            .into_iter()
            .map(|i| probe_set[i])
            .collect();
        let ref_tree = if ref_objects.is_empty() {
            pair.reference.tree.clone()
        } else {
            KdTree::new(&ref_objects)
        };
        let residuals: Vec<f64> = seeds
            .par_iter()
            .map(|s| {
                probe
                    .iter()
                    .map(|p| ref_tree.nearest(&s.apply(p)).unwrap().1.sqrt())
                    .sum::<f64>()
                    / probe.len() as f64
            })
            .collect();
        let mut order: Vec<usize> = (0..seeds.len()).collect();
        order.sort_by(|&a, &b| residuals[a].total_cmp(&residuals[b]).then(a.cmp(&b)));
        order.truncate(config.seed_cap);
        order.sort_unstable();
        seeds = order.into_iter().map(|i| seeds[i].clone()).collect();
    }

    let controls: Vec<Point> = farthest_point_sample(&pair.tgt.points, config.max_controls, 0)
        .into_iter()
        .map(|i| pair.tgt.points[i])
        .collect();
    let (lo, hi) = bounds_of(&controls);
    let lambda = config.tps_regularization * (hi - lo).norm();
    let spline_ok = controls.len() >= 4 && {
        let s = spread(&controls);
        s[0] > 0.0 && s[2] > 1e-9 * s[0]
    };
    let system = TpsSystem::new(&controls, lambda);
    let radii: Option<Vec<f64>> = (spline_ok && pair.tgt.len() * controls.len() <= RADII_TABLE_LIMIT).then(|| {
        pair.tgt
            .points
            .par_iter()
            .flat_map_iter(|p| controls.iter().map(move |c| (p - c).norm()))
            .collect()
    });

    let mut candidates: Vec<MapCandidate> = seeds
        .par_iter()
        .map(|seed| {
            let map = if spline_ok {
                let targets: Vec<Point> = controls
                    .iter()
                    .map(|c| {
                        let (q, _) = pair.ref_scene_tree.nearest(&seed.apply(c)).unwrap();
                        pair.ref_scene_points[q]
                    })
                    .collect();
                system.fit(&targets)
            } else {
                seed.as_map()
            };
            let table = radii.as_deref().filter(|_| map.control_points.len() == controls.len());
            let feat_cost = feature_cost_with(&map, pair.tgt, pair.reference, table);
            MapCandidate {
                map,
                seed: seed.clone(),
                feat_cost,
                target_cluster: pair.target_cluster,
                reference_cluster: pair.reference_cluster,
                rank: pair.rank,
            }
        })
        .collect();
    // stable: equal costs keep enumeration order
    candidates.sort_by(|a, b| a.feat_cost.total_cmp(&b.feat_cost));
    candidates.truncate(config.top_m);
    candidates
}
