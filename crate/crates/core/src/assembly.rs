//! Selection of one candidate map per target cluster and merging of the
//! selection into a single global map.
//!
//! The assignment cost is
//!
//! ```text
//! lambda_feat * sum_k feat(a_k)
//!   + lambda_distort * sum_{k < k'} distort(a_k, a_k')
//!   + lambda_nav * sum_k nav(a_k, k)
//! ```
//!
//! minimized by beam search over clusters in descending point-count order.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::Config;
use crate::maps::{fit_tps, MapCandidate, SmoothMap};
use crate::rng::{rng_for, streams};
use crate::scene_io::bounds_of;
use crate::spatial::{farthest_point_sample, KdTree};
use crate::Point;

/// Mean absolute change of sampled inter-cluster distances under the two maps.
pub fn distortion_cost(
    map_a: &SmoothMap,
    map_b: &SmoothMap,
    points_a: &[Point],
    points_b: &[Point],
    n_pairs: usize,
    seed: u64,
) -> f64 {
    if points_a.is_empty() || points_b.is_empty() || n_pairs == 0 {
        return 0.0;
    }
    let pairs = sample_pairs(points_a.len(), points_b.len(), n_pairs, seed);
    distortion_on_pairs(map_a, map_b, points_a, points_b, &pairs)
}

/// Index pairs drawn by [`distortion_cost`] for a given seed.
pub fn sample_pairs(len_a: usize, len_b: usize, n_pairs: usize, seed: u64) -> Vec<(usize, usize)> {
    let mut rng = rng_for(seed, streams::DISTORTION, 0);
    (0..n_pairs)
        .map(|_| (rng.random_range(0..len_a), rng.random_range(0..len_b)))
        .collect()
}

fn distortion_on_pairs(
    map_a: &SmoothMap,
    map_b: &SmoothMap,
    points_a: &[Point],
    points_b: &[Point],
    pairs: &[(usize, usize)],
) -> f64 {
    let total: f64 = pairs
        .iter()
        .map(|&(i, j)| {
            let (p, q) = (points_a[i], points_b[j]);
            ((map_a.apply(&p) - map_b.apply(&q)).norm() - (p - q).norm()).abs()
        })
        .sum();
    total / pairs.len() as f64
}

/// `1 - fraction` of trajectory points whose warped XZ position lies within
/// `delta` of a navigable XZ position. `navigable_xz` must be a planar tree.
/// An empty trajectory subset costs 0.
pub fn navigability_cost(map: &SmoothMap, traj_points: &[Point], navigable_xz: &KdTree, delta: f64) -> f64 {
    if traj_points.is_empty() {
        return 0.0;
    }
    let inside = traj_points
        .iter()
        .filter(|t| {
            navigable_xz
                .nearest_xz(&map.apply(t))
                .is_some_and(|(_, d2)| d2.sqrt() <= delta)
        })
        .count();
    1.0 - inside as f64 / traj_points.len() as f64
}

/// Cluster label of each trajectory point: the label of its nearest target
/// scene point, passed through `effective` (merged clusters).
pub fn trajectory_cluster_labels(
    traj: &[Point],
    scene_tree: &KdTree,
    point_cluster: &[usize],
    effective: impl Fn(usize) -> usize,
) -> Vec<usize> {
    traj.iter()
        .map(|t| effective(point_cluster[scene_tree.nearest(t).map(|x| x.0).unwrap_or(0)]))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct CostBreakdown {
    pub feat: f64,
    pub distort: f64,
    pub nav: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CostWeights {
    pub feat: f64,
    pub distort: f64,
    pub nav: f64,
}

impl CostWeights {
    pub fn from_config(c: &Config) -> Self {
        CostWeights {
            feat: c.assembly_lambda_feat,
            distort: c.assembly_lambda_distort,
            nav: c.assembly_lambda_nav,
        }
    }

    pub fn total(&self, feat: f64, distort: f64, nav: f64) -> f64 {
        self.feat * feat + self.distort * distort + self.nav * nav
    }
}

/// Precomputed per-candidate and pairwise costs, indexed by processing slot.
#[derive(Debug, Clone)]
pub struct CostTables {
    /// Target cluster id of each slot, in processing order.
    pub clusters: Vec<usize>,
    pub feat: Vec<Vec<f64>>,
    pub nav: Vec<Vec<f64>>,
    /// `distort[(a, b)]` for slots `a < b`: rows index candidates of `a`.
    pub distort: BTreeMap<(usize, usize), DMatrix<f64>>,
}

impl CostTables {
    pub fn slots(&self) -> usize {
        self.clusters.len()
    }

    pub fn candidate_counts(&self) -> Vec<usize> {
        self.feat.iter().map(Vec::len).collect()
    }

    /// Cost of a full choice vector, accumulated in slot order (the same order
    /// beam search uses).
    pub fn evaluate(&self, choices: &[usize], w: &CostWeights) -> CostBreakdown {
        let mut c = CostBreakdown::default();
        for (s, &a) in choices.iter().enumerate() {
            c.feat += self.feat[s][a];
            c.nav += self.nav[s][a];
            for (t, &b) in choices[..s].iter().enumerate() {
                c.distort += self.distort[&(t, s)][(b, a)];
            }
        }
        c.total = w.total(c.feat, c.distort, c.nav);
        c
    }
}

/// Per-cluster inputs for building [`CostTables`].
pub struct ClusterInput<'a> {
    pub cluster: usize,
    pub candidates: &'a [MapCandidate],
    /// Target-scene points of the cluster (distortion sampling).
    pub points: &'a [Point],
    /// Trajectory points attributed to the cluster.
    pub traj_points: Vec<Point>,
}

/// Orders clusters by descending point count (ties to the smaller id), drops
/// clusters without candidates, and evaluates every cost term.
pub fn build_cost_tables(inputs: &[ClusterInput<'_>], navigable_xz: &KdTree, config: &Config) -> CostTables {
    let mut order: Vec<usize> = (0..inputs.len())
        .filter(|&i| {
            let ok = !inputs[i].candidates.is_empty();
            if !ok {
                log::warn!("cluster {} has no candidate maps; skipped", inputs[i].cluster);
            }
            ok
        })
        .collect();
    order.sort_by(|&a, &b| {
        inputs[b]
            .points
            .len()
            .cmp(&inputs[a].points.len())
            .then(inputs[a].cluster.cmp(&inputs[b].cluster))
    });
    let slots: Vec<&ClusterInput<'_>> = order.iter().map(|&i| &inputs[i]).collect();
    let feat = slots
        .iter()
        .map(|s| s.candidates.iter().map(|c| c.feat_cost).collect())
        .collect();
    let nav = slots
        .iter()
        .map(|s| {
            s.candidates
                .par_iter()
                .map(|c| navigability_cost(&c.map, &s.traj_points, navigable_xz, config.nav_delta))
                .collect()
        })
        .collect();
    let mut distort = BTreeMap::new();
    for a in 0..slots.len() {
        for b in a + 1..slots.len() {
            let (sa, sb) = (slots[a], slots[b]);
            let seed = crate::rng::derive(config.seed, sa.cluster as u64, sb.cluster as u64);
            let pairs = sample_pairs(sa.points.len(), sb.points.len(), config.distortion_pairs, seed);
            let values: Vec<f64> = (0..sa.candidates.len() * sb.candidates.len())
                .into_par_iter()
                .map(|k| {
                    let (i, j) = (k / sb.candidates.len(), k % sb.candidates.len());
                    distortion_on_pairs(&sa.candidates[i].map, &sb.candidates[j].map, sa.points, sb.points, &pairs)
                })
                .collect();
            distort.insert(
                (a, b),
                DMatrix::from_row_slice(sa.candidates.len(), sb.candidates.len(), &values),
            );
        }
    }
    CostTables {
        clusters: slots.iter().map(|s| s.cluster).collect(),
        feat,
        nav,
        distort,
    }
}

/// One complete selection: `choices[s]` indexes the candidates of
/// `clusters[s]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Assignment {
    pub clusters: Vec<usize>,
    pub choices: Vec<usize>,
    pub cost: CostBreakdown,
    pub beam_rank: usize,
}

#[derive(Clone)]
struct Partial {
    choices: Vec<usize>,
    feat: f64,
    distort: f64,
    nav: f64,
    total: f64,
}

/// Beam search keeping the `width` cheapest partial assignments per step.
/// Returns up to `width` complete assignments sorted by total cost.
pub fn beam_search(tables: &CostTables, weights: &CostWeights, width: usize) -> Vec<Assignment> {
    let width = width.max(1);
    let mut beam = vec![Partial {
        choices: Vec::new(),
        feat: 0.0,
        distort: 0.0,
        nav: 0.0,
        total: 0.0,
    }];
    for s in 0..tables.slots() {
        let mut next: Vec<Partial> = beam
            .par_iter()
            .flat_map_iter(|p| {
                (0..tables.feat[s].len()).map(move |a| {
                    let mut d = p.distort;
                    for (t, &b) in p.choices.iter().enumerate() {
                        d += tables.distort[&(t, s)][(b, a)];
                    }
                    let feat = p.feat + tables.feat[s][a];
                    let nav = p.nav + tables.nav[s][a];
                    let mut choices = p.choices.clone();
                    choices.push(a);
                    Partial {
                        choices,
                        feat,
                        distort: d,
                        nav,
                        total: weights.total(feat, d, nav),
                    }
                })
            })
            .collect();
        next.sort_by(|x, y| x.total.total_cmp(&y.total).then_with(|| x.choices.cmp(&y.choices)));
        next.truncate(width);
        beam = next;
    }
    if tables.slots() == 0 {
        return Vec::new();
    }
    beam.into_iter()
        .enumerate()
        .map(|(rank, p)| Assignment {
            clusters: tables.clusters.clone(),
            choices: p.choices,
            cost: CostBreakdown {
                feat: p.feat,
                distort: p.distort,
                nav: p.nav,
                total: p.total,
            },
            beam_rank: rank,
        })
        .collect()
}

/// Fits one spline through `per_cluster_samples` farthest-point samples of
/// every selected cluster paired with their images under the chosen map.
///
/// `candidates[s]` and `cluster_points[s]` follow the slot order of the
/// assignment.
pub fn merge_global_map(
    assignment: &Assignment,
    candidates: &[&[MapCandidate]],
    cluster_points: &[&[Point]],
    per_cluster_samples: usize,
    tps_regularization: f64,
) -> SmoothMap {
    let mut sources = Vec::new();
    let mut targets = Vec::new();
    for (s, &choice) in assignment.choices.iter().enumerate() {
        let map = &candidates[s][choice].map;
        let pts = cluster_points[s];
        for i in farthest_point_sample(pts, per_cluster_samples, 0) {
            sources.push(pts[i]);
            targets.push(map.apply(&pts[i]));
        }
    }
    let lambda = if sources.is_empty() {
        0.0
    } else {
        let (lo, hi) = bounds_of(&sources);
        tps_regularization * (hi - lo).norm()
    };
    fit_tps(&sources, &targets, lambda)
}
