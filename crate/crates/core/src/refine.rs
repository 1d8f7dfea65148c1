//! Warping of the source trajectory through the global map and energy-based
//! refinement of the warped points.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::config::Config;
use crate::error::Result;
use crate::maps::SmoothMap;
use crate::scene_io::{Scene, Trajectory};
use crate::spatial::{idw_interpolate, KdTree};
use crate::{Point, Vec3};

/// `u_i = phi(t_i)`.
pub fn initial_transfer(points: &[Point], map: &SmoothMap) -> Vec<Point> {
    map.apply_all(points)
}

/// Gaussian density of the navigable set, truncated at `3 sigma`. The kernel
/// is `exp(-s) - exp(-c) + (s - c) exp(-c)` with `s = d^2 / (2 sigma^2)`, so
/// both it and its slope vanish at the cutoff `s = c`.
#[derive(Debug, Clone)]
pub struct NavDensity {
    pub sigma: f64,
    pub tau: f64,
    points: Vec<Point>,
    tree: KdTree,
}

const CUTOFF_SIGMAS: f64 = 3.0;

impl NavDensity {
    /// Density field with `tau` set to the mean density at the navigable
    /// points themselves.
    pub fn new(points: Vec<Point>, sigma: f64) -> Self {
        let tree = KdTree::new(&points);
        let mut d = NavDensity {
            sigma,
            tau: 0.0,
            points,
            tree,
        };
        if !d.points.is_empty() {
            let rho: Vec<f64> = d.points.par_iter().map(|p| d.density(p)).collect();
            d.tau = rho.iter().sum::<f64>() / rho.len() as f64;
        }
        d
    }

    pub fn with_tau(mut self, tau: f64) -> Self {
        self.tau = tau;
        self
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    fn floor(&self) -> f64 {
        (-0.5 * CUTOFF_SIGMAS * CUTOFF_SIGMAS).exp()
    }

    pub fn density(&self, v: &Point) -> f64 {
        self.density_and_gradient(v).0
    }

    pub fn density_and_gradient(&self, v: &Point) -> (f64, Vec3) {
        let s2 = self.sigma * self.sigma;
        let floor = self.floor();
        let c = 0.5 * CUTOFF_SIGMAS * CUTOFF_SIGMAS;
        let mut neighbors = Vec::new();
        self.tree
            .for_each_within(v, CUTOFF_SIGMAS * self.sigma, |i, d2| neighbors.push((i, d2)));
        neighbors.sort_unstable_by_key(|x| x.0);
        let mut rho = 0.0;
        let mut grad = Vec3::zeros();
        for (i, d2) in neighbors {
            let s = d2 / (2.0 * s2);
            let e = (-s).exp();
            rho += e - floor + (s - c) * floor;
            grad -= (v - self.points[i]) * ((e - floor) / s2);
        }
        (rho, grad)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyWeights {
    pub shape: f64,
    pub anchor: f64,
    pub nav: f64,
    pub feat: f64,
}

impl EnergyWeights {
    pub fn from_config(c: &Config) -> Self {
        EnergyWeights {
            shape: c.refine_lambda_shape,
            anchor: c.refine_lambda_anchor,
            nav: c.refine_lambda_nav,
            feat: c.refine_lambda_feat,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Energy {
    pub shape: f64,
    pub anchor: f64,
    pub nav: f64,
    pub feat: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct RefinementState {
    pub variables: Vec<Point>,
    pub anchors: Vec<Point>,
    pub edge_lengths: Vec<f64>,
    pub sparse_targets: BTreeMap<usize, Point>,
    pub weights: EnergyWeights,
    pub density: NavDensity,
}

impl RefinementState {
    pub fn len(&self) -> usize {
        self.variables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.variables.is_empty()
    }

    pub fn energy(&self) -> Energy {
        self.energy_at(&self.variables)
    }

    /// Energy terms evaluated at `v` (same length as the anchors).
    pub fn energy_at(&self, v: &[Point]) -> Energy {
        let m = v.len();
        let shape = if m > 1 {
            let r: f64 = v
                .windows(2)
                .zip(&self.edge_lengths)
                .map(|(w, l)| ((w[1] - w[0]).norm() - l).powi(2))
                .sum();
            r / (m - 1) as f64
        } else {
            0.0
        };
        let anchor = v.iter().zip(&self.anchors).map(|(a, b)| (a - b).norm()).sum::<f64>() / m as f64;
        let per_point: Vec<f64> = v
            .par_iter()
            .map(|p| (self.density.tau - self.density.density(p)).max(0.0).powi(2))
            .collect();
        let nav = per_point.iter().sum::<f64>() / m as f64;
        let feat = if self.sparse_targets.is_empty() {
            0.0
        } else {
            self.sparse_targets.iter().map(|(&i, t)| (v[i] - t).norm()).sum::<f64>()
                / self.sparse_targets.len() as f64
        };
        let w = &self.weights;
        Energy {
            shape,
            anchor,
            nav,
            feat,
            total: w.shape * shape + w.anchor * anchor + w.nav * nav + w.feat * feat,
        }
    }

    /// Per-term gradients at `v`, in order shape, anchor, nav, feat.
    pub fn term_gradients(&self, v: &[Point]) -> [Vec<Vec3>; 4] {
        let m = v.len();
        let mut shape = vec![Vec3::zeros(); m];
        if m > 1 {
            let scale = 2.0 / (m - 1) as f64;
            for (i, l) in self.edge_lengths.iter().enumerate().take(m - 1) {
                let e = v[i + 1] - v[i];
                let n = e.norm();
                if n > 0.0 {
                    let g = e * (scale * (n - l) / n);
                    shape[i + 1] += g;
                    shape[i] -= g;
                }
            }
        }
        let anchor = v
            .iter()
            .zip(&self.anchors)
            .map(|(a, b)| {
                let d = a - b;
                let n = d.norm();
                if n > 0.0 {
                    d / (n * m as f64)
                } else {
                    Vec3::zeros()
                }
            })
            .collect();
        let nav = v
            .par_iter()
            .map(|p| {
                let (rho, grad) = self.density.density_and_gradient(p);
                let gap = self.density.tau - rho;
                if gap > 0.0 {
                    grad * (-2.0 * gap / m as f64)
                } else {
                    Vec3::zeros()
                }
            })
            .collect();
        let mut feat = vec![Vec3::zeros(); m];
        let k = self.sparse_targets.len() as f64;
        for (&i, t) in &self.sparse_targets {
            let d = v[i] - t;
            let n = d.norm();
            if n > 0.0 {
                feat[i] += d / (n * k);
            }
        }
        [shape, anchor, nav, feat]
    }

    pub fn gradient_at(&self, v: &[Point]) -> Vec<Vec3> {
        let [s, a, n, f] = self.term_gradients(v);
        let w = &self.weights;
        (0..v.len())
            .map(|i| s[i] * w.shape + a[i] * w.anchor + n[i] * w.nav + f[i] * w.feat)
            .collect()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RefineOutcome {
    #[serde(skip)]
    pub points: Vec<Point>,
    pub initial: Energy,
    pub final_energy: Energy,
    pub best_step: usize,
    pub trace: Vec<Energy>,
    pub failed: bool,
}

/// Adam descent on the total energy. Returns the iterate with the lowest
/// recorded energy (the input counts as step 0).
pub fn refine(state: &RefinementState, steps: usize, lr: f64) -> RefineOutcome {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;
    let initial = state.energy();
    let mut trace = vec![initial];
    let fail = |trace: Vec<Energy>| RefineOutcome {
        points: state.variables.clone(),
        initial,
        final_energy: initial,
        best_step: 0,
        trace,
        failed: true,
    };
    if !initial.total.is_finite() {
        return fail(trace);
    }
    let mut v = state.variables.clone();
    let mut best = (initial.total, 0, v.clone(), initial);
    let mut m1 = vec![Vec3::zeros(); v.len()];
    let mut m2 = vec![Vec3::zeros(); v.len()];
    for step in 1..=steps {
        let g = state.gradient_at(&v);
        let c1 = 1.0 - B1.powi(step as i32);
        let c2 = 1.0 - B2.powi(step as i32);
        for i in 0..v.len() {
            m1[i] = m1[i] * B1 + g[i] * (1.0 - B1);
            m2[i] = m2[i] * B2 + g[i].component_mul(&g[i]) * (1.0 - B2);
            let mh = m1[i] / c1;
            let vh = m2[i] / c2;
            v[i] -= mh.zip_map(&vh, |a, b| lr * a / (b.sqrt() + EPS));
        }
        let e = state.energy_at(&v);
        trace.push(e);
        if !e.total.is_finite() {
            return fail(trace);
        }
        if e.total < best.0 {
            best = (e.total, step, v.clone(), e);
        }
    }
    RefineOutcome {
        points: best.2,
        initial,
        final_energy: best.3,
        best_step: best.1,
        trace,
        failed: false,
    }
}

/// `count` evenly spaced indices over `0..m`.
pub fn even_indices(m: usize, count: usize) -> Vec<usize> {
    if m == 0 || count == 0 {
        return Vec::new();
    }
    if count >= m {
        return (0..m).collect();
    }
    if count == 1 {
        return vec![0];
    }
    let mut out: Vec<usize> = (0..count)
        .map(|j| ((j as f64) * (m - 1) as f64 / (count - 1) as f64).round() as usize)
        .collect();
    out.dedup();
    out
}

/// Feature-matched attraction targets: for evenly spaced trajectory indices,
/// the navigable reference point within XZ distance `radius` of `u_i` whose
/// feature is closest to the IDW-interpolated source feature at `t_i`.
/// Indices with no candidate in the disk are dropped.
pub struct FeatureSearch<'a> {
    /// Tree over the target points used for interpolation.
    pub target_tree: &'a KdTree,
    /// Row-major features of the points in `target_tree`.
    pub target_features: &'a [f64],
    pub reference: &'a Scene,
    /// Indices of the reference points eligible as targets.
    pub candidates: &'a [usize],
    /// Planar tree over `candidates`.
    pub candidate_tree: &'a KdTree,
    pub idw_k: usize,
}

impl FeatureSearch<'_> {
    pub fn targets(&self, traj: &[Point], warped: &[Point], radius: f64, count: usize) -> BTreeMap<usize, Point> {
        let dim = self.reference.dim();
        even_indices(traj.len(), count)
            .into_par_iter()
            .filter_map(|i| {
                let f = idw_interpolate(self.target_tree, self.target_features, dim, &traj[i], self.idw_k);
                let q = Point::new(warped[i].x, 0.0, warped[i].z);
                let mut hits = Vec::new();
                self.candidate_tree.for_each_within(&q, radius, |k, _| hits.push(k));
                hits.sort_unstable();
                let mut best: Option<(f64, usize)> = None;
                for k in hits {
                    let idx = self.candidates[k];
                    let d: f64 = self
                        .reference
                        .feature(idx)
                        .iter()
                        .zip(&f)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    if best.is_none_or(|(bd, _)| d < bd) {
                        best = Some((d, idx));
                    }
                }
                best.map(|(_, idx)| (i, *self.reference.point(idx)))
            })
            .collect()
    }
}

/// Warps `traj` through `map` and refines it against the reference scene.
/// In waypoint mode only the waypoint subsequence is optimized.
pub fn transfer(
    traj: &[Point],
    map: &SmoothMap,
    density: &NavDensity,
    search: &FeatureSearch<'_>,
    config: &Config,
) -> Result<RefineOutcome> {
    let anchors = initial_transfer(traj, map);
    let edge_lengths = traj.windows(2).map(|w| (w[1] - w[0]).norm()).collect();
    let sparse_targets = search.targets(traj, &anchors, config.feat_search_radius, config.sparse_count);
    let state = RefinementState {
        variables: anchors.clone(),
        anchors,
        edge_lengths,
        sparse_targets,
        weights: EnergyWeights::from_config(config),
        density: density.clone(),
    };
    Ok(refine(&state, config.refine_steps, config.refine_lr))
}

/// Waypoint-mode transfer: warps and refines only the marked waypoints.
pub fn transfer_waypoints(
    traj: &Trajectory,
    map: &SmoothMap,
    density: &NavDensity,
    search: &FeatureSearch<'_>,
    config: &Config,
) -> Result<RefineOutcome> {
    let waypoints = traj.waypoints().ok_or_else(|| {
        crate::Error::InvalidTrajectory("waypoint mode requires waypoint_indices".into())
    })?;
    transfer(&waypoints, map, density, search, config)
}
