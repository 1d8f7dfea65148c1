//! End-to-end transfer of a trajectory from the target scene into the
//! reference scene.

use std::time::Instant;

use serde::Serialize;

use crate::assembly::{beam_search, build_cost_tables, merge_global_map, trajectory_cluster_labels, Assignment, ClusterInput, CostWeights};
use crate::config::Config;
use crate::error::{Error, Result};
use crate::graph::{build_object_graph, cluster_objects, propagate_regions, Clustering, ObjectGraph};
use crate::maps::{fit_cluster_candidates, ClusterCloud, ClusterPair, MapCandidate, SimilaritySeed, SmoothMap};
use crate::matching::{aggregate_clusters, build_affinity, match_graphs, select_top_k, ClusterMatch, ClusterMatchSet};
use crate::metrics::MetricReport;
use crate::plan::{build_grid, plan_through};
use crate::refine::{transfer, Energy, FeatureSearch, NavDensity, RefineOutcome};
use crate::scene_io::{voxel_downsample, Scene, Trajectory};
use crate::spatial::KdTree;
use crate::Point;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Dense,
    Waypoint,
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dense" => Ok(Mode::Dense),
            "waypoint" => Ok(Mode::Waypoint),
            other => Err(Error::InvalidParameter(format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CandidateSummary {
    pub target_cluster: usize,
    pub reference_cluster: usize,
    pub match_rank: usize,
    pub seed: SimilaritySeed,
    pub feat_cost: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct AssignmentSummary {
    #[serde(flatten)]
    pub assignment: Assignment,
    pub selected: Vec<CandidateSummary>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RefinementSummary {
    pub initial: Energy,
    pub final_energy: Energy,
    pub best_step: usize,
    pub failed: bool,
    pub sparse_targets: usize,
    pub trace: Vec<Energy>,
}

/// Deterministic record of one run. Wall-clock timings are kept apart in
/// [`Timings`].
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub config: serde_json::Map<String, serde_json::Value>,
    pub mode: Mode,
    pub target_clusters: usize,
    pub reference_clusters: usize,
    pub matches: Vec<ClusterMatch>,
    pub merged: Vec<(usize, usize)>,
    pub assignment: AssignmentSummary,
    pub alternatives: Vec<AssignmentSummary>,
    pub refinement: RefinementSummary,
    pub output_points: usize,
    pub metrics: Option<MetricReport>,
    pub warnings: Vec<String>,
}

/// Wall-clock stage durations in milliseconds, kept apart from the report so
/// the report stays reproducible.
#[derive(Debug, Clone, Default, Serialize)]
pub struct Timings {
    pub workers: usize,
    pub stages: Vec<(String, f64)>,
}

impl Timings {
    fn record<T>(&mut self, stage: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let t = Instant::now();
        let out = f().map_err(|e| e.in_stage(stage));
        self.stages.push((stage.to_string(), t.elapsed().as_secs_f64() * 1e3));
        out
    }

    pub fn total_ms(&self) -> f64 {
        self.stages.iter().map(|s| s.1).sum()
    }
}

#[derive(Debug, Clone)]
pub struct TransferOutput {
    pub trajectory: Trajectory,
    /// Trajectories from the next-best assignments.
    pub alternatives: Vec<Trajectory>,
    /// Warped trajectory before refinement (dense mode) or warped waypoints.
    pub initial: Vec<Point>,
    pub global_map: SmoothMap,
    pub report: RunReport,
    pub timings: Timings,
}

/// Scene analysis shared by all stages.
struct Analysis {
    scene: Scene,
    graph: ObjectGraph,
    clustering: Clustering,
}

fn analyse(scene: &Scene, config: &Config) -> Result<Analysis> {
    let scene = voxel_downsample(scene, config.voxel_size)?;
    let graph = build_object_graph(&scene)?;
    let clustering = cluster_objects(&graph, config.cluster_target_size)?;
    let clustering = propagate_regions(&scene, &graph, &clustering);
    Ok(Analysis {
        scene,
        graph,
        clustering,
    })
}

/// `graph` rescaled so its median nearest-neighbour distance equals that of
/// `like`.
fn scale_to(graph: &ObjectGraph, like: &ObjectGraph) -> ObjectGraph {
    let (a, b) = (graph.median_nearest_length(), like.median_nearest_length());
    if a > 1e-9 && b > 1e-9 {
        graph.scaled(b / a)
    } else {
        graph.clone()
    }
}

/// One merged target cluster with its candidate pool.
struct ClusterPool {
    cluster: usize,
    points: Vec<Point>,
    candidates: Vec<MapCandidate>,
}

/// Runs the full pipeline on a pool with `config.workers` threads.
pub fn run_transfer(
    target: &Scene,
    reference: &Scene,
    trajectory: &Trajectory,
    mode: Mode,
    config: &Config,
    alternatives: usize,
) -> Result<TransferOutput> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::ThreadPool(e.to_string()))?;
    pool.install(|| transfer_in_pool(target, reference, trajectory, mode, config, alternatives))
}

fn transfer_in_pool(
    target: &Scene,
    reference: &Scene,
    trajectory: &Trajectory,
    mode: Mode,
    config: &Config,
    alternatives: usize,
) -> Result<TransferOutput> {
    let mut timings = Timings {
        workers: config.workers,
        stages: Vec::new(),
    };
    let mut warnings = Vec::new();
    if mode == Mode::Waypoint && trajectory.waypoint_indices().is_none() {
        return Err(Error::InvalidTrajectory("waypoint mode requires waypoint_indices".into()).in_stage("input"));
    }

    let (tgt, refr) = timings.record("analysis", || {
        let (a, b) = rayon::join(|| analyse(target, config), || analyse(reference, config));
        Ok((a?, b?))
    })?;

    let matches = timings.record("matching", || {
        let k = build_affinity(&scale_to(&tgt.graph, &refr.graph), &refr.graph, config.affinity_eps);
        let x = match_graphs(&k, config.power_iterations, config.sinkhorn_sweeps);
        if !x.converged {
            warnings.push(format!("spectral matching stopped after {} iterations without converging", x.iterations));
        }
        let inter = aggregate_clusters(&x, &tgt.clustering, &refr.clustering);
        let threshold = config.merge_threshold_ratio * inter.iter().fold(0.0f64, |a, &b| a.max(b));
        Ok(select_top_k(&inter, config.top_k, threshold, &tgt.clustering.centroids))
    })?;
    for (from, to) in &matches.merged {
        warnings.push(format!("target cluster {from} merged into {to} (low match confidence)"));
    }

    let pools = timings.record("maps", || Ok(fit_pools(&tgt, &refr, &matches, config)))?;

    let ranked = timings.record("assembly", || {
        let scene_tree = KdTree::new(tgt.scene.points());
        let labels = trajectory_cluster_labels(trajectory.points(), &scene_tree, &tgt.clustering.point_cluster, |c| {
            matches.effective(c)
        });
        let nav: Vec<Point> = refr.scene.open_space_indices().iter().map(|&i| *refr.scene.point(i)).collect();
        if nav.is_empty() {
            return Err(Error::NoNavigablePoints);
        }
        let nav_xz = KdTree::planar(&nav);
        let inputs: Vec<ClusterInput<'_>> = pools
            .iter()
            .map(|p| ClusterInput {
                cluster: p.cluster,
                candidates: &p.candidates,
                points: &p.points,
                traj_points: trajectory
                    .points()
                    .iter()
                    .zip(&labels)
                    .filter(|(_, &l)| l == p.cluster)
                    .map(|(t, _)| *t)
                    .collect(),
            })
            .collect();
        for p in &pools {
            if p.candidates.is_empty() {
                warnings.push(format!("target cluster {} has no candidate maps", p.cluster));
            }
        }
        let tables = build_cost_tables(&inputs, &nav_xz, config);
        let ranked = beam_search(&tables, &CostWeights::from_config(config), config.beam_width);
        if ranked.is_empty() {
            return Err(Error::InvalidParameter("no cluster has candidate maps".into()));
        }
        Ok(ranked)
    })?;

    let slot_pools: Vec<&ClusterPool> = ranked[0]
        .clusters
        .iter()
        .map(|c| pools.iter().find(|p| p.cluster == *c).unwrap())
        .collect();
    let cand_refs: Vec<&[MapCandidate]> = slot_pools.iter().map(|p| p.candidates.as_slice()).collect();
    let point_refs: Vec<&[Point]> = slot_pools.iter().map(|p| p.points.as_slice()).collect();
    let n_maps = (alternatives + 1).min(ranked.len());
    if alternatives + 1 > ranked.len() {
        warnings.push(format!(
            "requested {} alternatives but the beam holds {} assignments",
            alternatives,
            ranked.len() - 1
        ));
    }
    let maps: Vec<SmoothMap> = timings.record("global_map", || {
        Ok(ranked[..n_maps]
            .iter()
            .map(|a| merge_global_map(a, &cand_refs, &point_refs, config.per_cluster_samples, config.tps_regularization))
            .collect())
    })?;

    let nav_idx = refr.scene.open_space_indices();
    let nav_pts: Vec<Point> = nav_idx.iter().map(|&i| *refr.scene.point(i)).collect();
    let density = timings.record("density", || Ok(NavDensity::new(nav_pts.clone(), config.kde_bandwidth)))?;
    let tgt_nav = tgt.scene.open_space_indices();
    let tgt_nav_pts: Vec<Point> = tgt_nav.iter().map(|&i| *tgt.scene.point(i)).collect();
    let tgt_nav_feats: Vec<f64> = tgt_nav.iter().flat_map(|&i| tgt.scene.feature(i).iter().copied()).collect();
    let target_tree = KdTree::new(&tgt_nav_pts);
    let candidate_tree = KdTree::planar(&nav_pts);
    let search = FeatureSearch {
        target_tree: &target_tree,
        target_features: &tgt_nav_feats,
        reference: &refr.scene,
        candidates: &nav_idx,
        candidate_tree: &candidate_tree,
        idw_k: config.idw_k,
    };
    let source_points: Vec<Point> = match mode {
        Mode::Dense => trajectory.points().to_vec(),
        Mode::Waypoint => trajectory.waypoints().unwrap(),
    };
    let outcomes: Vec<(RefineOutcome, usize)> = timings.record("refine", || {
        maps.iter()
            .map(|m| {
                let anchors = m.apply_all(&source_points);
                let sparse = search
                    .targets(&source_points, &anchors, config.feat_search_radius, config.sparse_count)
                    .len();
                transfer(&source_points, m, &density, &search, config).map(|o| (o, sparse))
            })
            .collect()
    })?;
    for (k, (o, _)) in outcomes.iter().enumerate() {
        if o.failed {
            warnings.push(format!("refinement of assignment {k} hit a non-finite energy; using the unrefined warp"));
        }
    }

    let trajectories: Vec<Trajectory> = timings.record("output", || match mode {
        Mode::Dense => outcomes
            .iter()
            .map(|(o, _)| Trajectory::from_points_dedup(o.points.clone(), trajectory.waypoint_indices().map(|w| w.to_vec())))
            .collect(),
        Mode::Waypoint => {
            let grid = build_grid(&refr.scene, config.grid_resolution, config.grid_inflation)?;
            outcomes.iter().map(|(o, _)| plan_through(&grid, &o.points, config.snap_radius)).collect()
        }
    })?;

    let summarize = |a: &Assignment| AssignmentSummary {
        assignment: a.clone(),
        selected: a
            .clusters
            .iter()
            .zip(&a.choices)
            .map(|(c, &k)| {
                let cand = &pools.iter().find(|p| p.cluster == *c).unwrap().candidates[k];
                CandidateSummary {
                    target_cluster: cand.target_cluster,
                    reference_cluster: cand.reference_cluster,
                    match_rank: cand.rank,
                    seed: cand.seed.clone(),
                    feat_cost: cand.feat_cost,
                    degenerate: cand.map.degenerate,
                }
            })
            .collect(),
    };
    let (main, sparse) = &outcomes[0];
    // the worker count cannot change results and lives in the timings instead
    let config_map = config
        .entries()
        .into_iter()
        .filter(|(k, _)| *k != "workers")
        .map(|(k, v)| (k.to_string(), serde_json::Value::String(v)))
        .collect();
    let report = RunReport {
        config: config_map,
        mode,
        target_clusters: tgt.clustering.num_clusters(),
        reference_clusters: refr.clustering.num_clusters(),
        matches: matches.matches.clone(),
        merged: matches.merged.iter().map(|(a, b)| (*a, *b)).collect(),
        assignment: summarize(&ranked[0]),
        alternatives: ranked[1..n_maps].iter().map(summarize).collect(),
        refinement: RefinementSummary {
            initial: main.initial,
            final_energy: main.final_energy,
            best_step: main.best_step,
            failed: main.failed,
            sparse_targets: *sparse,
            trace: main.trace.clone(),
        },
        output_points: trajectories[0].len(),
        metrics: None,
        warnings,
    };
    let initial = maps[0].apply_all(&source_points);
    let mut trajectories = trajectories.into_iter();
    Ok(TransferOutput {
        trajectory: trajectories.next().unwrap(),
        alternatives: trajectories.collect(),
        initial,
        global_map: maps.into_iter().next().unwrap(),
        report,
        timings,
    })
}

fn fit_pools(tgt: &Analysis, refr: &Analysis, matches: &ClusterMatchSet, config: &Config) -> Vec<ClusterPool> {
    let ref_points = refr.scene.points();
    let ref_tree = KdTree::new(ref_points);
    let ref_centroids = refr.graph.centroids();
    let tgt_centroids = tgt.graph.centroids();
    let ref_clouds: Vec<(ClusterCloud, Vec<Point>)> = (0..refr.clustering.num_clusters())
        .map(|j| {
            let cloud = ClusterCloud::from_scene(&refr.scene, &refr.clustering.points_of(j));
            let nodes = refr.clustering.members(j).iter().map(|&n| ref_centroids[n]).collect();
            (cloud, nodes)
        })
        .collect();
    let n_tgt = tgt.clustering.num_clusters();
    matches
        .active_targets(n_tgt)
        .into_iter()
        .map(|i| {
            let members: Vec<usize> = (0..n_tgt).filter(|&c| matches.effective(c) == i).collect();
            let point_indices: Vec<usize> = (0..tgt.scene.len())
                .filter(|&p| members.contains(&tgt.clustering.point_cluster[p]))
                .collect();
            let nodes: Vec<Point> = (0..tgt.graph.len())
                .filter(|&n| members.contains(&tgt.clustering.node_cluster[n]))
                .map(|n| tgt_centroids[n])
                .collect();
            let cloud = ClusterCloud::from_scene(&tgt.scene, &point_indices);
            let mut candidates = Vec::new();
            for m in matches.for_target(i) {
                let (rc, rn) = &ref_clouds[m.reference];
                let pair = ClusterPair {
                    target_cluster: i,
                    reference_cluster: m.reference,
                    rank: m.rank,
                    tgt: &cloud,
                    reference: rc,
                    tgt_nodes: &nodes,
                    ref_nodes: rn,
                    ref_scene_points: ref_points,
                    ref_scene_tree: &ref_tree,
                };
                candidates.extend(fit_cluster_candidates(&pair, config));
            }
            ClusterPool {
                cluster: i,
                points: cloud.points.clone(),
                candidates,
            }
        })
        .collect()
}
