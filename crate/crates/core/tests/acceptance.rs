//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

use std::collections::{BTreeMap, BinaryHeap};
use std::cmp::Reverse;
use std::f64::consts::SQRT_2;
use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use nalgebra::{DMatrix, Rotation3, Unit};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use traj_analogy::assembly::{beam_search, CostTables, CostWeights};
use traj_analogy::cli::{cmd_transfer, TransferArgs};
use traj_analogy::graph::{Clustering, ObjectGraph, ObjectNode};
use traj_analogy::maps::fit_tps;
use traj_analogy::matching::{aggregate_clusters, build_affinity, match_graphs, SoftAssignment};
use traj_analogy::metrics::{
    collision_ratio, feature_distance, inlier_ratio, length_distortion, trajectory_aed, waypoint_aed, Obstacles,
};
use traj_analogy::pipeline::{run_transfer, Mode};
use traj_analogy::plan::{astar_cells, OccupancyGrid};
use traj_analogy::refine::{refine, EnergyWeights, NavDensity, RefinementState};
use traj_analogy::scene_io::{save_scene, save_trajectory, OPEN_SPACE};
use traj_analogy::synth::{generate_pair, SynthPair, SynthSpec};
use traj_analogy::{Config, Point, Scene, Trajectory, Vec3};

const PAIRS: u64 = 50;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn rand_point(r: &mut ChaCha8Rng, lo: f64, hi: f64) -> Point {
    Point::new(r.random_range(lo..hi), r.random_range(lo..hi), r.random_range(lo..hi))
}

fn median(v: &[f64]) -> f64 {
    let mut v = v.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

// ---------------------------------------------------------------- sweeps

struct PairResult {
    aed: f64,
    collision: f64,
    initial_collision: f64,
    seconds: f64,
}

fn sweep(pairs: &[SynthPair], config: &Config) -> Result<Vec<PairResult>, String> {
    pairs
        .iter()
        .map(|pair| {
            let t = Instant::now();
            let out = run_transfer(&pair.target, &pair.reference, &pair.source, Mode::Dense, config, 0)
                .map_err(|e| format!("seed {}: {e}", pair.spec.seed))?;
            let seconds = t.elapsed().as_secs_f64();
            let obstacles = Obstacles::new(&pair.reference);
            Ok(PairResult {
                aed: trajectory_aed(&out.trajectory, &pair.gt_reference, config.resample_count),
                collision: collision_ratio(out.trajectory.points(), &obstacles, 0.1),
                initial_collision: collision_ratio(&out.initial, &obstacles, 0.1),
                seconds,
            })
        })
        .collect()
}

fn recovery(results: &[PairResult]) -> Outcome {
    let aeds: Vec<f64> = results.iter().map(|r| r.aed).collect();
    let good = aeds.iter().filter(|&&a| a <= 0.5).count();
    let frac = good as f64 / aeds.len() as f64;
    let med = median(&aeds);
    let slowest = results.iter().map(|r| r.seconds).fold(0.0, f64::max);
    outcome(
        frac >= 0.8 && med <= 0.3 && slowest <= 5.0,
        format!("{good}/{} pairs with AED <= 0.5, median {med:.3} m, slowest pair {slowest:.2} s", aeds.len()),
    )
}

fn collisions(results: &[PairResult]) -> Outcome {
    let mean = results.iter().map(|r| r.collision).sum::<f64>() / results.len() as f64;
    let hit: Vec<&PairResult> = results.iter().filter(|r| r.initial_collision > 0.0).collect();
    let improved = hit.iter().filter(|r| r.collision < r.initial_collision).count();
    outcome(
        mean <= 0.05 && improved == hit.len(),
        format!(
            "mean refined ratio {mean:.4}; refinement lowered the ratio on {improved}/{} pairs with initial collisions",
            hit.len()
        ),
    )
}

// ---------------------------------------------------------------- beam search

fn beam_vs_exhaustive() -> Outcome {
    let mut r = rng(3);
    let mut instances = 0;
    let mut mismatches = 0;
    for trial in 0..400 {
        let slots = r.random_range(1..=3);
        let counts: Vec<usize> = (0..slots).map(|_| r.random_range(1..=5)).collect();
        // coarse values on some trials to provoke ties
        let coarse = trial % 3 == 0;
        let val = |r: &mut ChaCha8Rng| {
            if coarse {
                r.random_range(0..4) as f64 * 0.5
            } else {
                r.random_range(0.0..2.0)
            }
        };
        let feat: Vec<Vec<f64>> = counts.iter().map(|&c| (0..c).map(|_| val(&mut r)).collect()).collect();
        let nav: Vec<Vec<f64>> = counts.iter().map(|&c| (0..c).map(|_| val(&mut r)).collect()).collect();
        let mut distort = BTreeMap::new();
        for a in 0..slots {
            for b in a + 1..slots {
                let m = DMatrix::from_fn(counts[a], counts[b], |_, _| val(&mut r));
                distort.insert((a, b), m);
            }
        }
        let tables = CostTables {
            clusters: (0..slots).collect(),
            feat,
            nav,
            distort,
        };
        let weights = CostWeights {
            feat: r.random_range(0.1..2.0),
            distort: r.random_range(0.0..2.0),
            nav: r.random_range(0.0..2.0),
        };
        let width = r.random_range(125..=200);

        let mut best = f64::INFINITY;
        let mut choice = vec![0; slots];
        'outer: loop {
            best = best.min(tables.evaluate(&choice, &weights).total);
            for s in (0..slots).rev() {
                choice[s] += 1;
                if choice[s] < counts[s] {
                    continue 'outer;
                }
                choice[s] = 0;
            }
            break;
        }
        let beam = beam_search(&tables, &weights, width);
        instances += 1;
        if beam.first().map(|a| a.cost.total) != Some(best) {
            mismatches += 1;
        }
    }
    outcome(mismatches == 0, format!("{}/{instances} instances match the exhaustive minimum", instances - mismatches))
}

// ---------------------------------------------------------------- matching

fn unit_vector(r: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| r.random_range(-1.0..1.0)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn node(id: usize, centroid: Point, feature: Vec<f64>) -> ObjectNode {
    ObjectNode {
        instance_id: id as i32,
        centroid,
        feature,
        point_indices: vec![id],
    }
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

/// Best injection of the smaller side into the larger by enumerating
/// permutations of the larger side.
fn brute_injection(w: &DMatrix<f64>) -> f64 {
    let (rows, cols) = (w.nrows(), w.ncols());
    if rows == 0 || cols == 0 {
        return 0.0;
    }
    let (small, large) = (rows.min(cols), rows.max(cols));
    let mut best = f64::NEG_INFINITY;
    for p in permutations(large) {
        let mut total = 0.0;
        for (i, &j) in p.iter().enumerate().take(small) {
            total += if rows <= cols { w[(i, j)] } else { w[(j, i)] };
        }
        best = best.max(total);
    }
    best
}

/// Up to three clusters of one to five nodes each, labels shuffled.
fn random_clustering(r: &mut ChaCha8Rng) -> Clustering {
    let k = r.random_range(1..=3);
    let mut labels: Vec<usize> = (0..k).flat_map(|c| vec![c; r.random_range(1..=5)]).collect();
    for i in (1..labels.len()).rev() {
        labels.swap(i, r.random_range(0..=i));
    }
    Clustering {
        node_cluster: labels,
        point_cluster: Vec::new(),
        centroids: vec![Point::origin(); k],
    }
}

fn graph_matching(config: &Config) -> Outcome {
    let mut r = rng(4);
    let mut recovered = 0;
    let cases = 50;
    for _ in 0..cases {
        let n = r.random_range(4..=6);
        let centroids: Vec<Point> = (0..n).map(|_| rand_point(&mut r, 0.0, 6.0)).collect();
        let features: Vec<Vec<f64>> = (0..n).map(|_| unit_vector(&mut r, 8)).collect();
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, r.random_range(0..=i));
        }
        let axis = Unit::new_normalize(Vec3::new(r.random_range(-1.0..1.0), 1.0, r.random_range(-1.0..1.0)));
        let rot = Rotation3::from_axis_angle(&axis, r.random_range(0.0..6.0));
        let shift = Vec3::new(r.random_range(-3.0..3.0), 0.0, r.random_range(-3.0..3.0));
        // reference node perm[p] is the image of target node p
        let mut ref_nodes = vec![None; n];
        for p in 0..n {
            ref_nodes[perm[p]] = Some(node(perm[p], rot * centroids[p] + shift, features[p].clone()));
        }
        let tgt = ObjectGraph::from_nodes((0..n).map(|p| node(p, centroids[p], features[p].clone())).collect());
        let reference = ObjectGraph::from_nodes(ref_nodes.into_iter().map(Option::unwrap).collect());
        let k = build_affinity(&tgt, &reference, config.affinity_eps);
        let x = match_graphs(&k, config.power_iterations, config.sinkhorn_sweeps);
        if x.row_argmax() == perm {
            recovered += 1;
        }
    }

    let mut agg_ok = 0;
    let agg_cases = 60;
    for _ in 0..agg_cases {
        let ct = random_clustering(&mut r);
        let cr = random_clustering(&mut r);
        let (nt, nr) = (ct.node_cluster.len(), cr.node_cluster.len());
        // dyadic entries keep every sum exact
        let x = SoftAssignment {
            matrix: DMatrix::from_fn(nt, nr, |_, _| r.random_range(0..256) as f64 / 256.0),
            converged: true,
            iterations: 0,
        };
        let got = aggregate_clusters(&x, &ct, &cr);
        let all = (0..ct.num_clusters()).all(|i| {
            (0..cr.num_clusters()).all(|j| {
                let (mt, mr) = (ct.members(i), cr.members(j));
                let sub = DMatrix::from_fn(mt.len(), mr.len(), |a, b| x.matrix[(mt[a], mr[b])]);
                got[(i, j)] == brute_injection(&sub)
            })
        });
        agg_ok += all as usize;
    }
    outcome(
        recovered * 100 >= 95 * cases && agg_ok == agg_cases,
        format!("planted permutation recovered {recovered}/{cases}; cluster aggregation exact {agg_ok}/{agg_cases}"),
    )
}

// ---------------------------------------------------------------- TPS

fn bbox_diagonal(pts: &[Point]) -> f64 {
    let mut lo = pts[0];
    let mut hi = pts[0];
    for p in pts {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    (hi - lo).norm()
}

fn tps(config: &Config) -> Outcome {
    let mut r = rng(5);
    let mut worst_interp = 0.0f64;
    let mut worst_sim = 0.0f64;
    for _ in 0..20 {
        let n = r.random_range(8..60);
        let src: Vec<Point> = (0..n).map(|_| rand_point(&mut r, -3.0, 3.0)).collect();
        let diag = bbox_diagonal(&src);
        let tgt: Vec<Point> = src.iter().map(|p| p + Vec3::new(r.random_range(-0.4..0.4), r.random_range(-0.4..0.4), r.random_range(-0.4..0.4)) + Vec3::new(0.2 * p.y.sin(), 0.0, 0.1 * p.x * p.z)).collect();
        let map = fit_tps(&src, &tgt, 0.0);
        for (s, t) in src.iter().zip(&tgt) {
            worst_interp = worst_interp.max((map.apply(s) - t).norm() / diag);
        }

        let axis = Unit::new_normalize(Vec3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), 1.0));
        let rot = Rotation3::from_axis_angle(&axis, r.random_range(0.0..6.0));
        let scale = r.random_range(0.5..2.0);
        let shift = Vec3::new(r.random_range(-2.0..2.0), r.random_range(-2.0..2.0), r.random_range(-2.0..2.0));
        let sim = |p: &Point| rot * p * scale + shift;
        let planted: Vec<Point> = src.iter().map(sim).collect();
        for lambda in [0.0, config.tps_regularization] {
            let map = fit_tps(&src, &planted, lambda);
            for _ in 0..50 {
                let q = rand_point(&mut r, -3.0, 3.0);
                worst_sim = worst_sim.max((map.apply(&q) - sim(&q)).norm() / diag);
            }
        }
    }
    outcome(
        worst_interp <= 1e-5 && worst_sim <= 1e-4,
        format!("worst control residual {worst_interp:.2e} x diag, worst held-out similarity error {worst_sim:.2e} x diag"),
    )
}

// ---------------------------------------------------------------- energies

fn random_state(r: &mut ChaCha8Rng, config: &Config) -> RefinementState {
    let m = r.random_range(6..40);
    let mut anchors = Vec::with_capacity(m);
    let mut p = Point::new(r.random_range(0.5..1.5), 0.0, r.random_range(0.5..1.5));
    for _ in 0..m {
        anchors.push(p);
        p += Vec3::new(r.random_range(0.0..0.2), r.random_range(-0.02..0.02), r.random_range(-0.1..0.2));
    }
    let variables: Vec<Point> = anchors
        .iter()
        .map(|a| a + Vec3::new(r.random_range(-0.3..0.3), r.random_range(-0.05..0.05), r.random_range(-0.3..0.3)))
        .collect();
    let edge_lengths = anchors.windows(2).map(|w| (w[1] - w[0]).norm() * r.random_range(0.8..1.2)).collect();
    let mut sparse_targets = BTreeMap::new();
    for _ in 0..r.random_range(1..6) {
        sparse_targets.insert(r.random_range(0..m), rand_point(r, 0.0, 4.0));
    }
    let mut floor = Vec::new();
    for i in 0..30 {
        for j in 0..30 {
            if r.random_bool(0.7) {
                floor.push(Point::new(i as f64 * 0.1 + r.random_range(-0.02..0.02), 0.0, j as f64 * 0.1));
            }
        }
    }
    let weights = EnergyWeights {
        shape: r.random_range(0.1..2.0),
        anchor: r.random_range(0.1..2.0),
        nav: r.random_range(0.1..2.0),
        feat: r.random_range(0.1..2.0),
    };
    RefinementState {
        variables,
        anchors,
        edge_lengths,
        sparse_targets,
        weights,
        density: NavDensity::new(floor, config.kde_bandwidth),
    }
}

fn term(e: &traj_analogy::refine::Energy, k: usize) -> f64 {
    [e.shape, e.anchor, e.nav, e.feat][k]
}

fn gradients(config: &Config) -> Outcome {
    let mut r = rng(6);
    let h = 1e-4;
    let mut worst = 0.0f64;
    let mut increases = 0;
    for _ in 0..20 {
        let state = random_state(&mut r, config);
        let v = state.variables.clone();
        let analytic = state.term_gradients(&v);
        for (k, grad) in analytic.iter().enumerate() {
            let mut num = 0.0;
            let mut diff = 0.0;
            for i in 0..v.len() {
                for a in 0..3 {
                    let mut plus = v.clone();
                    let mut minus = v.clone();
                    plus[i][a] += h;
                    minus[i][a] -= h;
                    let fd = (term(&state.energy_at(&plus), k) - term(&state.energy_at(&minus), k)) / (2.0 * h);
                    num += fd * fd;
                    diff += (fd - grad[i][a]).powi(2);
                }
            }
            let rel = diff.sqrt() / num.sqrt().max(1e-8);
            worst = worst.max(rel);
        }
        let out = refine(&state, config.refine_steps, config.refine_lr);
        if out.final_energy.total > state.energy().total {
            increases += 1;
        }
    }
    outcome(
        worst <= 1e-3 && increases == 0,
        format!("worst relative gradient error {worst:.2e}; refine raised the energy in {increases}/20 states"),
    )
}

// ---------------------------------------------------------------- A*

fn dijkstra(free: &[bool], nx: usize, nz: usize, start: (usize, usize), goal: (usize, usize)) -> Option<f64> {
    // (straight, diagonal) counts, ordered by their length
    let len = |c: (u64, u64)| c.0 as f64 + c.1 as f64 * SQRT_2;
    let idx = |x: usize, z: usize| z * nx + x;
    let mut best: Vec<Option<(u64, u64)>> = vec![None; nx * nz];
    let mut heap = BinaryHeap::new();
    best[idx(start.0, start.1)] = Some((0, 0));
    heap.push(Reverse((OrdF(0.0), start.0, start.1)));
    while let Some(Reverse((OrdF(d), x, z))) = heap.pop() {
        let here = best[idx(x, z)].unwrap();
        if d > len(here) {
            continue;
        }
        if (x, z) == goal {
            return Some(d);
        }
        for dx in -1i64..=1 {
            for dz in -1i64..=1 {
                if dx == 0 && dz == 0 {
                    continue;
                }
                let (ax, az) = (x as i64 + dx, z as i64 + dz);
                if ax < 0 || az < 0 || ax >= nx as i64 || az >= nz as i64 {
                    continue;
                }
                let (ax, az) = (ax as usize, az as usize);
                if !free[idx(ax, az)] {
                    continue;
                }
                let diagonal = dx != 0 && dz != 0;
                if diagonal && (!free[idx(ax, z)] || !free[idx(x, az)]) {
                    continue;
                }
                let next = if diagonal { (here.0, here.1 + 1) } else { (here.0 + 1, here.1) };
                if best[idx(ax, az)].is_none_or(|b| len(next) < len(b)) {
                    best[idx(ax, az)] = Some(next);
                    heap.push(Reverse((OrdF(len(next)), ax, az)));
                }
            }
        }
    }
    None
}

#[derive(PartialEq)]
struct OrdF(f64);
impl Eq for OrdF {}
impl PartialOrd for OrdF {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for OrdF {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

fn astar_optimality() -> Outcome {
    let mut r = rng(7);
    let mut agree = 0;
    let mut with_path = 0;
    for _ in 0..100 {
        let nx = r.random_range(4..40);
        let nz = r.random_range(4..40);
        let density = r.random_range(0.0..0.4);
        let mut free: Vec<bool> = (0..nx * nz).map(|_| !r.random_bool(density)).collect();
        let start = (r.random_range(0..nx), r.random_range(0..nz));
        let goal = (r.random_range(0..nx), r.random_range(0..nz));
        free[start.1 * nx + start.0] = true;
        free[goal.1 * nx + goal.0] = true;
        let grid = OccupancyGrid::from_cells([0.0, 0.0], 1.0, nx, nz, free.clone(), 0.0);
        let oracle = dijkstra(&free, nx, nz, start, goal);
        let found = astar_cells(&grid, start, goal).ok();
        let ok = match (&found, oracle) {
            (Some(p), Some(d)) => {
                with_path += 1;
                let valid = p.cells.first() == Some(&start)
                    && p.cells.last() == Some(&goal)
                    && p.cells.iter().all(|&c| grid.is_free(c))
                    && p.cells.len() as u64 == p.moves.straight + p.moves.diagonal + 1;
                valid && p.moves.length() == d
            }
            (None, None) => true,
            _ => false,
        };
        agree += ok as usize;
    }
    outcome(agree == 100, format!("{agree}/100 grids agree with Dijkstra ({with_path} reachable)"))
}

// ---------------------------------------------------------------- metrics

fn oracle_resample(pts: &[Point], n: usize) -> Vec<Point> {
    let seg: Vec<f64> = pts.windows(2).map(|w| (w[1] - w[0]).norm()).collect();
    let total: f64 = seg.iter().sum();
    (0..n)
        .map(|j| {
            let mut s = total * j as f64 / (n - 1) as f64;
            for (k, &l) in seg.iter().enumerate() {
                if s <= l || k + 1 == seg.len() {
                    let t = if l > 0.0 { (s / l).clamp(0.0, 1.0) } else { 0.0 };
                    return pts[k] + (pts[k + 1] - pts[k]) * t;
                }
                s -= l;
            }
            unreachable!()
        })
        .collect()
}

fn oracle_distances(a: &[Point], b: &[Point], n: usize) -> Vec<f64> {
    let (ra, rb) = (oracle_resample(a, n), oracle_resample(b, n));
    ra.iter().zip(&rb).map(|(p, q)| (p - q).norm()).collect()
}

fn oracle_idw(scene: &Scene, q: &Point, k: usize) -> Vec<f64> {
    let mut d: Vec<(f64, usize)> = scene.points().iter().enumerate().map(|(i, p)| ((p - q).norm_squared(), i)).collect();
    d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let dim = scene.dim();
    let mut out = vec![0.0; dim];
    let mut wsum = 0.0;
    for &(d2, i) in d.iter().take(k) {
        let w = 1.0 / (d2.sqrt() + 1e-6);
        wsum += w;
        for (o, f) in out.iter_mut().zip(&scene.features()[i * dim..(i + 1) * dim]) {
            *o += w * f;
        }
    }
    out.iter().map(|o| o / wsum).collect()
}

fn random_scene(r: &mut ChaCha8Rng) -> Scene {
    let n = r.random_range(50..300);
    let dim = 4;
    let pts: Vec<Point> = (0..n).map(|_| rand_point(r, 0.0, 5.0)).collect();
    let ids: Vec<i32> = (0..n).map(|_| if r.random_bool(0.4) { OPEN_SPACE } else { r.random_range(0..5) }).collect();
    let feats: Vec<f64> = (0..n * dim).map(|_| r.random_range(-1.0..1.0)).collect();
    Scene::new(pts, ids, feats, dim).unwrap()
}

fn random_traj(r: &mut ChaCha8Rng, m: usize, waypoints: bool) -> Trajectory {
    let mut p = rand_point(r, 0.0, 5.0);
    let mut pts = Vec::new();
    for _ in 0..m {
        pts.push(p);
        p += Vec3::new(r.random_range(-0.5..0.5), r.random_range(-0.1..0.1), r.random_range(-0.5..0.5));
    }
    let w = waypoints.then(|| vec![0, m / 3, m - 1]);
    Trajectory::new(pts, w).unwrap()
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * b.abs().max(1.0)
}

fn metric_oracles(config: &Config) -> Outcome {
    let mut r = rng(8);
    let n = config.resample_count;
    let mut failures: Vec<&str> = Vec::new();
    let mut monotone = true;
    for _ in 0..20 {
        let scene = random_scene(&mut r);
        let other = random_scene(&mut r);
        let m = r.random_range(3..30);
        let pred = random_traj(&mut r, m, true);
        let gm = if r.random_bool(0.5) { m } else { r.random_range(3..30) };
        let gt = random_traj(&mut r, gm, true);

        let d = oracle_distances(pred.points(), gt.points(), n);
        if !close(trajectory_aed(&pred, &gt, n), median(&d)) {
            failures.push("trajectory_aed");
        }
        let thresholds = [0.3, 0.75, 1.0, 2.0];
        for (got, &t) in inlier_ratio(&pred, &gt, &thresholds, n).iter().zip(&thresholds) {
            let want = d.iter().filter(|&&x| x <= t).count() as f64 / n as f64;
            if !close(got.ratio, want) {
                failures.push("inlier_ratio");
            }
        }

        let obstacles = Obstacles::new(&scene);
        let objects: Vec<Point> =
            (0..scene.len()).filter(|&i| scene.instance_ids()[i] != OPEN_SPACE).map(|i| *scene.point(i)).collect();
        let mut last = 0.0;
        for t in [0.05, 0.1, 0.3, 0.6, 1.0] {
            let want = pred
                .points()
                .iter()
                .filter(|p| objects.iter().map(|o| (*p - o).norm()).fold(f64::INFINITY, f64::min) < t)
                .count() as f64
                / pred.len() as f64;
            let got = collision_ratio(pred.points(), &obstacles, t);
            if !close(got, want) {
                failures.push("collision_ratio");
            }
            monotone &= got >= last;
            last = got;
        }

        let k = config.idw_k;
        let (ra, rb) = (oracle_resample(gt.points(), n), oracle_resample(pred.points(), n));
        let want = ra
            .iter()
            .zip(&rb)
            .map(|(p, q)| {
                let (fa, fb) = (oracle_idw(&scene, p, k), oracle_idw(&other, q, k));
                fa.iter().zip(&fb).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
            })
            .sum::<f64>()
            / n as f64;
        if !close(feature_distance(&gt, &pred, &scene, &other, k, n), want) {
            failures.push("feature_distance");
        }

        let (a, b) = if gt.len() == pred.len() {
            (gt.points().to_vec(), pred.points().to_vec())
        } else {
            (oracle_resample(gt.points(), n), oracle_resample(pred.points(), n))
        };
        let mut ratios = Vec::new();
        for i in 0..a.len() - 1 {
            let ls = (a[i + 1] - a[i]).norm();
            if ls > 0.0 {
                ratios.push(((b[i + 1] - b[i]).norm() - ls).abs() / ls);
            }
        }
        let want = ratios.iter().sum::<f64>() / ratios.len() as f64;
        if !close(length_distortion(&gt, &pred, n), want) {
            failures.push("length_distortion");
        }

        let (wp, wg) = (pred.waypoints().unwrap(), gt.waypoints().unwrap());
        let want = median(&wp.iter().zip(&wg).map(|(x, y)| (x - y).norm()).collect::<Vec<_>>());
        if !close(waypoint_aed(&wp, &wg).unwrap(), want) {
            failures.push("waypoint_aed");
        }
    }
    failures.dedup();
    outcome(
        failures.is_empty() && monotone,
        if failures.is_empty() {
            format!("all metrics agree on 20 inputs; collision ratio monotone: {monotone}")
        } else {
            format!("disagreement in {failures:?}; collision ratio monotone: {monotone}")
        },
    )
}

// ---------------------------------------------------------------- determinism

fn determinism(pair: &SynthPair, config: &Config) -> Outcome {
    let dir = tempfile::TempDir::new().unwrap();
    let d = dir.path();
    save_scene(d.join("t.atts"), &pair.target).unwrap();
    save_scene(d.join("r.atts"), &pair.reference).unwrap();
    save_trajectory(d.join("s.attt"), &pair.source).unwrap();
    let mut mismatched = Vec::new();
    for mode in [Mode::Dense, Mode::Waypoint] {
        let mut outputs = Vec::new();
        for (run, workers) in [1usize, 1, 8, 8].into_iter().enumerate() {
            let cfg = Config { workers, ..config.clone() };
            let out = d.join(format!("o{run}.attt"));
            let report = d.join(format!("o{run}.json"));
            let args = TransferArgs {
                target: &d.join("t.atts"),
                reference: &d.join("r.atts"),
                trajectory: &d.join("s.attt"),
                mode,
                out: &out,
                report: Some(&report),
                timings: None,
                top: 2,
                gt: &[],
                config: &cfg,
            };
            if let Err(e) = cmd_transfer(&args) {
                return outcome(false, format!("{mode:?} transfer failed: {e}"));
            }
            let files: Vec<PathBuf> = vec![out.clone(), report, traj_analogy::cli::top_path(&out, 1), traj_analogy::cli::top_path(&out, 2)];
            outputs.push(files.iter().map(|f| fs::read(f).ok()).collect::<Vec<_>>());
        }
        if outputs.iter().any(|o| o != &outputs[0]) {
            mismatched.push(format!("{mode:?}"));
        }
    }
    outcome(
        mismatched.is_empty(),
        if mismatched.is_empty() {
            "dense and waypoint outputs, reports and alternatives byte-identical at 1 and 8 workers".into()
        } else {
            format!("outputs differ in {mismatched:?}")
        },
    )
}

// ---------------------------------------------------------------- main

fn main() {
    let config = Config::default();
    let mut lines: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut report = |id: usize, name: &'static str, o: Outcome| {
        println!("[{}] {id:2} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        lines.push((id, name, o));
    };

    report(3, "beam search vs exhaustive", beam_vs_exhaustive());
    report(4, "graph matching recovery", graph_matching(&config));
    report(5, "thin-plate spline", tps(&config));
    report(6, "energy gradients", gradients(&config));
    report(7, "A* optimality", astar_optimality());
    report(8, "metric oracles", metric_oracles(&config));

    let pairs: Vec<SynthPair> = match (0..PAIRS).map(|s| generate_pair(&SynthSpec::random(s), &config)).collect() {
        Ok(p) => p,
        Err(e) => {
            println!("[FAIL] synthetic pair generation: {e}");
            std::process::exit(1);
        }
    };
    report(9, "determinism across workers", determinism(&pairs[9], &config));

    match sweep(&pairs, &config) {
        Ok(base) => {
            report(1, "synthetic recovery", recovery(&base));
            report(2, "collision", collisions(&base));
            let base_median = median(&base.iter().map(|r| r.aed).collect::<Vec<_>>());
            let mut parts = Vec::new();
            let mut pass = true;
            for key in ["assembly_lambda_distort", "assembly_lambda_nav"] {
                let mut cfg = config.clone();
                cfg.set(0, key, "0").unwrap();
                match sweep(&pairs, &cfg) {
                    Ok(res) => {
                        let m = median(&res.iter().map(|r| r.aed).collect::<Vec<_>>());
                        pass &= m > base_median;
                        parts.push(format!("{key}=0 median {m:.3}"));
                    }
                    Err(e) => {
                        pass = false;
                        parts.push(format!("{key}=0 failed: {e}"));
                    }
                }
            }
            report(10, "cost-term ablation", outcome(pass, format!("baseline median {base_median:.3}; {}", parts.join("; "))));
        }
        Err(e) => {
            for (id, name) in [(1, "synthetic recovery"), (2, "collision"), (10, "cost-term ablation")] {
                report(id, name, outcome(false, format!("transfer failed: {e}")));
            }
        }
    }

    let failed = lines.iter().filter(|l| !l.2.pass).count();
    println!("{} of {} criteria passed", lines.len() - failed, lines.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
