//! Cross-scene object matching and cluster-level assignment.
//!
//! Node matches come from spectral matching on a pairwise affinity matrix:
//! the principal eigenvector of `K` (power iteration) reshaped to
//! `N_tgt x N_ref` and balanced with Sinkhorn sweeps. Node scores are then
//! aggregated to cluster pairs by maximum-weight injection, and target
//! clusters receive up to `K` reference clusters by repeated Hungarian solves
//! with earlier choices masked out.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::assign::{max_weight_assignment, max_weight_sum};
use crate::graph::{Clustering, ObjectGraph};
use crate::Point;

/// Pairwise match affinity, indexed by `p * n_ref + q`.
#[derive(Debug, Clone)]
pub struct AffinityMatrix {
    pub n_tgt: usize,
    pub n_ref: usize,
    pub matrix: DMatrix<f64>,
}

impl AffinityMatrix {
    pub fn index(&self, p: usize, q: usize) -> usize {
        p * self.n_ref + q
    }
}

/// Diagonal: `1 + <f_p, f_q>`. Off-diagonal for `p != p'` and `q != q'`:
/// `1 / (|e_pp' - e_qq'| + eps)`. Pairs sharing exactly one endpoint conflict
/// and get 0.
pub fn build_affinity(tgt: &ObjectGraph, reference: &ObjectGraph, eps: f64) -> AffinityMatrix {
    let nt = tgt.len();
    let nr = reference.len();
    let n = nt * nr;
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|a| {
            let (p, q) = (a / nr, a % nr);
            (0..n)
                .map(|b| {
                    let (p2, q2) = (b / nr, b % nr);
                    if a == b {
                        let dot: f64 = tgt.nodes[p]
                            .feature
                            .iter()
                            .zip(&reference.nodes[q].feature)
                            .map(|(x, y)| x * y)
                            .sum();
                        1.0 + dot
                    } else if p != p2 && q != q2 {
                        1.0 / ((tgt.edge_length(p, p2) - reference.edge_length(q, q2)).abs() + eps)
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    let matrix = DMatrix::from_fn(n, n, |a, b| rows[a][b]);
    AffinityMatrix {
        n_tgt: nt,
        n_ref: nr,
        matrix,
    }
}

/// Soft node assignment `X_assign` (`N_tgt x N_ref`).
#[derive(Debug, Clone)]
pub struct SoftAssignment {
    pub matrix: DMatrix<f64>,
    pub converged: bool,
    pub iterations: usize,
}

impl SoftAssignment {
    /// Column of the largest entry per row (ties to the smaller column).
    pub fn row_argmax(&self) -> Vec<usize> {
        self.matrix
            .row_iter()
            .map(|row| {
                let mut best = (f64::NEG_INFINITY, 0);
                for (j, &v) in row.iter().enumerate() {
                    if v > best.0 {
                        best = (v, j);
                    }
                }
                best.1
            })
            .collect()
    }
}

pub fn match_graphs(k: &AffinityMatrix, max_iter: usize, sinkhorn_sweeps: usize) -> SoftAssignment {
    let n = k.matrix.nrows();
    let mut v = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    let mut converged = false;
    let mut iterations = 0;
    for it in 0..max_iter {
        iterations = it + 1;
        let next = &k.matrix * &v;
        let norm = next.norm();
        if !(norm > 0.0 && norm.is_finite()) {
            break;
        }
        let next = next / norm;
        let change = (&next - &v).norm() / v.norm();
        v = next;
        if change < 1e-9 {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("power iteration did not converge within {max_iter} iterations");
    }

    let mut x = DMatrix::from_fn(k.n_tgt, k.n_ref, |p, q| v[p * k.n_ref + q].max(0.0));
    for _ in 0..sinkhorn_sweeps {
        for mut col in x.column_iter_mut() {
            let s = col.sum();
            if s > 0.0 {
                col /= s;
            }
        }
        for mut row in x.row_iter_mut() {
            let s = row.sum();
            if s > 0.0 {
                row /= s;
            }
        }
    }
    SoftAssignment {
        matrix: x,
        converged,
        iterations,
    }
}

/// `X_inter[i, j]`: best total `X_assign` over injections between the node
/// sets of target cluster `i` and reference cluster `j` (the smaller set is
/// injected into the larger).
pub fn aggregate_clusters(x: &SoftAssignment, tgt: &Clustering, reference: &Clustering) -> DMatrix<f64> {
    let ct = tgt.num_clusters();
    let cr = reference.num_clusters();
    let members_t: Vec<Vec<usize>> = (0..ct).map(|i| tgt.members(i)).collect();
    let members_r: Vec<Vec<usize>> = (0..cr).map(|j| reference.members(j)).collect();
    DMatrix::from_fn(ct, cr, |i, j| {
        let sub = DMatrix::from_fn(members_t[i].len(), members_r[j].len(), |a, b| {
            x.matrix[(members_t[i][a], members_r[j][b])]
        });
        max_weight_sum(&sub)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct ClusterMatch {
    pub target: usize,
    pub reference: usize,
    pub score: f64,
    pub rank: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClusterMatchSet {
    pub matches: Vec<ClusterMatch>,
    /// Low-confidence target cluster -> absorbing target cluster.
    pub merged: BTreeMap<usize, usize>,
}

impl ClusterMatchSet {
    /// Matches of target cluster `i` ordered by rank.
    pub fn for_target(&self, i: usize) -> Vec<ClusterMatch> {
        let mut out: Vec<ClusterMatch> = self.matches.iter().copied().filter(|m| m.target == i).collect();
        out.sort_by_key(|m| m.rank);
        out
    }

    /// Cluster that represents `i` after merging.
    pub fn effective(&self, i: usize) -> usize {
        let mut c = i;
        while let Some(&next) = self.merged.get(&c) {
            c = next;
        }
        c
    }

    /// Target clusters that were not merged away, ascending.
    pub fn active_targets(&self, num_targets: usize) -> Vec<usize> {
        (0..num_targets).filter(|i| !self.merged.contains_key(i)).collect()
    }
}

/// Top-`k` cluster assignments with low-confidence merging.
///
/// Each rank solves a maximum-weight assignment of target to reference
/// clusters in which every reference cluster may be used up to
/// `ceil(C_tgt / C_ref)` times, and each target cluster's earlier choices are
/// masked. Target clusters whose rank-0 score falls below `merge_threshold`
/// are merged into the spatially nearest retained cluster.
pub fn select_top_k(
    x_inter: &DMatrix<f64>,
    k: usize,
    merge_threshold: f64,
    target_centroids: &[Point],
) -> ClusterMatchSet {
    let (ct, cr) = x_inter.shape();
    let mut set = ClusterMatchSet::default();
    if ct == 0 || cr == 0 {
        return set;
    }
    let copies = ct.div_ceil(cr);
    let expanded = DMatrix::from_fn(ct, cr * copies, |i, jj| x_inter[(i, jj % cr)]);
    let mut used: Vec<Vec<usize>> = vec![Vec::new(); ct];
    for rank in 0..k.max(1) {
        let picks = max_weight_assignment(&expanded, |i, jj| !used[i].contains(&(jj % cr)));
        let mut any = false;
        for (i, pick) in picks.iter().enumerate() {
            if let Some(jj) = pick {
                let j = jj % cr;
                used[i].push(j);
                set.matches.push(ClusterMatch {
                    target: i,
                    reference: j,
                    score: x_inter[(i, j)],
                    rank: used[i].len() - 1,
                });
                any = true;
            }
        }
        if !any || rank + 1 >= cr {
            break;
        }
    }
    set.matches.sort_by_key(|m| (m.target, m.rank));

    let best_score = |i: usize| {
        set.matches
            .iter()
            .find(|m| m.target == i && m.rank == 0)
            .map(|m| m.score)
            .unwrap_or(f64::NEG_INFINITY)
    };
    let low: Vec<usize> = (0..ct).filter(|&i| best_score(i) < merge_threshold).collect();
    let mut keep: Vec<usize> = (0..ct).filter(|i| !low.contains(i)).collect();
    if keep.is_empty() {
        let top = (0..ct)
            .max_by(|&a, &b| best_score(a).total_cmp(&best_score(b)).then(b.cmp(&a)))
            .unwrap_or(0);
        log::warn!("all cluster matches below threshold; keeping cluster {top}");
        keep.push(top);
    }
    for &i in &low {
        if keep.contains(&i) {
            continue;
        }
        let absorb = keep
            .iter()
            .copied()
            .min_by(|&a, &b| {
                let da = (target_centroids[a] - target_centroids[i]).norm_squared();
                let db = (target_centroids[b] - target_centroids[i]).norm_squared();
                da.total_cmp(&db).then(a.cmp(&b))
            })
            .unwrap();
        set.merged.insert(i, absorb);
    }
    set.matches.retain(|m| !set.merged.contains_key(&m.target));
    set
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::ObjectNode;
    use crate::Vec3;
    use rand::{seq::SliceRandom, Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn graph(points: &[Point], features: &[Vec<f64>]) -> ObjectGraph {
        ObjectGraph::from_nodes(
            points
                .iter()
                .zip(features)
                .enumerate()
                .map(|(i, (p, f))| ObjectNode {
                    instance_id: i as i32,
                    centroid: *p,
                    feature: f.clone(),
                    point_indices: vec![],
                })
                .collect(),
        )
    }

    fn unit(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter().map(|x| x / n).collect()
    }

    #[test]
    fn affinity_entries() {
        let f = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let a = graph(&[Point::origin(), Point::new(3.0, 0.0, 0.0)], &f);
        let b = graph(&[Point::origin(), Point::new(0.0, 0.0, 3.0)], &f);
        let k = build_affinity(&a, &b, 1e-3);
        assert_eq!(k.matrix[(k.index(0, 0), k.index(0, 0))], 2.0);
        assert_eq!(k.matrix[(k.index(0, 1), k.index(0, 1))], 1.0);
        assert!((k.matrix[(k.index(0, 0), k.index(1, 1))] - 1000.0).abs() < 1e-9);
        assert_eq!(k.matrix[(k.index(0, 0), k.index(0, 1))], 0.0);
        assert_eq!(k.matrix[(k.index(0, 0), k.index(1, 0))], 0.0);
    }

    #[test]
    fn affinity_matches_direct_formula_and_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pa: Vec<Point> = (0..3).map(|_| Point::new(rng.random_range(0.0..5.0), 0.0, rng.random_range(0.0..5.0))).collect();
        let pb: Vec<Point> = (0..3).map(|_| Point::new(rng.random_range(0.0..5.0), 0.0, rng.random_range(0.0..5.0))).collect();
        let fa: Vec<Vec<f64>> = (0..3).map(|_| unit(4, &mut rng)).collect();
        let fb: Vec<Vec<f64>> = (0..3).map(|_| unit(4, &mut rng)).collect();
        let k = build_affinity(&graph(&pa, &fa), &graph(&pb, &fb), 1e-3);
        for p in 0..3 {
            for q in 0..3 {
                for p2 in 0..3 {
                    for q2 in 0..3 {
                        let v = k.matrix[(p * 3 + q, p2 * 3 + q2)];
                        let expect = if p == p2 && q == q2 {
                            1.0 + fa[p].iter().zip(&fb[q]).map(|(x, y)| x * y).sum::<f64>()
                        } else if p != p2 && q != q2 {
                            let ea = ((pa[p].x - pa[p2].x).powi(2) + (pa[p].z - pa[p2].z).powi(2)).sqrt();
                            let eb = ((pb[q].x - pb[q2].x).powi(2) + (pb[q].z - pb[q2].z).powi(2)).sqrt();
                            1.0 / ((ea - eb).abs() + 1e-3)
                        } else {
                            0.0
                        };
                        assert!((v - expect).abs() <= 1e-9 * expect.abs().max(1.0));
                    }
                }
            }
        }
        assert_eq!((&k.matrix - k.matrix.transpose()).abs().max(), 0.0);
    }

    #[test]
    fn single_node_assignment() {
        let g = graph(&[Point::origin()], &[vec![1.0]]);
        let x = match_graphs(&build_affinity(&g, &g, 1e-3), 200, 10);
        assert_eq!(x.matrix.shape(), (1, 1));
        assert!((x.matrix[(0, 0)] - 1.0).abs() < 1e-12);
    }

    /// Builds an isomorphic pair related by `perm`: reference node `perm[p]`
    /// is the image of target node `p` under a rigid motion.
    fn isomorphic_pair(n: usize, rng: &mut ChaCha8Rng) -> (ObjectGraph, ObjectGraph, Vec<usize>) {
        let pts: Vec<Point> = (0..n)
            .map(|_| Point::new(rng.random_range(0.0..6.0), rng.random_range(0.0..1.0), rng.random_range(0.0..6.0)))
            .collect();
        let feats: Vec<Vec<f64>> = (0..n).map(|_| unit(8, rng)).collect();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(rng);
        let rot = nalgebra::Rotation3::from_axis_angle(&nalgebra::Vector3::y_axis(), rng.random_range(0.0..std::f64::consts::TAU));
        let shift = Vec3::new(rng.random_range(-3.0..3.0), 0.0, rng.random_range(-3.0..3.0));
        let mut ref_pts = vec![Point::origin(); n];
        let mut ref_feats = vec![vec![]; n];
        for p in 0..n {
            ref_pts[perm[p]] = rot * pts[p] + shift;
            ref_feats[perm[p]] = feats[p].clone();
        }
        (graph(&pts, &feats), graph(&ref_pts, &ref_feats), perm)
    }

    #[test]
    fn recovers_planted_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut hits = 0;
        for trial in 0..50 {
            let n = 4 + trial % 3;
            let (a, b, perm) = isomorphic_pair(n, &mut rng);
            let x = match_graphs(&build_affinity(&a, &b, 1e-3), 200, 10);
            if x.row_argmax() == perm {
                hits += 1;
            }
            for row in x.matrix.row_iter() {
                assert!(row.sum() <= 1.0 + 1e-6);
                assert!(row.iter().all(|&v| v >= 0.0));
            }
        }
        assert!(hits >= 48, "recovered {hits}/50");
    }

    #[test]
    fn argmax_agrees_with_best_permutation_score() {
        // 3 nodes, features orthogonal between true pairs' complements
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (a, b, perm) = isomorphic_pair(3, &mut rng);
        let k = build_affinity(&a, &b, 1e-3);
        // brute force: score of assignment vector x_perm is x^T K x
        let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        let best = perms
            .iter()
            .max_by(|p, q| {
                let s = |pp: &[usize; 3]| {
                    let idx: Vec<usize> = (0..3).map(|i| i * 3 + pp[i]).collect();
                    idx.iter().flat_map(|&u| idx.iter().map(move |&w| (u, w))).map(|(u, w)| k.matrix[(u, w)]).sum::<f64>()
                };
                s(p).total_cmp(&s(q))
            })
            .unwrap();
        let x = match_graphs(&k, 200, 10);
        assert_eq!(x.row_argmax(), best.to_vec());
        assert_eq!(best.to_vec(), perm);
    }

    fn clustering(labels: Vec<usize>) -> Clustering {
        let c = labels.iter().max().map(|m| m + 1).unwrap_or(0);
        Clustering {
            node_cluster: labels,
            point_cluster: vec![],
            centroids: vec![Point::origin(); c],
        }
    }

    #[test]
    fn aggregation_small_cases() {
        let x = SoftAssignment {
            matrix: DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]),
            converged: true,
            iterations: 1,
        };
        let one = aggregate_clusters(&x, &clustering(vec![0, 0]), &clustering(vec![0, 0]));
        assert_eq!(one.shape(), (1, 1));
        assert_eq!(one[(0, 0)], 2.0);
        let singletons = aggregate_clusters(&x, &clustering(vec![0, 1]), &clustering(vec![0, 1]));
        assert_eq!(singletons, x.matrix);
    }

    #[test]
    fn top_k_two_by_two() {
        let x = DMatrix::from_row_slice(2, 2, &[5.0, 1.0, 1.0, 5.0]);
        let set = select_top_k(&x, 2, 0.0, &[Point::origin(), Point::new(1.0, 0.0, 0.0)]);
        let r0 = set.for_target(0);
        let r1 = set.for_target(1);
        assert_eq!((r0[0].reference, r0[1].reference), (0, 1));
        assert_eq!((r1[0].reference, r1[1].reference), (1, 0));
        assert!(r0[0].score >= r0[1].score);
    }

    #[test]
    fn top_k_identity_on_diagonal_dominant() {
        let x = DMatrix::from_row_slice(3, 3, &[3.0, 1.0, 0.5, 0.2, 2.5, 1.0, 0.9, 0.1, 2.0]);
        let set = select_top_k(&x, 1, 0.0, &[Point::origin(); 3]);
        let picks: Vec<usize> = (0..3).map(|i| set.for_target(i)[0].reference).collect();
        assert_eq!(picks, vec![0, 1, 2]);
    }

    #[test]
    fn low_confidence_cluster_merges_into_nearest() {
        let x = DMatrix::from_row_slice(3, 3, &[3.0, 0.1, 0.1, 0.1, 3.0, 0.1, 0.1, 0.1, 0.2]);
        let centroids = [Point::new(0.0, 0.0, 0.0), Point::new(10.0, 0.0, 0.0), Point::new(8.0, 0.0, 0.0)];
        let set = select_top_k(&x, 1, 0.3 * 3.0, &centroids);
        assert_eq!(set.merged.get(&2), Some(&1));
        assert_eq!(set.effective(2), 1);
        assert!(set.for_target(2).is_empty());
        assert_eq!(set.active_targets(3), vec![0, 1]);
    }

    #[test]
    fn all_below_threshold_keeps_best() {
        let x = DMatrix::from_row_slice(2, 2, &[0.1, 0.0, 0.0, 0.2]);
        let set = select_top_k(&x, 1, 10.0, &[Point::origin(), Point::new(1.0, 0.0, 0.0)]);
        assert_eq!(set.active_targets(2), vec![1]);
        assert_eq!(set.merged.get(&0), Some(&1));
    }

    #[test]
    fn more_targets_than_references() {
        let x = DMatrix::from_row_slice(3, 1, &[1.0, 2.0, 3.0]);
        let set = select_top_k(&x, 1, 0.0, &[Point::origin(); 3]);
        for i in 0..3 {
            assert_eq!(set.for_target(i)[0].reference, 0);
        }
    }
}
