//! Object-level scene graph, agglomerative clustering of object nodes and
//! propagation of cluster labels to every scene point.

use std::collections::BTreeMap;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::scene_io::{Scene, OPEN_SPACE};
use crate::{Point, Vec3};

/// One object instance.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectNode {
    pub instance_id: i32,
    pub centroid: Point,
    /// Renormalized mean of the member point features.
    pub feature: Vec<f64>,
    pub point_indices: Vec<usize>,
}

/// Complete graph over object instances; edge weights are centroid distances.
#[derive(Debug, Clone)]
pub struct ObjectGraph {
    pub nodes: Vec<ObjectNode>,
    distances: DMatrix<f64>,
}

impl ObjectGraph {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Edge length `e_ab` (0 on the diagonal).
    pub fn edge_length(&self, a: usize, b: usize) -> f64 {
        self.distances[(a, b)]
    }

    /// All unordered edges `(a, b, length)` with `a < b`.
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        let n = self.len();
        let mut out = Vec::with_capacity(n * n.saturating_sub(1) / 2);
        for a in 0..n {
            for b in a + 1..n {
                out.push((a, b, self.distances[(a, b)]));
            }
        }
        out
    }

    /// Median over nodes of the distance to the nearest other node; 0 for
    /// fewer than two nodes.
    pub fn median_nearest_length(&self) -> f64 {
        let n = self.len();
        if n < 2 {
            return 0.0;
        }
        let nearest: Vec<f64> = (0..n)
            .map(|a| {
                (0..n)
                    .filter(|&b| b != a)
                    .map(|b| self.distances[(a, b)])
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        crate::metrics::median(&nearest)
    }

    /// Copy with every centroid (and so every edge length) multiplied by `s`.
    pub fn scaled(&self, s: f64) -> Self {
        let nodes = self
            .nodes
            .iter()
            .map(|n| ObjectNode {
                centroid: n.centroid * s,
                ..n.clone()
            })
            .collect();
        Self::from_nodes(nodes)
    }

    pub fn centroids(&self) -> Vec<Point> {
        self.nodes.iter().map(|n| n.centroid).collect()
    }

    /// Node index of each instance id.
    pub fn node_of_instance(&self) -> BTreeMap<i32, usize> {
        self.nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.instance_id, i))
            .collect()
    }

    /// Builds a graph directly from nodes (used by tests and synthetic setups).
    pub fn from_nodes(nodes: Vec<ObjectNode>) -> Self {
        let n = nodes.len();
        let distances = DMatrix::from_fn(n, n, |a, b| (nodes[a].centroid - nodes[b].centroid).norm());
        ObjectGraph { nodes, distances }
    }
}

pub(crate) fn normalized_mean<'a>(dim: usize, rows: impl Iterator<Item = &'a [f64]>) -> Vec<f64> {
    let mut mean = vec![0.0; dim];
    let mut first: Option<&[f64]> = None;
    for row in rows {
        first.get_or_insert(row);
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    let norm = mean.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 1e-12 {
        mean.iter().map(|v| v / norm).collect()
    } else {
        first.map(<[f64]>::to_vec).unwrap_or(mean)
    }
}

/// One node per distinct instance id (ascending), fully connected.
pub fn build_object_graph(scene: &Scene) -> Result<ObjectGraph> {
    let mut members: BTreeMap<i32, Vec<usize>> = BTreeMap::new();
    for (i, &id) in scene.instance_ids().iter().enumerate() {
        if id != OPEN_SPACE {
            members.entry(id).or_default().push(i);
        }
    }
    if members.is_empty() {
        return Err(Error::NoObjects);
    }
    let nodes = members
        .into_iter()
        .map(|(instance_id, point_indices)| {
            let sum = point_indices
                .iter()
                .fold(Vec3::zeros(), |acc, &i| acc + scene.point(i).coords);
            let centroid = Point::from(sum / point_indices.len() as f64);
            let feature = normalized_mean(scene.dim(), point_indices.iter().map(|&i| scene.feature(i)));
            ObjectNode {
                instance_id,
                centroid,
                feature,
                point_indices,
            }
        })
        .collect();
    Ok(ObjectGraph::from_nodes(nodes))
}

/// Cluster labels for graph nodes and, once propagated, for scene points.
#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub node_cluster: Vec<usize>,
    /// Per scene point; empty until [`propagate_regions`] runs.
    pub point_cluster: Vec<usize>,
    /// Mean of member node centroids.
    pub centroids: Vec<Point>,
}

impl Clustering {
    pub fn num_clusters(&self) -> usize {
        self.centroids.len()
    }

    /// Node indices of cluster `c`, ascending.
    pub fn members(&self, c: usize) -> Vec<usize> {
        (0..self.node_cluster.len())
            .filter(|&n| self.node_cluster[n] == c)
            .collect()
    }

    /// Scene point indices labeled `c`, ascending.
    pub fn points_of(&self, c: usize) -> Vec<usize> {
        (0..self.point_cluster.len())
            .filter(|&i| self.point_cluster[i] == c)
            .collect()
    }
}

/// Number of clusters for `nodes` objects at the given target size.
pub fn cluster_count(nodes: usize, target_size: usize) -> usize {
    ((nodes as f64 / target_size.max(1) as f64).round() as usize).clamp(1, nodes.max(1))
}

/// Ward agglomerative clustering on node centroids.
///
/// Merges the pair with the smallest Ward increase until the target count is
/// reached; ties go to the lexicographically smallest `(a, b)` pair of active
/// cluster slots. Cluster ids are assigned in order of each cluster's
/// smallest node index.
pub fn cluster_objects(graph: &ObjectGraph, target_size: usize) -> Result<Clustering> {
    if target_size == 0 {
        return Err(Error::InvalidParameter("cluster target size must be >= 1".into()));
    }
    let n = graph.len();
    if n == 0 {
        return Err(Error::NoObjects);
    }
    let want = cluster_count(n, target_size);
    let pts = graph.centroids();

    // Lance-Williams on squared Euclidean distances gives Ward linkage:
    // d(k, a+b) = ((na+nk) d(k,a) + (nb+nk) d(k,b) - nk d(a,b)) / (na+nb+nk)
    let mut d = DMatrix::from_fn(n, n, |a, b| (pts[a] - pts[b]).norm_squared());
    let mut size = vec![1usize; n];
    let mut active = vec![true; n];
    let mut owner: Vec<usize> = (0..n).collect();
    let mut remaining = n;
    while remaining > want {
        let mut best = (f64::INFINITY, usize::MAX, usize::MAX);
        for a in 0..n {
            if !active[a] {
                continue;
            }
            for b in a + 1..n {
                if active[b] && d[(a, b)] < best.0 {
                    best = (d[(a, b)], a, b);
                }
            }
        }
        let (dab, a, b) = best;
        for k in 0..n {
            if !active[k] || k == a || k == b {
                continue;
            }
            let (na, nb, nk) = (size[a] as f64, size[b] as f64, size[k] as f64);
            let merged = ((na + nk) * d[(k, a)] + (nb + nk) * d[(k, b)] - nk * dab) / (na + nb + nk);
            d[(k, a)] = merged;
            d[(a, k)] = merged;
        }
        size[a] += size[b];
        active[b] = false;
        for o in owner.iter_mut() {
            if *o == b {
                *o = a;
            }
        }
        remaining -= 1;
    }

    let mut relabel: BTreeMap<usize, usize> = BTreeMap::new();
    let mut node_cluster = Vec::with_capacity(n);
    for &slot in &owner {
        let next = relabel.len();
        node_cluster.push(*relabel.entry(slot).or_insert(next));
    }
    let c = relabel.len();
    let mut sums = vec![Vec3::zeros(); c];
    let mut counts = vec![0usize; c];
    for (node, &cl) in node_cluster.iter().enumerate() {
        sums[cl] += pts[node].coords;
        counts[cl] += 1;
    }
    let centroids = sums
        .iter()
        .zip(&counts)
        .map(|(s, &k)| Point::from(s / k as f64))
        .collect();
    Ok(Clustering {
        node_cluster,
        point_cluster: Vec::new(),
        centroids,
    })
}

/// Nearest cluster centroid, ties to the smaller cluster id.
pub fn nearest_centroid(centroids: &[Point], p: &Point) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (c, q) in centroids.iter().enumerate() {
        let d = (q - p).norm_squared();
        if d < best.0 {
            best = (d, c);
        }
    }
    best.1
}

/// Labels every scene point: object points take their node's cluster, open
/// space takes the nearest cluster centroid.
pub fn propagate_regions(scene: &Scene, graph: &ObjectGraph, clustering: &Clustering) -> Clustering {
    let node_of = graph.node_of_instance();
    let point_cluster = scene
        .points()
        .iter()
        .zip(scene.instance_ids())
        .map(|(p, id)| match node_of.get(id) {
            Some(&node) => clustering.node_cluster[node],
            None => nearest_centroid(&clustering.centroids, p),
        })
        .collect();
    Clustering {
        point_cluster,
        ..clustering.clone()
    }
}
