//! Static kd-tree over 3D points.
//!
//! Queries are exact. Ties in distance resolve to the smallest point index so
//! every consumer sees the same neighbor regardless of build order or thread
//! count. Planar (XZ) queries are served by building the tree on points with
//! `y` zeroed, see [`KdTree::planar`].

use crate::Point;

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<[f64; 3]>,
    order: Vec<usize>,
    nodes: Vec<Node>,
    root: usize,
}

#[inline]
fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

#[inline]
fn closer(d: f64, i: usize, best_d: f64, best_i: usize) -> bool {
    d < best_d || (d == best_d && i < best_i)
}

impl KdTree {
    pub fn new(points: &[Point]) -> Self {
        Self::from_coords(points.iter().map(|p| [p.x, p.y, p.z]).collect())
    }

    /// Tree over the XZ projection of `points`; query with [`KdTree::nearest_xz`]
    /// and friends.
    pub fn planar(points: &[Point]) -> Self {
        Self::from_coords(points.iter().map(|p| [p.x, 0.0, p.z]).collect())
    }

    pub fn from_coords(points: Vec<[f64; 3]>) -> Self {
        let mut tree = KdTree {
            order: (0..points.len()).collect(),
            points,
            nodes: Vec::new(),
            root: 0,
        };
        if !tree.points.is_empty() {
            tree.root = tree.build(0, tree.points.len());
        }
        tree
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return self.nodes.len() - 1;
        }
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for &i in &self.order[start..end] {
            for a in 0..3 {
                lo[a] = lo[a].min(self.points[i][a]);
                hi[a] = hi[a].max(self.points[i][a]);
            }
        }
        let axis = (0..3)
            .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])).then(b.cmp(&a)))
            .unwrap_or(0);
        let mid = start + (end - start) / 2;
        let points = &self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            points[a][axis].total_cmp(&points[b][axis]).then(a.cmp(&b))
        });
        let value = self.points[self.order[mid]][axis];
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes.push(Node::Split {
            axis,
            value,
            left,
            right,
        });
        self.nodes.len() - 1
    }

    /// Nearest point index and squared distance.
    pub fn nearest(&self, query: &Point) -> Option<(usize, f64)> {
        self.nearest_coords(&[query.x, query.y, query.z])
    }

    /// Nearest neighbor in the XZ plane; only meaningful for [`KdTree::planar`] trees.
    pub fn nearest_xz(&self, query: &Point) -> Option<(usize, f64)> {
        self.nearest_coords(&[query.x, 0.0, query.z])
    }

    pub fn nearest_coords(&self, q: &[f64; 3]) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let mut best = (usize::MAX, f64::INFINITY);
        self.nearest_rec(self.root, q, &mut best);
        Some(best)
    }

    fn nearest_rec(&self, node: usize, q: &[f64; 3], best: &mut (usize, f64)) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let d = dist2(&self.points[i], q);
                    if closer(d, i, best.1, best.0) {
                        *best = (i, d);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.nearest_rec(near, q, best);
                if diff * diff <= best.1 {
                    self.nearest_rec(far, q, best);
                }
            }
        }
    }

    /// The `k` nearest points sorted by `(distance, index)`.
    pub fn knn(&self, query: &Point, k: usize) -> Vec<(usize, f64)> {
        let q = [query.x, query.y, query.z];
        let mut out: Vec<(usize, f64)> = Vec::with_capacity(k + 1);
        if k == 0 || self.points.is_empty() {
            return out;
        }
        self.knn_rec(self.root, &q, k, &mut out);
        out
    }

    fn knn_rec(&self, node: usize, q: &[f64; 3], k: usize, out: &mut Vec<(usize, f64)>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let d = dist2(&self.points[i], q);
                    if out.len() == k {
                        let (wi, wd) = out[k - 1];
                        if !closer(d, i, wd, wi) {
                            continue;
                        }
                        out.pop();
                    }
                    let pos = out
                        .iter()
                        .position(|&(j, e)| closer(d, i, e, j))
                        .unwrap_or(out.len());
                    out.insert(pos, (i, d));
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.knn_rec(near, q, k, out);
                if out.len() < k || diff * diff <= out[k - 1].1 {
                    self.knn_rec(far, q, k, out);
                }
            }
        }
    }

    /// Calls `visit(index, squared_distance)` for every point with
    /// squared distance `<= radius²`. Visiting order is unspecified.
    pub fn for_each_within(&self, query: &Point, radius: f64, mut visit: impl FnMut(usize, f64)) {
        if self.points.is_empty() {
            return;
        }
        let q = [query.x, query.y, query.z];
        self.within_rec(self.root, &q, radius * radius, &mut visit);
    }

    fn within_rec(&self, node: usize, q: &[f64; 3], r2: f64, visit: &mut impl FnMut(usize, f64)) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let d = dist2(&self.points[i], q);
                    if d <= r2 {
                        visit(i, d);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                if diff <= 0.0 || diff * diff <= r2 {
                    self.within_rec(left, q, r2, visit);
                }
                if diff >= 0.0 || diff * diff <= r2 {
                    self.within_rec(right, q, r2, visit);
                }
            }
        }
    }

    /// Indices within `radius` of `query`, ascending by index.
    pub fn within(&self, query: &Point, radius: f64) -> Vec<usize> {
        let mut hits = Vec::new();
        self.for_each_within(query, radius, |i, _| hits.push(i));
        hits.sort_unstable();
        hits
    }
}

/// Inverse-distance weighted feature interpolation over the `k` nearest scene
/// points, weights `1 / (d + 1e-6)` renormalized to sum to one.
pub fn idw_interpolate(
    tree: &KdTree,
    features: &[f64],
    dim: usize,
    query: &Point,
    k: usize,
) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    let neighbors = tree.knn(query, k);
    let mut total = 0.0;
    for &(i, d2) in &neighbors {
        let w = 1.0 / (d2.sqrt() + 1e-6);
        total += w;
        for (o, f) in out.iter_mut().zip(&features[i * dim..(i + 1) * dim]) {
            *o += w * f;
        }
    }
    if total > 0.0 {
        for o in &mut out {
            *o /= total;
        }
    }
    out
}

/// Farthest-point sampling: starts at `start`, then repeatedly takes the point
/// farthest from the current sample set (ties to the smaller index). Returns
/// at most `count` distinct indices.
pub fn farthest_point_sample(points: &[Point], count: usize, start: usize) -> Vec<usize> {
    let n = points.len();
    if n == 0 || count == 0 {
        return Vec::new();
    }
    if count >= n {
        let mut all: Vec<usize> = (0..n).collect();
        all.swap(0, start.min(n - 1));
        // keep the documented start first, rest ascending
        all[1..].sort_unstable();
        return all;
    }
    let mut chosen = Vec::with_capacity(count);
    let mut nearest = vec![f64::INFINITY; n];
    let mut current = start.min(n - 1);
    loop {
        chosen.push(current);
        if chosen.len() == count {
            break;
        }
        let anchor = points[current];
        let mut best = (f64::NEG_INFINITY, usize::MAX);
        for (i, p) in points.iter().enumerate() {
            let d = (p - anchor).norm_squared();
            if d < nearest[i] {
                nearest[i] = d;
            }
            if nearest[i] > best.0 {
                best = (nearest[i], i);
            }
        }
        if best.0 <= 0.0 {
            break;
        }
        current = best.1;
    }
    chosen
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(n: usize, seed: u64) -> Vec<Point> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                Point::new(
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-2.0..2.0),
                )
            })
            .collect()
    }

    fn brute_nearest(points: &[Point], q: &Point) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        for (i, p) in points.iter().enumerate() {
            let d = (p - q).norm_squared();
            if closer(d, i, best.1, best.0) {
                best = (i, d);
            }
        }
        best
    }

    #[test]
    fn nearest_matches_brute_force() {
        let pts = cloud(500, 1);
        let tree = KdTree::new(&pts);
        for q in cloud(200, 2) {
            assert_eq!(tree.nearest(&q).unwrap(), brute_nearest(&pts, &q));
        }
    }

    #[test]
    fn ties_resolve_to_smallest_index() {
        let mut pts = vec![Point::new(1.0, 0.0, 0.0); 20];
        pts.push(Point::new(-1.0, 0.0, 0.0));
        let tree = KdTree::new(&pts);
        assert_eq!(tree.nearest(&Point::origin()).unwrap().0, 0);
        let knn = tree.knn(&Point::origin(), 3);
        assert_eq!(knn.iter().map(|x| x.0).collect::<Vec<_>>(), vec![0, 1, 2]);
    }

    #[test]
    fn knn_and_radius_match_brute_force() {
        let pts = cloud(400, 3);
        let tree = KdTree::new(&pts);
        for q in cloud(50, 4) {
            let mut all: Vec<(usize, f64)> = pts
                .iter()
                .enumerate()
                .map(|(i, p)| (i, (p - q).norm_squared()))
                .collect();
            all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            assert_eq!(tree.knn(&q, 8), all[..8].to_vec());

            let mut expect: Vec<usize> = all.iter().filter(|x| x.1 <= 0.49).map(|x| x.0).collect();
            expect.sort_unstable();
            assert_eq!(tree.within(&q, 0.7), expect);
        }
    }

    #[test]
    fn planar_ignores_height() {
        let pts = vec![Point::new(0.0, 5.0, 0.0), Point::new(0.5, 0.0, 0.0)];
        let tree = KdTree::planar(&pts);
        assert_eq!(tree.nearest_xz(&Point::new(0.1, 0.0, 0.0)).unwrap().0, 0);
    }

    #[test]
    fn fps_spreads_points() {
        let pts: Vec<Point> = (0..11).map(|i| Point::new(i as f64, 0.0, 0.0)).collect();
        assert_eq!(farthest_point_sample(&pts, 3, 0), vec![0, 10, 5]);
        assert_eq!(farthest_point_sample(&pts, 50, 4).len(), 11);
        let dup = vec![Point::origin(); 5];
        assert_eq!(farthest_point_sample(&dup, 3, 0), vec![0]);
    }

    #[test]
    fn empty_tree() {
        let tree = KdTree::new(&[]);
        assert!(tree.nearest(&Point::origin()).is_none());
        assert!(tree.knn(&Point::origin(), 3).is_empty());
        assert!(tree.within(&Point::origin(), 1.0).is_empty());
    }
}
