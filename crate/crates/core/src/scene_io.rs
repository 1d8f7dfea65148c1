//! Scene and trajectory types with their binary file formats.
//!
//! ATTS (scene), little-endian:
//!
//! ```text
//! "ATTS" | u32 version = 1 | u64 N | u32 D
//! N x 3 f32 positions | N i32 instance ids | N x D f32 features
//! ```
//!
//! ATTT (trajectory), little-endian:
//!
//! ```text
//! "ATTT" | u32 version = 1 | u64 M | M x 3 f32 positions
//! u32 W | W u64 waypoint indices
//! ```
//!
//! Every stored float is an IEEE-754 binary32; in memory the values are held
//! as `f64` but always remain exactly representable in `f32`, so encoding is
//! lossless and `decode(encode(x)) == x`.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::Point;

pub const SCENE_MAGIC: &[u8; 4] = b"ATTS";
pub const TRAJECTORY_MAGIC: &[u8; 4] = b"ATTT";
pub const FORMAT_VERSION: u32 = 1;

/// Instance id carried by open-space (navigable) points.
pub const OPEN_SPACE: i32 = -1;

/// Vectors whose norm is already within this distance of one are kept as-is,
/// which makes normalization idempotent on re-load.
const UNIT_TOLERANCE: f64 = 1e-6;

#[inline]
fn f32_exact(v: f64) -> f64 {
    v as f32 as f64
}

fn round_point(p: &Point) -> Point {
    Point::new(f32_exact(p.x), f32_exact(p.y), f32_exact(p.z))
}

/// Instance-labeled point cloud with unit-norm per-point features.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    points: Vec<Point>,
    instance_ids: Vec<i32>,
    features: Vec<f64>,
    dim: usize,
    voxel_size: Option<f64>,
}

/// Normalizes `feature` in place to unit length (binary32 precision).
fn normalize_feature(feature: &mut [f64]) -> Result<()> {
    let norm = feature.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !norm.is_finite() || norm == 0.0 {
        return Err(Error::InvalidScene("zero-norm or non-finite feature vector".into()));
    }
    if (norm - 1.0).abs() <= UNIT_TOLERANCE {
        for v in feature.iter_mut() {
            *v = f32_exact(*v);
        }
    } else {
        for v in feature.iter_mut() {
            *v = f32_exact(*v / norm);
        }
    }
    Ok(())
}

impl Scene {
    /// Builds a validated scene. Positions are rounded to binary32 and
    /// features normalized to unit length.
    pub fn new(
        points: Vec<Point>,
        instance_ids: Vec<i32>,
        mut features: Vec<f64>,
        dim: usize,
    ) -> Result<Self> {
        let n = points.len();
        if n == 0 {
            return Err(Error::InvalidScene("scene has no points".into()));
        }
        if dim == 0 {
            return Err(Error::InvalidScene("feature dimension must be >= 1".into()));
        }
        if instance_ids.len() != n || features.len() != n * dim {
            return Err(Error::InvalidScene(format!(
                "array lengths disagree: {n} points, {} ids, {} feature values for D = {dim}",
                instance_ids.len(),
                features.len()
            )));
        }
        if let Some(bad) = instance_ids.iter().find(|&&id| id < OPEN_SPACE) {
            return Err(Error::InvalidScene(format!("instance id {bad} below -1")));
        }
        if points.iter().any(|p| !p.coords.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidScene("non-finite position".into()));
        }
        for chunk in features.chunks_mut(dim) {
            normalize_feature(chunk)?;
        }
        Ok(Scene {
            points: points.iter().map(round_point).collect(),
            instance_ids,
            features,
            dim,
            voxel_size: None,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn point(&self, i: usize) -> &Point {
        &self.points[i]
    }

    pub fn instance_ids(&self) -> &[i32] {
        &self.instance_ids
    }

    pub fn instance_id(&self, i: usize) -> i32 {
        self.instance_ids[i]
    }

    pub fn is_open_space(&self, i: usize) -> bool {
        self.instance_ids[i] == OPEN_SPACE
    }

    /// Flat `N x D` feature array.
    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn feature(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    /// Voxel size the scene was downsampled at; not stored in ATTS files.
    pub fn voxel_size(&self) -> Option<f64> {
        self.voxel_size
    }

    pub fn object_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.is_open_space(i)).collect()
    }

    pub fn open_space_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.is_open_space(i)).collect()
    }

    /// Axis-aligned bounding box `(min, max)`.
    pub fn bounds(&self) -> (Point, Point) {
        bounds_of(&self.points)
    }
}

pub fn bounds_of(points: &[Point]) -> (Point, Point) {
    let mut lo = Point::new(f64::INFINITY, f64::INFINITY, f64::INFINITY);
    let mut hi = Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in points {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    (lo, hi)
}

/// Ordered 3D polyline with optional waypoint markers.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    points: Vec<Point>,
    waypoint_indices: Option<Vec<usize>>,
}

impl Trajectory {
    pub fn new(points: Vec<Point>, waypoint_indices: Option<Vec<usize>>) -> Result<Self> {
        let points: Vec<Point> = points.iter().map(round_point).collect();
        let m = points.len();
        if m < 2 {
            return Err(Error::InvalidTrajectory(format!("needs >= 2 points, got {m}")));
        }
        if points.iter().any(|p| !p.coords.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidTrajectory("non-finite position".into()));
        }
        if let Some(i) = points.windows(2).position(|w| w[0] == w[1]) {
            return Err(Error::InvalidTrajectory(format!(
                "points {i} and {} coincide",
                i + 1
            )));
        }
        if let Some(w) = &waypoint_indices {
            if w.is_empty() {
                return Err(Error::InvalidTrajectory("empty waypoint list".into()));
            }
            if w[0] != 0 || *w.last().unwrap() != m - 1 {
                return Err(Error::InvalidTrajectory(
                    "waypoints must start at 0 and end at the last point".into(),
                ));
            }
            if w.windows(2).any(|p| p[0] >= p[1]) {
                return Err(Error::InvalidTrajectory(
                    "waypoint indices must be strictly increasing".into(),
                ));
            }
        }
        Ok(Trajectory {
            points,
            waypoint_indices,
        })
    }

    /// Builds a trajectory after dropping consecutive duplicates (which can
    /// appear after binary32 rounding). Waypoint indices are remapped.
    pub fn from_points_dedup(points: Vec<Point>, waypoints: Option<Vec<usize>>) -> Result<Self> {
        let mut kept: Vec<Point> = Vec::with_capacity(points.len());
        let mut remap = Vec::with_capacity(points.len());
        for p in points.iter().map(round_point) {
            if kept.last() != Some(&p) {
                kept.push(p);
            }
            remap.push(kept.len().saturating_sub(1));
        }
        let waypoints = waypoints.map(|w| {
            let mut out: Vec<usize> = w.iter().map(|&i| remap[i]).collect();
            out.dedup();
            out
        });
        Trajectory::new(kept, waypoints)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn waypoint_indices(&self) -> Option<&[usize]> {
        self.waypoint_indices.as_deref()
    }

    pub fn waypoints(&self) -> Option<Vec<Point>> {
        self.waypoint_indices
            .as_ref()
            .map(|w| w.iter().map(|&i| self.points[i]).collect())
    }

    /// Segment lengths `l_i = |t_{i+1} - t_i|`.
    pub fn segment_lengths(&self) -> Vec<f64> {
        self.points.windows(2).map(|w| (w[1] - w[0]).norm()).collect()
    }

    pub fn length(&self) -> f64 {
        self.segment_lengths().iter().sum()
    }
}

// ---------------------------------------------------------------------------
// Encoding

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    format: &'static str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::format(self.format, format!("truncated at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f64> {
        let v = f32::from_le_bytes(self.take(4)?.try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::format(self.format, format!("non-finite float before byte {}", self.pos)));
        }
        Ok(v as f64)
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn header(&mut self, magic: &[u8; 4]) -> Result<()> {
        if self.take(4)? != magic {
            return Err(Error::format(self.format, "bad magic"));
        }
        let version = self.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::format(self.format, format!("unsupported version {version}")));
        }
        Ok(())
    }

    /// Reads a u64 element count and checks that `count * elem_bytes` bytes remain.
    fn count(&mut self, elem_bytes: usize, what: &str) -> Result<usize> {
        let raw = self.u64()?;
        let n = usize::try_from(raw)
            .ok()
            .filter(|n| n.checked_mul(elem_bytes).is_some_and(|b| b <= self.remaining()))
            .ok_or_else(|| Error::format(self.format, format!("{what} count {raw} exceeds data")))?;
        Ok(n)
    }
}

pub fn encode_scene(scene: &Scene) -> Vec<u8> {
    let n = scene.len();
    let mut out = Vec::with_capacity(20 + n * (16 + 4 * scene.dim));
    out.extend_from_slice(SCENE_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    out.extend_from_slice(&(scene.dim as u32).to_le_bytes());
    for p in &scene.points {
        for c in p.coords.iter() {
            out.extend_from_slice(&(*c as f32).to_le_bytes());
        }
    }
    for id in &scene.instance_ids {
        out.extend_from_slice(&id.to_le_bytes());
    }
    for f in &scene.features {
        out.extend_from_slice(&(*f as f32).to_le_bytes());
    }
    out
}

pub fn decode_scene(bytes: &[u8]) -> Result<Scene> {
    let mut r = Reader {
        bytes,
        pos: 0,
        format: "ATTS",
    };
    r.header(SCENE_MAGIC)?;
    let raw_n = r.u64()?;
    let dim = r.u32()? as usize;
    if raw_n == 0 {
        return Err(Error::format("ATTS", "scene has zero points"));
    }
    if dim == 0 {
        return Err(Error::format("ATTS", "feature dimension is zero"));
    }
    let per_point = dim
        .checked_mul(4)
        .and_then(|f| f.checked_add(16))
        .ok_or_else(|| Error::format("ATTS", "feature dimension overflows"))?;
    let n = usize::try_from(raw_n)
        .ok()
        .filter(|n| n.checked_mul(per_point) == Some(r.remaining()))
        .ok_or_else(|| {
            Error::format(
                "ATTS",
                format!("payload of {} bytes does not hold {raw_n} points of D = {dim}", r.remaining()),
            )
        })?;
    let mut points = Vec::with_capacity(n);
    for _ in 0..n {
        points.push(Point::new(r.f32()?, r.f32()?, r.f32()?));
    }
    let ids = (0..n).map(|_| r.i32()).collect::<Result<Vec<_>>>()?;
    let features = (0..n * dim).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
    Scene::new(points, ids, features, dim)
}

pub fn encode_trajectory(traj: &Trajectory) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 + traj.len() * 12);
    out.extend_from_slice(TRAJECTORY_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(traj.len() as u64).to_le_bytes());
    for p in &traj.points {
        for c in p.coords.iter() {
            out.extend_from_slice(&(*c as f32).to_le_bytes());
        }
    }
    let w = traj.waypoint_indices.as_deref().unwrap_or(&[]);
    out.extend_from_slice(&(w.len() as u32).to_le_bytes());
    for &i in w {
        out.extend_from_slice(&(i as u64).to_le_bytes());
    }
    out
}

pub fn decode_trajectory(bytes: &[u8]) -> Result<Trajectory> {
    let mut r = Reader {
        bytes,
        pos: 0,
        format: "ATTT",
    };
    r.header(TRAJECTORY_MAGIC)?;
    let m = r.count(12, "point")?;
    let mut points = Vec::with_capacity(m);
    for _ in 0..m {
        points.push(Point::new(r.f32()?, r.f32()?, r.f32()?));
    }
    let w = r.u32()? as usize;
    if w.checked_mul(8) != Some(r.remaining()) {
        return Err(Error::format(
            "ATTT",
            format!("waypoint block of {} bytes does not hold {w} indices", r.remaining()),
        ));
    }
    let mut indices = Vec::with_capacity(w);
    for _ in 0..w {
        let raw = r.u64()?;
        let i = usize::try_from(raw)
            .ok()
            .filter(|&i| i < m)
            .ok_or_else(|| Error::format("ATTT", format!("waypoint index {raw} out of range")))?;
        indices.push(i);
    }
    let waypoints = (!indices.is_empty()).then_some(indices);
    Trajectory::new(points, waypoints)
}

pub fn load_scene(path: impl AsRef<Path>) -> Result<Scene> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_scene(&bytes)
}

pub fn save_scene(path: impl AsRef<Path>, scene: &Scene) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_scene(scene)).map_err(|e| Error::io(path, e))
}

pub fn load_trajectory(path: impl AsRef<Path>) -> Result<Trajectory> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_trajectory(&bytes)
}

pub fn save_trajectory(path: impl AsRef<Path>, traj: &Trajectory) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_trajectory(traj)).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// Preprocessing

/// Integer voxel key of `p` at edge length `voxel`.
pub fn voxel_key(p: &Point, voxel: f64) -> (i64, i64, i64) {
    (
        (p.x / voxel).floor() as i64,
        (p.y / voxel).floor() as i64,
        (p.z / voxel).floor() as i64,
    )
}

/// Keeps one point per occupied voxel: the centroid of its members, the
/// majority instance label (ties to the smallest id) and the renormalized
/// mean feature. Output is ordered by voxel key.
pub fn voxel_downsample(scene: &Scene, voxel: f64) -> Result<Scene> {
    if !(voxel > 0.0 && voxel.is_finite()) {
        return Err(Error::InvalidParameter(format!("voxel size must be > 0, got {voxel}")));
    }
    let mut cells: BTreeMap<(i64, i64, i64), Vec<usize>> = BTreeMap::new();
    for (i, p) in scene.points.iter().enumerate() {
        cells.entry(voxel_key(p, voxel)).or_default().push(i);
    }
    let dim = scene.dim;
    let mut points = Vec::with_capacity(cells.len());
    let mut ids = Vec::with_capacity(cells.len());
    let mut features = Vec::with_capacity(cells.len() * dim);
    for members in cells.values() {
        let inv = 1.0 / members.len() as f64;
        let centroid = members
            .iter()
            .fold(crate::Vec3::zeros(), |acc, &i| acc + scene.points[i].coords)
            * inv;
        points.push(Point::from(centroid));

        let mut votes: BTreeMap<i32, usize> = BTreeMap::new();
        for &i in members {
            *votes.entry(scene.instance_ids[i]).or_default() += 1;
        }
        // BTreeMap iterates ascending, so max_by_key keeping the first max
        // needs reversed comparison on ties.
        let label = votes
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
            .map(|(id, _)| *id)
            .unwrap_or(OPEN_SPACE);
        ids.push(label);

        let mut mean = vec![0.0; dim];
        for &i in members {
            for (m, f) in mean.iter_mut().zip(scene.feature(i)) {
                *m += f;
            }
        }
        let norm = mean.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1e-12 {
            features.extend(mean.iter().map(|v| v / norm));
        } else {
            features.extend_from_slice(scene.feature(members[0]));
        }
    }
    let mut out = Scene::new(points, ids, features, dim)?;
    out.voxel_size = Some(voxel);
    Ok(out)
}

/// Open-space points in scene order.
pub fn navigable_points(scene: &Scene) -> Result<Vec<Point>> {
    let pts: Vec<Point> = scene
        .points
        .iter()
        .zip(&scene.instance_ids)
        .filter(|(_, &id)| id == OPEN_SPACE)
        .map(|(p, _)| *p)
        .collect();
    if pts.is_empty() {
        return Err(Error::NoNavigablePoints);
    }
    Ok(pts)
}
